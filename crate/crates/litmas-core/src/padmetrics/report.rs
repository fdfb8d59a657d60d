//! Grouped metric reports over score records.
//!
//! A report always leads with an `overall` row over every record, followed
//! by one row per modality and/or per dataset tag depending on the
//! grouping, each axis sorted lexicographically. A group containing only
//! one label gets a row of `NA` markers and the `single_class` flag
//! instead of failing the whole report; callers that need hard failure
//! check the overall row.

use std::collections::BTreeSet;

use crate::config::{ConfigError, KvConfig};
use crate::dataio::{format_f64, Label};

use super::{
    apcer_bpcer_at, auc, bpcer_at_apcer, eer, min_tdcf, MetricError, Result, ScoreRecord,
    TdcfParams,
};

/// Which grouping axes to expand below the overall row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grouping {
    None,
    Modality,
    Dataset,
    Both,
}

impl Grouping {
    fn modality(self) -> bool {
        matches!(self, Grouping::Modality | Grouping::Both)
    }

    fn dataset(self) -> bool {
        matches!(self, Grouping::Dataset | Grouping::Both)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupKind {
    Overall,
    Modality,
    Dataset,
}

impl GroupKind {
    pub fn as_str(self) -> &'static str {
        match self {
            GroupKind::Overall => "overall",
            GroupKind::Modality => "modality",
            GroupKind::Dataset => "dataset",
        }
    }
}

/// Metric values for one group with both classes present.
#[derive(Debug, Clone, PartialEq)]
pub struct RowMetrics {
    pub auc: f64,
    pub eer: f64,
    pub eer_threshold: f64,
    pub apcer_at_eer: f64,
    pub bpcer_at_eer: f64,
    pub bpcer_at_apcer1: f64,
    /// `None` when no t-DCF configuration applies to this group.
    pub min_tdcf: Option<f64>,
    /// Too few spoof samples to resolve the 1% APCER target.
    pub coarse_apcer: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupMetrics {
    pub group: String,
    pub kind: GroupKind,
    /// `None` when the group holds a single label and the error-rate
    /// metrics are undefined.
    pub metrics: Option<RowMetrics>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<GroupMetrics>,
}

/// t-DCF parameters plus the group names they apply to (`None` = every
/// group).
#[derive(Debug, Clone, PartialEq)]
pub struct TdcfConfig {
    pub params: TdcfParams,
    pub groups: Option<Vec<String>>,
}

impl TdcfConfig {
    pub const KV_KEYS: &'static [&'static str] = &[
        "p_target",
        "p_nontarget",
        "p_spoof",
        "c_miss",
        "c_fa",
        "c_fa_spoof",
        "asv_miss",
        "asv_fa",
        "asv_spoof_pass",
        "groups",
    ];

    /// All nine numeric parameters are required: the reference values live
    /// in the config file, not in code.
    pub fn from_kv(kv: &KvConfig) -> std::result::Result<Self, ConfigError> {
        kv.reject_unknown(Self::KV_KEYS)?;
        let num = |key: &str| -> std::result::Result<f64, ConfigError> {
            kv.get_parsed::<f64>(key, "a number")?
                .ok_or_else(|| ConfigError::MissingKey(key.to_string()))
        };
        let params = TdcfParams {
            p_target: num("p_target")?,
            p_nontarget: num("p_nontarget")?,
            p_spoof: num("p_spoof")?,
            c_miss: num("c_miss")?,
            c_fa: num("c_fa")?,
            c_fa_spoof: num("c_fa_spoof")?,
            asv_miss: num("asv_miss")?,
            asv_fa: num("asv_fa")?,
            asv_spoof_pass: num("asv_spoof_pass")?,
        };
        let groups = match kv.get("groups") {
            None => None,
            Some(v) if v.trim() == "all" => None,
            Some(_) => Some(kv.list_or("groups", &[])),
        };
        Ok(Self { params, groups })
    }

    fn applies_to(&self, group: &str) -> bool {
        match &self.groups {
            None => true,
            Some(names) => names.iter().any(|n| n == group),
        }
    }
}

fn row(
    group: &str,
    kind: GroupKind,
    pairs: &[(Label, f64)],
    tdcf: Option<&TdcfConfig>,
) -> Result<GroupMetrics> {
    let computed = match auc(pairs) {
        Err(MetricError::SingleClass(_)) => None,
        Err(e) => return Err(e),
        Ok(auc_value) => {
            let (eer_value, tau) = eer(pairs)?;
            let (apcer_at_eer, bpcer_at_eer) = apcer_bpcer_at(pairs, tau)?;
            let (bpcer_at_apcer1, _, coarse_apcer) = bpcer_at_apcer(pairs, 0.01)?;
            let min_tdcf = match tdcf {
                Some(cfg) if cfg.applies_to(group) => Some(min_tdcf(pairs, &cfg.params)?.0),
                _ => None,
            };
            Some(RowMetrics {
                auc: auc_value,
                eer: eer_value,
                eer_threshold: tau,
                apcer_at_eer,
                bpcer_at_eer,
                bpcer_at_apcer1,
                min_tdcf,
                coarse_apcer,
            })
        }
    };
    Ok(GroupMetrics {
        group: group.to_string(),
        kind,
        metrics: computed,
    })
}

/// Build the grouped report. t-DCF parameter problems and non-finite
/// scores are hard errors; single-class groups degrade to marker rows.
pub fn evaluate(
    records: &[ScoreRecord],
    grouping: Grouping,
    tdcf: Option<&TdcfConfig>,
) -> Result<MetricsReport> {
    if let Some(cfg) = tdcf {
        cfg.params.validate()?;
    }
    let all: Vec<(Label, f64)> = records.iter().map(|r| (r.label, r.score)).collect();
    let mut rows = vec![row("overall", GroupKind::Overall, &all, tdcf)?];
    if grouping.modality() {
        let names: BTreeSet<&str> = records.iter().map(|r| r.modality.as_str()).collect();
        for name in names {
            let pairs: Vec<(Label, f64)> = records
                .iter()
                .filter(|r| r.modality == name)
                .map(|r| (r.label, r.score))
                .collect();
            rows.push(row(name, GroupKind::Modality, &pairs, tdcf)?);
        }
    }
    if grouping.dataset() {
        let tags: BTreeSet<&str> = records.iter().map(|r| r.dataset_tag.as_str()).collect();
        for tag in tags {
            let pairs: Vec<(Label, f64)> = records
                .iter()
                .filter(|r| r.dataset_tag == tag)
                .map(|r| (r.label, r.score))
                .collect();
            rows.push(row(tag, GroupKind::Dataset, &pairs, tdcf)?);
        }
    }
    Ok(MetricsReport { rows })
}

impl MetricsReport {
    /// True when the overall row has defined metrics.
    pub fn overall_defined(&self) -> bool {
        self.rows
            .first()
            .is_some_and(|r| r.metrics.is_some())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str("# accept rule: a sample is live when score >= threshold\n");
        out.push_str("# APCER: fraction of spoof accepted; BPCER: fraction of bonafide rejected\n");
        out.push_str(
            "# EER: sweep thresholds at midpoints of adjacent distinct scores plus -inf/+inf;\n",
        );
        out.push_str(
            "#   pick the threshold minimizing |APCER - BPCER|, ties broken by smaller mean\n",
        );
        out.push_str("#   error then smaller threshold; EER is the mean of the two errors there\n");
        out.push_str(
            "# flags: single_class = one label only, metrics NA; coarse_apcer = fewer than\n",
        );
        out.push_str("#   100 spoof samples, so the 1% APCER target is not resolvable\n");
        out.push_str(
            "group,kind,auc,eer,eer_threshold,apcer_at_eer,bpcer_at_eer,bpcer_at_apcer1,min_tdcf,flags\n",
        );
        for r in &self.rows {
            out.push_str(&r.group);
            out.push(',');
            out.push_str(r.kind.as_str());
            match &r.metrics {
                None => out.push_str(",NA,NA,NA,NA,NA,NA,,single_class\n"),
                Some(m) => {
                    for v in [
                        m.auc,
                        m.eer,
                        m.eer_threshold,
                        m.apcer_at_eer,
                        m.bpcer_at_eer,
                        m.bpcer_at_apcer1,
                    ] {
                        out.push(',');
                        out.push_str(&format_f64(v));
                    }
                    out.push(',');
                    if let Some(t) = m.min_tdcf {
                        out.push_str(&format_f64(t));
                    }
                    out.push(',');
                    if m.coarse_apcer {
                        out.push_str("coarse_apcer");
                    }
                    out.push('\n');
                }
            }
        }
        out
    }
}
