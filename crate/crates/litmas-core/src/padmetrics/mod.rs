//! Presentation-attack-detection metrics.
//!
//! Scores are liveness scores: higher means more live, and a sample is
//! accepted as live when `score >= threshold`. APCER is the fraction of
//! spoof samples accepted; BPCER is the fraction of bonafide samples
//! rejected. The EER convention is an empirical sweep: over all candidate
//! thresholds (midpoints between adjacent distinct scores plus infinite
//! sentinels), take the one minimizing `|APCER - BPCER|`, tie-broken by
//! smaller mean error then smaller threshold, and report the mean of the
//! two errors there. Small sets make the convention visible: two bonafide
//! {0.9, 0.4} against two spoof {0.6, 0.1} give EER 0.5, not the 0.25 a
//! convex-hull interpolation would report.

mod report;
mod scorefile;

pub use report::{evaluate, GroupKind, GroupMetrics, Grouping, MetricsReport, RowMetrics, TdcfConfig};
pub use scorefile::{load_score_file, write_score_file};

use thiserror::Error;

use crate::dataio::Label;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("metric undefined: {0}")]
    SingleClass(String),
    #[error("invalid t-DCF parameters: {0}")]
    BadParams(String),
    #[error("non-finite score for {0:?}")]
    NonFinite(String),
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, MetricError>;

/// One scored trial.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub id: String,
    pub modality: String,
    pub dataset_tag: String,
    pub label: Label,
    pub score: f64,
}

/// One operating point of the detector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub apcer: f64,
    pub bpcer: f64,
}

/// Priors, costs, and the fixed ASV operating point of the tandem cost.
/// The coefficient structure follows the ASVspoof 2019 formulation:
/// `C1 = p_target·c_miss·(1 − asv_miss) − p_nontarget·c_fa·asv_fa` scales
/// the countermeasure miss rate (BPCER) and
/// `C2 = c_fa_spoof·p_spoof·asv_spoof_pass` scales its false-accept rate
/// (APCER); the reported value is `(C1·BPCER + C2·APCER) / min(C1, C2)`,
/// so the better of the all-accept/all-reject policies costs exactly 1.
#[derive(Debug, Clone, PartialEq)]
pub struct TdcfParams {
    pub p_target: f64,
    pub p_nontarget: f64,
    pub p_spoof: f64,
    pub c_miss: f64,
    pub c_fa: f64,
    pub c_fa_spoof: f64,
    pub asv_miss: f64,
    pub asv_fa: f64,
    pub asv_spoof_pass: f64,
}

impl TdcfParams {
    pub fn validate(&self) -> Result<()> {
        let priors = [self.p_target, self.p_nontarget, self.p_spoof];
        if priors.iter().any(|&p| p <= 0.0 || !p.is_finite()) {
            return Err(MetricError::BadParams(
                "priors must be positive".to_string(),
            ));
        }
        let sum: f64 = priors.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(MetricError::BadParams(format!(
                "priors must sum to 1, got {sum}"
            )));
        }
        for (name, c) in [
            ("c_miss", self.c_miss),
            ("c_fa", self.c_fa),
            ("c_fa_spoof", self.c_fa_spoof),
        ] {
            if c <= 0.0 || !c.is_finite() {
                return Err(MetricError::BadParams(format!("{name} must be positive")));
            }
        }
        for (name, r) in [
            ("asv_miss", self.asv_miss),
            ("asv_fa", self.asv_fa),
            ("asv_spoof_pass", self.asv_spoof_pass),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(MetricError::BadParams(format!(
                    "{name} must be in [0,1], got {r}"
                )));
            }
        }
        let (c1, c2) = self.coefficients();
        if c1 <= 0.0 || c2 <= 0.0 {
            return Err(MetricError::BadParams(format!(
                "degenerate cost coefficients C1={c1}, C2={c2}; the ASV point dominates the tandem"
            )));
        }
        Ok(())
    }

    pub fn coefficients(&self) -> (f64, f64) {
        let c1 = self.p_target * self.c_miss * (1.0 - self.asv_miss)
            - self.p_nontarget * self.c_fa * self.asv_fa;
        let c2 = self.c_fa_spoof * self.p_spoof * self.asv_spoof_pass;
        (c1, c2)
    }
}

/// Bonafide and spoof scores split out and sorted ascending.
struct SplitScores {
    bona: Vec<f64>,
    spoof: Vec<f64>,
}

impl SplitScores {
    fn new(scores: &[(Label, f64)]) -> Result<Self> {
        let mut bona = Vec::new();
        let mut spoof = Vec::new();
        for &(label, s) in scores {
            if !s.is_finite() {
                return Err(MetricError::NonFinite(format!("score {s}")));
            }
            match label {
                Label::Bonafide => bona.push(s),
                Label::Spoof => spoof.push(s),
            }
        }
        if bona.is_empty() {
            return Err(MetricError::SingleClass("no bonafide scores".to_string()));
        }
        if spoof.is_empty() {
            return Err(MetricError::SingleClass("no spoof scores".to_string()));
        }
        bona.sort_unstable_by(f64::total_cmp);
        spoof.sort_unstable_by(f64::total_cmp);
        Ok(Self { bona, spoof })
    }

    fn apcer(&self, tau: f64) -> f64 {
        let below = self.spoof.partition_point(|&s| s < tau);
        (self.spoof.len() - below) as f64 / self.spoof.len() as f64
    }

    fn bpcer(&self, tau: f64) -> f64 {
        self.bona.partition_point(|&s| s < tau) as f64 / self.bona.len() as f64
    }

    fn distinct(&self) -> Vec<f64> {
        let mut all: Vec<f64> = self.bona.iter().chain(&self.spoof).copied().collect();
        all.sort_unstable_by(f64::total_cmp);
        all.dedup();
        all
    }

    /// Midpoints between adjacent distinct scores, fenced by the infinite
    /// sentinels: a finite, complete set of operating points.
    fn midpoint_grid(&self) -> Vec<f64> {
        let distinct = self.distinct();
        let mut grid = vec![f64::NEG_INFINITY];
        grid.extend(distinct.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2.0));
        grid.push(f64::INFINITY);
        grid
    }

    /// Distinct score values fenced by sentinels; the ROC / t-DCF grid.
    fn score_grid(&self) -> Vec<f64> {
        let mut grid = vec![f64::NEG_INFINITY];
        grid.extend(self.distinct());
        grid.push(f64::INFINITY);
        grid
    }
}

/// Error rates at every distinct score value plus the two sentinels.
pub fn roc(scores: &[(Label, f64)]) -> Result<Vec<RocPoint>> {
    let split = SplitScores::new(scores)?;
    Ok(split
        .score_grid()
        .into_iter()
        .map(|t| RocPoint {
            threshold: t,
            apcer: split.apcer(t),
            bpcer: split.bpcer(t),
        })
        .collect())
}

/// Area under the ROC: the probability that a random bonafide outscores a
/// random spoof, ties counting one half (Mann-Whitney identity). Computed
/// by rank summation, which matches direct pair counting exactly.
pub fn auc(scores: &[(Label, f64)]) -> Result<f64> {
    let split = SplitScores::new(scores)?;
    let nb = split.bona.len();
    let ns = split.spoof.len();
    let mut all: Vec<(f64, bool)> = split
        .bona
        .iter()
        .map(|&s| (s, true))
        .chain(split.spoof.iter().map(|&s| (s, false)))
        .collect();
    all.sort_unstable_by(|a, b| f64::total_cmp(&a.0, &b.0));
    let mut bona_rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        // 1-based average rank of the tie run [i, j)
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for rec in &all[i..j] {
            if rec.1 {
                bona_rank_sum += avg_rank;
            }
        }
        i = j;
    }
    let u = bona_rank_sum - (nb * (nb + 1)) as f64 / 2.0;
    Ok(u / (nb as f64 * ns as f64))
}

/// Equal error rate and its threshold under the documented sweep
/// convention. Returns `(eer, threshold)`.
pub fn eer(scores: &[(Label, f64)]) -> Result<(f64, f64)> {
    let split = SplitScores::new(scores)?;
    let mut best: Option<(f64, f64, f64)> = None; // (|diff|, mean, tau)
    for tau in split.midpoint_grid() {
        let a = split.apcer(tau);
        let b = split.bpcer(tau);
        let key = ((a - b).abs(), (a + b) / 2.0, tau);
        let better = match best {
            None => true,
            Some(cur) => key < cur,
        };
        if better {
            best = Some(key);
        }
    }
    let (_, mean, tau) = best.expect("grid is never empty");
    Ok((mean, tau))
}

/// Error rates at one threshold under the accept-if-`score >= tau` rule.
pub fn apcer_bpcer_at(scores: &[(Label, f64)], tau: f64) -> Result<(f64, f64)> {
    let split = SplitScores::new(scores)?;
    Ok((split.apcer(tau), split.bpcer(tau)))
}

/// BPCER at the loosest operating point whose APCER does not exceed
/// `target`, without interpolation: the smallest sweep threshold
/// satisfying the constraint. Returns `(bpcer, threshold, coarse)`, where
/// `coarse` warns that the spoof count is too small to resolve the target
/// rate (fewer than `1/target` spoof samples).
pub fn bpcer_at_apcer(scores: &[(Label, f64)], target: f64) -> Result<(f64, f64, bool)> {
    if target <= 0.0 || target >= 1.0 || target.is_nan() {
        return Err(MetricError::BadParams(format!(
            "APCER target must be in (0,1), got {target}"
        )));
    }
    let split = SplitScores::new(scores)?;
    let coarse = (split.spoof.len() as f64) < 1.0 / target;
    for tau in split.midpoint_grid() {
        if split.apcer(tau) <= target {
            return Ok((split.bpcer(tau), tau, coarse));
        }
    }
    unreachable!("the +inf sentinel always has APCER 0");
}

/// Minimum normalized tandem cost over the ROC grid. Returns
/// `(min_tdcf, threshold)`.
pub fn min_tdcf(scores: &[(Label, f64)], params: &TdcfParams) -> Result<(f64, f64)> {
    params.validate()?;
    let split = SplitScores::new(scores)?;
    let (c1, c2) = params.coefficients();
    let floor = c1.min(c2);
    let mut best = (f64::INFINITY, f64::NEG_INFINITY);
    for tau in split.score_grid() {
        let cost = (c1 * split.bpcer(tau) + c2 * split.apcer(tau)) / floor;
        if cost < best.0 {
            best = (cost, tau);
        }
    }
    Ok(best)
}
