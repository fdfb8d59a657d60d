//! The two-step training pipeline and the four-arm ablation harness.
//!
//! Step 1 pre-trains the encoder alone under the modality-aligned
//! concentration loss, refreshing the center bank after every epoch. Step
//! 2 builds the full model (optionally warm-starting the encoder from a
//! Step-1 bundle) and trains everything end to end under cross-entropy.
//! Both steps draw their batch order from seeds derived per epoch, so a
//! (config, data, seed) triple fixes every parameter byte and every run
//! log number.

mod adamw;

pub use adamw::AdamW;

use std::time::Instant;

use thiserror::Error;

use crate::config::{ConfigError, KvConfig};
use crate::dataio::{format_f64, make_balanced_batches, DataError, DatasetView, Label, ModalityId};
use crate::derive_seed;
use crate::losses::{mac_loss, update_centers, cross_entropy, LossError, MacBatch};
use crate::model::{Dims, ModelBundle, ModelError, StepTag};
use crate::numgrad::{NumgradError, Tape};
use crate::padmetrics::{self, MetricError, ScoreRecord};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("training diverged: non-finite loss in epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
    #[error("optimizer state mismatch: {0}")]
    OptimizerShape(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Autodiff(#[from] NumgradError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// Hyperparameters for both steps. Defaults mirror the reference recipe:
/// AdamW at lr 1e-4 with weight decay 1e-5, batches of 64, 40 epochs per
/// step, a 2x256 encoder into d=192, experts projecting to k=512.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs_step1: usize,
    pub epochs_step2: usize,
    pub hidden: Vec<usize>,
    pub d: usize,
    pub k: usize,
    pub seed: u64,
    pub use_mac_pretrain: bool,
    pub use_mope: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            weight_decay: 1e-5,
            batch_size: 64,
            epochs_step1: 40,
            epochs_step2: 40,
            hidden: vec![256, 256],
            d: 192,
            k: 512,
            seed: 0,
            use_mac_pretrain: true,
            use_mope: true,
        }
    }
}

impl TrainConfig {
    pub const KV_KEYS: [&'static str; 11] = [
        "lr",
        "weight_decay",
        "batch_size",
        "epochs_step1",
        "epochs_step2",
        "hidden",
        "d",
        "k",
        "seed",
        "use_mac_pretrain",
        "use_mope",
    ];

    /// Builds a config from flat keys with the defaults above. Unknown
    /// keys are rejected.
    pub fn from_kv(kv: &KvConfig) -> std::result::Result<Self, ConfigError> {
        kv.reject_unknown(&Self::KV_KEYS)?;
        let def = TrainConfig::default();
        let hidden = kv
            .list_or("hidden", &["256", "256"])
            .iter()
            .map(|s| {
                s.parse::<usize>().map_err(|_| ConfigError::BadValue {
                    key: "hidden".to_string(),
                    expected: "comma-separated widths",
                    value: s.clone(),
                })
            })
            .collect::<std::result::Result<Vec<usize>, ConfigError>>()?;
        Ok(TrainConfig {
            lr: kv.f64_or("lr", def.lr)?,
            weight_decay: kv.f64_or("weight_decay", def.weight_decay)?,
            batch_size: kv.usize_or("batch_size", def.batch_size)?,
            epochs_step1: kv.usize_or("epochs_step1", def.epochs_step1)?,
            epochs_step2: kv.usize_or("epochs_step2", def.epochs_step2)?,
            hidden,
            d: kv.usize_or("d", def.d)?,
            k: kv.usize_or("k", def.k)?,
            seed: kv.u64_or("seed", def.seed)?,
            use_mac_pretrain: kv.bool_or("use_mac_pretrain", def.use_mac_pretrain)?,
            use_mope: kv.bool_or("use_mope", def.use_mope)?,
        })
    }

    /// Every field as a flat key-value pair, in `KV_KEYS` order. Feeding
    /// the pairs back through [`TrainConfig::from_kv`] reproduces the
    /// config exactly; manifests echo these as the resolved config.
    pub fn to_kv_pairs(&self) -> Vec<(String, String)> {
        let hidden = self
            .hidden
            .iter()
            .map(|w| w.to_string())
            .collect::<Vec<_>>()
            .join(",");
        vec![
            ("lr".to_string(), format_f64(self.lr)),
            ("weight_decay".to_string(), format_f64(self.weight_decay)),
            ("batch_size".to_string(), self.batch_size.to_string()),
            ("epochs_step1".to_string(), self.epochs_step1.to_string()),
            ("epochs_step2".to_string(), self.epochs_step2.to_string()),
            ("hidden".to_string(), hidden),
            ("d".to_string(), self.d.to_string()),
            ("k".to_string(), self.k.to_string()),
            ("seed".to_string(), self.seed.to_string()),
            (
                "use_mac_pretrain".to_string(),
                self.use_mac_pretrain.to_string(),
            ),
            ("use_mope".to_string(), self.use_mope.to_string()),
        ]
    }

    pub fn dims(&self, input_dim: usize) -> Dims {
        Dims {
            input_dim,
            hidden: self.hidden.clone(),
            d: self.d,
            k: self.k,
        }
    }

    /// Checks the numeric invariants against a concrete dataset: the
    /// balanced sampler needs at least two slots per modality per batch.
    pub fn validate_for(&self, view: &DatasetView) -> Result<()> {
        if self.lr <= 0.0 || !self.lr.is_finite() {
            return Err(TrainError::Config(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        if self.weight_decay < 0.0 || !self.weight_decay.is_finite() {
            return Err(TrainError::Config(format!(
                "weight_decay must be nonnegative, got {}",
                self.weight_decay
            )));
        }
        let floor = 2 * view.modalities().len();
        if self.batch_size < floor {
            return Err(TrainError::Config(format!(
                "batch_size {} is below 2 x {} modalities",
                self.batch_size,
                view.modalities().len()
            )));
        }
        self.dims(view.input_dim()).validate()?;
        Ok(())
    }
}

/// One epoch's worth of run-log data.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub seconds: f64,
    pub center_drift: Option<f64>,
    pub val_eer: Option<f64>,
    pub val_auc: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    pub records: Vec<EpochRecord>,
}

impl RunLog {
    /// CSV rendering. The `seconds` column is present but left empty:
    /// wall time is the one nondeterministic field, and reruns of the
    /// same (config, data, seed) must produce byte-identical artifacts.
    /// Timings stay available on [`EpochRecord::seconds`] for display.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,seconds,center_drift,val_eer,val_auc\n");
        for r in &self.records {
            out.push_str(&r.epoch.to_string());
            out.push(',');
            out.push_str(&format_f64(r.loss));
            out.push(',');
            for v in [r.center_drift, r.val_eer, r.val_auc] {
                out.push(',');
                if let Some(v) = v {
                    out.push_str(&format_f64(v));
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn total_seconds(&self) -> f64 {
        self.records.iter().map(|r| r.seconds).sum()
    }
}

struct BatchTensors {
    labels: Vec<Label>,
    mods: Vec<ModalityId>,
}

fn batch_meta(view: &DatasetView, idx: &[usize]) -> BatchTensors {
    BatchTensors {
        labels: idx.iter().map(|&i| view.sample(i).label).collect(),
        mods: idx.iter().map(|&i| view.sample(i).modality).collect(),
    }
}

/// Step 1: encoder-only pre-training under the concentration loss, with
/// the center bank refreshed after every epoch. With zero epochs the
/// returned bundle is the initialization plus the initial center bank.
pub fn pretrain_step1(cfg: &TrainConfig, view: &DatasetView) -> Result<(ModelBundle, RunLog)> {
    cfg.validate_for(view)?;
    let mut bundle = ModelBundle::init_step1(
        cfg.dims(view.input_dim()),
        view.modalities().clone(),
        cfg.seed,
    )?;
    let mut bank = update_centers(&bundle, view, None)?;
    let mut opt = AdamW::new(cfg.lr, cfg.weight_decay, &bundle.params());
    let mut log = RunLog::default();
    for epoch in 0..cfg.epochs_step1 {
        let start = Instant::now();
        let batches = make_balanced_batches(
            view,
            cfg.batch_size,
            derive_seed(cfg.seed, &format!("step1-epoch-{epoch}")),
        )?;
        let mut loss_sum = 0.0;
        for (bi, idx) in batches.iter().enumerate() {
            let tape = Tape::new();
            let tp = bundle.register(&tape, true);
            let x = tape.constant(view.features_matrix(idx));
            let z = tp.encode(x)?;
            let meta = batch_meta(view, idx);
            let batch = MacBatch {
                z,
                labels: meta.labels,
                mods: meta.mods,
            };
            let loss = mac_loss(&tape, &batch, &bank)?;
            if !loss.item().is_finite() {
                return Err(TrainError::Diverged { epoch, batch: bi });
            }
            loss_sum += loss.item();
            loss.backward()?;
            let grads = tp.param_grads();
            opt.step(&mut bundle.params_mut(), &grads)?;
        }
        let next = update_centers(&bundle, view, Some(&bank))?;
        let drift = next.drift_from(&bank);
        bank = next;
        log.records.push(EpochRecord {
            epoch,
            loss: loss_sum / batches.len() as f64,
            seconds: start.elapsed().as_secs_f64(),
            center_drift: Some(drift),
            val_eer: None,
            val_auc: None,
        });
    }
    bundle.centers = Some(bank);
    Ok((bundle, log))
}

/// Step 2: the full model under cross-entropy. `step1` warm-starts the
/// encoder (and carries the center bank along for inspection); without it
/// the encoder trains from scratch. A validation view adds EER/AUC to
/// each epoch record.
pub fn finetune_step2(
    cfg: &TrainConfig,
    view: &DatasetView,
    step1: Option<&ModelBundle>,
    val: Option<&DatasetView>,
) -> Result<(ModelBundle, RunLog)> {
    cfg.validate_for(view)?;
    let dims = cfg.dims(view.input_dim());
    let mut bundle = ModelBundle::init_step2(
        dims.clone(),
        view.modalities().clone(),
        cfg.seed,
        cfg.use_mope,
    )?;
    if let Some(s1) = step1 {
        if s1.step != StepTag::Step1 {
            return Err(TrainError::Model(ModelError::Mismatch(format!(
                "warm start needs a {} bundle, got {}",
                StepTag::Step1.as_str(),
                s1.step.as_str()
            ))));
        }
        if s1.dims != dims {
            return Err(TrainError::Model(ModelError::Mismatch(format!(
                "encoder dims {:?} do not match configured dims {:?}",
                s1.dims, dims
            ))));
        }
        if s1.modalities != bundle.modalities {
            return Err(TrainError::Model(ModelError::Mismatch(
                "modality tables differ between checkpoint and data".to_string(),
            )));
        }
        bundle.encoder = s1.encoder.clone();
        bundle.centers = s1.centers.clone();
    }
    let mut opt = AdamW::new(cfg.lr, cfg.weight_decay, &bundle.params());
    let mut log = RunLog::default();
    for epoch in 0..cfg.epochs_step2 {
        let start = Instant::now();
        let batches = make_balanced_batches(
            view,
            cfg.batch_size,
            derive_seed(cfg.seed, &format!("step2-epoch-{epoch}")),
        )?;
        let mut loss_sum = 0.0;
        for (bi, idx) in batches.iter().enumerate() {
            let tape = Tape::new();
            let tp = bundle.register(&tape, true);
            let x = tape.constant(view.features_matrix(idx));
            let meta = batch_meta(view, idx);
            let z = tp.encode(x)?;
            let h = tp.project(z, &meta.mods)?;
            let logits = tp.classify(h)?;
            let loss = cross_entropy(logits, &meta.labels)?;
            if !loss.item().is_finite() {
                return Err(TrainError::Diverged { epoch, batch: bi });
            }
            loss_sum += loss.item();
            loss.backward()?;
            let grads = tp.param_grads();
            opt.step(&mut bundle.params_mut(), &grads)?;
        }
        let (val_eer, val_auc) = match val {
            None => (None, None),
            Some(v) => {
                let pairs: Vec<(Label, f64)> = score_view(&bundle, v)?
                    .into_iter()
                    .map(|r| (r.label, r.score))
                    .collect();
                (
                    Some(padmetrics::eer(&pairs)?.0),
                    Some(padmetrics::auc(&pairs)?),
                )
            }
        };
        log.records.push(EpochRecord {
            epoch,
            loss: loss_sum / batches.len() as f64,
            seconds: start.elapsed().as_secs_f64(),
            center_drift: None,
            val_eer,
            val_auc,
        });
    }
    Ok((bundle, log))
}

/// Scores every sample of a view with a Step-2 bundle, producing the
/// records that metric reports and score files consume.
pub fn score_view(bundle: &ModelBundle, view: &DatasetView) -> Result<Vec<ScoreRecord>> {
    let idx: Vec<usize> = (0..view.len()).collect();
    let x = view.features_matrix(&idx);
    let mods: Vec<ModalityId> = view.samples().iter().map(|s| s.modality).collect();
    let scores = bundle.scores(&x, &mods)?;
    Ok(view
        .samples()
        .iter()
        .zip(scores)
        .map(|(s, score)| ScoreRecord {
            id: s.id.clone(),
            modality: view.modalities().name(s.modality).to_string(),
            dataset_tag: s.dataset_tag.clone(),
            label: s.label,
            score,
        })
        .collect())
}

/// One ablation arm: its switches, test metrics, and trained model.
#[derive(Debug, Clone)]
pub struct ArmResult {
    pub pretrain: bool,
    pub mope: bool,
    pub auc: f64,
    pub eer: f64,
    pub bundle: ModelBundle,
}

/// The fixed arm order of the ablation report.
pub const ABLATION_ARMS: [(bool, bool); 4] =
    [(false, false), (true, false), (false, true), (true, true)];

/// Trains and evaluates all four (pretrain x mope) combinations on the
/// same data and seed. Arms share no mutable state and run concurrently;
/// the report keeps the fixed arm order regardless of finish order.
pub fn run_ablation(
    cfg: &TrainConfig,
    train: &DatasetView,
    test: &DatasetView,
) -> Result<Vec<ArmResult>> {
    let outcomes: Vec<Result<ArmResult>> = std::thread::scope(|s| {
        let handles: Vec<_> = ABLATION_ARMS
            .iter()
            .map(|&(pretrain, mope)| {
                s.spawn(move || {
                    let mut arm = cfg.clone();
                    arm.use_mac_pretrain = pretrain;
                    arm.use_mope = mope;
                    let step1 = if pretrain {
                        Some(pretrain_step1(&arm, train)?.0)
                    } else {
                        None
                    };
                    let (bundle, _) = finetune_step2(&arm, train, step1.as_ref(), None)?;
                    let pairs: Vec<(Label, f64)> = score_view(&bundle, test)?
                        .into_iter()
                        .map(|r| (r.label, r.score))
                        .collect();
                    Ok(ArmResult {
                        pretrain,
                        mope,
                        auc: padmetrics::auc(&pairs)?,
                        eer: padmetrics::eer(&pairs)?.0,
                        bundle,
                    })
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("ablation arm panicked"))
            .collect()
    });
    outcomes.into_iter().collect()
}

/// Table-layout CSV for the four arms: `pretrain,mope,auc,eer` with 0/1
/// switches.
pub fn ablation_csv(arms: &[ArmResult]) -> String {
    let mut out = String::from("pretrain,mope,auc,eer\n");
    for a in arms {
        out.push_str(&format!(
            "{},{},{},{}\n",
            u8::from(a.pretrain),
            u8::from(a.mope),
            format_f64(a.auc),
            format_f64(a.eer)
        ));
    }
    out
}
