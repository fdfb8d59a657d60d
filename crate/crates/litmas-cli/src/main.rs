//! `litmas`: multi-modal anti-spoofing pipeline driver.
//!
//! Subcommands cover the whole workflow: synthetic data generation,
//! two-step training, scoring, metric reports, the four-arm ablation,
//! and embedding export. Every command writes a run manifest next to
//! its outputs and is deterministic: re-running with the same inputs
//! reproduces every output file byte for byte.
//!
//! Exit codes: 0 success, 2 configuration or contract violation,
//! 3 I/O failure, 4 numerical divergence, 5 metrics undefined for the
//! overall row.

mod manifest;

use clap::{Parser, Subcommand, ValueEnum};
use litmas_core::config::{ConfigError, KvConfig};
use litmas_core::dataio::{
    format_f64, gen_synthetic, load_feature_file, write_feature_file, DataError, DatasetView,
    ModalityId, SynthConfig,
};
use litmas_core::losses::LossError;
use litmas_core::model::{load_checkpoint, save_checkpoint, ModelBundle, ModelError, StepTag};
use litmas_core::padmetrics::{
    evaluate, load_score_file, write_score_file, Grouping, MetricError, TdcfConfig,
};
use litmas_core::trainer::{
    ablation_csv, finetune_step2, pretrain_step1, run_ablation, score_view, TrainConfig,
    TrainError,
};
use manifest::{beside, RunManifest};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

#[derive(Parser)]
#[command(
    name = "litmas",
    version,
    about = "Multi-modal anti-spoofing: synthetic data, two-step training, scoring, PAD metrics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-modal feature file
    GenSynth {
        /// Generator config (`key = value` lines)
        config: PathBuf,
        /// Output feature file
        out: PathBuf,
    },
    /// Train the detector (step 1: metric pre-training, step 2: classifier)
    Train {
        /// Training config (`key = value` lines)
        config: PathBuf,
        /// Training feature file
        train_file: PathBuf,
        /// Directory for checkpoints and run logs
        out_dir: PathBuf,
        /// Which step(s) to run
        #[arg(long, value_enum, default_value_t = StepArg::Both)]
        step: StepArg,
        /// Skip metric pre-training (step 2 starts from scratch)
        #[arg(long)]
        no_mac: bool,
        /// One shared projection head instead of per-modality experts
        #[arg(long)]
        no_mope: bool,
    },
    /// Score a feature file with a trained checkpoint
    Score {
        /// Step-2 checkpoint
        ckpt: PathBuf,
        /// Feature file to score
        features: PathBuf,
        /// Output score file
        out: PathBuf,
    },
    /// Compute detection metrics from a score file
    Eval {
        /// Score file
        scores: PathBuf,
        /// Output report CSV
        out: PathBuf,
        /// Grouping axes for per-group rows
        #[arg(long, value_enum, default_value_t = GroupArg::Both)]
        group: GroupArg,
        /// Cost-model config enabling the min t-DCF column
        #[arg(long)]
        tdcf_params: Option<PathBuf>,
    },
    /// Train and evaluate all four (pre-training x experts) arms
    Ablate {
        /// Training config (`key = value` lines)
        config: PathBuf,
        /// Training feature file
        train_file: PathBuf,
        /// Held-out feature file for the reported metrics
        test_file: PathBuf,
        /// Directory for the report and per-arm checkpoints
        out_dir: PathBuf,
    },
    /// Export embeddings as CSV for external visualization
    ExportEmbeddings {
        /// Checkpoint (step 1 or 2 for backbone, step 2 for projected)
        ckpt: PathBuf,
        /// Feature file to embed
        features: PathBuf,
        /// Output CSV
        out: PathBuf,
        /// Embedding space to export
        #[arg(long, value_enum, default_value_t = SpaceArg::Backbone)]
        space: SpaceArg,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StepArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum GroupArg {
    Modality,
    Dataset,
    Both,
}

impl GroupArg {
    fn grouping(self) -> Grouping {
        match self {
            GroupArg::Modality => Grouping::Modality,
            GroupArg::Dataset => Grouping::Dataset,
            GroupArg::Both => Grouping::Both,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            GroupArg::Modality => "modality",
            GroupArg::Dataset => "dataset",
            GroupArg::Both => "both",
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SpaceArg {
    Backbone,
    Projected,
}

impl SpaceArg {
    fn as_str(self) -> &'static str {
        match self {
            SpaceArg::Backbone => "backbone",
            SpaceArg::Projected => "projected",
        }
    }
}

/// One failure with its process exit code.
enum Failure {
    Config(String),
    Io(String),
    Diverged(String),
    Undefined(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Io(_) => 3,
            Failure::Diverged(_) => 4,
            Failure::Undefined(_) => 5,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Io(m) | Failure::Diverged(m) | Failure::Undefined(m) => {
                m
            }
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        let msg = e.to_string();
        match e {
            ConfigError::Io { .. } => Failure::Io(msg),
            _ => Failure::Config(msg),
        }
    }
}

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        let msg = e.to_string();
        match e {
            DataError::Io { .. } => Failure::Io(msg),
            _ => Failure::Config(msg),
        }
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        let msg = e.to_string();
        match e {
            ModelError::Io { .. } => Failure::Io(msg),
            _ => Failure::Config(msg),
        }
    }
}

impl From<LossError> for Failure {
    fn from(e: LossError) -> Self {
        match e {
            LossError::Model(m) => m.into(),
            LossError::DegenerateCenter { .. } => Failure::Diverged(e.to_string()),
            other => Failure::Config(other.to_string()),
        }
    }
}

impl From<MetricError> for Failure {
    fn from(e: MetricError) -> Self {
        let msg = e.to_string();
        match e {
            MetricError::Io { .. } => Failure::Io(msg),
            MetricError::SingleClass(_) => Failure::Undefined(msg),
            _ => Failure::Config(msg),
        }
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Diverged { .. } => Failure::Diverged(e.to_string()),
            TrainError::Data(d) => d.into(),
            TrainError::Loss(l) => l.into(),
            TrainError::Model(m) => m.into(),
            TrainError::Metric(m) => m.into(),
            other => Failure::Config(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("litmas: error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn run(cmd: Command) -> Result<u8, Failure> {
    match cmd {
        Command::GenSynth { config, out } => cmd_gen_synth(&config, &out),
        Command::Train {
            config,
            train_file,
            out_dir,
            step,
            no_mac,
            no_mope,
        } => cmd_train(&config, &train_file, &out_dir, step, no_mac, no_mope),
        Command::Score {
            ckpt,
            features,
            out,
        } => cmd_score(&ckpt, &features, &out),
        Command::Eval {
            scores,
            out,
            group,
            tdcf_params,
        } => cmd_eval(&scores, &out, group, tdcf_params.as_deref()),
        Command::Ablate {
            config,
            train_file,
            test_file,
            out_dir,
        } => cmd_ablate(&config, &train_file, &test_file, &out_dir),
        Command::ExportEmbeddings {
            ckpt,
            features,
            out,
            space,
        } => cmd_export_embeddings(&ckpt, &features, &out, space),
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn ensure_dir(path: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn record_input(man: &mut RunManifest, path: &Path) -> Result<(), Failure> {
    man.input(path)
        .map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn write_manifest(man: &RunManifest, path: &Path) -> Result<(), Failure> {
    man.write(path)
        .map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

/// Scoring and embedding require the checkpoint and the feature file to
/// agree on the modality table; expert routing is positional.
fn require_same_modalities(bundle: &ModelBundle, view: &DatasetView) -> Result<(), Failure> {
    if bundle.modalities.names() != view.modalities().names() {
        return Err(Failure::Config(format!(
            "modality tables differ: checkpoint has [{}], features have [{}]",
            bundle.modalities.names().join(", "),
            view.modalities().names().join(", ")
        )));
    }
    Ok(())
}

fn cmd_gen_synth(config: &Path, out: &Path) -> Result<u8, Failure> {
    let kv = KvConfig::load(config)?;
    let resolved = SynthConfig::resolved_kv(&kv)?;
    let cfg = SynthConfig::from_kv(&kv)?;
    let view = gen_synthetic(&cfg)?;
    write_feature_file(&view, out)?;

    let mut man = RunManifest::new("gen-synth");
    man.seed(cfg.seed);
    man.config(resolved);
    record_input(&mut man, config)?;
    man.output(out);
    write_manifest(&man, &beside(out))?;

    print_class_table(&view);
    Ok(0)
}

fn print_class_table(view: &DatasetView) {
    let counts = view.class_counts();
    let width = counts
        .iter()
        .map(|(name, _, _)| name.len())
        .chain(std::iter::once("modality".len()))
        .max()
        .unwrap_or(8);
    println!("{:<width$}  {:>8}  {:>8}", "modality", "bonafide", "spoof");
    let mut bona_total = 0;
    let mut spoof_total = 0;
    for (name, bona, spoof) in &counts {
        println!("{name:<width$}  {bona:>8}  {spoof:>8}");
        bona_total += bona;
        spoof_total += spoof;
    }
    println!("{:<width$}  {bona_total:>8}  {spoof_total:>8}", "total");
}

fn cmd_train(
    config: &Path,
    train_file: &Path,
    out_dir: &Path,
    step: StepArg,
    no_mac: bool,
    no_mope: bool,
) -> Result<u8, Failure> {
    let kv = KvConfig::load(config)?;
    let mut cfg = TrainConfig::from_kv(&kv)?;
    if no_mac {
        cfg.use_mac_pretrain = false;
    }
    if no_mope {
        cfg.use_mope = false;
    }
    if step == StepArg::One && !cfg.use_mac_pretrain {
        return Err(Failure::Config(
            "step 1 is the metric pre-training; disabling it leaves nothing to train".into(),
        ));
    }

    let view = load_feature_file(train_file)?;
    ensure_dir(out_dir)?;
    let step1_path = out_dir.join("step1.ckpt");
    let step2_path = out_dir.join("step2.ckpt");

    let mut man = RunManifest::new("train");
    man.seed(cfg.seed);
    man.config(cfg.to_kv_pairs());
    record_input(&mut man, config)?;
    record_input(&mut man, train_file)?;
    let mut outputs: Vec<PathBuf> = Vec::new();

    let mut run_step1 = || -> Result<ModelBundle, Failure> {
        let t0 = Instant::now();
        let (bundle, log) = pretrain_step1(&cfg, &view)?;
        save_checkpoint(&bundle, &step1_path)?;
        let log_path = out_dir.join("step1_runlog.csv");
        write_text(&log_path, &log.to_csv())?;
        eprintln!(
            "step 1: {} epochs in {:.2}s",
            log.records.len(),
            t0.elapsed().as_secs_f64()
        );
        outputs.push(step1_path.clone());
        outputs.push(log_path);
        Ok(bundle)
    };

    let warm = match step {
        StepArg::One | StepArg::Both if cfg.use_mac_pretrain => Some(run_step1()?),
        StepArg::Two if cfg.use_mac_pretrain => {
            if !step1_path.exists() {
                return Err(Failure::Config(format!(
                    "step 2 expects a pre-trained encoder at {}; run --step 1 or --step both \
                     first, or pass --no-mac",
                    step1_path.display()
                )));
            }
            record_input(&mut man, &step1_path)?;
            Some(load_checkpoint(&step1_path)?)
        }
        _ => None,
    };

    if step != StepArg::One {
        let t0 = Instant::now();
        let (bundle, log) = finetune_step2(&cfg, &view, warm.as_ref(), None)?;
        save_checkpoint(&bundle, &step2_path)?;
        let log_path = out_dir.join("step2_runlog.csv");
        write_text(&log_path, &log.to_csv())?;
        eprintln!(
            "step 2: {} epochs in {:.2}s",
            log.records.len(),
            t0.elapsed().as_secs_f64()
        );
        outputs.push(step2_path);
        outputs.push(log_path);
    }

    for path in &outputs {
        man.output(path);
    }
    write_manifest(&man, &out_dir.join("train.manifest"))?;
    Ok(0)
}

fn cmd_score(ckpt: &Path, features: &Path, out: &Path) -> Result<u8, Failure> {
    let bundle = load_checkpoint(ckpt)?;
    if bundle.step != StepTag::Step2 {
        return Err(Failure::Config(format!(
            "{}: checkpoint is tagged step1; scoring needs a step2 checkpoint \
             (run train --step both)",
            ckpt.display()
        )));
    }
    let view = load_feature_file(features)?;
    require_same_modalities(&bundle, &view)?;
    let records = score_view(&bundle, &view)?;
    write_score_file(out, &records)?;

    let mut man = RunManifest::new("score");
    record_input(&mut man, ckpt)?;
    record_input(&mut man, features)?;
    man.output(out);
    write_manifest(&man, &beside(out))?;

    eprintln!("scored {} samples", records.len());
    Ok(0)
}

fn cmd_eval(
    scores: &Path,
    out: &Path,
    group: GroupArg,
    tdcf_params: Option<&Path>,
) -> Result<u8, Failure> {
    let records = load_score_file(scores)?;
    let tdcf = match tdcf_params {
        Some(path) => {
            let kv = KvConfig::load(path)?;
            Some(TdcfConfig::from_kv(&kv)?)
        }
        None => None,
    };
    let report = evaluate(&records, group.grouping(), tdcf.as_ref())?;
    write_text(out, &report.to_csv())?;

    let mut man = RunManifest::new("eval");
    man.config(vec![("group".to_string(), group.as_str().to_string())]);
    record_input(&mut man, scores)?;
    if let Some(path) = tdcf_params {
        record_input(&mut man, path)?;
    }
    man.output(out);
    write_manifest(&man, &beside(out))?;

    if report.overall_defined() {
        Ok(0)
    } else {
        eprintln!("litmas: warning: overall metrics undefined (single-class scores); report written with NA rows");
        Ok(5)
    }
}

fn cmd_ablate(
    config: &Path,
    train_file: &Path,
    test_file: &Path,
    out_dir: &Path,
) -> Result<u8, Failure> {
    let kv = KvConfig::load(config)?;
    let cfg = TrainConfig::from_kv(&kv)?;
    let train = load_feature_file(train_file)?;
    let test = load_feature_file(test_file)?;
    ensure_dir(out_dir)?;

    let t0 = Instant::now();
    let arms = run_ablation(&cfg, &train, &test)?;
    eprintln!("4 arms in {:.2}s", t0.elapsed().as_secs_f64());

    let csv = ablation_csv(&arms);
    let csv_path = out_dir.join("ablation.csv");
    write_text(&csv_path, &csv)?;
    print!("{csv}");

    let mut outputs = vec![csv_path];
    for arm in &arms {
        let path = out_dir.join(format!(
            "arm_mac{}_mope{}.ckpt",
            u8::from(arm.pretrain),
            u8::from(arm.mope)
        ));
        save_checkpoint(&arm.bundle, &path)?;
        outputs.push(path);
    }

    let mut man = RunManifest::new("ablate");
    man.seed(cfg.seed);
    man.config(cfg.to_kv_pairs());
    record_input(&mut man, config)?;
    record_input(&mut man, train_file)?;
    record_input(&mut man, test_file)?;
    for path in &outputs {
        man.output(path);
    }
    write_manifest(&man, &out_dir.join("ablate.manifest"))?;
    Ok(0)
}

fn cmd_export_embeddings(
    ckpt: &Path,
    features: &Path,
    out: &Path,
    space: SpaceArg,
) -> Result<u8, Failure> {
    let bundle = load_checkpoint(ckpt)?;
    let view = load_feature_file(features)?;
    require_same_modalities(&bundle, &view)?;

    let idx: Vec<usize> = (0..view.len()).collect();
    let x = view.features_matrix(&idx);
    let emb = match space {
        SpaceArg::Backbone => bundle.encode_tensor(&x),
        SpaceArg::Projected => {
            if bundle.step != StepTag::Step2 {
                return Err(Failure::Config(format!(
                    "{}: projected space needs a step2 checkpoint; this one is tagged step1",
                    ckpt.display()
                )));
            }
            let mods: Vec<ModalityId> = view.samples().iter().map(|s| s.modality).collect();
            bundle.project_tensor(&x, &mods)
        }
    }?;

    let (n, cols) = (emb.shape()[0], emb.shape()[1]);
    let mut csv = String::from("id,modality,label");
    for j in 0..cols {
        csv.push_str(&format!(",e{j}"));
    }
    csv.push('\n');
    for (i, sample) in view.samples().iter().enumerate() {
        csv.push_str(&format!(
            "{},{},{}",
            sample.id,
            view.modalities().name(sample.modality),
            sample.label.as_u8()
        ));
        for j in 0..cols {
            csv.push_str(&format!(",{}", format_f64(emb.get2(i, j))));
        }
        csv.push('\n');
    }
    debug_assert_eq!(n, view.len());
    write_text(out, &csv)?;

    let mut man = RunManifest::new("export-embeddings");
    man.config(vec![("space".to_string(), space.as_str().to_string())]);
    record_input(&mut man, ckpt)?;
    record_input(&mut man, features)?;
    man.output(out);
    write_manifest(&man, &beside(out))?;

    eprintln!("exported {n} x {cols} embeddings ({})", space.as_str());
    Ok(0)
}
