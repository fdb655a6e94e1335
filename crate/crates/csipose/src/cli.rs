//! Subcommands of the `csipose` binary.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use csipose_core::body::SubjectProfile;
use csipose_core::dataset::{split_dataset, SplitPolicy};
use csipose_core::loss::HuberVariant;
use csipose_core::metrics::{mpjpe, p_mpjpe};
use csipose_core::net::{NetworkSpec, PoseNet};
use csipose_core::pipeline::{build_csi_images, PipelineConfig};
use csipose_core::scene::{synthesize_recording, SceneConfig, Scenario};
use csipose_core::train::{recalibrate_batch_norm, train, TrainConfig, TrainWarning};
use serde::de::DeserializeOwned;

use crate::checkpoint::{Checkpoint, CheckpointMeta, SplitRecord};
use crate::dataset_file::{Dataset, SampleSource};
use crate::error::{Error, Result};
use crate::export::{write_sequence, ExportedPose};
use crate::recording::{read_recording, write_recording, RecordingManifest};
use crate::report::{format_table, parse_json_lines, to_json_line, NamedReport};
use crate::trainlog::EpochRecord;

pub const CONFIG_DIR_ENV: &str = "CSIPOSE_CONFIG_DIR";

#[derive(Debug, Parser)]
#[command(name = "csipose", version, about = "Synthetic WiFi CSI to 3D pose pipeline")]
pub struct Cli {
    /// Only print errors.
    #[arg(short, long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a recording (CSI streams plus poses) from a scene file.
    Simulate(SimulateArgs),
    /// Turn recordings into a (CSI image, pose) dataset file.
    Preprocess(PreprocessArgs),
    /// Train the network on a dataset file and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint and emit per-joint error tables.
    Eval(EvalArgs),
    /// Print the tables of a machine-readable report.
    Report(ReportArgs),
    /// Write predicted skeleton sequences for external plotting.
    Export(ExportArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Within,
    Cross,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ScenarioArg {
    Basic,
    Occluded,
}

impl From<ScenarioArg> for Scenario {
    fn from(s: ScenarioArg) -> Self {
        match s {
            ScenarioArg::Basic => Scenario::Basic,
            ScenarioArg::Occluded => Scenario::Occluded,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum HuberArg {
    Offset,
    Standard,
}

impl From<HuberArg> for HuberVariant {
    fn from(h: HuberArg) -> Self {
        match h {
            HuberArg::Offset => HuberVariant::Offset,
            HuberArg::Standard => HuberVariant::Standard,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SetArg {
    Train,
    Test,
    All,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scene file (TOML). Defaults to `scene.toml` in the config directory,
    /// then to the built-in scene.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Output recording directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Use the body and gait of a preset subject (S1 to S5).
    #[arg(long)]
    pub subject: Option<String>,
    #[arg(long, value_enum)]
    pub scenario: Option<ScenarioArg>,
    /// Seconds to simulate.
    #[arg(long)]
    pub duration: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Defaults to the output directory name.
    #[arg(long)]
    pub recording_id: Option<String>,
    #[arg(long, env = CONFIG_DIR_ENV)]
    pub config_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Recording directory or manifest; repeat for several recordings.
    #[arg(long, required = true)]
    pub recording: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Pipeline settings (TOML). Defaults to `pipeline.toml` in the config directory.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Keep every 4th pose (7.5 Hz).
    #[arg(long)]
    pub decimate: bool,
    #[arg(long, env = CONFIG_DIR_ENV)]
    pub config_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long, value_enum)]
    pub split: Option<SplitArg>,
    /// Held-out subject for `--split cross`; defaults to the last subject.
    #[arg(long)]
    pub holdout: Option<String>,
    /// Seed for the split (and for training).
    #[arg(long)]
    pub seed: Option<u64>,
}

impl SplitArgs {
    fn policy(&self) -> Option<SplitPolicy> {
        self.split.map(|s| match s {
            SplitArg::Within => SplitPolicy::WithinSubject,
            SplitArg::Cross => SplitPolicy::CrossSubject { holdout: self.holdout.clone() },
        })
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Training settings (TOML). Defaults to `train.toml` in the config directory.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub split: SplitArgs,
    #[arg(long, value_enum)]
    pub huber_variant: Option<HuberArg>,
    /// Overfit the first N training samples: full-batch, 200 extra epochs
    /// at a constant learning rate.
    #[arg(long, value_name = "N")]
    pub overfit: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Divide every layer width by this factor (1 is the full network).
    #[arg(long, default_value_t = 1)]
    pub width_divisor: usize,
    /// Training log (JSON lines); defaults to the checkpoint path plus `.log.jsonl`.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long, env = CONFIG_DIR_ENV)]
    pub config_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[command(flatten)]
    pub split: SplitArgs,
    #[arg(long, value_enum, default_value = "test")]
    pub set: SetArg,
    /// Machine-readable report (JSON lines) to write.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[command(flatten)]
    pub split: SplitArgs,
    #[arg(long, value_enum, default_value = "test")]
    pub set: SetArg,
    /// Sequence file to write (JSON lines).
    #[arg(long)]
    pub out: PathBuf,
    /// Export the ground truth instead of predictions.
    #[arg(long)]
    pub truth: bool,
}

/// Extra epochs of the overfit regime.
pub const OVERFIT_EXTRA_EPOCHS: usize = 200;

struct Output {
    quiet: bool,
}

impl Output {
    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }

    fn warn(&self, msg: impl AsRef<str>) {
        eprintln!("warning: {}", msg.as_ref());
    }
}

fn load_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Parse {
        path: path.into(),
        line: e.span().map(|s| text[..s.start].lines().count().max(1)).unwrap_or(0),
        message: e.message().to_string(),
    })
}

/// An explicit path, else `name` inside the config directory if present.
fn config_file(explicit: &Option<PathBuf>, dir: &Option<PathBuf>, name: &str) -> Option<PathBuf> {
    explicit.clone().or_else(|| dir.as_ref().map(|d| d.join(name)).filter(|p| p.is_file()))
}

pub fn run(cli: Cli) -> Result<()> {
    let out = Output { quiet: cli.quiet };
    match cli.command {
        Command::Simulate(a) => simulate(a, &out),
        Command::Preprocess(a) => preprocess(a, &out),
        Command::Train(a) => train_cmd(a, &out),
        Command::Eval(a) => eval(a, &out),
        Command::Report(a) => report(a, &out),
        Command::Export(a) => export(a, &out),
    }
}

fn simulate(a: SimulateArgs, out: &Output) -> Result<()> {
    let mut scene: SceneConfig = match config_file(&a.scene, &a.config_dir, "scene.toml") {
        Some(p) => load_toml(&p)?,
        None => SceneConfig::default(),
    };
    if let Some(id) = &a.subject {
        let profile = SubjectProfile::presets()
            .into_iter()
            .find(|p| &p.id == id)
            .ok_or_else(|| Error::Core(csipose_core::Error::InvalidConfig(format!("unknown subject preset {id:?}"))))?;
        scene = SceneConfig { clutter: scene.clutter.clone(), ..SceneConfig::for_subject(&profile, scene.scenario, scene.duration, scene.seed) };
    }
    if let Some(s) = a.scenario {
        scene.scenario = s.into();
    }
    if let Some(d) = a.duration {
        scene.duration = d;
    }
    if let Some(s) = a.seed {
        scene.seed = s;
    }
    let recording = synthesize_recording(&scene)?;
    let id = a.recording_id.clone().unwrap_or_else(|| {
        a.out.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "recording".into())
    });
    let manifest = RecordingManifest::for_scene(id, &scene);
    write_recording(&a.out, &manifest, &recording)?;
    for s in &recording.streams {
        out.say(format!("receiver {}: {} CSI frames", s.receiver_id, s.frames.len()));
    }
    out.say(format!("poses: {}", recording.poses.len()));
    Ok(())
}

fn preprocess(a: PreprocessArgs, out: &Output) -> Result<()> {
    let mut cfg: PipelineConfig = match config_file(&a.config, &a.config_dir, "pipeline.toml") {
        Some(p) => load_toml(&p)?,
        None => PipelineConfig::default(),
    };
    cfg.decimate |= a.decimate;
    let mut dataset = Dataset::default();
    for path in &a.recording {
        let loaded = read_recording(path)?;
        let m = &loaded.manifest;
        cfg.sync.csi_rate = m.csi_rate;
        cfg.sync.pose_rate = m.pose_rate;
        let built = build_csi_images(&loaded.recording.streams, &loaded.recording.poses, &cfg).map_err(|e| match e {
            csipose_core::Error::RateDrift { drift_percent } => Error::Core(csipose_core::Error::Unsynchronized(format!(
                "{}: stream rate drifts {drift_percent:+.3}% from nominal {} Hz CSI / {} Hz pose",
                path.display(),
                m.csi_rate,
                m.pose_rate
            ))),
            other => Error::Core(other),
        })?;
        out.say(format!(
            "{}: {} pairs ({} poses unsynchronized, {} without full history), reference antennas {:?}",
            m.recording_id,
            built.samples.len(),
            built.unsynchronized,
            built.short_history,
            built.reference_antennas
        ));
        if built.samples.is_empty() {
            out.warn(format!("{}: no pose has a full {}-sample CSI window", m.recording_id, cfg.window));
        }
        dataset.push_recording(
            SampleSource { recording_id: m.recording_id.clone(), subject: m.subject.clone(), scenario: m.scenario },
            built.samples,
        );
    }
    dataset.save(&a.out)?;
    out.say(format!("wrote {} pairs to {}", dataset.len(), a.out.display()));
    Ok(())
}

fn selected(dataset: &Dataset, policy: &SplitPolicy, seed: u64, set: SetArg) -> Result<Vec<usize>> {
    if set == SetArg::All {
        return Ok((0..dataset.len()).collect());
    }
    let split = split_dataset(&dataset.subjects(), policy, seed)?;
    Ok(if set == SetArg::Train { split.train } else { split.test })
}

fn train_cmd(a: TrainArgs, out: &Output) -> Result<()> {
    let dataset = Dataset::load(&a.dataset)?;
    let mut cfg: TrainConfig = match config_file(&a.config, &a.config_dir, "train.toml") {
        Some(p) => load_toml(&p)?,
        None => TrainConfig::default(),
    };
    if a.overfit == Some(0) {
        return Err(Error::Core(csipose_core::Error::InvalidConfig("--overfit needs at least one sample".into())));
    }
    let policy = a.split.policy().unwrap_or_default();
    let split_seed = a.split.seed.unwrap_or(0);
    let mut indices = selected(&dataset, &policy, split_seed, SetArg::Train)?;
    if let Some(n) = a.overfit {
        indices.truncate(n);
        let base = TrainConfig::overfit(OVERFIT_EXTRA_EPOCHS, indices.len());
        cfg.epochs = base.epochs;
        cfg.batch_size = base.batch_size;
        cfg.learning_rate = base.learning_rate;
        cfg.lr_decay = base.lr_decay;
    }
    if let Some(seed) = a.split.seed {
        cfg.seed = seed;
    }
    if let Some(h) = a.huber_variant {
        cfg.huber_variant = h.into();
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    cfg.validate()?;
    let samples: Vec<_> = indices.iter().map(|&i| &dataset.records[i].sample).collect();

    let net = PoseNet::new(NetworkSpec::with_width_divisor(a.width_divisor))?;
    let log_path = a.log.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".log.jsonl");
        PathBuf::from(p)
    });
    let mut log = std::fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut log_error = None;
    let start = Instant::now();
    out.say(format!(
        "training on {} samples: {} epochs, lr {}, batch {}, decay {}, huber delta {} ({:?})",
        samples.len(),
        cfg.epochs,
        cfg.learning_rate,
        cfg.batch_size,
        cfg.lr_decay,
        cfg.huber_delta,
        cfg.huber_variant
    ));
    let outcome = train(&net, &samples, &cfg, |s| {
        let rec = EpochRecord::new(s, start.elapsed().as_secs_f64());
        if let Err(e) = writeln!(log, "{}", rec.to_json()) {
            log_error.get_or_insert(e);
        }
        out.say(format!("epoch {} lr {:.3e} loss {:.5}", s.epoch + 1, s.learning_rate, s.mean_loss));
    })?;
    if let Some(e) = log_error {
        return Err(Error::io(&log_path, e));
    }
    for w in &outcome.warnings {
        match w {
            TrainWarning::SmallDataset { samples, batch_size } => {
                out.warn(format!("only {samples} samples, fewer than one batch of {batch_size}"))
            }
        }
    }
    let mut params = outcome.params;
    recalibrate_batch_norm(&net, &mut params, &samples, cfg.batch_size)?;
    if let (Some(first), Some(last)) = (outcome.history.first(), outcome.history.last()) {
        out.say(format!(
            "loss {:.5} -> {:.5} ({:.1}% of first epoch)",
            first.mean_loss,
            last.mean_loss,
            100.0 * last.mean_loss / first.mean_loss
        ));
    }
    let ckpt = Checkpoint {
        meta: CheckpointMeta {
            network: net.spec().clone(),
            train: Some(cfg),
            epochs_completed: outcome.history.len(),
            split: Some(SplitRecord { policy, seed: split_seed }),
        },
        params,
        adam: Some(outcome.adam),
    };
    ckpt.save(&a.out)?;
    out.say(format!("wrote {} (log {})", a.out.display(), log_path.display()));
    Ok(())
}

/// The checkpoint network plus the dataset rows chosen by the split flags,
/// falling back to the split recorded at training time.
fn load_for_eval(checkpoint: &Path, dataset: &Path, split: &SplitArgs, set: SetArg) -> Result<(Checkpoint, PoseNet, Dataset, Vec<usize>, String)> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let net = ckpt.network()?;
    let dataset = Dataset::load(dataset)?;
    let recorded = ckpt.meta.split.clone();
    let policy = split
        .policy()
        .or_else(|| recorded.as_ref().map(|r| r.policy.clone()))
        .unwrap_or_default();
    let seed = split.seed.or(recorded.map(|r| r.seed)).unwrap_or(0);
    let indices = selected(&dataset, &policy, seed, set)?;
    if indices.is_empty() {
        return Err(Error::Core(csipose_core::Error::Empty { what: "evaluation set" }));
    }
    let name = match (set, &policy) {
        (SetArg::All, _) => "all".to_string(),
        (SetArg::Train, _) => "train".to_string(),
        (SetArg::Test, SplitPolicy::CrossSubject { .. }) => {
            format!("holdout:{}", dataset.subjects()[indices[0]])
        }
        (SetArg::Test, SplitPolicy::WithinSubject) => "test".to_string(),
    };
    Ok((ckpt, net, dataset, indices, name))
}

fn eval(a: EvalArgs, out: &Output) -> Result<()> {
    let (ckpt, net, dataset, indices, set) = load_for_eval(&a.checkpoint, &a.dataset, &a.split, a.set)?;
    let images: Vec<_> = indices.iter().map(|&i| dataset.records[i].sample.image.clone()).collect();
    let truth: Vec<_> = indices.iter().map(|&i| dataset.records[i].sample.pose).collect();
    let pred = net.predict(&ckpt.params, &images)?;
    if pred.iter().any(|p| !p.is_finite()) {
        return Err(Error::Core(csipose_core::Error::NonFinite("predictions")));
    }
    let reports = [
        NamedReport { set: set.clone(), metric: "p-mpjpe".into(), report: p_mpjpe(&pred, &truth)? },
        NamedReport { set, metric: "mpjpe".into(), report: mpjpe(&pred, &truth)? },
    ];
    for r in &reports {
        out.say(format_table(r));
    }
    if let Some(path) = &a.report {
        let text: String = reports.iter().map(|r| to_json_line(r) + "\n").collect();
        crate::bytes::write_file(path, text.as_bytes())?;
        out.say(format!("wrote {}", path.display()));
    }
    Ok(())
}

fn report(a: ReportArgs, out: &Output) -> Result<()> {
    let text = std::fs::read_to_string(&a.report).map_err(|e| Error::io(&a.report, e))?;
    for r in parse_json_lines(&a.report, &text)? {
        out.say(format_table(&r));
    }
    Ok(())
}

fn export(a: ExportArgs, out: &Output) -> Result<()> {
    let (ckpt, net, dataset, indices, _) = load_for_eval(&a.checkpoint, &a.dataset, &a.split, a.set)?;
    let subjects = dataset.subjects();
    let poses = if a.truth {
        indices.iter().map(|&i| dataset.records[i].sample.pose).collect()
    } else {
        let images: Vec<_> = indices.iter().map(|&i| dataset.records[i].sample.image.clone()).collect();
        net.predict(&ckpt.params, &images)?
    };
    let seq: Vec<_> = indices
        .iter()
        .zip(&poses)
        .map(|(&i, p)| ExportedPose::new(dataset.records[i].sample.image.end_timestamp, subjects[i], p))
        .collect();
    write_sequence(&a.out, &seq)?;
    out.say(format!("wrote {} poses to {}", seq.len(), a.out.display()));
    Ok(())
}
