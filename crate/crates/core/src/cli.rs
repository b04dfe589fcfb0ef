//! The `regiongraph` command line: configuration resolution, the
//! subcommands, and exit-code mapping.
//!
//! Settings resolve in this order, later winning: built-in defaults, the
//! TOML file given by `--config`, `RGRAPH_*` environment variables, flags.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::data::{load_dataset, load_meta, save_dataset, synth_generate, training_samples, DataFormat, DatasetMeta, Label, LabelMode, SynthSpec, VideoRecord};
use crate::error::Error;
use crate::eval::evaluate;
use crate::export::{graph_dump, GraphDump};
use crate::graphs::AffinityTransforms;
use crate::model::ModelConfig;
use crate::train::{fit, gradient_check, gradcheck_instance, init_model, metrics_ndjson, Branches, LossMode, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub d: usize,
    pub layers: usize,
    pub dropout: f64,
    pub norm_last_layer: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            d: 512,
            layers: 3,
            dropout: 0.3,
            norm_last_layer: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub train_videos: usize,
    pub test_videos: usize,
    pub frames: usize,
    pub proposals_per_frame: usize,
    pub noise_std: f64,
    pub cue_strength: f64,
    pub shuffle_regions: bool,
    pub with_volume: bool,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            train_videos: 48,
            test_videos: 16,
            frames: 16,
            proposals_per_frame: 10,
            noise_std: 0.1,
            cue_strength: 1.0,
            shuffle_regions: true,
            with_volume: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub iters: usize,
    /// `(iteration, multiplier)` pairs; empty means a 10x drop at 90%.
    pub schedule: Vec<(usize, f64)>,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub branches: Branches,
    pub dropout: bool,
    pub wall_clock: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            learning_rate: t.learning_rate,
            iters: 150,
            schedule: Vec::new(),
            batch_size: 2,
            momentum: t.momentum,
            weight_decay: t.weight_decay,
            branches: t.branches,
            dropout: t.dropout,
            wall_clock: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckSection {
    pub nodes: usize,
    pub d: usize,
    pub layers: usize,
    pub classes: usize,
    pub step: f64,
    pub tolerance: f64,
}

impl Default for GradcheckSection {
    fn default() -> Self {
        GradcheckSection {
            nodes: 6,
            d: 8,
            layers: 2,
            classes: 3,
            step: 1e-5,
            tolerance: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportSection {
    /// Similarity edges below this weight are left out of exports.
    pub sim_min_weight: f64,
}

impl Default for ExportSection {
    fn default() -> Self {
        ExportSection { sim_min_weight: 0.05 }
    }
}

/// Fully resolved settings for one invocation. A copy is written into the
/// output directory of every command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Dataset root; defaults to `<out_dir>/data`. `train/` and `test/`
    /// subdirectories are used when present.
    pub dataset: Option<PathBuf>,
    /// Defaults to `<out_dir>/model.ckpt`.
    pub checkpoint: Option<PathBuf>,
    pub format: DataFormat,
    /// Clips per video at evaluation; scores are max-pooled over clips.
    pub clips: usize,
    pub mode: LabelMode,
    pub model: ModelSection,
    pub synth: SynthSection,
    pub train: TrainSection,
    pub gradcheck: GradcheckSection,
    pub export: ExportSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out_dir: PathBuf::from("run"),
            dataset: None,
            checkpoint: None,
            format: DataFormat::Ndjson,
            clips: 1,
            mode: LabelMode::Single,
            model: ModelSection::default(),
            synth: SynthSection::default(),
            train: TrainSection::default(),
            gradcheck: GradcheckSection::default(),
            export: ExportSection::default(),
        }
    }
}

impl RunConfig {
    pub fn dataset_root(&self) -> PathBuf {
        self.dataset.clone().unwrap_or_else(|| self.out_dir.join("data"))
    }

    /// `<root>/<split>` if it exists, else the root itself.
    pub fn split_dir(&self, split: &str) -> PathBuf {
        let root = self.dataset_root();
        let dir = root.join(split);
        if dir.is_dir() {
            dir
        } else {
            root
        }
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.out_dir.join("model.ckpt"))
    }

    pub fn loss_mode(&self) -> LossMode {
        match self.mode {
            LabelMode::Single => LossMode::SoftmaxCe,
            LabelMode::Multi => LossMode::PerClassSigmoidBce,
        }
    }

    pub fn model_config(&self, classes: usize) -> ModelConfig {
        ModelConfig {
            dropout: self.model.dropout,
            norm_last_layer: self.model.norm_last_layer,
            ..ModelConfig::new(self.model.d, self.model.layers, classes)
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let base = TrainConfig {
            learning_rate: self.train.learning_rate,
            batch_size: self.train.batch_size,
            seed: self.seed,
            loss_mode: self.loss_mode(),
            weight_decay: self.train.weight_decay,
            momentum: self.train.momentum,
            branches: self.train.branches,
            dropout: self.train.dropout,
            wall_clock: self.train.wall_clock,
            ..TrainConfig::default()
        }
        .with_iters(self.train.iters);
        if self.train.schedule.is_empty() {
            base
        } else {
            TrainConfig {
                schedule: self.train.schedule.clone(),
                ..base
            }
        }
    }

    pub fn synth_spec(&self, num_videos: usize) -> SynthSpec {
        SynthSpec {
            num_videos,
            frames: self.synth.frames,
            proposals_per_frame: self.synth.proposals_per_frame,
            d: self.model.d,
            noise_std: self.synth.noise_std,
            cue_strength: self.synth.cue_strength,
            shuffle_regions: self.synth.shuffle_regions,
            with_volume: self.synth.with_volume,
            seed: self.seed,
            ..SynthSpec::default()
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Single,
    Multi,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Ndjson,
    Bin,
}

/// Overrides shared by every subcommand.
#[derive(Clone, Debug, Default, Args)]
pub struct Overrides {
    /// TOML configuration file.
    #[arg(long, global = true, env = "RGRAPH_CONFIG")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, env = "RGRAPH_SEED")]
    pub seed: Option<u64>,
    /// Directory for every output of the command.
    #[arg(long, global = true, env = "RGRAPH_OUT_DIR")]
    pub out_dir: Option<PathBuf>,
    /// Dataset root directory.
    #[arg(long, global = true, env = "RGRAPH_DATASET")]
    pub dataset: Option<PathBuf>,
    /// Model checkpoint path.
    #[arg(long, global = true, env = "RGRAPH_CHECKPOINT")]
    pub checkpoint: Option<PathBuf>,
    /// Clips per video at evaluation.
    #[arg(long, global = true, env = "RGRAPH_CLIPS")]
    pub clips: Option<usize>,
    #[arg(long, global = true, env = "RGRAPH_MODE", value_enum)]
    pub mode: Option<ModeArg>,
    /// Feature width.
    #[arg(long, global = true, env = "RGRAPH_D")]
    pub d: Option<usize>,
    /// Graph convolution layers per branch.
    #[arg(long, global = true, env = "RGRAPH_LAYERS")]
    pub layers: Option<usize>,
    #[arg(long, global = true, env = "RGRAPH_LR")]
    pub lr: Option<f64>,
    #[arg(long, global = true, env = "RGRAPH_ITERS")]
    pub iters: Option<usize>,
    /// Dataset file format.
    #[arg(long, global = true, env = "RGRAPH_FORMAT", value_enum)]
    pub format: Option<FormatArg>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate synthetic train and test datasets.
    Synth,
    /// Build the three adjacencies of every video and dump them as JSON.
    BuildGraph,
    /// Train a model and write a checkpoint and metrics log.
    Train,
    /// Evaluate a checkpoint on the test split.
    Eval,
    /// Compare reverse-mode gradients with finite differences.
    Gradcheck,
    /// Render graph dumps as sparse JSON edge lists and Graphviz files.
    Export,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::BuildGraph => "build-graph",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Gradcheck => "gradcheck",
            Command::Export => "export",
        }
    }
}

#[derive(Clone, Debug, Parser)]
#[command(name = "regiongraph", version, about = "Region-proposal graph networks for video classification")]
pub struct Cli {
    #[command(flatten)]
    pub overrides: Overrides,
    #[command(subcommand)]
    pub command: Command,
}

/// A command failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn numeric(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_NUMERIC,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NonFinite(_) => EXIT_NUMERIC,
            Error::Invalid(_) => EXIT_USAGE,
            _ => EXIT_DATA,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type CmdResult<T = ()> = std::result::Result<T, Failure>;

/// Merges defaults, the config file and the overrides.
pub fn resolve(overrides: &Overrides) -> CmdResult<RunConfig> {
    let mut cfg = match &overrides.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
            toml::from_str(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    let o = overrides.clone();
    if let Some(v) = o.seed {
        cfg.seed = v;
    }
    if let Some(v) = o.out_dir {
        cfg.out_dir = v;
    }
    if let Some(v) = o.dataset {
        cfg.dataset = Some(v);
    }
    if let Some(v) = o.checkpoint {
        cfg.checkpoint = Some(v);
    }
    if let Some(v) = o.clips {
        cfg.clips = v;
    }
    if let Some(v) = o.mode {
        cfg.mode = match v {
            ModeArg::Single => LabelMode::Single,
            ModeArg::Multi => LabelMode::Multi,
        };
    }
    if let Some(v) = o.d {
        cfg.model.d = v;
    }
    if let Some(v) = o.layers {
        cfg.model.layers = v;
    }
    if let Some(v) = o.lr {
        cfg.train.learning_rate = v;
    }
    if let Some(v) = o.iters {
        cfg.train.iters = v;
    }
    if let Some(v) = o.format {
        cfg.format = match v {
            FormatArg::Ndjson => DataFormat::Ndjson,
            FormatArg::Bin => DataFormat::Bin,
        };
    }
    if cfg.clips == 0 {
        return Err(Failure::usage("clips must be at least 1"));
    }
    cfg.model_config(1).validate()?;
    cfg.train_config().validate()?;
    Ok(cfg)
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let cfg = match resolve(&cli.overrides) {
        Ok(cfg) => cfg,
        Err(f) => {
            eprintln!("error: {f}");
            return f.code;
        }
    };
    let marker = cfg.out_dir.join("FAILED");
    let outcome = fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| Failure::from(Error::io(&cfg.out_dir, e)))
        .and_then(|_| {
            let _ = fs::remove_file(&marker);
            write(&cfg.out_dir.join(format!("config.{}.toml", cli.command.name())), cfg.to_toml().as_bytes())
        })
        .and_then(|_| execute(cli.command, &cfg));
    match outcome {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {} failed: {f}", cli.command.name());
            let _ = fs::write(&marker, format!("{}: {f}\n", cli.command.name()));
            f.code
        }
    }
}

pub fn execute(command: Command, cfg: &RunConfig) -> CmdResult {
    match command {
        Command::Synth => cmd_synth(cfg),
        Command::BuildGraph => cmd_build_graph(cfg),
        Command::Train => cmd_train(cfg),
        Command::Eval => cmd_eval(cfg),
        Command::Gradcheck => cmd_gradcheck(cfg),
        Command::Export => cmd_export(cfg),
    }
}

fn write(path: &Path, bytes: &[u8]) -> CmdResult {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e).into())
}

fn cmd_synth(cfg: &RunConfig) -> CmdResult {
    let s = &cfg.synth;
    let spec = cfg.synth_spec(s.train_videos + s.test_videos);
    let mut records = synth_generate(&spec)?;
    let mut meta = spec.meta();
    if cfg.mode == LabelMode::Multi {
        meta.mode = LabelMode::Multi;
        for r in &mut records {
            r.label = Label::MultiHot(
                r.label
                    .to_multi_hot(meta.classes)?
                    .iter()
                    .map(|&v| v as u8)
                    .collect(),
            );
        }
    }
    let test = records.split_off(s.train_videos);
    let root = cfg.dataset_root();
    for (split, part) in [("train", &records), ("test", &test)] {
        save_dataset(&root.join(split), part, &meta, cfg.format)?;
    }
    println!(
        "synth: {} train + {} test videos, {} nodes each, d={} -> {}",
        records.len(),
        test.len(),
        spec.frames * spec.proposals_per_frame,
        spec.d,
        root.display()
    );
    Ok(())
}

fn load_split(cfg: &RunConfig, split: &str) -> CmdResult<(Vec<VideoRecord>, DatasetMeta)> {
    let dir = cfg.split_dir(split);
    let format = if dir.join("dataset.bin").exists() || dir.join("proposals.ndjson").exists() {
        DataFormat::detect(&dir)
    } else {
        cfg.format
    };
    let records = load_dataset(&dir, format)?;
    if records.is_empty() {
        return Err(Error::data(dir.display().to_string(), "no videos").into());
    }
    let meta = match load_meta(&dir)? {
        Some(m) => m,
        None => DatasetMeta::infer(&records)?,
    };
    let d = records[0].feature_dim().unwrap_or(0);
    if d != cfg.model.d {
        return Err(Error::FeatureWidth {
            locus: format!("{} (model d from configuration)", dir.display()),
            expected: cfg.model.d,
            found: d,
        }
        .into());
    }
    if meta.mode != cfg.mode {
        return Err(Failure::usage(format!(
            "{} holds {:?}-label data but the configured mode is {:?}",
            dir.display(),
            meta.mode,
            cfg.mode
        )));
    }
    Ok((records, meta))
}

fn cmd_train(cfg: &RunConfig) -> CmdResult {
    let (records, meta) = load_split(cfg, "train")?;
    let tc = cfg.train_config();
    let mut model = init_model(cfg.model_config(meta.classes), cfg.seed)?;
    let samples = training_samples(&records, &model.transforms)?;
    let start = Instant::now();
    let log = match fit(&mut model, &samples, &tc) {
        Ok(log) => log,
        Err(e @ Error::NonFinite(_)) => {
            let snapshot = cfg.out_dir.join("diagnostic.ckpt");
            checkpoint::save(&snapshot, &model, cfg.mode)?;
            return Err(Failure::numeric(format!("{e}; last finite parameters saved to {}", snapshot.display())));
        }
        Err(e) => return Err(e.into()),
    };
    let ckpt = cfg.checkpoint_path();
    if let Some(parent) = ckpt.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    checkpoint::save(&ckpt, &model, cfg.mode)?;
    write(&cfg.out_dir.join("metrics.ndjson"), metrics_ndjson(&log).as_bytes())?;
    let first = log.first().map_or(f64::NAN, |r| r.loss);
    let last = log.last().map_or(f64::NAN, |r| r.loss);
    println!(
        "train: {} videos, {} iterations, loss {first:.4} -> {last:.4} in {:.1}s -> {}",
        records.len(),
        log.len(),
        start.elapsed().as_secs_f64(),
        ckpt.display()
    );
    Ok(())
}

fn cmd_eval(cfg: &RunConfig) -> CmdResult {
    let (model, mode) = checkpoint::load(&cfg.checkpoint_path())?;
    if model.config.d != cfg.model.d {
        log::warn!("checkpoint has d={}, configuration says {}", model.config.d, cfg.model.d);
    }
    let probe = RunConfig {
        model: ModelSection {
            d: model.config.d,
            ..cfg.model.clone()
        },
        mode,
        ..cfg.clone()
    };
    let (records, meta) = load_split(&probe, "test")?;
    if meta.classes != model.config.classes {
        return Err(Error::data(
            cfg.split_dir("test").display().to_string(),
            format!("{} classes in the data, {} in the checkpoint", meta.classes, model.config.classes),
        )
        .into());
    }
    let report = evaluate(&model, &records, cfg.clips, mode)?;
    let json = serde_json::to_string_pretty(&report).expect("plain report");
    write(&cfg.out_dir.join("eval.json"), json.as_bytes())?;
    match mode {
        LabelMode::Single => println!(
            "eval: {} videos, {} clip(s): top-1 {:.4}, top-5 {:.4}",
            report.videos,
            report.clips,
            report.top1.unwrap_or(f64::NAN),
            report.top5.unwrap_or(f64::NAN)
        ),
        LabelMode::Multi => println!(
            "eval: {} videos, {} clip(s): mAP {:.4}",
            report.videos,
            report.clips,
            report.map.unwrap_or(f64::NAN)
        ),
    }
    Ok(())
}

fn cmd_gradcheck(cfg: &RunConfig) -> CmdResult {
    let g = &cfg.gradcheck;
    let (model, input) = gradcheck_instance(g.nodes, g.d, g.layers, g.classes, cfg.seed)?;
    let mut hot = vec![0u8; g.classes];
    for (i, h) in hot.iter_mut().enumerate() {
        *h = (i % 2 == 0) as u8;
    }
    let cases = [
        (LossMode::SoftmaxCe, Label::Class(g.classes - 1)),
        (LossMode::PerClassSigmoidBce, Label::MultiHot(hot)),
    ];
    let mut reports = Vec::new();
    for (mode, target) in cases {
        let r = gradient_check(&model, &input, &target, mode, g.step, g.tolerance)?;
        println!(
            "gradcheck {:?}: max relative error {:.3e} (tolerance {:.0e}) {}",
            mode,
            r.max_rel_error,
            r.tolerance,
            if r.passed { "PASS" } else { "FAIL" }
        );
        reports.push(r);
    }
    let json = serde_json::to_string_pretty(&reports).expect("plain report");
    write(&cfg.out_dir.join("gradcheck.json"), json.as_bytes())?;
    let failed: Vec<String> = reports
        .iter()
        .flat_map(|r| r.tensors.iter().filter(|t| !(t.max_rel_error < r.tolerance)).map(move |t| format!("{:?}/{}", r.loss_mode, t.name)))
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::numeric(format!("gradient mismatch in {}", failed.join(", "))))
    }
}

fn graph_transforms(cfg: &RunConfig) -> CmdResult<AffinityTransforms> {
    let path = cfg.checkpoint_path();
    if path.exists() {
        let (model, _) = checkpoint::load(&path)?;
        return Ok(model.transforms);
    }
    log::info!("no checkpoint at {}; using freshly initialized transforms", path.display());
    Ok(init_model(cfg.model_config(1), cfg.seed)?.transforms)
}

fn cmd_build_graph(cfg: &RunConfig) -> CmdResult {
    let transforms = graph_transforms(cfg)?;
    let root = cfg.dataset_root();
    let splits: Vec<PathBuf> = ["train", "test"]
        .iter()
        .map(|s| root.join(s))
        .filter(|p| p.is_dir())
        .collect();
    let dirs = if splits.is_empty() { vec![root] } else { splits };
    let out = cfg.out_dir.join("graphs");
    let mut count = 0;
    for dir in dirs {
        let format = DataFormat::detect(&dir);
        for record in load_dataset(&dir, format)? {
            if record.feature_dim() != Some(transforms.w.cols()) {
                return Err(Error::FeatureWidth {
                    locus: format!("{} (video {})", dir.display(), record.video_id),
                    expected: transforms.w.cols(),
                    found: record.feature_dim().unwrap_or(0),
                }
                .into());
            }
            let dump = graph_dump(&record, &transforms)?;
            let json = serde_json::to_string(&dump).expect("plain dump");
            write(&out.join(format!("{}.json", record.video_id)), json.as_bytes())?;
            count += 1;
        }
    }
    println!("build-graph: {count} videos -> {}", out.display());
    Ok(())
}

fn cmd_export(cfg: &RunConfig) -> CmdResult {
    let src = cfg.out_dir.join("graphs");
    let mut entries: Vec<PathBuf> = fs::read_dir(&src)
        .map_err(|e| Error::io(&src, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    entries.sort();
    if entries.is_empty() {
        return Err(Error::data(src.display().to_string(), "no graph dumps; run build-graph first").into());
    }
    let out = cfg.out_dir.join("export");
    for path in &entries {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let dump: GraphDump = serde_json::from_str(&text).map_err(|e| Error::data(path.display().to_string(), e.to_string()))?;
        dump.validate()?;
        let min = cfg.export.sim_min_weight;
        let edges = serde_json::to_string_pretty(&serde_json::json!({
            "video_id": dump.video_id,
            "nodes": dump.nodes,
            "edges": dump.edges(min),
        }))
        .expect("plain edges");
        write(&out.join(format!("{}.edges.json", dump.video_id)), edges.as_bytes())?;
        write(&out.join(format!("{}.dot", dump.video_id)), dump.to_dot(min).as_bytes())?;
    }
    println!("export: {} graphs -> {}", entries.len(), out.display());
    Ok(())
}

/// Entry point of the binary.
pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("RGRAPH_LOG", "warn")).init();
    run_from(std::env::args_os())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_toml() {
        let cfg = RunConfig::default();
        let back: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn flags_override_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(&path, "seed = 4\n[model]\nd = 16\nlayers = 2\n").unwrap();
        let o = Overrides {
            config: Some(path),
            layers: Some(1),
            mode: Some(ModeArg::Multi),
            ..Overrides::default()
        };
        let cfg = resolve(&o).unwrap();
        assert_eq!((cfg.seed, cfg.model.d, cfg.model.layers, cfg.mode), (4, 16, 1, LabelMode::Multi));
        assert_eq!(cfg.loss_mode(), LossMode::PerClassSigmoidBce);
    }

    #[test]
    fn bad_settings_are_usage_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(&path, "sed = 4\n").unwrap();
        let o = Overrides { config: Some(path), ..Overrides::default() };
        assert_eq!(resolve(&o).unwrap_err().code, EXIT_USAGE);
        let o = Overrides { layers: Some(0), ..Overrides::default() };
        assert_eq!(resolve(&o).unwrap_err().code, EXIT_USAGE);
        let o = Overrides { clips: Some(0), ..Overrides::default() };
        assert_eq!(resolve(&o).unwrap_err().code, EXIT_USAGE);
        assert_eq!(run_from(["regiongraph", "frobnicate"]), EXIT_USAGE);
        assert_eq!(run_from(["regiongraph", "--help"]), EXIT_OK);
    }

    #[test]
    fn error_codes() {
        assert_eq!(Failure::from(Error::NonFinite("x".into())).code, EXIT_NUMERIC);
        assert_eq!(Failure::from(Error::data("f", "m")).code, EXIT_DATA);
    }
}
