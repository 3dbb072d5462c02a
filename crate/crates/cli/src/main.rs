//! `protomatch` command-line front end.
//!
//! Settings resolve in three layers: built-in defaults, then the JSON file
//! given by `--config`, then individual flags. Data artifacts always go to
//! files; stdout carries progress only. Failures print one JSON line on
//! stderr and exit with 2 (usage) or 1 (runtime).

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use protomatch::engine::{
    attention_csv, evaluate, inspect_attention, match_videos, train, write_loss_curve, Checkpoint, EvalOptions,
    Precision, RunConfig, TrainOutcome,
};
use protomatch::feature_io::{load_feature_set, synth_dataset, FeatureSet, SignalSource, SynthSpec};
use protomatch::parallel::Parallelism;
use protomatch::Scalar;

#[derive(Parser)]
#[command(
    name = "protomatch",
    version,
    about = "Few-shot video classification with compound prototypes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic feature set.
    Synth(SynthArgs),
    /// Train a model and write the best checkpoint plus its loss curve.
    Train(TrainArgs),
    /// Evaluate a checkpoint over sampled test episodes.
    Eval(EvalArgs),
    /// Similarity breakdown between two videos.
    Match(MatchArgs),
    /// Per-frame attention of every prototype for one video.
    InspectAttention(InspectArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Signal {
    Global,
    Objects,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum PrecisionArg {
    F32,
    F64,
}

#[derive(Args)]
struct SynthArgs {
    /// JSON generator spec; flags override its fields.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    per_class: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    boxes: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    separation: Option<f64>,
    #[arg(long)]
    temporal_jitter: Option<f64>,
    #[arg(long)]
    speed_jitter: Option<f64>,
    #[arg(long)]
    nuisance: Option<f64>,
    #[arg(long)]
    object_clutter: Option<f64>,
    #[arg(long)]
    centered_curves: bool,
    #[arg(long, value_enum)]
    signal: Option<Signal>,
    /// Class counts `TRAIN,VAL,TEST`; writes `train/`, `val/` and `test/`
    /// under the output directory instead of a single set.
    #[arg(long, value_delimiter = ',')]
    splits: Option<Vec<usize>>,
    #[arg(short, long)]
    output: PathBuf,
}

/// Run-configuration overrides shared by every model-building command.
#[derive(Args)]
struct ConfigArgs {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    ways: Option<usize>,
    #[arg(long)]
    shots: Option<usize>,
    #[arg(long)]
    queries: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    episodes_per_epoch: Option<usize>,
    #[arg(long)]
    val_episodes: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long, value_enum)]
    precision: Option<PrecisionArg>,
}

impl ConfigArgs {
    fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.ways {
            c.ways = v;
        }
        if let Some(v) = self.shots {
            c.shots = v;
        }
        if let Some(v) = self.queries {
            c.queries = v;
        }
        if let Some(v) = self.epochs {
            c.max_epochs = v;
        }
        if let Some(v) = self.episodes_per_epoch {
            c.episodes_per_epoch = v;
        }
        if let Some(v) = self.val_episodes {
            c.val_episodes = v;
        }
        if let Some(v) = self.lr {
            c.lr = v;
        }
        if let Some(v) = self.temperature {
            c.temperature = v;
        }
        if let Some(p) = self.precision {
            c.precision = match p {
                PrecisionArg::F32 => Precision::F32,
                PrecisionArg::F64 => Precision::F64,
            };
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Training set directory or manifest.
    #[arg(long)]
    train: PathBuf,
    /// Validation set directory or manifest.
    #[arg(long)]
    val: PathBuf,
    /// Checkpoint directory.
    #[arg(short, long)]
    output: PathBuf,
    /// Loss-curve CSV; defaults to `loss_curve.csv` in the checkpoint directory.
    #[arg(long)]
    loss_curve: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Test set directory or manifest.
    #[arg(long)]
    test: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Caps evaluation threads; 1 runs on the calling thread.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    ways: Option<usize>,
    #[arg(long)]
    shots: Option<usize>,
    #[arg(long)]
    queries: Option<usize>,
    /// Evaluate even if test classes were seen in training.
    #[arg(long)]
    allow_overlap: bool,
    /// Include per-episode predictions in the report.
    #[arg(long)]
    per_episode: bool,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct MatchArgs {
    a: String,
    b: String,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Feature set holding both videos.
    #[arg(long)]
    data: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct InspectArgs {
    video: String,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
}

/// Failure before any work started: bad paths or inconsistent flags.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

/// Accepts a dataset directory or its `manifest.json`.
fn manifest_path(path: &Path) -> anyhow::Result<PathBuf> {
    let m = if path.is_dir() {
        path.join("manifest.json")
    } else {
        path.to_path_buf()
    };
    if !m.is_file() {
        return Err(usage(format!("no feature-set manifest at {}", m.display())));
    }
    Ok(m)
}

fn load_set(path: &Path) -> anyhow::Result<FeatureSet> {
    Ok(load_feature_set(&manifest_path(path)?)?)
}

fn require_checkpoint(dir: &Path) -> anyhow::Result<()> {
    if !dir.join("meta.json").is_file() {
        return Err(usage(format!("no checkpoint in {}", dir.display())));
    }
    Ok(())
}

fn write_file(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn synth(args: &SynthArgs) -> anyhow::Result<()> {
    let mut spec = match &args.spec {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => SynthSpec::default(),
    };
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => {
            $(if let Some(v) = args.$flag { spec.$field = v; })*
        };
    }
    set!(classes => classes, per_class => videos_per_class, seed => seed, frames => frames,
        boxes => boxes, dim => dim, separation => separation, temporal_jitter => temporal_jitter,
        speed_jitter => speed_jitter, nuisance => nuisance, object_clutter => object_clutter);
    spec.centered_curves |= args.centered_curves;
    if let Some(s) = args.signal {
        spec.signal = match s {
            Signal::Global => SignalSource::Global,
            Signal::Objects => SignalSource::Objects,
            Signal::Both => SignalSource::Both,
        };
    }
    let set = synth_dataset(&spec)?;
    match &args.splits {
        None => {
            let m = set.save(&args.output)?;
            println!(
                "wrote {} videos of {} classes to {}",
                set.num_videos(),
                set.num_classes(),
                m.display()
            );
        }
        Some(sizes) => {
            if sizes.len() != 3 {
                return Err(usage("--splits takes three class counts: TRAIN,VAL,TEST"));
            }
            let parts = set.split_classes(sizes)?;
            for (name, part) in ["train", "val", "test"].iter().zip(&parts) {
                let m = part.save(&args.output.join(name))?;
                println!("wrote {} classes to {}", part.num_classes(), m.display());
            }
        }
    }
    let text = serde_json::to_string_pretty(&spec)? + "\n";
    write_file(&args.output.join("synth.json"), &text)
}

fn run_train<F: Scalar>(
    train_set: &FeatureSet,
    val_set: &FeatureSet,
    config: &RunConfig,
) -> anyhow::Result<TrainOutcome<f64>> {
    let out = train::<F>(train_set, val_set, config)?;
    Ok(TrainOutcome {
        best: out.best.cast(),
        history: out.history,
        step_losses: out.step_losses,
        stopped_early: out.stopped_early,
    })
}

fn train_cmd(args: &TrainArgs) -> anyhow::Result<()> {
    let config = args.config.resolve()?;
    let train_set = load_set(&args.train)?;
    let val_set = load_set(&args.val)?;
    println!(
        "training on {} classes ({} videos), validating on {}",
        train_set.num_classes(),
        train_set.num_videos(),
        val_set.num_classes()
    );
    let out = match config.precision {
        Precision::F32 => run_train::<f32>(&train_set, &val_set, &config)?,
        Precision::F64 => run_train::<f64>(&train_set, &val_set, &config)?,
    };
    out.best.save(&args.output)?;
    let curve = args
        .loss_curve
        .clone()
        .unwrap_or_else(|| args.output.join("loss_curve.csv"));
    write_loss_curve(&curve, &out.history)?;
    println!(
        "best epoch {} of {}{}; checkpoint in {}",
        out.best.epoch,
        out.history.len(),
        if out.stopped_early { " (stopped early)" } else { "" },
        args.output.display()
    );
    Ok(())
}

/// Loads a checkpoint at the precision its configuration asks for.
enum AnyCheckpoint {
    F32(Checkpoint<f32>),
    F64(Checkpoint<f64>),
}

fn load_checkpoint(dir: &Path) -> anyhow::Result<AnyCheckpoint> {
    require_checkpoint(dir)?;
    let ckpt = Checkpoint::<f64>::load(dir)?;
    Ok(match ckpt.model.config.precision {
        Precision::F32 => AnyCheckpoint::F32(ckpt.cast()),
        Precision::F64 => AnyCheckpoint::F64(ckpt),
    })
}

macro_rules! with_checkpoint {
    ($ckpt:expr, |$c:ident| $body:expr) => {
        match $ckpt {
            AnyCheckpoint::F32($c) => $body,
            AnyCheckpoint::F64($c) => $body,
        }
    };
}

fn eval_cmd(args: &EvalArgs) -> anyhow::Result<()> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let test_set = load_set(&args.test)?;
    let parallelism = match args.workers {
        Some(0) => return Err(usage("--workers must be positive")),
        Some(1) => Parallelism::Sequential,
        Some(w) => Parallelism::Threads { workers: Some(w) },
        None => Parallelism::default(),
    };
    let report = with_checkpoint!(&ckpt, |c| {
        let cfg = &c.model.config;
        let opts = EvalOptions {
            episodes: args.episodes,
            seed: args.seed,
            ways: args.ways.unwrap_or(cfg.ways),
            shots: args.shots.unwrap_or(cfg.shots),
            queries: args.queries.unwrap_or(cfg.queries),
            parallelism,
            allow_overlap: args.allow_overlap,
            keep_episodes: args.per_episode,
        };
        evaluate(&c.model, &c.train_classes, &test_set, &opts)?
    });
    write_file(&args.output, &report.to_json())?;
    println!(
        "accuracy {:.4} ± {:.4} over {} episodes; report in {}",
        report.accuracy,
        report.ci_half_width(),
        report.episodes,
        args.output.display()
    );
    Ok(())
}

fn find<'a>(set: &'a FeatureSet, id: &str) -> anyhow::Result<&'a protomatch::feature_io::VideoFeatures> {
    set.get(id)
        .ok_or_else(|| usage(format!("no video {id:?} in the feature set")))
}

fn match_cmd(args: &MatchArgs) -> anyhow::Result<()> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let set = load_set(&args.data)?;
    let (a, b) = (find(&set, &args.a)?, find(&set, &args.b)?);
    let breakdown = with_checkpoint!(&ckpt, |c| match_videos(&c.model, a, b)?);
    write_file(&args.output, &(serde_json::to_string_pretty(&breakdown)? + "\n"))?;
    println!("s({}, {}) = {:.6}", args.a, args.b, breakdown.s);
    Ok(())
}

fn inspect_cmd(args: &InspectArgs) -> anyhow::Result<()> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let set = load_set(&args.data)?;
    let video = find(&set, &args.video)?;
    let profiles = with_checkpoint!(&ckpt, |c| inspect_attention(&c.model, video)?);
    write_file(&args.output, &attention_csv(&profiles))?;
    println!(
        "{} prototype profiles written to {}",
        profiles.len(),
        args.output.display()
    );
    Ok(())
}

fn error_line(kind: &str, err: &anyhow::Error) -> String {
    let message = format!("{err:#}");
    serde_json::json!({ "error": kind, "message": message }).to_string()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.render().to_string();
            eprint!("{msg}");
            eprintln!("{}", serde_json::json!({ "error": "usage", "message": msg.trim() }));
            return ExitCode::from(2);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stdout)
        .format(|buf, record| writeln!(buf, "{}", record.args()))
        .init();

    let result = match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Match(a) => match_cmd(a),
        Command::InspectAttention(a) => inspect_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            if err.is::<Usage>() {
                eprintln!("{}", error_line("usage", &err));
                return ExitCode::from(2);
            }
            let kind = err.downcast_ref::<protomatch::Error>().map_or("runtime", |e| e.kind());
            eprintln!("{}", error_line(kind, &err));
            ExitCode::FAILURE
        }
    }
}
