//! The `msrl` command-line driver.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure
//! (non-finite loss or a failed theory check).

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::dataio::{
    generate_synthetic, load_dataset, read_bytes, read_labels, read_tensor, write_dataset, Manifest,
    SyntheticSpec, LABELS_MAGIC, VIEW_MAGIC,
};
use crate::error::MsrlError;
use crate::metrics::ClusteringScores;
use crate::numerics::DELTA_FLOOR;
use crate::theory::{run_all, TheoryConfig};
use crate::trainer::{batch_sensitivity, predict, resume, Checkpoint, TrainConfig, CHECKPOINT_MAGIC};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

pub const CHECKPOINT_FILE: &str = "checkpoint.mvck";
pub const LOSS_FILE: &str = "loss.csv";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const THEORY_FILE: &str = "theory.csv";

/// Each command writes `<command>_run.json` so runs sharing a directory keep their records.
pub fn run_manifest_file(command: &str) -> String {
    format!("{command}_run.json")
}

#[derive(Debug, Parser)]
#[command(name = "msrl", version, about = "Multiview self-representation clustering")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic heterogeneous multiview dataset.
    Synth(SynthArgs),
    /// Train the clustering heads on a dataset manifest.
    Train(TrainArgs),
    /// Predict cluster labels and, when ground truth is available, score them.
    Eval(EvalArgs),
    /// Run the Monte-Carlo theory checks.
    Check(CheckArgs),
    /// Summarize a view, label, checkpoint or manifest file.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub clusters: usize,
    #[arg(long)]
    pub views: usize,
    #[arg(long)]
    pub samples: usize,
    /// Comma-separated feature dimension per view.
    #[arg(long, value_delimiter = ',', required = true)]
    pub dims: Vec<usize>,
    #[arg(long, default_value_t = 6.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub clusters: usize,
    #[arg(long, default_value_t = 5.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 500)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.1)]
    pub dropout: f64,
    /// Keep every column of each weight matrix at unit norm.
    #[arg(long)]
    pub row_normalize: bool,
    #[arg(long, default_value_t = DELTA_FLOOR)]
    pub delta_floor: f64,
    /// Continue from this checkpoint instead of a fresh initialization.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Ground-truth labels; defaults to the manifest's label file, if any.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Fail unless ground truth is available for scoring.
    #[arg(long)]
    pub metrics: bool,
    /// Evaluation batch size; defaults to the training batch size.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Random batchings compared for the batch-composition diagnostic (0 disables it).
    #[arg(long, default_value_t = 2)]
    pub sensitivity_draws: usize,
    /// Output directory; defaults to the checkpoint's directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[arg(long, default_value_t = 10_000)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, hide = true, default_value_t = 1.0)]
    pub fault_q_scale: f64,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    pub path: PathBuf,
}

/// Enough to reproduce a run: the exact command, resolved configuration and
/// the hashes of every input file.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: Vec<String>,
    pub version: &'static str,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    /// sha256 of each input file, keyed by path.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub started_unix: u64,
    pub wall_clock_secs: f64,
}

struct Failure {
    code: i32,
    message: String,
}

impl From<MsrlError> for Failure {
    fn from(e: MsrlError) -> Self {
        let code = match &e {
            MsrlError::InvalidArgument(_) => EXIT_USAGE,
            e if e.is_numerical() => EXIT_NUMERICAL,
            _ => EXIT_DATA,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

pub fn sha256_file(path: &Path) -> crate::error::Result<String> {
    Ok(hex::encode(Sha256::digest(read_bytes(path)?)))
}

struct Recorder {
    name: &'static str,
    command: Vec<String>,
    started: Instant,
    started_unix: u64,
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
}

impl Recorder {
    fn new(name: &'static str, command: Vec<String>) -> Self {
        Self {
            name,
            command,
            started: Instant::now(),
            started_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    fn input(&mut self, path: &Path) -> crate::error::Result<()> {
        self.inputs
            .insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    fn dataset_inputs(&mut self, manifest_path: &Path) -> crate::error::Result<()> {
        self.input(manifest_path)?;
        let m = Manifest::read(manifest_path)?;
        for p in m.view_paths(manifest_path) {
            self.input(&p)?;
        }
        if let Some(p) = m.labels_path(manifest_path) {
            self.input(&p)?;
        }
        Ok(())
    }

    fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    fn finish(self, config: impl Serialize, seed: Option<u64>, out: Option<&Path>) -> CmdResult {
        let manifest = RunManifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION"),
            config: serde_json::to_value(config).map_err(MsrlError::from)?,
            seed,
            inputs: self.inputs,
            outputs: self.outputs,
            started_unix: self.started_unix,
            wall_clock_secs: self.started.elapsed().as_secs_f64(),
        };
        match out {
            Some(dir) => {
                let path = dir.join(run_manifest_file(self.name));
                let text = serde_json::to_string_pretty(&manifest).map_err(MsrlError::from)? + "\n";
                fs::write(&path, text).map_err(|e| MsrlError::io(&path, e))?;
            }
            None => eprintln!(
                "run manifest: {}",
                serde_json::to_string(&manifest).map_err(MsrlError::from)?
            ),
        }
        Ok(())
    }
}

fn create_dir(dir: &Path) -> crate::error::Result<()> {
    fs::create_dir_all(dir).map_err(|e| MsrlError::io(dir, e))
}

fn write_text(rec: &mut Recorder, path: &Path, text: &str) -> crate::error::Result<()> {
    fs::write(path, text).map_err(|e| MsrlError::io(path, e))?;
    rec.output(path);
    Ok(())
}

fn cmd_synth(args: &SynthArgs, mut rec: Recorder) -> CmdResult {
    let spec = SyntheticSpec {
        clusters: args.clusters,
        views: args.views,
        samples: args.samples,
        dims: args.dims.clone(),
        separation: args.separation,
        seed: args.seed,
    };
    spec.validate()?;
    let data = generate_synthetic(&spec)?;
    create_dir(&args.out)?;
    let manifest_path = write_dataset(&data, &args.out)?;
    let manifest = Manifest::read(&manifest_path)?;
    for p in manifest.view_paths(&manifest_path) {
        rec.output(&p);
    }
    if let Some(p) = manifest.labels_path(&manifest_path) {
        rec.output(&p);
    }
    rec.output(&manifest_path);
    println!(
        "wrote {} view(s), {} samples, {} clusters to {}",
        spec.views,
        spec.samples,
        spec.clusters,
        args.out.display()
    );
    rec.finish(&spec, Some(spec.seed), Some(&args.out))
}

fn cmd_train(args: &TrainArgs, mut rec: Recorder) -> CmdResult {
    let config = TrainConfig {
        alpha: args.alpha,
        beta: args.beta,
        lr: args.lr,
        batch_size: args.batch_size,
        epochs: args.epochs,
        seed: args.seed,
        dropout_rate: args.dropout,
        row_normalize: args.row_normalize,
        delta_floor: args.delta_floor,
    };
    config.validate(args.clusters)?;
    rec.dataset_inputs(&args.manifest)?;
    let data = load_dataset(&args.manifest)?;
    let mut ckpt = match &args.resume {
        Some(path) => {
            rec.input(path)?;
            let ckpt = Checkpoint::load(path)?;
            if ckpt.clusters != args.clusters {
                return Err(usage(format!(
                    "checkpoint has {} clusters, --clusters is {}",
                    ckpt.clusters, args.clusters
                )));
            }
            ckpt
        }
        None => Checkpoint::initialize(&data, args.clusters, &config)?,
    };
    resume(&mut ckpt, &data, config.epochs)?;

    create_dir(&args.out)?;
    let ckpt_path = args.out.join(CHECKPOINT_FILE);
    ckpt.save(&ckpt_path)?;
    rec.output(&ckpt_path);
    write_text(&mut rec, &args.out.join(LOSS_FILE), &ckpt.loss_csv())?;
    if let (Some(first), Some(last)) = (ckpt.loss_trace.first(), ckpt.loss_trace.last()) {
        println!(
            "trained {} epoch(s): total loss {:.6} -> {:.6}",
            ckpt.epoch, first.total, last.total
        );
    }
    println!("checkpoint sha256 {}", sha256_file(&ckpt_path)?);
    rec.finish(&ckpt.config, Some(ckpt.config.seed), Some(&args.out))
}

#[derive(Serialize)]
struct EvalEcho<'a> {
    checkpoint: &'a Path,
    batch_size: usize,
    labels: Option<String>,
    sensitivity_draws: usize,
}

fn cmd_eval(args: &EvalArgs, mut rec: Recorder) -> CmdResult {
    rec.input(&args.checkpoint)?;
    rec.dataset_inputs(&args.manifest)?;
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let data = load_dataset(&args.manifest)?;
    let truth = match &args.labels {
        Some(p) => {
            rec.input(p)?;
            Some(read_labels(p)?)
        }
        None => data.labels.clone(),
    };
    if args.metrics && truth.is_none() {
        return Err(Failure {
            code: EXIT_DATA,
            message: "metrics requested but no ground-truth labels are available".into(),
        });
    }
    if let Some(t) = &truth {
        if t.len() != data.n() {
            return Err(MsrlError::Misaligned(format!(
                "{} labels for {} samples",
                t.len(),
                data.n()
            ))
            .into());
        }
    }
    let batch_size = args.batch_size.unwrap_or(ckpt.config.batch_size);
    if batch_size == 0 {
        return Err(usage("batch size must be ≥ 1"));
    }
    let pred = predict(&ckpt, &data, batch_size)?;

    let out = match &args.out {
        Some(d) => d.clone(),
        None => args
            .checkpoint
            .parent()
            .map_or_else(|| PathBuf::from("."), Path::to_path_buf),
    };
    create_dir(&out)?;
    write_text(&mut rec, &out.join(PREDICTIONS_FILE), &pred.to_csv())?;
    println!("predicted {} samples into {} clusters", data.n(), ckpt.clusters);
    if let Some(t) = &truth {
        let scores = ClusteringScores::compute(&pred.labels, t)?;
        print!("{}", scores.to_table());
        write_text(&mut rec, &out.join(METRICS_FILE), &scores.to_csv())?;
    }
    if args.sensitivity_draws > 0 && batch_size < data.n() {
        let flips = batch_sensitivity(&ckpt, &data, batch_size, args.sensitivity_draws, ckpt.config.seed)?;
        println!("batch-composition sensitivity (max label-flip rate): {flips:.4}");
    }
    let echo = EvalEcho {
        checkpoint: &args.checkpoint,
        batch_size,
        labels: args.labels.as_ref().map(|p| p.display().to_string()),
        sensitivity_draws: args.sensitivity_draws,
    };
    rec.finish(echo, Some(ckpt.config.seed), Some(&out))
}

fn cmd_check(args: &CheckArgs, mut rec: Recorder) -> CmdResult {
    if args.trials == 0 {
        return Err(usage("--trials must be ≥ 1"));
    }
    let config = TheoryConfig {
        trials: args.trials,
        seed: args.seed,
        q_scale: args.fault_q_scale,
    };
    let report = run_all(&config);
    print!("{}", report.to_table());
    if let Some(dir) = &args.out {
        create_dir(dir)?;
        write_text(&mut rec, &dir.join(THEORY_FILE), &report.to_csv())?;
    }
    rec.finish(&config, Some(config.seed), args.out.as_deref())?;
    if report.all_pass() {
        return Ok(());
    }
    for c in report.checks.iter().filter(|c| c.gating && !c.pass) {
        eprintln!(
            "violated: {} ({} of {} trials)\n  worst trial: {}",
            c.name,
            c.violations,
            c.trials,
            c.worst_trial.as_deref().unwrap_or("n/a")
        );
    }
    Err(Failure {
        code: EXIT_NUMERICAL,
        message: "theory checks failed".into(),
    })
}

fn cmd_inspect(args: &InspectArgs, mut rec: Recorder) -> CmdResult {
    let path = &args.path;
    rec.input(path)?;
    let bytes = read_bytes(path)?;
    let magic = bytes.get(..4).unwrap_or(&[]);
    if magic == VIEW_MAGIC {
        let (m, dtype, _) = read_tensor(&bytes, path, true)?;
        println!("feature view: {} samples x {} dims ({:?})", m.rows(), m.cols(), dtype);
    } else if magic == LABELS_MAGIC {
        let labels = read_labels(path)?;
        let k = labels.iter().max().map_or(0, |&m| m + 1);
        let mut counts = vec![0usize; k];
        labels.iter().for_each(|&l| counts[l] += 1);
        println!("labels: {} samples, cluster sizes {counts:?}", labels.len());
    } else if magic == CHECKPOINT_MAGIC {
        let c = Checkpoint::load(path)?;
        println!(
            "checkpoint: {} view(s) with dims {:?}, {} clusters, {} epoch(s), {} Adam steps",
            c.views.len(),
            c.dims(),
            c.clusters,
            c.epoch,
            c.adam.step
        );
        println!("config: {}", serde_json::to_string(&c.config).map_err(MsrlError::from)?);
        if let Some(last) = c.loss_trace.last() {
            println!("last epoch loss: {:.6}", last.total);
        }
    } else {
        let m = Manifest::read(path)?;
        println!("manifest: {} view(s), clusters {:?}", m.views.len(), m.clusters);
        for (v, p) in m.views.iter().zip(m.view_paths(path)) {
            println!("  {} [{}]", p.display(), v.backbone);
        }
        if let Some(p) = m.labels_path(path) {
            println!("  labels {}", p.display());
        }
    }
    rec.finish(serde_json::Value::Null, None, None)
}

fn thread_pool() -> std::result::Result<rayon::ThreadPool, Failure> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("MSRL_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| usage(format!("MSRL_THREADS must be a positive integer, got {v:?}")))?;
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| usage(format!("cannot start worker pool: {e}")))
}

/// Parses `args` (including the program name) and runs the command; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let echo: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let rec = |name| Recorder::new(name, echo.clone());
    let result = thread_pool().and_then(|pool| {
        pool.install(|| match &cli.command {
            Command::Synth(a) => cmd_synth(a, rec("synth")),
            Command::Train(a) => cmd_train(a, rec("train")),
            Command::Eval(a) => cmd_eval(a, rec("eval")),
            Command::Check(a) => cmd_check(a, rec("check")),
            Command::Inspect(a) => cmd_inspect(a, rec("inspect")),
        })
    });
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
