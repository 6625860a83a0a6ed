//! Command-line surface: `train`, `eval`, `bench`, `ablate`, `gradcheck`
//! and `synth`.
//!
//! Exit codes: 0 success, 1 configuration or usage error, 2 data or file
//! error, 3 numeric failure (including failed gradient checks).

pub mod ablate;
pub mod bench;
pub mod config;
pub mod eval;
pub mod gradcheck;
pub mod train;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::synth_generate;
use crate::dualnorm::StatsMode;
use crate::error::{Error, Result};
use crate::network::BlockKind;
use crate::train::Precision;
use config::{resolve_out, synth_spec_arg, DataSpec, Preset, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Argument(_) => EXIT_CONFIG,
        Error::Parse { .. }
        | Error::Checkpoint(_)
        | Error::DigestMismatch { .. }
        | Error::Io(_)
        | Error::Json(_)
        | Error::Csv(_) => EXIT_DATA,
        Error::Numeric(_) | Error::Dimension { .. } | Error::Index { .. } | Error::Contract(_) => EXIT_NUMERIC,
    }
}

#[derive(Debug, Parser)]
#[command(name = "pointnorm", version, about = "Point-cloud classification with DualNorm")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write metrics, checkpoints and a summary.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a test split.
    Eval(EvalArgs),
    /// Measure forward and forward+backward throughput.
    Bench(BenchArgs),
    /// Train a grid of model variants on the synthetic benchmark.
    Ablate(AblateArgs),
    /// Finite-difference checks of every differentiable op.
    Gradcheck(GradcheckArgs),
    /// Write the synthetic benchmark to disk with a manifest.
    Synth(SynthArgs),
}

#[derive(Debug, Args, Default)]
pub struct DataArgs {
    /// Synthetic benchmark: `default` or a TOML spec file.
    #[arg(long, conflicts_with = "manifest")]
    pub synth: Option<String>,
    /// Dataset manifest (JSON).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Points per cloud fed to the model.
    #[arg(long)]
    pub points: Option<usize>,
}

impl DataArgs {
    fn apply(&self, data: &mut DataSpec) -> Result<()> {
        if let Some(s) = &self.synth {
            data.synth = Some(synth_spec_arg(s)?);
            data.manifest = None;
        }
        if let Some(m) = &self.manifest {
            data.manifest = Some(m.clone());
            data.synth = None;
        }
        if self.points.is_some() {
            data.points = self.points;
        }
        Ok(())
    }
}

#[derive(Debug, Args, Default)]
pub struct ModelArgs {
    #[arg(long, value_enum)]
    pub model: Option<Preset>,
    /// Learnable layer count (e.g. 24, 40, 56 for the full widths).
    #[arg(long)]
    pub layers: Option<usize>,
    /// Mean/std scopes of the normalization: LMGS, LMLS, GMLS or GMGS.
    #[arg(long)]
    pub stats_mode: Option<StatsMode>,
    /// Hidden width of a block as a multiple of its channels.
    #[arg(long)]
    pub bottleneck_ratio: Option<f64>,
    /// c-res or inv-res.
    #[arg(long)]
    pub block_kind: Option<BlockKind>,
    /// Drop the neighbor-side (point) normalization.
    #[arg(long)]
    pub disable_pn: bool,
    /// Drop the center-side (reverse) normalization.
    #[arg(long)]
    pub disable_rpn: bool,
}

#[derive(Debug, Args, Default)]
pub struct TrainArgs {
    /// Run configuration (TOML); flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Initial learning rate of the cosine schedule.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lr_final: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub label_smoothing: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// f32 or f64.
    #[arg(long, value_parser = parse_precision)]
    pub precision: Option<Precision>,
    /// Train without random rotation and translation.
    #[arg(long)]
    pub no_augment: bool,
    /// Output directory; relative paths resolve under POINTNORM_OUT_ROOT.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Log per-stage spread diagnostics to deltas.jsonl.
    #[arg(long)]
    pub delta_log: bool,
    /// Keep wall-clock numbers out of metrics.csv and summary.json.
    #[arg(long)]
    pub deterministic: bool,
    /// Also save a checkpoint every N epochs.
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Stop once test OA reaches this value.
    #[arg(long)]
    pub target_accuracy: Option<f64>,
    /// Batch size for test evaluation; defaults to the training batch.
    #[arg(long)]
    pub eval_batch: Option<usize>,
    /// Suppress per-epoch progress on stderr.
    #[arg(long, short)]
    pub quiet: bool,
}

fn parse_precision(s: &str) -> std::result::Result<Precision, String> {
    match s {
        "f32" => Ok(Precision::F32),
        "f64" => Ok(Precision::F64),
        other => Err(format!("unknown precision {other:?} (f32 or f64)")),
    }
}

impl TrainArgs {
    /// The config file (or defaults) with every given flag applied.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut r = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        self.data.apply(&mut r.data)?;
        if r.data.manifest.is_none() && r.data.synth.is_none() {
            r.data = DataSpec {
                points: r.data.points,
                ..DataSpec::synth_default()
            };
        }
        let m = &self.model;
        if let Some(p) = m.model {
            r.model.preset = p;
        }
        r.model.layers = m.layers.or(r.model.layers);
        r.model.stats_mode = m.stats_mode.or(r.model.stats_mode);
        r.model.bottleneck_ratio = m.bottleneck_ratio.or(r.model.bottleneck_ratio);
        r.model.block_kind = m.block_kind.or(r.model.block_kind);
        r.model.disable_pn |= m.disable_pn;
        r.model.disable_rpn |= m.disable_rpn;
        let t = &mut r.train;
        t.epochs = self.epochs.unwrap_or(t.epochs);
        t.batch_size = self.batch_size.unwrap_or(t.batch_size);
        t.lr_init = self.lr.unwrap_or(t.lr_init);
        t.lr_final = self.lr_final.unwrap_or(t.lr_final);
        t.weight_decay = self.weight_decay.unwrap_or(t.weight_decay);
        t.label_smoothing = self.label_smoothing.unwrap_or(t.label_smoothing);
        t.seed = self.seed.unwrap_or(t.seed);
        t.precision = self.precision.unwrap_or(t.precision);
        t.augment &= !self.no_augment;
        if self.out.is_some() {
            r.out_dir = self.out.clone();
        }
        r.delta_log |= self.delta_log;
        r.deterministic |= self.deterministic;
        r.checkpoint_every = self.checkpoint_every.unwrap_or(r.checkpoint_every);
        r.target_accuracy = self.target_accuracy.or(r.target_accuracy);
        r.eval_batch = self.eval_batch.or(r.eval_batch);
        r.validate()?;
        Ok(r)
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Run configuration whose model build the checkpoint must match.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    /// Also write the report to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_enum, value_delimiter = ',', default_value = "tiny,full")]
    pub models: Vec<Preset>,
    #[arg(long, default_value_t = 256)]
    pub points: usize,
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    /// Classifier width; only affects the head.
    #[arg(long, default_value_t = 15)]
    pub classes: usize,
    /// Skip the forward+backward timing.
    #[arg(long)]
    pub test_only: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Grid axis as `name=v1,v2`; repeat for a product grid. Axes:
    /// stats_mode, bottleneck_ratio, block_kind, layers, disable_pn,
    /// disable_rpn.
    #[arg(long = "axis", required = true)]
    pub axes: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    pub seeds: Vec<u64>,
    /// Base run configuration (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum)]
    pub model: Option<Preset>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, default_value = "ablation")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, value_enum, default_value = "all")]
    pub scope: gradcheck::Scope,
    /// Random inputs per case.
    #[arg(long, default_value_t = 100)]
    pub seeds: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Spec file (TOML); flags override it.
    #[arg(long)]
    pub spec: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long)]
    pub train_count: Option<usize>,
    #[arg(long)]
    pub test_count: Option<usize>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn write_json_file(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn default_out(r: &RunConfig) -> PathBuf {
    PathBuf::from("runs").join(format!("{}-seed{}", r.model.preset.name(), r.train.seed))
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let run = args.resolve()?;
    let out = resolve_out(run.out_dir.as_deref().unwrap_or(&default_out(&run)));
    let quiet = args.quiet;
    let mut hook = |row: &train::MetricsRow| {
        if !quiet {
            eprintln!(
                "epoch {:>3}  loss {:.4}  train OA {:.3}  test OA {:.3}  mAcc {:.3}  lr {:.2e}  {:.1}s",
                row.epoch, row.loss, row.train_oa, row.test_oa, row.test_macc, row.lr, row.seconds
            );
        }
    };
    let summary = train::train_run(&run, &out, Some(&mut hook))?;
    if !quiet {
        eprintln!(
            "final test OA {:.4}, mAcc {:.4}; artifacts in {}",
            summary.final_test.overall_accuracy,
            summary.final_test.mean_class_accuracy,
            out.display()
        );
    }
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let mut data = DataSpec::default();
    args.data.apply(&mut data)?;
    let expected = match &args.config {
        Some(p) => {
            let run = RunConfig::load(p)?;
            if data.manifest.is_none() && data.synth.is_none() {
                data = run.data.clone();
            }
            let (train, _) = run.data.load()?;
            let n = train
                .points_per_cloud()
                .ok_or_else(|| Error::arg("training clouds differ in size"))?;
            Some(run.model.build(train.num_classes, n)?)
        }
        None => None,
    };
    if data.manifest.is_none() && data.synth.is_none() {
        data = DataSpec::synth_default();
    }
    let report = eval::eval_checkpoint(&args.checkpoint, &data, expected.as_ref(), args.batch_size)?;
    if let Some(p) = &args.out {
        write_json_file(p, &report)?;
    }
    print_json(&report)
}

pub fn cmd_bench(args: &BenchArgs) -> Result<()> {
    let cfg = bench::BenchConfig {
        models: args.models.clone(),
        points: args.points,
        batch: args.batch,
        repeats: args.repeats,
        num_classes: args.classes,
        test_only: args.test_only,
    };
    let rows = bench::bench(&cfg)?;
    for r in &rows {
        eprintln!(
            "{:<5} params {:>7.3}M  FLOPs {:>7.3}G  test {:>8.2} samples/s  train {}",
            r.model,
            r.params as f64 / 1e6,
            r.flops as f64 / 1e9,
            r.test_samples_per_sec,
            r.train_samples_per_sec
                .map_or("-".to_string(), |v| format!("{v:.2} samples/s"))
        );
    }
    if let Some(p) = &args.out {
        write_json_file(&resolve_out(p), &rows)?;
    }
    print_json(&rows)
}

pub fn cmd_ablate(args: &AblateArgs) -> Result<()> {
    let axes = args
        .axes
        .iter()
        .map(|a| ablate::AxisValues::parse(a))
        .collect::<Result<Vec<_>>>()?;
    let mut base = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    args.data.apply(&mut base.data)?;
    if base.data.manifest.is_none() && base.data.synth.is_none() {
        base.data.synth = Some(crate::data::SynthSpec::default());
    }
    if let Some(m) = args.model {
        base.model.preset = m;
    }
    base.train.epochs = args.epochs.unwrap_or(base.train.epochs);
    base.train.batch_size = args.batch_size.unwrap_or(base.train.batch_size);
    let out = resolve_out(&args.out);
    let rows = ablate::run_ablation(&base, &axes, &args.seeds, &out, |r| {
        eprintln!("{:<40} seed {}  OA {:.3}  mAcc {:.3}", r.cell, r.seed, r.oa, r.macc);
    })?;
    for (cell, oa) in ablate::mean_oa_by_cell(&rows) {
        eprintln!("{cell:<40} mean OA {oa:.3}");
    }
    eprintln!("results in {}", out.join("ablation.csv").display());
    Ok(())
}

pub fn cmd_gradcheck(args: &GradcheckArgs) -> Result<()> {
    let report = gradcheck::run_gradcheck(args.scope, args.seeds)?;
    for c in &report.cases {
        eprintln!(
            "{} {:<32} max rel err {:.2e} (seed {}), {} checked, {} skipped",
            if c.passed { "ok  " } else { "FAIL" },
            c.name,
            c.max_rel_err,
            c.worst_seed,
            c.checked,
            c.skipped
        );
    }
    if let Some(p) = &args.out {
        write_json_file(&resolve_out(p), &report)?;
    }
    if report.passed {
        Ok(())
    } else {
        let failed: Vec<&str> = report
            .cases
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name.as_str())
            .collect();
        Err(Error::numeric(format!("gradient check failed: {}", failed.join(", "))))
    }
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let mut spec = match &args.spec {
        Some(s) => synth_spec_arg(s)?,
        None => crate::data::SynthSpec::default(),
    };
    spec.seed = args.seed.unwrap_or(spec.seed);
    spec.points = args.points.unwrap_or(spec.points);
    spec.train_count = args.train_count.unwrap_or(spec.train_count);
    spec.test_count = args.test_count.unwrap_or(spec.test_count);
    spec.noise_sigma = args.noise_sigma.unwrap_or(spec.noise_sigma);
    let out = resolve_out(&args.out);
    let manifest = synth_generate(&spec, &out)?;
    eprintln!(
        "wrote {} clouds and {}",
        manifest.entries.len(),
        out.join(crate::data::MANIFEST_FILE).display()
    );
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

/// Parses `args`, runs the command and maps the outcome to an exit code.
pub fn main_with<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
