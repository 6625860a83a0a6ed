use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use super::config::{RunConfig, SCHEMA_VERSION};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::network::{config_digest, count_params_flops, save_checkpoint, ModelConfig, PointNormNet};
use crate::tensor::Float;
use crate::train::{evaluate, AccuracyReport, Precision, StageDelta, TrainConfig, Trainer};

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const TIMING_FILE: &str = "timing.json";
pub const DELTA_FILE: &str = "deltas.jsonl";
pub const CONFIG_FILE: &str = "config.toml";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const FINAL_CHECKPOINT: &str = "final.pnck";
pub const BEST_CHECKPOINT: &str = "best.pnck";
pub const ABORT_CHECKPOINT: &str = "last_good.pnck";

#[derive(Clone, Debug, Serialize)]
pub struct MetricsRow {
    pub schema_version: u32,
    pub epoch: usize,
    pub loss: f64,
    pub train_oa: f64,
    pub train_macc: f64,
    pub test_oa: f64,
    pub test_macc: f64,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Serialize)]
struct DeltaLine<'a> {
    schema_version: u32,
    epoch: usize,
    #[serde(flatten)]
    delta: &'a StageDelta,
}

#[derive(Clone, Debug, Serialize)]
pub struct CostSummary {
    pub params: u64,
    pub flops: u64,
    pub layers: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct DataSummary {
    pub source: String,
    pub num_classes: usize,
    pub class_names: Vec<String>,
    pub train_size: usize,
    pub test_size: usize,
    pub points: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct Timing {
    pub wall_seconds: f64,
    pub train_samples_per_sec: f64,
    pub test_samples_per_sec: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainSummary {
    pub schema_version: u32,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub config_digest: String,
    pub data: DataSummary,
    pub cost: CostSummary,
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub final_loss: f64,
    pub final_test: AccuracyReport,
    pub best_epoch: usize,
    pub best_test_oa: f64,
    pub eval_batch: usize,
    pub deterministic: bool,
    /// Absent in deterministic runs; see `timing.json`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timing: Option<Timing>,
}

/// Progress callback, one call per finished epoch.
pub type EpochHook<'a> = &'a mut dyn FnMut(&MetricsRow);

pub fn train_run(run: &RunConfig, out: &Path, hook: Option<EpochHook<'_>>) -> Result<TrainSummary> {
    run.validate()?;
    let (train, test) = run.data.load()?;
    let points = train
        .points_per_cloud()
        .ok_or_else(|| Error::arg("training clouds differ in size"))?;
    let model = run.model.build(train.num_classes, points)?;
    match run.train.precision {
        Precision::F32 => train_typed::<f32>(run, model, &train, &test, out, hook),
        Precision::F64 => train_typed::<f64>(run, model, &train, &test, out, hook),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

fn train_typed<T: Float>(
    run: &RunConfig,
    model: ModelConfig,
    train: &Dataset,
    test: &Dataset,
    out: &Path,
    mut hook: Option<EpochHook<'_>>,
) -> Result<TrainSummary> {
    fs::create_dir_all(out.join(CHECKPOINT_DIR))?;
    fs::write(out.join(CONFIG_FILE), run.to_toml()?)?;
    let ckpt = |name: &str| -> PathBuf { out.join(CHECKPOINT_DIR).join(name) };

    let cost = count_params_flops(&model, model.input_points)?;
    let digest = config_digest(&model)?;
    let net = PointNormNet::<T>::new(model.clone(), run.train.seed)?;
    let mut trainer = Trainer::new(net, run.train.clone())?;
    let eval_batch = run.eval_batch();

    let mut csv = csv::Writer::from_path(out.join(METRICS_FILE))?;
    let mut deltas = if run.delta_log {
        Some(BufWriter::new(File::create(out.join(DELTA_FILE))?))
    } else {
        None
    };

    let start = Instant::now();
    let (mut train_secs, mut test_secs) = (0.0, 0.0);
    let (mut train_seen, mut test_seen) = (0usize, 0usize);
    let mut best = (0usize, f64::NEG_INFINITY);
    let mut last: Option<(f64, AccuracyReport)> = None;
    let mut epochs_run = 0;
    let mut stopped_early = false;

    // weights as of the last epoch that trained and evaluated cleanly
    let mut last_good = trainer.net.clone();
    for epoch in 0..run.train.epochs {
        let t = Instant::now();
        let stepped = trainer.train_epoch(train, epoch).and_then(|o| {
            let secs = t.elapsed().as_secs_f64();
            evaluate(&trainer.net, test, eval_batch).map(|acc| (o, acc, secs))
        });
        let (outcome, acc, secs) = match stepped {
            Ok(r) => r,
            Err(e @ Error::Numeric(_)) => {
                save_checkpoint(&last_good, &ckpt(ABORT_CHECKPOINT))?;
                csv.flush()?;
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        last_good.clone_from(&trainer.net);
        train_secs += outcome.record.wall_seconds;
        train_seen += train.len();
        test_secs += t.elapsed().as_secs_f64() - secs;
        test_seen += test.len();

        let row = MetricsRow {
            schema_version: SCHEMA_VERSION,
            epoch: epoch + 1,
            loss: outcome.record.loss,
            train_oa: outcome.record.overall_accuracy,
            train_macc: outcome.record.mean_class_accuracy,
            test_oa: acc.overall_accuracy,
            test_macc: acc.mean_class_accuracy,
            lr: outcome.record.lr,
            seconds: if run.deterministic {
                0.0
            } else {
                outcome.record.wall_seconds
            },
        };
        csv.serialize(&row)?;
        csv.flush()?;
        if let Some(w) = deltas.as_mut() {
            for d in &outcome.deltas {
                serde_json::to_writer(
                    &mut *w,
                    &DeltaLine {
                        schema_version: SCHEMA_VERSION,
                        epoch: epoch + 1,
                        delta: d,
                    },
                )?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
        }
        if let Some(h) = hook.as_mut() {
            h(&row);
        }
        epochs_run = epoch + 1;
        if acc.overall_accuracy > best.1 {
            best = (epoch + 1, acc.overall_accuracy);
            save_checkpoint(&trainer.net, &ckpt(BEST_CHECKPOINT))?;
        }
        if run.checkpoint_every > 0 && (epoch + 1) % run.checkpoint_every == 0 {
            save_checkpoint(&trainer.net, &ckpt(&format!("epoch_{:04}.pnck", epoch + 1)))?;
        }
        let reached = run.target_accuracy.is_some_and(|t| acc.overall_accuracy >= t);
        last = Some((outcome.record.loss, acc));
        if reached {
            stopped_early = epoch + 1 < run.train.epochs;
            break;
        }
    }
    save_checkpoint(&trainer.net, &ckpt(FINAL_CHECKPOINT))?;
    let (final_loss, final_test) = last.ok_or_else(|| Error::config("no epoch was run"))?;

    let timing = Timing {
        wall_seconds: start.elapsed().as_secs_f64(),
        train_samples_per_sec: train_seen as f64 / train_secs.max(f64::MIN_POSITIVE),
        test_samples_per_sec: test_seen as f64 / test_secs.max(f64::MIN_POSITIVE),
    };
    let summary = TrainSummary {
        schema_version: SCHEMA_VERSION,
        model: model.clone(),
        train: run.train.clone(),
        config_digest: digest,
        data: DataSummary {
            source: run.data.describe(),
            num_classes: train.num_classes,
            class_names: train.class_names.clone(),
            train_size: train.len(),
            test_size: test.len(),
            points: model.input_points,
        },
        cost: CostSummary {
            params: cost.params,
            flops: cost.flops,
            layers: cost.layers,
        },
        epochs_run,
        stopped_early,
        final_loss,
        final_test,
        best_epoch: best.0,
        best_test_oa: best.1,
        eval_batch,
        deterministic: run.deterministic,
        timing: (!run.deterministic).then(|| timing.clone()),
    };
    if run.deterministic {
        write_json(&out.join(TIMING_FILE), &timing)?;
    }
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}
