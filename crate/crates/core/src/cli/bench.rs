use std::time::Instant;

use serde::Serialize;

use super::config::{Preset, SCHEMA_VERSION};
use crate::data::{synth_instance, Split, SynthSpec};
use crate::error::{Error, Result};
use crate::geometry::{normalize_unit_sphere, Point};
use crate::network::{count_params_flops, ModelConfig, Phase, PointNormNet};
use crate::tensor::Graph;

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub models: Vec<Preset>,
    pub points: usize,
    pub batch: usize,
    pub repeats: usize,
    pub num_classes: usize,
    /// Skip the forward+backward timing.
    pub test_only: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            models: vec![Preset::Tiny, Preset::Full],
            points: 256,
            batch: 8,
            repeats: 3,
            num_classes: 15,
            test_only: false,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchRow {
    pub schema_version: u32,
    pub model: String,
    pub points: usize,
    pub batch: usize,
    pub repeats: usize,
    pub params: u64,
    pub flops: u64,
    pub layers: usize,
    pub test_seconds: f64,
    pub test_samples_per_sec: f64,
    pub train_seconds: Option<f64>,
    pub train_samples_per_sec: Option<f64>,
}

pub fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

fn batch_clouds(n: usize, batch: usize) -> Result<Vec<Vec<Point>>> {
    let spec = SynthSpec {
        points: n.max(32),
        ..Default::default()
    };
    (0..batch)
        .map(|i| {
            let s = synth_instance(&spec, Split::Test, i)?;
            let mut c = normalize_unit_sphere(&s.coords);
            c.truncate(n);
            Ok(c)
        })
        .collect()
}

fn time_repeats(repeats: usize, mut f: impl FnMut() -> Result<()>) -> Result<f64> {
    let mut times = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t = Instant::now();
        f()?;
        times.push(t.elapsed().as_secs_f64());
    }
    Ok(median(&mut times))
}

pub fn bench_model(config: &ModelConfig, name: &str, cfg: &BenchConfig) -> Result<BenchRow> {
    let cost = count_params_flops(config, cfg.points)?;
    let net = PointNormNet::<f32>::new(config.clone(), 0)?;
    let clouds = batch_clouds(cfg.points, cfg.batch)?;
    let labels: Vec<usize> = (0..cfg.batch).map(|i| i % config.num_classes).collect();
    let test = time_repeats(cfg.repeats, || net.predict(&clouds).map(drop))?;
    let train = if cfg.test_only {
        None
    } else {
        Some(time_repeats(cfg.repeats, || {
            let mut g = Graph::new();
            let (pass, _) = net.forward(&mut g, &clouds, Phase::Train { dropout_seed: 0 })?;
            let loss = g.label_smoothed_ce(pass.logits, &labels, 0.2)?;
            g.backward(loss)
        })?)
    };
    let b = cfg.batch as f64;
    Ok(BenchRow {
        schema_version: SCHEMA_VERSION,
        model: name.to_string(),
        points: cfg.points,
        batch: cfg.batch,
        repeats: cfg.repeats,
        params: cost.params,
        flops: cost.flops,
        layers: cost.layers,
        test_seconds: test,
        test_samples_per_sec: b / test,
        train_seconds: train,
        train_samples_per_sec: train.map(|t| b / t),
    })
}

pub fn bench(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    if cfg.repeats == 0 || cfg.batch == 0 {
        return Err(Error::config("repeats and batch must be positive"));
    }
    cfg.models
        .iter()
        .map(|&p| {
            let model = match p {
                Preset::Tiny => ModelConfig::tiny(cfg.num_classes, cfg.points),
                Preset::Full => ModelConfig::full(cfg.num_classes, cfg.points),
            };
            bench_model(&model, p.name(), cfg)
        })
        .collect()
}
