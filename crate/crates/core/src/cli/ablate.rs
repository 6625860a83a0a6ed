use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use super::config::{RunConfig, SCHEMA_VERSION};
use super::train::{train_run, TrainSummary};
use crate::dualnorm::StatsMode;
use crate::error::{Error, Result};
use crate::network::BlockKind;

pub const VALID_AXES: [&str; 6] = [
    "stats_mode",
    "bottleneck_ratio",
    "block_kind",
    "layer_number",
    "disable_pn",
    "disable_rpn",
];

#[derive(Clone, Debug, PartialEq)]
pub enum AxisValues {
    StatsMode(Vec<StatsMode>),
    BottleneckRatio(Vec<f64>),
    BlockKind(Vec<BlockKind>),
    LayerNumber(Vec<usize>),
    DisablePn(Vec<bool>),
    DisableRpn(Vec<bool>),
}

fn parse_list<T: FromStr>(axis: &str, values: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    let out = values
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| {
            v.parse::<T>()
                .map_err(|e| Error::config(format!("{axis}: bad value {v:?}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if out.is_empty() {
        return Err(Error::config(format!("axis {axis} has no values")));
    }
    Ok(out)
}

impl AxisValues {
    /// Parses `axis=v1,v2,...`.
    pub fn parse(arg: &str) -> Result<Self> {
        let (axis, values) = arg
            .split_once('=')
            .ok_or_else(|| Error::config(format!("axis {arg:?} needs the form name=v1,v2")))?;
        let axis = axis.trim();
        Ok(match axis {
            "stats_mode" => AxisValues::StatsMode(parse_list(axis, values)?),
            "bottleneck_ratio" => AxisValues::BottleneckRatio(parse_list(axis, values)?),
            "block_kind" => AxisValues::BlockKind(parse_list(axis, values)?),
            "layer_number" => AxisValues::LayerNumber(parse_list(axis, values)?),
            "disable_pn" => AxisValues::DisablePn(parse_list(axis, values)?),
            "disable_rpn" => AxisValues::DisableRpn(parse_list(axis, values)?),
            other => {
                return Err(Error::config(format!(
                    "unknown ablation axis {other:?}; valid axes: {}",
                    VALID_AXES.join(", ")
                )))
            }
        })
    }

    fn len(&self) -> usize {
        match self {
            AxisValues::StatsMode(v) => v.len(),
            AxisValues::BottleneckRatio(v) => v.len(),
            AxisValues::BlockKind(v) => v.len(),
            AxisValues::LayerNumber(v) => v.len(),
            AxisValues::DisablePn(v) => v.len(),
            AxisValues::DisableRpn(v) => v.len(),
        }
    }

    /// Sets value `i` on `run` and returns its `axis=value` label.
    fn apply(&self, i: usize, run: &mut RunConfig) -> String {
        let m = &mut run.model;
        match self {
            AxisValues::StatsMode(v) => {
                m.stats_mode = Some(v[i]);
                format!("stats_mode={}", v[i])
            }
            AxisValues::BottleneckRatio(v) => {
                m.bottleneck_ratio = Some(v[i]);
                format!("bottleneck_ratio={}", v[i])
            }
            AxisValues::BlockKind(v) => {
                m.block_kind = Some(v[i]);
                format!("block_kind={}", v[i])
            }
            AxisValues::LayerNumber(v) => {
                m.layers = Some(v[i]);
                format!("layer_number={}", v[i])
            }
            AxisValues::DisablePn(v) => {
                m.disable_pn = v[i];
                format!("disable_pn={}", v[i])
            }
            AxisValues::DisableRpn(v) => {
                m.disable_rpn = v[i];
                format!("disable_rpn={}", v[i])
            }
        }
    }
}

/// Cartesian product of the axes applied to `base`, in row-major order
/// (last axis fastest).
pub fn expand_grid(base: &RunConfig, axes: &[AxisValues]) -> Vec<(String, RunConfig)> {
    let mut cells = vec![(Vec::<String>::new(), base.clone())];
    for axis in axes {
        let mut next = Vec::with_capacity(cells.len() * axis.len());
        for (labels, run) in &cells {
            for i in 0..axis.len() {
                let mut r = run.clone();
                let mut l = labels.clone();
                l.push(axis.apply(i, &mut r));
                next.push((l, r));
            }
        }
        cells = next;
    }
    cells
        .into_iter()
        .map(|(l, r)| (if l.is_empty() { "base".to_string() } else { l.join(";") }, r))
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationRow {
    pub schema_version: u32,
    pub cell: String,
    pub seed: u64,
    pub stats_mode: String,
    pub bottleneck_ratio: f64,
    pub block_kind: String,
    pub layers: usize,
    pub disable_pn: bool,
    pub disable_rpn: bool,
    pub oa: f64,
    pub macc: f64,
    pub gflops: f64,
    pub params_m: f64,
    pub epochs: usize,
    pub train_s_per_epoch: f64,
    pub test_s_per_epoch: f64,
}

impl AblationRow {
    fn from_summary(cell: &str, seed: u64, s: &TrainSummary, train_s: f64, test_s: f64) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            cell: cell.to_string(),
            seed,
            stats_mode: s.model.stats_mode.to_string(),
            bottleneck_ratio: s.model.bottleneck_ratio,
            block_kind: s.model.block_kind.to_string(),
            layers: s.cost.layers,
            disable_pn: s.model.disable_pn,
            disable_rpn: s.model.disable_rpn,
            oa: s.final_test.overall_accuracy,
            macc: s.final_test.mean_class_accuracy,
            gflops: s.cost.flops as f64 / 1e9,
            params_m: s.cost.params as f64 / 1e6,
            epochs: s.epochs_run,
            train_s_per_epoch: train_s,
            test_s_per_epoch: test_s,
        }
    }
}

/// Trains every cell once per seed. Each run writes its artifacts under
/// `out/cells/<index>-seed<seed>`; rows go to `out/ablation.csv` as they
/// finish.
pub fn run_ablation(
    base: &RunConfig,
    axes: &[AxisValues],
    seeds: &[u64],
    out: &Path,
    mut progress: impl FnMut(&AblationRow),
) -> Result<Vec<AblationRow>> {
    if seeds.is_empty() {
        return Err(Error::config("ablation needs at least one seed"));
    }
    let cells = expand_grid(base, axes);
    for (label, run) in &cells {
        run.validate()
            .map_err(|e| Error::config(format!("cell {label}: {e}")))?;
    }
    std::fs::create_dir_all(out)?;
    let mut csv = csv::Writer::from_path(out.join("ablation.csv"))?;
    let mut rows = Vec::with_capacity(cells.len() * seeds.len());
    for (ci, (label, run)) in cells.iter().enumerate() {
        for &seed in seeds {
            let mut r = run.clone();
            r.train.seed = seed;
            r.target_accuracy = None;
            let dir = out.join("cells").join(format!("{ci:02}-seed{seed}"));
            let (mut train_s, mut test_s, mut n) = (0.0, 0.0, 0usize);
            let mut hook = |row: &super::train::MetricsRow| {
                train_s += row.seconds;
                n += 1;
            };
            let t = std::time::Instant::now();
            let summary = train_run(&r, &dir, Some(&mut hook))?;
            let total = t.elapsed().as_secs_f64();
            if n > 0 {
                test_s = ((total - train_s) / n as f64).max(0.0);
                train_s /= n as f64;
            }
            let row = AblationRow::from_summary(label, seed, &summary, train_s, test_s);
            csv.serialize(&row)?;
            csv.flush()?;
            progress(&row);
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Mean final OA per cell label, in grid order.
pub fn mean_oa_by_cell(rows: &[AblationRow]) -> Vec<(String, f64)> {
    let mut out: Vec<(String, f64, usize)> = Vec::new();
    for r in rows {
        match out.iter_mut().find(|(c, _, _)| *c == r.cell) {
            Some(e) => {
                e.1 += r.oa;
                e.2 += 1;
            }
            None => out.push((r.cell.clone(), r.oa, 1)),
        }
    }
    out.into_iter().map(|(c, s, n)| (c, s / n as f64)).collect()
}
