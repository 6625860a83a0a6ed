//! Run configuration files and the shared model/data resolution used by
//! every command.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{load_split, synth_datasets_at, Dataset, DatasetManifest, Split, SynthSpec};
use crate::dualnorm::StatsMode;
use crate::error::{Error, Result};
use crate::network::{BlockKind, ModelConfig};
use crate::train::TrainConfig;

/// Relative output directories resolve under this directory when set.
pub const OUT_ROOT_ENV: &str = "POINTNORM_OUT_ROOT";

/// Version tag written into every CSV and JSON output.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    #[default]
    Tiny,
    Full,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Tiny => "tiny",
            Preset::Full => "full",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub preset: Preset,
    /// Learnable layer count; sets the block depth of every stage.
    pub layers: Option<usize>,
    pub stats_mode: Option<StatsMode>,
    pub bottleneck_ratio: Option<f64>,
    pub block_kind: Option<BlockKind>,
    pub disable_pn: bool,
    pub disable_rpn: bool,
}

impl ModelSpec {
    pub fn build(&self, num_classes: usize, points: usize) -> Result<ModelConfig> {
        let mut c = match self.preset {
            Preset::Tiny => ModelConfig::tiny(num_classes, points),
            Preset::Full => ModelConfig::full(num_classes, points),
        };
        if let Some(kind) = self.block_kind {
            c.block_kind = kind;
        }
        if let Some(layers) = self.layers {
            let depth = depth_for_layers(&c, layers)?;
            for s in &mut c.stages {
                s.pre_blocks = depth;
                s.post_blocks = depth;
            }
        }
        if let Some(mode) = self.stats_mode {
            c.stats_mode = mode;
        }
        if let Some(r) = self.bottleneck_ratio {
            c.bottleneck_ratio = r;
        }
        c.disable_pn = self.disable_pn;
        c.disable_rpn = self.disable_rpn;
        c.validate()?;
        Ok(c)
    }
}

/// Per-stage block depth giving `layers` learnable layers, with equal pre
/// and post depth in every stage.
pub fn depth_for_layers(c: &ModelConfig, layers: usize) -> Result<usize> {
    let stages = c.stages.len();
    let per_depth = 2 * c.block_kind.fc_layers() * stages;
    let fixed = 1 + stages + c.head_widths.len() + 1;
    if per_depth == 0 || layers <= fixed || (layers - fixed) % per_depth != 0 {
        return Err(Error::config(format!(
            "no block depth gives {layers} layers; valid counts are {fixed} + {per_depth} x depth"
        )));
    }
    Ok((layers - fixed) / per_depth)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSpec {
    pub manifest: Option<PathBuf>,
    pub synth: Option<SynthSpec>,
    /// Points per cloud fed to the model; defaults to the dataset's.
    pub points: Option<usize>,
}

impl DataSpec {
    pub fn synth_default() -> Self {
        Self {
            synth: Some(SynthSpec::default()),
            ..Default::default()
        }
    }

    /// Loads both splits at the requested point count.
    pub fn load(&self) -> Result<(Dataset, Dataset)> {
        match (&self.manifest, &self.synth) {
            (Some(_), Some(_)) => Err(Error::config("set either data.manifest or data.synth, not both")),
            (None, None) => Err(Error::config("no dataset: set data.manifest or data.synth")),
            (None, Some(spec)) => synth_datasets_at(spec, self.points.unwrap_or(spec.points)),
            (Some(path), None) => {
                let m = DatasetManifest::load(path)?;
                m.require_splits()?;
                let root = path.parent().unwrap_or(Path::new("."));
                let n = self.points.unwrap_or(m.points_per_cloud);
                Ok((
                    load_split(&m, root, Split::Train, n)?,
                    load_split(&m, root, Split::Test, n)?,
                ))
            }
        }
    }

    pub fn describe(&self) -> String {
        match (&self.manifest, &self.synth) {
            (Some(p), _) => p.display().to_string(),
            (None, Some(s)) => format!("synthetic (seed {}, {} classes)", s.seed, s.classes.len()),
            (None, None) => "none".into(),
        }
    }
}

/// Parses `default` or a TOML file holding a synthetic benchmark spec.
pub fn synth_spec_arg(arg: &str) -> Result<SynthSpec> {
    if arg == "default" {
        return Ok(SynthSpec::default());
    }
    let path = Path::new(arg);
    let text = fs::read_to_string(path)?;
    let spec: SynthSpec = toml::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
    spec.validate()?;
    Ok(spec)
}

/// Everything a training run needs; mirrors the TOML config file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub out_dir: Option<PathBuf>,
    /// Write per-stage spread diagnostics every epoch.
    pub delta_log: bool,
    /// Single-threaded, timing-free outputs.
    pub deterministic: bool,
    /// Save a checkpoint every N epochs; 0 disables.
    pub checkpoint_every: usize,
    /// Stop once test OA reaches this value.
    pub target_accuracy: Option<f64>,
    pub eval_batch: Option<usize>,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub data: DataSpec,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if let Some(t) = self.target_accuracy {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::config(format!("target accuracy {t} outside [0, 1]")));
            }
        }
        if self.eval_batch == Some(0) {
            return Err(Error::config("eval_batch must be positive"));
        }
        if self.model.disable_pn && self.model.disable_rpn {
            return Err(Error::config("disable_pn and disable_rpn cannot both be set"));
        }
        Ok(())
    }

    pub fn eval_batch(&self) -> usize {
        self.eval_batch.unwrap_or(self.train.batch_size)
    }
}

/// Joins relative paths onto `POINTNORM_OUT_ROOT` when it is set.
pub fn resolve_out(dir: &Path) -> PathBuf {
    match std::env::var_os(OUT_ROOT_ENV) {
        Some(root) if dir.is_relative() => Path::new(&root).join(dir),
        _ => dir.to_path_buf(),
    }
}
