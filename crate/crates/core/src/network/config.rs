use serde::{Deserialize, Serialize};

use crate::dualnorm::{DualNormFlags, StatsMode};
use crate::error::{Error, Result};
use crate::geometry::SeedRule;

/// Residual block flavor.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlockKind {
    /// Two fully connected layers, `d -> round(r d) -> d`.
    #[default]
    CRes,
    /// Three fully connected layers, `d -> round(r d) -> round(r d) -> d`.
    InvRes,
}

impl BlockKind {
    pub fn fc_layers(self) -> usize {
        match self {
            BlockKind::CRes => 2,
            BlockKind::InvRes => 3,
        }
    }
}

impl std::str::FromStr for BlockKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "cres" | "c-res" | "c-resblock" => Ok(BlockKind::CRes),
            "invres" | "inv-res" | "inv-resblock" => Ok(BlockKind::InvRes),
            other => Err(Error::config(format!(
                "unknown block kind {other:?} (expected c-res or inv-res)"
            ))),
        }
    }
}

impl std::fmt::Display for BlockKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BlockKind::CRes => "c-res",
            BlockKind::InvRes => "inv-res",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockConfig {
    pub channels: usize,
    pub bottleneck_ratio: f64,
    pub kind: BlockKind,
}

impl BlockConfig {
    pub fn hidden(&self) -> Result<usize> {
        hidden_width(self.channels, self.bottleneck_ratio)
    }

    /// Fully connected widths from input to output.
    pub fn widths(&self) -> Result<Vec<usize>> {
        let h = self.hidden()?;
        Ok(match self.kind {
            BlockKind::CRes => vec![self.channels, h, self.channels],
            BlockKind::InvRes => vec![self.channels, h, h, self.channels],
        })
    }
}

/// `round(r * d)`, which must be at least 1.
pub fn hidden_width(channels: usize, ratio: f64) -> Result<usize> {
    if !(ratio.is_finite() && ratio > 0.0) {
        return Err(Error::config(format!("bottleneck ratio {ratio} must be positive")));
    }
    let h = (ratio * channels as f64).round();
    if h < 1.0 {
        return Err(Error::config(format!(
            "bottleneck ratio {ratio} leaves no hidden units for {channels} channels"
        )));
    }
    Ok(h as usize)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageConfig {
    pub points_out: usize,
    pub k: usize,
    pub channels_in: usize,
    pub channels_out: usize,
    pub pre_blocks: usize,
    pub post_blocks: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Point count the stage sizes are laid out for.
    pub input_points: usize,
    pub embed_dim: usize,
    pub stages: Vec<StageConfig>,
    pub stats_mode: StatsMode,
    pub bottleneck_ratio: f64,
    pub block_kind: BlockKind,
    pub num_classes: usize,
    pub disable_pn: bool,
    pub disable_rpn: bool,
    pub head_widths: Vec<usize>,
    pub dropout: f64,
    pub fps_seed: SeedRule,
}

pub const DEFAULT_K: usize = 24;

/// Channel widths per stage.
const FULL_WIDTHS: [usize; 4] = [128, 256, 512, 1024];
const TINY_WIDTHS: [usize; 4] = [64, 128, 256, 256];

impl ModelConfig {
    /// Four stages that halve the point count; `blocks` residual blocks
    /// before and after the neighbor pooling of every stage. Neighborhoods
    /// shrink below `DEFAULT_K` only when a stage has fewer input points.
    fn staged(
        num_classes: usize,
        input_points: usize,
        embed_dim: usize,
        widths: &[usize],
        blocks: usize,
        ratio: f64,
    ) -> Self {
        let mut stages = Vec::with_capacity(widths.len());
        let mut channels_in = embed_dim;
        let mut points = input_points;
        for &w in widths {
            let k = DEFAULT_K.min(points);
            points = (points / 2).max(1);
            stages.push(StageConfig {
                points_out: points,
                k,
                channels_in,
                channels_out: w,
                pre_blocks: blocks,
                post_blocks: blocks,
            });
            channels_in = w;
        }
        Self {
            input_points,
            embed_dim,
            stages,
            stats_mode: StatsMode::LMGS,
            bottleneck_ratio: ratio,
            block_kind: BlockKind::CRes,
            num_classes,
            disable_pn: false,
            disable_rpn: false,
            head_widths: vec![512, 256],
            dropout: 0.5,
            fps_seed: SeedRule::FarthestFromCentroid,
        }
    }

    /// The default 40-layer network.
    pub fn full(num_classes: usize, input_points: usize) -> Self {
        Self::staged(num_classes, input_points, 64, &FULL_WIDTHS, 2, 1.0)
    }

    pub fn tiny(num_classes: usize, input_points: usize) -> Self {
        Self::staged(num_classes, input_points, 32, &TINY_WIDTHS, 1, 0.25)
    }

    /// Full-width network with `blocks` pre and post blocks per stage:
    /// 1, 2 and 3 give 24, 40 and 56 layers.
    pub fn with_depth(num_classes: usize, input_points: usize, blocks: usize) -> Self {
        Self::staged(num_classes, input_points, 64, &FULL_WIDTHS, blocks, 1.0)
    }

    /// Builds the full-width variant with the requested learnable layer
    /// count.
    pub fn with_layer_count(num_classes: usize, input_points: usize, layers: usize) -> Result<Self> {
        let per_block = 2 * BlockKind::CRes.fc_layers() * FULL_WIDTHS.len();
        let fixed = 1 + FULL_WIDTHS.len() + 3;
        if layers <= fixed || (layers - fixed) % per_block != 0 {
            return Err(Error::config(format!(
                "no block depth yields {layers} layers (valid: {fixed} + {per_block} x depth)"
            )));
        }
        Ok(Self::with_depth(
            num_classes,
            input_points,
            (layers - fixed) / per_block,
        ))
    }

    pub fn flags(&self) -> DualNormFlags {
        DualNormFlags {
            point_norm: !self.disable_pn,
            reverse_point_norm: !self.disable_rpn,
        }
    }

    pub fn block(&self, channels: usize) -> BlockConfig {
        BlockConfig {
            channels,
            bottleneck_ratio: self.bottleneck_ratio,
            kind: self.block_kind,
        }
    }

    /// Learnable layers (fully connected layers; normalization and
    /// activation excluded).
    pub fn layer_count(&self) -> usize {
        let per_block = self.block_kind.fc_layers();
        1 + self
            .stages
            .iter()
            .map(|s| 1 + per_block * (s.pre_blocks + s.post_blocks))
            .sum::<usize>()
            + self.head_widths.len()
            + 1
    }

    /// Final feature width fed to the classifier.
    pub fn feature_dim(&self) -> usize {
        self.stages.last().map_or(self.embed_dim, |s| s.channels_out)
    }

    /// Same network laid out for `n` input points: every stage point count
    /// is scaled by `n / input_points`.
    pub fn resized(&self, n: usize) -> Result<Self> {
        if n == self.input_points {
            return Ok(self.clone());
        }
        let mut out = self.clone();
        out.input_points = n;
        for s in &mut out.stages {
            let scaled = (s.points_out as u128 * n as u128 / self.input_points as u128) as usize;
            s.points_out = scaled.max(1);
        }
        out.validate()?;
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::config("num_classes must be at least 2"));
        }
        if self.embed_dim < 3 {
            return Err(Error::config(format!(
                "embed_dim {} must be at least 3",
                self.embed_dim
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.head_widths.contains(&0) {
            return Err(Error::config("classifier widths must be positive"));
        }
        if self.disable_pn && self.disable_rpn {
            return Err(Error::config("disable_pn and disable_rpn cannot both be set"));
        }
        if self.input_points == 0 {
            return Err(Error::config("input_points must be positive"));
        }
        let mut points = self.input_points;
        let mut channels = self.embed_dim;
        for (i, s) in self.stages.iter().enumerate() {
            let fail = |msg: String| Error::config(format!("stage {i}: {msg}"));
            if s.channels_in != channels {
                return Err(fail(format!(
                    "channels_in {} does not match incoming width {channels}",
                    s.channels_in
                )));
            }
            if s.points_out == 0 || s.points_out > points {
                return Err(fail(format!("points_out {} must be in 1..={points}", s.points_out)));
            }
            if s.k == 0 || s.k > points {
                return Err(fail(format!("k {} must be in 1..={points}", s.k)));
            }
            if s.pre_blocks == 0 || s.post_blocks == 0 {
                return Err(fail("needs at least one block before and after pooling".into()));
            }
            if s.channels_out == 0 {
                return Err(fail("channels_out must be positive".into()));
            }
            self.block(s.channels_out).hidden().map_err(|e| fail(e.to_string()))?;
            points = s.points_out;
            channels = s.channels_out;
        }
        Ok(())
    }
}
