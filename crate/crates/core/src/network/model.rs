use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::blocks::{
    classify, coords_tensor, embedding_forward, stage_forward, BnRunning, DropoutSource, FcBn, HeadParams, NormState,
    StageMode, StageParams,
};
use super::config::ModelConfig;
use crate::dualnorm::DEFAULT_EPS;
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::tensor::{BatchStats, Float, Graph, Tensor, Var};

pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor<T> {
    pub name: String,
    pub value: Tensor<T>,
}

/// Parameter handles of the whole network.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout<H> {
    pub embed: FcBn<H>,
    pub stages: Vec<StageParams<H>>,
    pub head: HeadParams<H>,
}

impl<H: Copy> Layout<H> {
    pub fn map<U>(&self, f: &impl Fn(H) -> U) -> Layout<U> {
        Layout {
            embed: self.embed.map(f),
            stages: self.stages.iter().map(|s| s.map(f)).collect(),
            head: self.head.map(f),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    /// Batch statistics and dropout drawn from `dropout_seed`.
    Train { dropout_seed: u64 },
    /// Running statistics, no dropout.
    Eval,
}

pub struct ForwardPass<T> {
    pub logits: Var,
    /// PN standard deviation per stage.
    pub pn_sigma: Vec<Option<Var>>,
    pub batch_stats: Vec<(usize, BatchStats<T>)>,
}

/// The staged point-cloud classifier with its parameters and running
/// normalization statistics.
#[derive(Clone, Debug)]
pub struct PointNormNet<T> {
    config: ModelConfig,
    layout: Layout<usize>,
    params: Vec<NamedTensor<T>>,
    running: Vec<BnRunning<T>>,
    running_names: Vec<String>,
}

struct Builder<'r, T> {
    params: Vec<NamedTensor<T>>,
    running: Vec<BnRunning<T>>,
    running_names: Vec<String>,
    rng: &'r mut ChaCha8Rng,
}

impl<T: Float> Builder<'_, T> {
    fn push(&mut self, name: String, value: Tensor<T>) -> usize {
        self.params.push(NamedTensor { name, value });
        self.params.len() - 1
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    fn uniform(&mut self, name: String, shape: &[usize], fan_in: usize) -> usize {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let data = (0..shape.iter().product::<usize>())
            .map(|_| T::of(self.rng.random_range(-bound..=bound)))
            .collect();
        let t = Tensor::new(shape.to_vec(), data).expect("shape matches");
        self.push(name, t)
    }

    fn fc_bn(&mut self, prefix: &str, fc: &str, bn: &str, din: usize, dout: usize, bias: bool) -> FcBn<usize> {
        let weight = self.uniform(format!("{prefix}.{fc}.weight"), &[din, dout], din);
        let bias = bias.then(|| self.uniform(format!("{prefix}.{fc}.bias"), &[dout], din));
        let gamma = self.push(format!("{prefix}.{bn}.gamma"), Tensor::full(&[dout], T::one()));
        let beta = self.push(format!("{prefix}.{bn}.beta"), Tensor::zeros(&[dout]));
        self.running.push(BnRunning::new(dout));
        self.running_names.push(format!("{prefix}.{bn}"));
        FcBn {
            weight,
            bias,
            gamma,
            beta,
            slot: self.running.len() - 1,
        }
    }

    fn block(&mut self, prefix: &str, widths: &[usize]) -> Vec<FcBn<usize>> {
        widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                self.fc_bn(
                    prefix,
                    &format!("fc{}", i + 1),
                    &format!("bn{}", i + 1),
                    w[0],
                    w[1],
                    false,
                )
            })
            .collect()
    }
}

impl<T: Float> PointNormNet<T> {
    /// Builds a network with weights drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder {
            params: Vec::new(),
            running: Vec::new(),
            running_names: Vec::new(),
            rng: &mut rng,
        };
        let embed = b.fc_bn("embed", "fc", "bn", 3, config.embed_dim, false);
        let mut stages = Vec::with_capacity(config.stages.len());
        for (i, s) in config.stages.iter().enumerate() {
            let p = format!("stages.{i}");
            let d = s.channels_in;
            let pn_alpha = b.push(format!("{p}.pn.alpha"), Tensor::full(&[d], T::one()));
            let pn_beta = b.push(format!("{p}.pn.beta"), Tensor::zeros(&[d]));
            let rpn_alpha = b.push(format!("{p}.rpn.alpha"), Tensor::full(&[d], T::one()));
            let rpn_beta = b.push(format!("{p}.rpn.beta"), Tensor::zeros(&[d]));
            let lift = b.fc_bn(&format!("{p}.lift"), "fc", "bn", 2 * d, s.channels_out, false);
            let widths = config.block(s.channels_out).widths()?;
            let pre = (0..s.pre_blocks)
                .map(|j| b.block(&format!("{p}.pre.{j}"), &widths))
                .collect();
            let post = (0..s.post_blocks)
                .map(|j| b.block(&format!("{p}.post.{j}"), &widths))
                .collect();
            stages.push(StageParams {
                pn_alpha,
                pn_beta,
                rpn_alpha,
                rpn_beta,
                lift,
                pre,
                post,
            });
        }
        let mut width = config.feature_dim();
        let mut hidden = Vec::new();
        for (i, &w) in config.head_widths.iter().enumerate() {
            hidden.push(b.fc_bn(&format!("head.{i}"), "fc", "bn", width, w, true));
            width = w;
        }
        let out_weight = b.uniform("head.out.weight".into(), &[width, config.num_classes], width);
        let out_bias = b.uniform("head.out.bias".into(), &[config.num_classes], width);
        let layout = Layout {
            embed,
            stages,
            head: HeadParams {
                hidden,
                out_weight,
                out_bias,
            },
        };
        let Builder {
            params,
            running,
            running_names,
            ..
        } = b;
        Ok(Self {
            config,
            layout,
            params,
            running,
            running_names,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout<usize> {
        &self.layout
    }

    pub fn params(&self) -> &[NamedTensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [NamedTensor<T>] {
        &mut self.params
    }

    pub fn running(&self) -> &[BnRunning<T>] {
        &self.running
    }

    pub fn running_mut(&mut self) -> &mut [BnRunning<T>] {
        &mut self.running
    }

    pub fn running_names(&self) -> &[String] {
        &self.running_names
    }

    /// Learnable scalar count.
    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    /// Records every parameter as a trainable leaf.
    pub fn record_params(&self, g: &mut Graph<T>) -> Vec<Var> {
        self.params.iter().map(|p| g.param(p.value.clone())).collect()
    }

    /// Records every parameter as a constant.
    pub fn record_constants(&self, g: &mut Graph<T>) -> Vec<Var> {
        self.params.iter().map(|p| g.input(p.value.clone())).collect()
    }

    /// Forward pass over a batch of equally sized clouds, with parameter
    /// handles from [`Self::record_params`] or [`Self::record_constants`].
    pub fn forward_with(
        &self,
        g: &mut Graph<T>,
        vars: &[Var],
        clouds: &[Vec<Point>],
        phase: Phase,
    ) -> Result<ForwardPass<T>> {
        if vars.len() != self.params.len() {
            return Err(Error::Dimension {
                op: "forward",
                lhs: vec![self.params.len()],
                rhs: vec![vars.len()],
            });
        }
        let n = clouds.first().map_or(0, Vec::len);
        if n != self.config.input_points {
            return Err(Error::arg(format!(
                "model expects {} points per cloud, got {n}",
                self.config.input_points
            )));
        }
        let layout = self.layout.map(&|i: usize| vars[i]);
        let (mut norm, mut dropout) = match phase {
            Phase::Train { dropout_seed } => (
                NormState::train(),
                Some(DropoutSource::new(self.config.dropout, dropout_seed)),
            ),
            Phase::Eval => (NormState::eval(&self.running), None),
        };
        let mode = StageMode {
            stats: self.config.stats_mode,
            flags: self.config.flags(),
            seed: self.config.fps_seed,
            dualnorm_eps: DEFAULT_EPS,
        };
        let input = g.input(coords_tensor(clouds)?);
        let mut x = embedding_forward(g, input, &layout.embed, &mut norm)?;
        let mut coords = clouds.to_vec();
        let mut pn_sigma = Vec::with_capacity(self.config.stages.len());
        for (stage, params) in self.config.stages.iter().zip(&layout.stages) {
            let out = stage_forward(g, &coords, x, stage, params, &mode, &mut norm)?;
            coords = out.coords;
            x = out.features;
            pn_sigma.push(out.pn_sigma);
        }
        let logits = classify(g, x, &layout.head, dropout.as_mut(), &mut norm)?;
        Ok(ForwardPass {
            logits,
            pn_sigma,
            batch_stats: norm.observed,
        })
    }

    /// Trainable forward pass; returns the pass and the parameter handles.
    pub fn forward(&self, g: &mut Graph<T>, clouds: &[Vec<Point>], phase: Phase) -> Result<(ForwardPass<T>, Vec<Var>)> {
        let vars = self.record_params(g);
        let pass = self.forward_with(g, &vars, clouds, phase)?;
        Ok((pass, vars))
    }

    /// Evaluation-mode logits, `[batch, classes]`.
    pub fn predict(&self, clouds: &[Vec<Point>]) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let vars = self.record_constants(&mut g);
        let pass = self.forward_with(&mut g, &vars, clouds, Phase::Eval)?;
        Ok(g.value(pass.logits).clone())
    }

    /// Folds observed batch statistics into the running estimates.
    pub fn update_running(&mut self, stats: &[(usize, BatchStats<T>)]) {
        for (slot, s) in stats {
            self.running[*slot].update(s, BN_MOMENTUM);
        }
    }

    /// Replaces parameter and running-statistic values, checking names and
    /// shapes.
    pub fn load_state(&mut self, params: Vec<NamedTensor<T>>, running: Vec<BnRunning<T>>) -> Result<()> {
        if params.len() != self.params.len() || running.len() != self.running.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters and {} normalization states, got {} and {}",
                self.params.len(),
                self.running.len(),
                params.len(),
                running.len()
            )));
        }
        for (have, new) in self.params.iter().zip(&params) {
            if have.name != new.name || have.value.shape() != new.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "record {} {:?} does not match model parameter {} {:?}",
                    new.name,
                    new.value.shape(),
                    have.name,
                    have.value.shape()
                )));
            }
        }
        for (have, new) in self.running.iter().zip(&running) {
            if have.mean.len() != new.mean.len() || have.var.len() != new.var.len() {
                return Err(Error::Checkpoint("normalization state width mismatch".into()));
            }
        }
        self.params = params;
        self.running = running;
        Ok(())
    }

    /// Same weights in another precision.
    pub fn cast<U: Float>(&self) -> PointNormNet<U> {
        PointNormNet {
            config: self.config.clone(),
            layout: self.layout.clone(),
            params: self
                .params
                .iter()
                .map(|p| NamedTensor {
                    name: p.name.clone(),
                    value: p.value.cast(),
                })
                .collect(),
            running: self
                .running
                .iter()
                .map(|r| BnRunning {
                    mean: r.mean.iter().map(|v| U::of(v.as_f64())).collect(),
                    var: r.var.iter().map(|v| U::of(v.as_f64())).collect(),
                })
                .collect(),
            running_names: self.running_names.clone(),
        }
    }
}
