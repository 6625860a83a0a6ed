//! Closed-form parameter and operation counts.
//!
//! Operations follow the multiply-accumulate convention common to model
//! profilers: one fused multiply-add in a fully connected layer counts as one
//! operation, and elementwise work is ignored.

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub params: u64,
    pub flops: u64,
    pub layers: usize,
    pub points: usize,
}

impl CostReport {
    pub fn params_millions(&self) -> f64 {
        self.params as f64 / 1e6
    }

    pub fn gflops(&self) -> f64 {
        self.flops as f64 / 1e9
    }
}

fn fc_params(din: usize, dout: usize, bias: bool) -> u64 {
    (din * dout + if bias { dout } else { 0 }) as u64
}

const BN_PARAMS: u64 = 2;

/// Parameters and operations of one forward pass over a single cloud of
/// `n_points` points.
pub fn count_params_flops(config: &ModelConfig, n_points: usize) -> Result<CostReport> {
    let config = config.resized(n_points)?;
    let mut params = 0u64;
    let mut flops = 0u64;

    let e = config.embed_dim;
    params += fc_params(3, e, false) + BN_PARAMS * e as u64;
    flops += (n_points * 3 * e) as u64;

    for s in &config.stages {
        let d = s.channels_in;
        let c = s.channels_out;
        let (m, k) = (s.points_out as u64, s.k as u64);
        params += 4 * d as u64;
        params += fc_params(2 * d, c, false) + BN_PARAMS * c as u64;
        flops += m * k * (2 * d * c) as u64;
        let widths = config.block(c).widths()?;
        let mut block_params = 0u64;
        let mut block_macs = 0u64;
        for w in widths.windows(2) {
            block_params += fc_params(w[0], w[1], false) + BN_PARAMS * w[1] as u64;
            block_macs += (w[0] * w[1]) as u64;
        }
        params += block_params * (s.pre_blocks + s.post_blocks) as u64;
        flops += block_macs * (m * k * s.pre_blocks as u64 + m * s.post_blocks as u64);
    }

    let mut width = config.feature_dim();
    for &w in &config.head_widths {
        params += fc_params(width, w, true) + BN_PARAMS * w as u64;
        flops += (width * w) as u64;
        width = w;
    }
    params += fc_params(width, config.num_classes, true);
    flops += (width * config.num_classes) as u64;

    Ok(CostReport {
        params,
        flops,
        layers: config.layer_count(),
        points: n_points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::config::BlockKind;

    #[test]
    fn params_grow_with_ratio_and_embedding() {
        let mut prev = 0;
        for r in [0.25, 0.5, 1.0, 2.0] {
            let mut c = ModelConfig::full(15, 1024);
            c.bottleneck_ratio = r;
            let p = count_params_flops(&c, 1024).unwrap().params;
            assert!(p > prev);
            prev = p;
        }
        let a = ModelConfig::tiny(15, 1024);
        let mut b = a.clone();
        b.embed_dim = 48;
        b.stages[0].channels_in = 48;
        assert!(count_params_flops(&b, 1024).unwrap().params > count_params_flops(&a, 1024).unwrap().params);
    }

    #[test]
    fn inverted_block_costs_more_at_equal_ratio() {
        for r in [1.0, 2.0] {
            let mut c = ModelConfig::full(15, 1024);
            c.bottleneck_ratio = r;
            let cres = count_params_flops(&c, 1024).unwrap();
            c.block_kind = BlockKind::InvRes;
            let inv = count_params_flops(&c, 1024).unwrap();
            assert!(inv.params > cres.params);
        }
    }

    #[test]
    fn stageless_model_is_embedding_plus_head() {
        let mut c = ModelConfig::tiny(10, 64);
        c.stages.clear();
        let r = count_params_flops(&c, 64).unwrap();
        let embed = 3 * 32 + 2 * 32;
        let head = (32 * 512 + 512 + 2 * 512) + (512 * 256 + 256 + 2 * 256) + (256 * 10 + 10);
        assert_eq!(r.params, (embed + head) as u64);
    }
}
