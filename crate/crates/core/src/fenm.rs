//! Feature enhancement of the decoded feature with dense blocks.

use crate::error::{shape_err, Result};
use crate::tensor::{layers, Scope, Tensor};

pub const DEFAULT_LAYERS: usize = 3;
pub const DEFAULT_GROWTH: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DenseConfig {
    pub layers: usize,
    pub growth: usize,
}

impl Default for DenseConfig {
    fn default() -> Self {
        Self { layers: DEFAULT_LAYERS, growth: DEFAULT_GROWTH }
    }
}

/// Each layer sees the block input and every earlier layer output; a 1×1
/// conv fuses them back to the input width, plus the input.
pub fn dense_block(s: &Scope, x: &Tensor, cfg: DenseConfig) -> Result<Tensor> {
    if x.rank() != 3 {
        return Err(shape_err!("dense block expects [C,H,W], got {:?}", x.shape()));
    }
    let c = x.shape()[0];
    let mut feats = vec![x.clone()];
    for i in 0..cfg.layers {
        let inp = Tensor::concat(&feats, 0)?;
        let h = layers::conv2d(&s.sub(&format!("layer{i}.conv")), &inp, cfg.growth, 3, 1, 1)?;
        feats.push(layers::prelu(&s.sub(&format!("layer{i}.act")), &h)?);
    }
    let all = Tensor::concat(&feats, 0)?;
    layers::conv2d(&s.sub("fuse"), &all, c, 1, 1, 0)?.add(x)
}

/// Two dense blocks and a 3×3 conv inside an outer shortcut.
pub fn fenm_forward(s: &Scope, f: &Tensor, cfg: DenseConfig) -> Result<Tensor> {
    let h = dense_block(&s.sub("db0"), f, cfg)?;
    let h = dense_block(&s.sub("db1"), &h, cfg)?;
    let c = f.shape()[0];
    layers::conv2d(&s.sub("conv"), &h, c, 3, 1, 1)?.add(f)
}

/// Mean squared error towards the encoder feature, which is detached.
pub fn fe_loss(enhanced: &Tensor, target: &Tensor) -> Result<Tensor> {
    if enhanced.shape() != target.shape() {
        return Err(shape_err!("fe loss shapes differ: {:?} vs {:?}", enhanced.shape(), target.shape()));
    }
    enhanced.mse(&target.detach())
}
