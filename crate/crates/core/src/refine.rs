//! Feature refinement over the stack of sub-image features.
//!
//! Features are stacked along a temporal axis `T = b² + 1` and refined with
//! 3D convolutions. Internally the 4-D tensor is kept as `[N, T, H, W]` so
//! that the convolution channel axis comes first; the public layout is
//! `[T, N, H, W]`.

use std::str::FromStr;

use crate::error::{shape_err, Error, Result};
use crate::tensor::{layers, Scope, Tensor};

/// Depth of the 3D residual unit used throughout the refinement block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Res3dVariant {
    /// One residual block.
    A,
    /// Two cascaded residual blocks plus an outer shortcut.
    B,
    /// Three cascaded residual blocks plus an outer shortcut.
    C,
}

impl Res3dVariant {
    pub fn depth(self) -> usize {
        match self {
            Res3dVariant::A => 1,
            Res3dVariant::B => 2,
            Res3dVariant::C => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Res3dVariant::A => "a",
            Res3dVariant::B => "b",
            Res3dVariant::C => "c",
        }
    }
}

impl FromStr for Res3dVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "a" => Ok(Res3dVariant::A),
            "b" => Ok(Res3dVariant::B),
            "c" => Ok(Res3dVariant::C),
            _ => Err(Error::Config(format!("unknown 3D residual variant `{s}` (expected a, b or c)"))),
        }
    }
}

const CA_REDUCTION: usize = 4;

/// `[T, N, H, W]` stack of sub-image features followed by the global one.
pub fn stack_features(subs: &[Tensor], global: &Tensor) -> Result<Tensor> {
    let mut all = subs.to_vec();
    all.push(global.clone());
    if all.iter().any(|t| t.shape() != global.shape() || t.rank() != 3) {
        return Err(shape_err!("stacked features must all be [N,H,W] of one shape"));
    }
    Tensor::stack(&all)
}

/// `x + conv(prelu(conv(x)))` with 3×3×3 kernels on `[C, T, H, W]`.
pub fn res_block3d(s: &Scope, x: &Tensor) -> Result<Tensor> {
    let c = x.shape()[0];
    let h = layers::conv3d(&s.sub("conv1"), x, c, 3, 1)?;
    let h = layers::prelu(&s.sub("act"), &h)?;
    let h = layers::conv3d(&s.sub("conv2"), &h, c, 3, 1)?;
    x.add(&h)
}

pub fn res3d_forward(s: &Scope, x: &Tensor, variant: Res3dVariant) -> Result<Tensor> {
    if x.rank() != 4 {
        return Err(shape_err!("3D residual unit expects [C,T,H,W], got {:?}", x.shape()));
    }
    if variant == Res3dVariant::A {
        return res_block3d(&s.sub("0"), x);
    }
    let mut h = x.clone();
    for i in 0..variant.depth() {
        h = res_block3d(&s.sub(&i.to_string()), &h)?;
    }
    h.add(x)
}

/// Per-channel gate from pooled statistics; returns `x·g + x` and `g`.
pub fn channel_attention(s: &Scope, x: &Tensor) -> Result<(Tensor, Tensor)> {
    let c = x.shape()[0];
    let pooled = x.global_avg_pool()?.reshape(&[c, 1, 1, 1])?;
    let h = layers::conv3d(&s.sub("conv1"), &pooled, (c / CA_REDUCTION).max(1), 1, 0)?;
    let h = layers::prelu(&s.sub("act"), &h)?;
    let g = layers::conv3d(&s.sub("conv2"), &h, c, 1, 0)?.sigmoid();
    Ok((x.mul(&g)?.add(x)?, g))
}

/// Gate over `(T, H, W)` from channel mean and max; returns `x·g` and `g`.
pub fn spatial_attention(s: &Scope, x: &Tensor) -> Result<(Tensor, Tensor)> {
    let stats = Tensor::concat(&[x.mean_axes(&[0])?, x.max_axis(0)?], 0)?;
    let g = layers::conv3d(&s.sub("conv"), &stats, 1, 3, 1)?.sigmoid();
    Ok((x.mul(&g)?, g))
}

/// Trunk (residual units, channel then spatial attention) gated by a mask
/// branch, plus the input.
pub fn attention_block(s: &Scope, x: &Tensor, variant: Res3dVariant) -> Result<Tensor> {
    let c = x.shape()[0];
    let mut trunk = x.clone();
    for i in 0..3 {
        trunk = res3d_forward(&s.sub(&format!("trunk.{i}")), &trunk, variant)?;
    }
    let (trunk, _) = channel_attention(&s.sub("ca"), &trunk)?;
    let (trunk, _) = spatial_attention(&s.sub("sa"), &trunk)?;
    let mut mask = x.clone();
    for i in 0..3 {
        mask = res3d_forward(&s.sub(&format!("mask.{i}")), &mask, variant)?;
    }
    let mask = layers::conv3d(&s.sub("mask.gate"), &mask, c, 1, 0)?.sigmoid();
    trunk.mul(&mask)?.add(x)
}

/// Refines a `[T, N, H, W]` stack into `[T·N, H, W]`.
pub fn arb_forward(s: &Scope, stacked: &Tensor, variant: Res3dVariant) -> Result<Tensor> {
    let &[t, n, h, w] = stacked.shape() else {
        return Err(shape_err!("refinement expects a [T,N,H,W] stack, got {:?}", stacked.shape()));
    };
    let x = stacked.permute(&[1, 0, 2, 3])?;
    let x = res_block3d(&s.sub("head"), &x)?;
    let x = attention_block(&s.sub("attn"), &x, variant)?;
    x.permute(&[1, 0, 2, 3])?.reshape(&[t * n, h, w])
}

/// Decoder-side inverse of the stack/reshape: `[T·N, H, W]` back to `T`
/// features of `[N, H, W]` through one 3D residual block.
pub fn rearrange_inverse(s: &Scope, f: &Tensor, t: usize) -> Result<Vec<Tensor>> {
    let &[nn, h, w] = f.shape() else {
        return Err(shape_err!("rearrange expects [N',H,W], got {:?}", f.shape()));
    };
    if t == 0 || nn % t != 0 {
        return Err(shape_err!("{nn} channels cannot be split into {t} stacked features"));
    }
    let x = f.reshape(&[t, nn / t, h, w])?.permute(&[1, 0, 2, 3])?;
    let x = res_block3d(&s.sub("head"), &x)?;
    x.permute(&[1, 0, 2, 3])?.unstack()
}
