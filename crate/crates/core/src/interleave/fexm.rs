//! Coarse feature extraction over sub-images and its transposed mirror.

use super::merge_tensors;
use crate::error::{shape_err, Result};
use crate::tensor::{layers, Scope, Tensor};

/// Per-sub-image features plus the feature of the whole image, all
/// `[N, H/b, W/b]`.
#[derive(Clone)]
pub struct FexmFeatures {
    pub subs: Vec<Tensor>,
    pub global: Tensor,
}

impl FexmFeatures {
    /// Sub-image features followed by the global one.
    pub fn ordered(&self) -> Vec<Tensor> {
        let mut v = self.subs.clone();
        v.push(self.global.clone());
        v
    }
}

fn global_geometry(b: usize) -> (usize, usize, usize) {
    (b + 1, b, b / 2)
}

/// Two shared 3×3 convs per sub-image, one strided conv over `x`.
pub fn fexm_forward(s: &Scope, subs: &[Tensor], x: &Tensor, b: usize, n: usize) -> Result<FexmFeatures> {
    let &[_, hh, ww] = x.shape() else {
        return Err(shape_err!("fexm expects a [3,H,W] image, got {:?}", x.shape()));
    };
    if subs.len() != b * b || hh % b != 0 || ww % b != 0 {
        return Err(shape_err!("fexm needs b²={} sub-images of a divisible image, got {} for {hh}x{ww}",
            b * b, subs.len()));
    }
    let (h, w) = (hh / b, ww / b);
    let sc = s.sub("sub");
    let mut out = Vec::with_capacity(subs.len());
    for t in subs {
        if t.shape()[1..] != [h, w] {
            return Err(shape_err!("sub-image extents {:?} do not match {h}x{w}", t.shape()));
        }
        let f = layers::conv2d(&sc.sub("conv1"), t, n, 3, 1, 1)?;
        let f = layers::prelu(&sc.sub("act"), &f)?;
        out.push(layers::conv2d(&sc.sub("conv2"), &f, n, 3, 1, 1)?);
    }
    let (k, stride, pad) = global_geometry(b);
    let global = layers::conv2d(&s.sub("global"), x, n, k, stride, pad)?;
    debug_assert_eq!(global.shape()[1..], [h, w]);
    Ok(FexmFeatures { subs: out, global })
}

/// Transposed mirror: shared per-sub-image path reassembled by interleave,
/// plus the upsampled global path, clamped to `[0, 1]` with a
/// straight-through gradient.
pub fn fexm_inverse(s: &Scope, feats: &FexmFeatures, b: usize) -> Result<Tensor> {
    if feats.subs.len() != b * b {
        return Err(shape_err!("inverse fexm needs {} sub-image features, got {}", b * b, feats.subs.len()));
    }
    let &[_, h, w] = feats.global.shape() else {
        return Err(shape_err!("global feature must be [N,H,W], got {:?}", feats.global.shape()));
    };
    if feats.subs.iter().any(|f| f.shape() != feats.global.shape()) {
        return Err(shape_err!("sub-image features do not match the global feature geometry"));
    }
    let sc = s.sub("sub");
    let mut parts = Vec::with_capacity(feats.subs.len());
    for f in &feats.subs {
        let n = f.shape()[0];
        let g = layers::conv_transpose2d(&sc.sub("tconv1"), f, n, 3, 1, 1, (h, w))?;
        let g = layers::prelu(&sc.sub("act"), &g)?;
        parts.push(layers::conv_transpose2d(&sc.sub("tconv2"), &g, 3, 3, 1, 1, (h, w))?);
    }
    let local = merge_tensors(&parts, b)?;
    let (k, stride, pad) = global_geometry(b);
    let global = layers::conv_transpose2d(&s.sub("global"), &feats.global, 3, k, stride, pad, (h * b, w * b))?;
    Ok(local.add(&global)?.clamp_st(0.0, 1.0))
}
