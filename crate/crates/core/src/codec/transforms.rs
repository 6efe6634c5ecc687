//! Main and hyper transforms built from strided convs and residual modules.

use crate::error::{shape_err, Result};
use crate::tensor::{layers, Scope, Tensor};

/// Channel widths and depths of the codec transforms.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CodecDims {
    /// Hidden width of the main transforms.
    pub n: usize,
    /// Latent channels.
    pub m: usize,
    /// Hyper-latent channels.
    pub mz: usize,
    /// Residual modules after each downsampling stage.
    pub crm_per_stage: usize,
}

/// Mean and scale of the conditional Gaussian over the latent.
#[derive(Clone)]
pub struct GaussianParams {
    pub mu: Tensor,
    pub sigma: Tensor,
}

pub const SIGMA_MIN: f64 = 0.04;
const LOG_SIGMA_RANGE: (f64, f64) = (-30.0, 16.0);

/// `x + conv(prelu(conv(x)))` with 3×3 kernels.
pub fn res_block(s: &Scope, x: &Tensor) -> Result<Tensor> {
    let c = x.shape()[0];
    let h = layers::conv2d(&s.sub("conv1"), x, c, 3, 1, 1)?;
    let h = layers::prelu(&s.sub("act"), &h)?;
    let h = layers::conv2d(&s.sub("conv2"), &h, c, 3, 1, 1)?;
    x.add(&h)
}

/// Two cascaded residual blocks wrapped in an outer shortcut.
pub fn crm_forward(s: &Scope, x: &Tensor) -> Result<Tensor> {
    if x.rank() != 3 {
        return Err(shape_err!("residual module expects [C,H,W], got {:?}", x.shape()));
    }
    let h = res_block(&s.sub("0"), x)?;
    let h = res_block(&s.sub("1"), &h)?;
    h.add(x)
}

fn crm_stack(s: &Scope, x: &Tensor, count: usize) -> Result<Tensor> {
    let mut h = x.clone();
    for i in 0..count {
        h = crm_forward(&s.sub(&format!("crm{i}")), &h)?;
    }
    Ok(h)
}

fn extents(x: &Tensor, what: &str) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(shape_err!("{what} expects [C,H,W], got {:?}", x.shape())),
    }
}

/// Three stages of stride-2 5×5 conv, PReLU and residual modules.
pub fn analysis_g_a(s: &Scope, f: &Tensor, d: &CodecDims) -> Result<Tensor> {
    let (_, h, w) = extents(f, "analysis transform")?;
    if h % 8 != 0 || w % 8 != 0 {
        return Err(shape_err!("analysis transform needs extents divisible by 8, got {h}x{w}"));
    }
    let mut x = f.clone();
    for (i, out) in [d.n, d.n, d.m].into_iter().enumerate() {
        let st = s.sub(&format!("stage{i}"));
        x = layers::conv2d(&st.sub("conv"), &x, out, 5, 2, 2)?;
        x = layers::prelu(&st.sub("act"), &x)?;
        x = crm_stack(&st, &x, d.crm_per_stage)?;
    }
    Ok(x)
}

/// Mirror of [`analysis_g_a`] producing `out_channels × target`.
pub fn synthesis_g_s(
    s: &Scope,
    y: &Tensor,
    d: &CodecDims,
    out_channels: usize,
    target: (usize, usize),
) -> Result<Tensor> {
    let (c, h, w) = extents(y, "synthesis transform")?;
    if c != d.m || target.0 != h * 8 || target.1 != w * 8 {
        return Err(shape_err!(
            "latent {c}x{h}x{w} does not decode to {}x{} with M={}", target.0, target.1, d.m
        ));
    }
    let mut x = y.clone();
    let widths = [d.n, d.n, out_channels];
    for (i, out) in widths.into_iter().enumerate() {
        let st = s.sub(&format!("stage{i}"));
        let scale = 1 << (i + 1);
        x = crm_stack(&st, &x, d.crm_per_stage)?;
        x = layers::conv_transpose2d(&st.sub("tconv"), &x, out, 5, 2, 2, (h * scale, w * scale))?;
        if i + 1 < widths.len() {
            x = layers::prelu(&st.sub("act"), &x)?;
        }
    }
    Ok(x)
}

pub fn hyper_h_a(s: &Scope, y: &Tensor, d: &CodecDims) -> Result<Tensor> {
    extents(y, "hyper analysis")?;
    let x = layers::conv2d(&s.sub("conv0"), y, d.mz, 5, 2, 2)?;
    let x = layers::prelu(&s.sub("act"), &x)?;
    let x = crm_stack(s, &x, d.crm_per_stage)?;
    layers::conv2d(&s.sub("conv1"), &x, d.mz, 5, 2, 2)
}

/// Latent extents `(h, w)` determine the intermediate extents on the way up.
pub fn hyper_h_s(s: &Scope, z: &Tensor, d: &CodecDims, latent: (usize, usize)) -> Result<GaussianParams> {
    extents(z, "hyper synthesis")?;
    let mid = (latent.0.div_ceil(2), latent.1.div_ceil(2));
    let x = layers::conv_transpose2d(&s.sub("tconv0"), z, d.m, 5, 2, 2, mid)?;
    let x = layers::prelu(&s.sub("act"), &x)?;
    let x = crm_stack(s, &x, d.crm_per_stage)?;
    let p = layers::conv_transpose2d(&s.sub("tconv1"), &x, 2 * d.m, 5, 2, 2, latent)?;
    let mu = p.narrow0(0, d.m)?;
    let raw = p.narrow0(d.m, d.m)?;
    let sigma = raw.clamp(LOG_SIGMA_RANGE.0, LOG_SIGMA_RANGE.1).exp().lower_bound(SIGMA_MIN);
    Ok(GaussianParams { mu, sigma })
}
