//! Differentiable bit counts under discretized continuous distributions.
//!
//! For an integer-centred bin, `P(v) = C(v + 1/2) − C(v − 1/2)`. On noisy
//! (continuous) inputs the same expression is the density of the
//! uniform-noise relaxation. Both distributions used here are symmetric
//! about their location, so the bin is evaluated at `d = |v − loc|` on the
//! upper tail, which keeps the difference of CDFs accurate far from the
//! mode.

use std::f64::consts::{LN_2, SQRT_2};

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// Probability floor applied to every bin.
pub const P_MIN: f64 = 1.0 / (1u64 << 50) as f64;
/// Lower bound on the factorized prior's scale.
pub const LOGISTIC_SCALE_MIN: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dist {
    Gaussian,
    Logistic,
}

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

fn sigmoid(x: f64) -> f64 {
    crate::tensor::sigmoid_f(x)
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

fn normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * libm::exp(-0.5 * x * x)
}

/// CDF of the location-scale distribution at `x`.
pub fn cdf(dist: Dist, x: f64, loc: f64, scale: f64) -> f64 {
    let u = (x - loc) / scale;
    match dist {
        Dist::Gaussian => normal_cdf(u),
        Dist::Logistic => sigmoid(u),
    }
}

/// Unfloored bin mass at distance `d ≥ 0` from the location, together with
/// its partial derivatives with respect to `d` and `scale`.
fn bin_mass(dist: Dist, d: f64, scale: f64) -> (f64, f64, f64) {
    let hi = (d + 0.5) / scale;
    let lo = (d - 0.5) / scale;
    let (p, dens_hi, dens_lo) = match dist {
        Dist::Gaussian => {
            let p = 0.5 * libm::erfc(lo / SQRT_2) - 0.5 * libm::erfc(hi / SQRT_2);
            (p, normal_pdf(hi), normal_pdf(lo))
        }
        Dist::Logistic => {
            // σ(a) − σ(b) = σ(a)·σ(−b)·(1 − e^{−(a−b)})
            let (sh, sl) = (sigmoid(hi), sigmoid(lo));
            let p = sh * sigmoid(-lo) * -libm::expm1(-(hi - lo));
            (p, sh * (1.0 - sh), sl * (1.0 - sl))
        }
    };
    let dp_dd = (dens_hi - dens_lo) / scale;
    let dp_ds = -(dens_hi * hi - dens_lo * lo) / scale;
    (p, dp_dd, dp_ds)
}

/// Floored bin probability of value `v`; used by the entropy coder.
pub fn bin_probability(dist: Dist, v: f64, loc: f64, scale: f64) -> f64 {
    bin_mass(dist, (v - loc).abs(), scale).0.max(P_MIN)
}

/// Bits `−log₂ P(v)` for a single element.
pub fn element_bits(dist: Dist, v: f64, loc: f64, scale: f64) -> f64 {
    -libm::log2(bin_probability(dist, v, loc, scale))
}

/// Total bits of `values` with element-wise `loc` and `scale` (same shape).
/// Gradients flow to all three inputs.
pub fn discretized_bits(dist: Dist, values: &Tensor, loc: &Tensor, scale: &Tensor) -> Result<Tensor> {
    if values.shape() != loc.shape() || values.shape() != scale.shape() {
        return Err(shape_err!(
            "rate inputs disagree: values {:?}, loc {:?}, scale {:?}", values.shape(), loc.shape(), scale.shape()
        ));
    }
    if !loc.data().iter().chain(scale.data()).all(|v| v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite entropy model parameters".into()));
    }
    if let Some(s) = scale.data().iter().find(|&&s| s <= 0.0) {
        return Err(Error::InvalidArgument(format!("entropy model scale {s} is not positive")));
    }
    let n = values.numel();
    let mut total = 0.0;
    let mut d_v = vec![0.0; n];
    let mut d_s = vec![0.0; n];
    for i in 0..n {
        let diff = values.data()[i] - loc.data()[i];
        let (p, dp_dd, dp_ds) = bin_mass(dist, diff.abs(), scale.data()[i]);
        if p > P_MIN {
            total += -libm::log2(p);
            let k = -1.0 / (p * LN_2);
            d_v[i] = k * dp_dd * if diff < 0.0 { -1.0 } else { 1.0 };
            d_s[i] = k * dp_ds;
        } else {
            total += -libm::log2(P_MIN);
        }
    }
    let (gv, gl, gs) = (values.requires_grad(), loc.requires_grad(), scale.requires_grad());
    Ok(Tensor::from_op(
        vec![1],
        vec![total],
        vec![values.clone(), loc.clone(), scale.clone()],
        Box::new(move |g, _| {
            let g = g[0];
            vec![
                gv.then(|| d_v.iter().map(|v| v * g).collect()),
                gl.then(|| d_v.iter().map(|v| -v * g).collect()),
                gs.then(|| d_s.iter().map(|v| v * g).collect()),
            ]
        }),
    ))
}

/// Bits of `values` (`[C, H, W]`) under a per-channel logistic prior with
/// `loc` and `log_scale` of shape `[C]`.
pub fn factorized_bits(values: &Tensor, loc: &Tensor, log_scale: &Tensor) -> Result<Tensor> {
    let &[c, h, w] = values.shape() else {
        return Err(shape_err!("factorized prior expects [C,H,W], got {:?}", values.shape()));
    };
    if loc.shape() != [c] || log_scale.shape() != [c] {
        return Err(shape_err!("factorized prior needs [{c}] parameters"));
    }
    let spread = Tensor::zeros(&[c, h, w]);
    let loc = loc.reshape(&[c, 1, 1])?.add(&spread)?;
    let scale = log_scale.exp().lower_bound(LOGISTIC_SCALE_MIN).reshape(&[c, 1, 1])?.add(&spread)?;
    discretized_bits(Dist::Logistic, values, &loc, &scale)
}

/// Per-channel logistic scale actually used by [`factorized_bits`].
pub fn factorized_scale(log_scale: f64) -> f64 {
    libm::exp(log_scale).max(LOGISTIC_SCALE_MIN)
}
