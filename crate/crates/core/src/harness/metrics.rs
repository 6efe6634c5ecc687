//! PSNR, MS-SSIM and the Bjontegaard rate difference.

use crate::error::{shape_err, Error, Result};
use crate::interleave::PlanarImage;

pub const PSNR_CAP: f64 = 100.0;

/// Rate and quality of one coded image or the average over a set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RdPoint {
    pub bpp: f64,
    pub psnr: f64,
    pub ms_ssim: f64,
}

fn same_extents(a: &PlanarImage, b: &PlanarImage) -> Result<()> {
    if (a.height(), a.width()) != (b.height(), b.width()) {
        return Err(shape_err!(
            "images differ in size: {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        ));
    }
    Ok(())
}

pub fn mse(a: &PlanarImage, b: &PlanarImage) -> Result<f64> {
    same_extents(a, b)?;
    let n = a.data().len() as f64;
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n)
}

/// `10·log10(1 / MSE)` on `[0, 1]` pixels, capped.
pub fn psnr(a: &PlanarImage, b: &PlanarImage) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((-10.0 * libm::log10(m)).min(PSNR_CAP))
}

const WINDOW: usize = 11;
const WINDOW_SIGMA: f64 = 1.5;
const SCALE_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MsSsim {
    pub value: f64,
    /// Number of scales that fit the image (5 for sides of 161 and up).
    pub scales: usize,
}

/// One channel plane, row-major.
#[derive(Clone)]
struct Plane {
    h: usize,
    w: usize,
    v: Vec<f64>,
}

impl Plane {
    /// 2×2 mean; odd trailing rows and columns average what is present.
    fn downsample(&self) -> Plane {
        let (h, w) = (self.h.div_ceil(2), self.w.div_ceil(2));
        let mut v = Vec::with_capacity(h * w);
        for r in 0..h {
            for c in 0..w {
                let mut sum = 0.0;
                let mut n = 0.0;
                for rr in 2 * r..(2 * r + 2).min(self.h) {
                    for cc in 2 * c..(2 * c + 2).min(self.w) {
                        sum += self.v[rr * self.w + cc];
                        n += 1.0;
                    }
                }
                v.push(sum / n);
            }
        }
        Plane { h, w, v }
    }
}

fn gaussian_window() -> [f64; WINDOW] {
    let mut g = [0.0; WINDOW];
    let c = (WINDOW / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = libm::exp(-d * d / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA));
    }
    let s: f64 = g.iter().sum();
    g.map(|v| v / s)
}

/// Separable "valid" Gaussian filtering.
fn blur(p: &Plane, g: &[f64; WINDOW]) -> Plane {
    let w1 = p.w - WINDOW + 1;
    let h1 = p.h - WINDOW + 1;
    let mut tmp = vec![0.0; p.h * w1];
    for r in 0..p.h {
        for c in 0..w1 {
            tmp[r * w1 + c] = (0..WINDOW).map(|k| g[k] * p.v[r * p.w + c + k]).sum();
        }
    }
    let mut out = vec![0.0; h1 * w1];
    for r in 0..h1 {
        for c in 0..w1 {
            out[r * w1 + c] = (0..WINDOW).map(|k| g[k] * tmp[(r + k) * w1 + c]).sum();
        }
    }
    Plane { h: h1, w: w1, v: out }
}

fn product(a: &Plane, b: &Plane) -> Plane {
    Plane { h: a.h, w: a.w, v: a.v.iter().zip(&b.v).map(|(x, y)| x * y).collect() }
}

/// Mean SSIM and mean contrast-structure term of one scale.
fn ssim_terms(x: &Plane, y: &Plane, g: &[f64; WINDOW]) -> (f64, f64) {
    let (mx, my) = (blur(x, g), blur(y, g));
    let (sxx, syy, sxy) = (blur(&product(x, x), g), blur(&product(y, y), g), blur(&product(x, y), g));
    let n = mx.v.len() as f64;
    let mut ssim = 0.0;
    let mut cs = 0.0;
    for i in 0..mx.v.len() {
        let (a, b) = (mx.v[i], my.v[i]);
        let vx = sxx.v[i] - a * a;
        let vy = syy.v[i] - b * b;
        let cov = sxy.v[i] - a * b;
        let c = (2.0 * cov + C2) / (vx + vy + C2);
        cs += c;
        ssim += (2.0 * a * b + C1) / (a * a + b * b + C1) * c;
    }
    (ssim / n, cs / n)
}

/// Scales whose smallest side is still at least the window size.
pub fn ms_ssim_scales(height: usize, width: usize) -> usize {
    let mut side = height.min(width);
    let mut scales = 0;
    while scales < SCALE_WEIGHTS.len() && side >= WINDOW {
        scales += 1;
        side = side.div_ceil(2);
    }
    scales
}

/// Multi-scale SSIM averaged over channels, with the scale weights of the
/// scales that fit renormalized to sum to one.
pub fn ms_ssim(a: &PlanarImage, b: &PlanarImage) -> Result<MsSsim> {
    same_extents(a, b)?;
    let (h, w) = (a.height(), a.width());
    let scales = ms_ssim_scales(h, w);
    if scales == 0 {
        return Err(Error::InvalidArgument(format!("{h}x{w} is smaller than the {WINDOW}x{WINDOW} window")));
    }
    let weights = &SCALE_WEIGHTS[..scales];
    let wsum: f64 = weights.iter().sum();
    let g = gaussian_window();
    let plane = |img: &PlanarImage, c: usize| Plane { h, w, v: img.data()[c * h * w..(c + 1) * h * w].to_vec() };
    let mut total = 0.0;
    for c in 0..3 {
        let (mut x, mut y) = (plane(a, c), plane(b, c));
        let mut value = 1.0;
        for (s, &wt) in weights.iter().enumerate() {
            let (ssim, cs) = ssim_terms(&x, &y, &g);
            let term = if s + 1 == scales { ssim } else { cs };
            value *= libm::pow(term.max(0.0), wt / wsum);
            if s + 1 < scales {
                x = x.downsample();
                y = y.downsample();
            }
        }
        total += value;
    }
    Ok(MsSsim { value: total / 3.0, scales })
}

/// Least-squares cubic through `(t, v)` pairs; coefficients low to high.
fn fit_cubic(t: &[f64], v: &[f64]) -> Result<[f64; 4]> {
    let mut a = [[0.0; 5]; 4];
    for (&ti, &vi) in t.iter().zip(v) {
        let p = [1.0, ti, ti * ti, ti * ti * ti];
        for r in 0..4 {
            for c in 0..4 {
                a[r][c] += p[r] * p[c];
            }
            a[r][4] += p[r] * vi;
        }
    }
    for col in 0..4 {
        let piv = (col..4).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).expect("rows left");
        if a[piv][col].abs() < 1e-12 {
            return Err(Error::InvalidArgument("rate-distortion points are degenerate".into()));
        }
        a.swap(col, piv);
        for r in 0..4 {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..5 {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    Ok([a[0][4] / a[0][0], a[1][4] / a[1][1], a[2][4] / a[2][2], a[3][4] / a[3][3]])
}

fn integrate(p: &[f64; 4], lo: f64, hi: f64) -> f64 {
    let prim = |x: f64| p[0] * x + p[1] * x * x / 2.0 + p[2] * x.powi(3) / 3.0 + p[3] * x.powi(4) / 4.0;
    prim(hi) - prim(lo)
}

/// Average rate difference of `test` against `anchor` at equal PSNR, in
/// percent (negative means `test` needs fewer bits).
pub fn bd_rate(anchor: &[RdPoint], test: &[RdPoint]) -> Result<f64> {
    for (name, pts) in [("anchor", anchor), ("test", test)] {
        if pts.len() < 4 {
            return Err(Error::InvalidArgument(format!("{name} curve needs at least 4 points, has {}", pts.len())));
        }
        if pts.iter().any(|p| !(p.bpp > 0.0) || !p.psnr.is_finite()) {
            return Err(Error::InvalidArgument(format!("{name} curve has a nonpositive rate or bad PSNR")));
        }
    }
    let range = |pts: &[RdPoint]| {
        let lo = pts.iter().map(|p| p.psnr).fold(f64::INFINITY, f64::min);
        let hi = pts.iter().map(|p| p.psnr).fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    };
    let (a_lo, a_hi) = range(anchor);
    let (t_lo, t_hi) = range(test);
    let (lo, hi) = (a_lo.max(t_lo), a_hi.min(t_hi));
    if !(hi > lo) {
        return Err(Error::InvalidArgument(format!(
            "quality ranges do not overlap: [{a_lo}, {a_hi}] vs [{t_lo}, {t_hi}]"
        )));
    }
    // centre the quality axis for a well-conditioned fit
    let c = 0.5 * (lo + hi);
    let fit = |pts: &[RdPoint]| {
        let t: Vec<f64> = pts.iter().map(|p| p.psnr - c).collect();
        let v: Vec<f64> = pts.iter().map(|p| libm::log10(p.bpp)).collect();
        fit_cubic(&t, &v)
    };
    let (pa, pt) = (fit(anchor)?, fit(test)?);
    let avg = (integrate(&pt, lo - c, hi - c) - integrate(&pa, lo - c, hi - c)) / (hi - lo);
    Ok((libm::pow(10.0, avg) - 1.0) * 100.0)
}
