//! Quantization error compensation with a truncated Fourier series of the
//! period-1 sawtooth `y − round(y)`.
//!
//! `s_N(y) = (1/π) Σ_{n=1..N} (−1)^{n+1}/n · sin(2πn·y)`

use std::f64::consts::PI;

use rand::Rng;

use crate::codec::quantize::{round_half_away, uniform_open};
use crate::error::{Error, Result};
use crate::tensor::{Array, Tensor};

pub const DEFAULT_HARMONICS: usize = 5;

/// The quantization error model subtracted before and added after rounding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sawtooth {
    /// Truncated Fourier series with this many harmonics.
    Fourier(usize),
    /// The exact sawtooth `y − round(y)`, derivative 1.
    Exact,
}

impl Sawtooth {
    pub fn fourier(harmonics: usize) -> Result<Self> {
        if harmonics == 0 {
            return Err(Error::InvalidArgument("sawtooth needs at least one harmonic".into()));
        }
        Ok(Sawtooth::Fourier(harmonics))
    }

    pub fn eval(self, y: f64) -> f64 {
        match self {
            Sawtooth::Fourier(n) => sawtooth_series(y, n),
            Sawtooth::Exact => y - round_half_away(y),
        }
    }

    pub fn derivative(self, y: f64) -> f64 {
        match self {
            Sawtooth::Fourier(n) => sawtooth_series_derivative(y, n),
            Sawtooth::Exact => 1.0,
        }
    }

    /// Elementwise, differentiable.
    pub fn apply(self, t: &Tensor) -> Tensor {
        let data = t.data().iter().map(|&v| self.eval(v)).collect();
        let x = t.clone();
        Tensor::from_op(
            t.shape().to_vec(),
            data,
            vec![t.clone()],
            Box::new(move |g, _| {
                vec![Some(g.iter().zip(x.data()).map(|(gi, &v)| gi * self.derivative(v)).collect())]
            }),
        )
    }
}

/// Terms are evaluated on `y − round(y)`, which is exact in floating point,
/// so periodicity and oddness hold to the last bit.
pub fn sawtooth_series(y: f64, harmonics: usize) -> f64 {
    let r = y - round_half_away(y);
    let mut acc = 0.0;
    for n in 1..=harmonics {
        let sign = if n % 2 == 1 { 1.0 } else { -1.0 };
        acc += sign / n as f64 * libm::sin(2.0 * PI * n as f64 * r);
    }
    acc / PI
}

/// `2 Σ (−1)^{n+1} cos(2πn·y)`.
pub fn sawtooth_series_derivative(y: f64, harmonics: usize) -> f64 {
    let r = y - round_half_away(y);
    let mut acc = 0.0;
    for n in 1..=harmonics {
        let sign = if n % 2 == 1 { 1.0 } else { -1.0 };
        acc += sign * libm::cos(2.0 * PI * n as f64 * r);
    }
    2.0 * acc
}

/// Encoder-side compensation `y − s(y)`.
pub fn qc_forward(t: &Tensor, saw: Sawtooth) -> Result<Tensor> {
    t.sub(&saw.apply(t))
}

/// Decoder-side compensation on noisy latents `t + s(t)`.
pub fn iqc_train(t: &Tensor, saw: Sawtooth) -> Result<Tensor> {
    t.add(&saw.apply(t))
}

/// Decoder-side compensation on rounded latents, `t + s(t + Δn)` with
/// `Δn` drawn from the truncated Laplacian.
pub fn iqc_test<R: Rng>(t: &Array, saw: Sawtooth, lp: LaplaceParams, rng: &mut R) -> Array {
    let data = t.data().iter().map(|&v| v + saw.eval(v + lp.sample_truncated(rng))).collect();
    Array::new(t.shape(), data).expect("same shape")
}

/// Location and scale of a Laplace distribution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LaplaceParams {
    pub mu: f64,
    pub b: f64,
}

pub const LAPLACE_B_MIN: f64 = 1e-6;
/// Attempts before falling back to inverse-CDF sampling on the window.
const REJECTION_TRIES: usize = 64;

impl Default for LaplaceParams {
    fn default() -> Self {
        Self { mu: 0.0, b: 0.15 }
    }
}

impl LaplaceParams {
    pub fn new(mu: f64, b: f64) -> Result<Self> {
        if !mu.is_finite() || !b.is_finite() || b < LAPLACE_B_MIN {
            return Err(Error::InvalidArgument(format!("invalid Laplace parameters mu={mu}, b={b}")));
        }
        Ok(Self { mu, b })
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let z = (x - self.mu) / self.b;
        if z < 0.0 {
            0.5 * libm::exp(z)
        } else {
            1.0 - 0.5 * libm::exp(-z)
        }
    }

    fn quantile(&self, p: f64) -> f64 {
        if p < 0.5 {
            self.mu + self.b * libm::log(2.0 * p)
        } else {
            self.mu - self.b * libm::log(2.0 * (1.0 - p))
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let u = uniform_open(rng);
        self.mu - self.b * u.signum() * libm::log(1.0 - 2.0 * u.abs())
    }

    /// A draw conditioned on the open interval (−1/2, 1/2).
    pub fn sample_truncated<R: Rng>(&self, rng: &mut R) -> f64 {
        for _ in 0..REJECTION_TRIES {
            let x = self.sample(rng);
            if x > -0.5 && x < 0.5 {
                return x;
            }
        }
        // Mass on the window is tiny; invert the CDF restricted to it.
        let (lo, hi) = (self.cdf(-0.5), self.cdf(0.5));
        loop {
            let x = self.quantile(lo + (hi - lo) * (uniform_open(rng) + 0.5));
            if x > -0.5 && x < 0.5 {
                return x;
            }
        }
    }
}

/// Maximum-likelihood fit: median and mean absolute deviation from it.
pub fn fit_laplace(samples: &[f64]) -> Result<LaplaceParams> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("cannot fit a Laplace distribution to no samples".into()));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite sample".into()));
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    let mu = if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) };
    let b = s.iter().map(|v| (v - mu).abs()).sum::<f64>() / n as f64;
    Ok(LaplaceParams { mu, b: b.max(LAPLACE_B_MIN) })
}

/// Histogram of quantization errors over (−1/2, 1/2] and the fitted
/// Laplace parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantErrorStats {
    pub count: usize,
    /// Probability mass per equal-width bin; sums to 1.
    pub histogram: Vec<f64>,
    pub params: LaplaceParams,
}

pub const HISTOGRAM_BINS: usize = 50;

impl QuantErrorStats {
    pub fn from_errors(errors: &[f64], bins: usize) -> Result<Self> {
        let params = fit_laplace(errors)?;
        let bins = bins.max(1);
        let mut counts = vec![0usize; bins];
        for &e in errors {
            // bin k covers (−1/2 + k/bins, −1/2 + (k+1)/bins]
            let k = (((e + 0.5) * bins as f64).ceil() as isize - 1).clamp(0, bins as isize - 1);
            counts[k as usize] += 1;
        }
        let histogram = counts.iter().map(|&c| c as f64 / errors.len() as f64).collect();
        Ok(Self { count: errors.len(), histogram, params })
    }

    /// Lower and upper edge of bin `k`.
    pub fn bin_edges(&self, k: usize) -> (f64, f64) {
        let w = 1.0 / self.histogram.len() as f64;
        (-0.5 + k as f64 * w, -0.5 + (k + 1) as f64 * w)
    }
}

/// Rounding error `y − round(y)` of every element.
pub fn quantization_errors(y: &[f64]) -> Vec<f64> {
    y.iter().map(|&v| v - round_half_away(v)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_harmonic_quarter_point() {
        assert!((sawtooth_series(0.25, 1) - 1.0 / PI).abs() < 1e-12);
    }

    #[test]
    fn vanishes_at_integers() {
        for n in [1, 5, 64] {
            for k in -3..=3 {
                assert_eq!(sawtooth_series(k as f64, n), 0.0);
            }
        }
    }

    #[test]
    fn fit_by_hand() {
        let lp = fit_laplace(&[-1.0, 0.0, 1.0]).unwrap();
        assert_eq!(lp.mu, 0.0);
        assert!((lp.b - 2.0 / 3.0).abs() < 1e-15);
        let c = fit_laplace(&[0.3; 7]).unwrap();
        assert_eq!((c.mu, c.b), (0.3, LAPLACE_B_MIN));
        assert!(fit_laplace(&[]).is_err());
    }

    #[test]
    fn truncated_sampling_far_from_window_terminates() {
        let lp = LaplaceParams::new(5.0, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let x = lp.sample_truncated(&mut rng);
            assert!(x > -0.5 && x < 0.5);
        }
    }
}
