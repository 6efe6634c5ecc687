//! Central finite-difference gradient oracle.
//!
//! Only the forward pass of the function under test is used to compute the
//! numeric side, so the check stays independent of every backward rule.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::array::Array;
use super::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Worst relative error over all inputs, `‖a − n‖₂ / max(‖a‖₂, ‖n‖₂)`.
    pub max_rel_err: f64,
    /// Input with the worst error.
    pub worst: String,
    /// Number of perturbed coordinates.
    pub checked: usize,
}

/// Compares reverse-mode gradients of the scalar `f(inputs)` against central
/// differences with step `h`. At most `max_per_input` coordinates of each
/// input are perturbed, chosen by a fixed-seed sampler.
pub fn check(
    inputs: &BTreeMap<String, Array>,
    f: impl Fn(&BTreeMap<String, Tensor>) -> Result<Tensor>,
    h: f64,
    max_per_input: usize,
) -> Result<GradCheckReport> {
    let leaves: BTreeMap<String, Tensor> =
        inputs.iter().map(|(k, a)| (k.clone(), Tensor::param(a.clone()))).collect();
    let loss = f(&leaves)?;
    loss.backward()?;

    let mut rng = ChaCha8Rng::seed_from_u64(0x9e37_79b9);
    let mut report = GradCheckReport { max_rel_err: 0.0, worst: String::new(), checked: 0 };
    for (name, a) in inputs {
        let analytic = leaves[name].grad().map(|g| g.into_data()).unwrap_or_else(|| vec![0.0; a.numel()]);
        let n = a.numel();
        let idx: Vec<usize> = if n <= max_per_input {
            (0..n).collect()
        } else {
            let mut v = sample(&mut rng, n, max_per_input).into_vec();
            v.sort_unstable();
            v
        };
        let (mut diff2, mut an2, mut nu2) = (0.0, 0.0, 0.0);
        for &i in &idx {
            let eval = |delta: f64| -> Result<f64> {
                let consts: BTreeMap<String, Tensor> = inputs
                    .iter()
                    .map(|(k, v)| {
                        let mut v = v.clone();
                        if k == name {
                            v.data_mut()[i] += delta;
                        }
                        (k.clone(), Tensor::constant(v))
                    })
                    .collect();
                f(&consts)?.item()
            };
            let numeric = (eval(h)? - eval(-h)?) / (2.0 * h);
            let an = analytic[i];
            if !numeric.is_finite() || !an.is_finite() {
                return Err(Error::Graph(format!("non-finite gradient for `{name}`[{i}]")));
            }
            diff2 += (an - numeric).powi(2);
            an2 += an * an;
            nu2 += numeric * numeric;
        }
        report.checked += idx.len();
        let denom = an2.sqrt().max(nu2.sqrt());
        let rel = if denom == 0.0 { 0.0 } else { diff2.sqrt() / denom };
        if rel > report.max_rel_err || report.worst.is_empty() {
            report.max_rel_err = rel.max(report.max_rel_err);
            if rel >= report.max_rel_err {
                report.worst = name.clone();
            }
        }
    }
    Ok(report)
}
