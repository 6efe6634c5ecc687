//! Training-time noise and test-time rounding of latents.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Array, Tensor};

/// Round half away from zero.
pub fn round_half_away(v: f64) -> f64 {
    v.round()
}

/// Adds i.i.d. `U(-0.5, 0.5)` noise; the gradient passes through unchanged.
pub fn add_uniform_noise<R: Rng>(t: &Tensor, rng: &mut R) -> Tensor {
    let noise = Array::from_fn(t.shape(), |_| uniform_open(rng));
    t.add(&Tensor::constant(noise)).expect("noise has the input's shape")
}

/// A draw from the open interval (-0.5, 0.5).
pub(crate) fn uniform_open<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random::<f64>() - 0.5;
        if u > -0.5 {
            return u;
        }
    }
}

/// Rounds every element. Refuses tensors that are part of a gradient graph.
pub fn round_tensor(t: &Tensor) -> Result<Tensor> {
    if t.requires_grad() {
        return Err(Error::Graph("rounding is not differentiable; detach the tensor first".into()));
    }
    Ok(Tensor::constant(t.to_array().map(round_half_away)))
}
