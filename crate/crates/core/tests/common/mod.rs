#![allow(dead_code)]

use std::collections::BTreeMap;

use ilic_core::interleave::PlanarImage;
use ilic_core::tensor::{Array, Scope, Tensor};
use ilic_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_array(rng: &mut ChaCha8Rng, shape: &[usize]) -> Array {
    Array::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

pub fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> PlanarImage {
    PlanarImage::from_fn(h, w, |_, _, _| rng.random_range(0.0..=1.0)).unwrap()
}

/// Smooth synthetic scene: gradients, a few discs and stripes, mild noise.
pub fn synthetic_image(seed: u64, h: usize, w: usize) -> PlanarImage {
    let mut r = rng(seed);
    let base: [f64; 3] = [r.random_range(0.1..0.9), r.random_range(0.1..0.9), r.random_range(0.1..0.9)];
    let tilt: [f64; 2] = [r.random_range(-0.4..0.4), r.random_range(-0.4..0.4)];
    let discs: Vec<(f64, f64, f64, [f64; 3])> = (0..3)
        .map(|_| {
            (
                r.random_range(0.0..h as f64),
                r.random_range(0.0..w as f64),
                r.random_range(3.0..(h.min(w) as f64 / 2.5).max(4.0)),
                [r.random_range(0.0..1.0), r.random_range(0.0..1.0), r.random_range(0.0..1.0)],
            )
        })
        .collect();
    let freq = r.random_range(0.1..0.5);
    let noise: Vec<f64> = (0..3 * h * w).map(|_| r.random_range(-0.02..0.02)).collect();
    PlanarImage::from_fn(h, w, |c, y, x| {
        let (fy, fx) = (y as f64 / h as f64, x as f64 / w as f64);
        let mut v = base[c] + tilt[0] * (fy - 0.5) + tilt[1] * (fx - 0.5);
        for &(cy, cx, rad, col) in &discs {
            if (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2) < rad * rad {
                v = 0.3 * v + 0.7 * col[c];
            }
        }
        v += 0.08 * (freq * (x as f64 + 0.7 * y as f64)).sin();
        (v + noise[(c * h + y) * w + x]).clamp(0.0, 1.0)
    })
    .unwrap()
}

/// Runs `f` once under an initializer scope and returns the created
/// parameters, perturbed so that zero-initialised biases are exercised.
pub fn init_params(seed: u64, f: impl Fn(&Scope) -> Result<Tensor>) -> BTreeMap<String, Array> {
    let s = Scope::initializer(seed);
    f(&s).unwrap();
    let store = s.into_store().unwrap();
    let mut r = rng(seed ^ 0x5eed);
    store
        .iter()
        .map(|(k, p)| {
            let v = p.value.data();
            (k.to_string(), Array::from_fn(p.value.shape(), |i| v[i] + r.random_range(-0.05..0.05)))
        })
        .collect()
}

/// Relative L2 error of the analytic gradient of `f` with respect to every
/// parameter and every extra input.
pub fn block_gradcheck(
    params: BTreeMap<String, Array>,
    extra: Vec<(&str, Array)>,
    f: impl Fn(&Scope, &BTreeMap<String, Tensor>) -> Result<Tensor>,
) -> ilic_core::tensor::gradcheck::GradCheckReport {
    let mut inputs = params.clone();
    for (k, v) in extra {
        inputs.insert(format!("input:{k}"), v);
    }
    ilic_core::tensor::gradcheck::check(
        &inputs,
        |t| {
            let leaves = t.iter().filter(|(k, _)| params.contains_key(*k)).map(|(k, v)| (k.clone(), v.clone())).collect();
            let extra = t.iter().filter_map(|(k, v)| k.strip_prefix("input:").map(|n| (n.to_string(), v.clone()))).collect();
            f(&Scope::with_leaves(leaves), &extra)
        },
        1e-5,
        40,
    )
    .unwrap()
}

/// A scope whose parameters are fixed constants.
pub fn const_scope(params: &BTreeMap<String, Array>) -> Scope<'static> {
    Scope::with_leaves(params.iter().map(|(k, v)| (k.clone(), Tensor::constant(v.clone()))).collect())
}

pub fn zeroed(params: &BTreeMap<String, Array>) -> BTreeMap<String, Array> {
    params.iter().map(|(k, v)| (k.clone(), Array::zeros(v.shape()))).collect()
}

/// Values on a coarse dyadic grid, so that scaling and adding them is exact.
pub fn dyadic_array(rng: &mut ChaCha8Rng, shape: &[usize]) -> Array {
    Array::from_fn(shape, |_| rng.random_range(-64i32..=64) as f64 / 64.0)
}

pub fn bits(xs: &[f64]) -> Vec<u64> {
    xs.iter().map(|v| v.to_bits()).collect()
}
