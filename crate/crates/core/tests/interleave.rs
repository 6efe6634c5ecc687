mod common;

use common::*;
use ilic_core::interleave::*;
use ilic_core::tensor::{Array, Scope, Tensor};
use proptest::prelude::*;

/// Brute-force remapping: every pixel (r, c) of x lands in sub-image
/// (r mod b)·b + (c mod b) at (r div b, c div b).
fn oracle_split(x: &PlanarImage, b: usize) -> Vec<Vec<f64>> {
    let (h, w) = (x.height() / b, x.width() / b);
    let mut out = vec![vec![f64::NAN; 3 * h * w]; b * b];
    for c in 0..3 {
        for r in 0..x.height() {
            for col in 0..x.width() {
                out[(r % b) * b + col % b][(c * h + r / b) * w + col / b] = x.get(c, r, col);
            }
        }
    }
    out
}

#[test]
fn split_matches_index_remapping_oracle() {
    let mut r = rng(10);
    let x = random_image(&mut r, 6, 6);
    let s = split(&x, SplitConfig::new(3).unwrap()).unwrap();
    for (got, want) in s.images().iter().zip(oracle_split(&x, 3)) {
        assert_eq!(got.data(), &want[..]);
    }
}

#[test]
fn checkerboard_splits_into_constant_sub_images() {
    let x = PlanarImage::from_fn(8, 8, |_, r, c| ((r + c) % 2) as f64).unwrap();
    let s = split(&x, SplitConfig::new(2).unwrap()).unwrap();
    for (t, img) in s.images().iter().enumerate() {
        let expected = ((t / 2 + t % 2) % 2) as f64;
        assert!(img.data().iter().all(|&v| v == expected));
    }
}

#[test]
fn reconstructing_index_images_enumerates_each_tile() {
    for b in 2..=5 {
        let cfg = SplitConfig::new(b).unwrap();
        let n = (b * b - 1) as f64;
        let parts = (0..b * b).map(|t| PlanarImage::from_fn(3, 2, |_, _, _| t as f64 / n).unwrap()).collect();
        let x = reconstruct(&SubImageSet::new(parts, cfg).unwrap()).unwrap();
        for r in 0..3 * b {
            for c in 0..2 * b {
                assert_eq!(x.get(1, r, c), ((r % b) * b + c % b) as f64 / n);
            }
        }
    }
}

#[test]
fn inconsistent_sub_images_are_rejected() {
    let cfg = SplitConfig::new(2).unwrap();
    let mut parts: Vec<_> = (0..4).map(|_| PlanarImage::from_fn(2, 2, |_, _, _| 0.0).unwrap()).collect();
    assert!(SubImageSet::new(parts[..3].to_vec(), cfg).is_err());
    parts[3] = PlanarImage::from_fn(2, 3, |_, _, _| 0.0).unwrap();
    assert!(SubImageSet::new(parts, cfg).is_err());
}

proptest! {
    #[test]
    fn split_reconstruct_is_a_bijection(b in 2usize..=5, mh in 1usize..5, mw in 1usize..5, seed in any::<u64>()) {
        let x = random_image(&mut rng(seed), mh * b, mw * b);
        let s = split(&x, SplitConfig::new(b).unwrap()).unwrap();
        let back = reconstruct(&s).unwrap();
        prop_assert_eq!(back.data(), x.data());
        let mut all: Vec<u64> = s.images().iter().flat_map(|i| i.data().iter().map(|v| v.to_bits())).collect();
        let mut orig: Vec<u64> = x.data().iter().map(|v| v.to_bits()).collect();
        all.sort_unstable();
        orig.sort_unstable();
        prop_assert_eq!(all, orig);
    }

    #[test]
    fn split_commutes_with_pixelwise_maps(b in 2usize..=5, seed in any::<u64>()) {
        let x = random_image(&mut rng(seed), 2 * b, 3 * b);
        let g = |v: f64| v * v * (3.0 - 2.0 * v);
        let cfg = SplitConfig::new(b).unwrap();
        let lhs = split(&x.map(g).unwrap(), cfg).unwrap();
        let rhs = split(&x, cfg).unwrap();
        for (a, bb) in lhs.images().iter().zip(rhs.images()) {
            let mapped = bb.map(g).unwrap();
            prop_assert_eq!(a, &mapped);
        }
    }

    #[test]
    fn pad_then_crop_is_identity(h in 1usize..12, w in 1usize..12, b in 2usize..=5, seed in any::<u64>()) {
        let x = random_image(&mut rng(seed), h, w);
        let p = pad_to_multiple(&x, b);
        prop_assert_eq!(p.height() % b, 0);
        prop_assert_eq!(p.width() % b, 0);
        let back = crop_to_original(&p);
        prop_assert_eq!(back.data(), x.data());
    }
}

fn fexm(s: &Scope, x: &Tensor, b: usize, n: usize) -> ilic_core::Result<FexmFeatures> {
    let subs = split_tensor(x, b)?;
    fexm_forward(&s.sub("fexm"), &subs, x, b, n)
}

#[test]
fn fexm_output_shapes() {
    let x = synthetic_image(1, 64, 64).to_tensor();
    let s = Scope::initializer(3);
    let f = fexm(&s, &x, 2, 32).unwrap();
    assert_eq!(f.subs.len(), 4);
    for t in f.ordered() {
        assert_eq!(t.shape(), &[32, 32, 32]);
    }
    for b in 3..=5 {
        let x = synthetic_image(2, 6 * b, 4 * b).to_tensor();
        let f = fexm(&Scope::initializer(3), &x, b, 4).unwrap();
        assert_eq!(f.ordered().len(), b * b + 1);
        assert!(f.ordered().iter().all(|t| t.shape() == [4, 6, 4]));
        let y = fexm_inverse(&Scope::initializer(4), &f, b).unwrap();
        assert_eq!(y.shape(), x.shape());
    }
}

#[test]
fn fexm_zero_input_with_zero_biases_gives_zero_features() {
    let x = Tensor::zeros(&[3, 8, 8]);
    let f = fexm(&Scope::initializer(5), &x, 2, 6).unwrap();
    for t in f.ordered() {
        assert!(t.data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn fexm_rejects_mismatched_geometry() {
    let x = Tensor::zeros(&[3, 8, 8]);
    let subs = split_tensor(&x, 2).unwrap();
    assert!(fexm_forward(&Scope::initializer(1), &subs[..3], &x, 2, 4).is_err());
    assert!(fexm_forward(&Scope::initializer(1), &subs, &Tensor::zeros(&[3, 8, 10]), 2, 4).is_err());
}

#[test]
fn fexm_shared_weights_are_order_equivariant() {
    let x = synthetic_image(6, 12, 12).to_tensor();
    let s = Scope::initializer(7);
    let mut subs = split_tensor(&x, 3).unwrap();
    let a = fexm_forward(&s, &subs, &x, 3, 4).unwrap();
    subs.reverse();
    let b = fexm_forward(&s, &subs, &x, 3, 4).unwrap();
    for (p, q) in a.subs.iter().zip(b.subs.iter().rev()) {
        assert_eq!(p.data(), q.data());
    }
}

#[test]
fn fexm_shared_weight_gradient_matches_finite_differences() {
    let mut r = rng(8);
    let x = random_image(&mut r, 8, 6).to_array();
    let params = init_params(9, |s| Ok(fexm(s, &x.clone().into_tensor(), 2, 3)?.global));
    let report = block_gradcheck(params, vec![("x", x.clone())], |s, t| {
        let f = fexm(s, &t["x"], 2, 3)?;
        let mut acc = f.global.square().sum();
        for (k, sub) in f.subs.iter().enumerate() {
            acc = acc.add(&sub.sin().sum().scalar_mul(1.0 + k as f64))?;
        }
        Ok(acc)
    });
    assert!(report.max_rel_err < 1e-5, "{report:?}");
}

#[test]
fn inverse_fexm_gradient_matches_finite_differences() {
    let mut r = rng(11);
    let feats: Vec<Array> = (0..5).map(|_| random_array(&mut r, &[2, 3, 4]).map(|v| v * 0.3)).collect();
    let build = |t: &[Tensor]| FexmFeatures { subs: t[..4].to_vec(), global: t[4].clone() };
    let ts: Vec<Tensor> = feats.iter().cloned().map(Tensor::constant).collect();
    let params = init_params(12, |s| fexm_inverse(s, &build(&ts), 2));
    // shift the output towards the middle of [0, 1] so the clamp is inactive
    let params = params
        .into_iter()
        .map(|(k, v)| if k == "global.bias" { (k, v.map(|_| 0.5)) } else { (k, v.map(|x| x * 0.3)) })
        .collect();
    let extra = feats.iter().enumerate().map(|(i, a)| (["f0", "f1", "f2", "f3", "g"][i], a.clone())).collect();
    let report = block_gradcheck(params, extra, |s, t| {
        let ts: Vec<Tensor> = ["f0", "f1", "f2", "f3", "g"].iter().map(|k| t[*k].clone()).collect();
        Ok(fexm_inverse(s, &build(&ts), 2)?.square().sum())
    });
    assert!(report.max_rel_err < 1e-5, "{report:?}");
}

#[test]
fn inverse_fexm_clamps_to_unit_range() {
    let f = FexmFeatures {
        subs: (0..4).map(|_| Tensor::constant(Array::full(&[2, 3, 3], 50.0))).collect(),
        global: Tensor::constant(Array::full(&[2, 3, 3], -50.0)),
    };
    let y = fexm_inverse(&Scope::initializer(13), &f, 2).unwrap();
    assert!(y.data().iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(y.data().iter().any(|&v| v == 0.0 || v == 1.0));
}

trait IntoTensor {
    fn into_tensor(self) -> Tensor;
}

impl IntoTensor for Array {
    fn into_tensor(self) -> Tensor {
        Tensor::constant(self)
    }
}
