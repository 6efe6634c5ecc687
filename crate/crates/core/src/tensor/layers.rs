//! Parameterised layers: each call pulls `weight`/`bias`/`slope` from a scope.

use super::autodiff::Tensor;
use super::params::{Init, Scope};
use crate::error::Result;

/// Initial PReLU slope.
pub const PRELU_INIT: f64 = 0.25;

pub fn conv2d(s: &Scope, x: &Tensor, cout: usize, k: usize, stride: usize, pad: usize) -> Result<Tensor> {
    let cin = x.shape().first().copied().unwrap_or(0);
    let w = s.param("weight", &[cout, cin, k, k], Init::FanIn(cin * k * k))?;
    let b = s.param("bias", &[cout], Init::Zeros)?;
    x.conv2d(&w, Some(&b), stride, pad)
}

pub fn conv3d(s: &Scope, x: &Tensor, cout: usize, k: usize, pad: usize) -> Result<Tensor> {
    let cin = x.shape().first().copied().unwrap_or(0);
    let w = s.param("weight", &[cout, cin, k, k, k], Init::FanIn(cin * k * k * k))?;
    let b = s.param("bias", &[cout], Init::Zeros)?;
    x.conv3d(&w, Some(&b), 1, pad)
}

/// Transposed conv whose output extents are forced to `target` (H, W) via
/// the output padding.
pub fn conv_transpose2d(
    s: &Scope,
    x: &Tensor,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    target: (usize, usize),
) -> Result<Tensor> {
    let &[cin, h, w] = x.shape() else {
        return Err(crate::error::shape_err!("conv_transpose2d layer expects [C,H,W], got {:?}", x.shape()));
    };
    let output_padding = |n: usize, t: usize| -> Result<usize> {
        let base = ((n - 1) * stride + k) as isize - 2 * pad as isize;
        let op = t as isize - base;
        if op < 0 || op as usize >= stride.max(1) {
            return Err(crate::error::shape_err!(
                "cannot reach extent {t} from {n} with k={k}, stride={stride}, pad={pad}"
            ));
        }
        Ok(op as usize)
    };
    let oph = output_padding(h, target.0)?;
    let opw = output_padding(w, target.1)?;
    let wt = s.param("weight", &[cin, cout, k, k], Init::FanIn(cin * k * k))?;
    let b = s.param("bias", &[cout], Init::Zeros)?;
    x.conv_transpose2d(&wt, Some(&b), stride, pad, (oph, opw))
}

pub fn prelu(s: &Scope, x: &Tensor) -> Result<Tensor> {
    let a = s.param("slope", &[1], Init::Constant(PRELU_INIT))?;
    x.prelu(&a)
}
