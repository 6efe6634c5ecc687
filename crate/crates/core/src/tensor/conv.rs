//! Cross-correlation kernels over `[C, D, H, W]` volumes via im2col.
//!
//! 2D convolutions run through the same kernels with `D = 1`. Every
//! accumulation happens in a fixed order with plain IEEE operations, so
//! results are bitwise reproducible on any platform.

use super::autodiff::Tensor;
use super::gemm::{matmul_view, View};
use crate::error::{shape_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Geom {
    pub cin: usize,
    pub cout: usize,
    /// Input extents (D, H, W).
    pub input: [usize; 3],
    /// Output extents (D, H, W).
    pub output: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
}

impl Geom {
    fn in_len(&self) -> usize {
        self.cin * self.input.iter().product::<usize>()
    }
    fn out_len(&self) -> usize {
        self.cout * self.output.iter().product::<usize>()
    }
    fn w_len(&self) -> usize {
        self.cout * self.cin * self.kernel.iter().product::<usize>()
    }
}

/// Range of output positions `o` for which `o*stride + k - pad` lands in `[0, n)`.
#[inline]
fn valid_range(out_n: usize, in_n: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    if in_n + pad <= k {
        return (0, 0);
    }
    let hi = ((in_n - 1 + pad - k) / stride + 1).min(out_n);
    (lo.min(hi), hi)
}

impl Geom {
    /// 1×1×1 kernel, unit stride, no padding: the column matrix is the input.
    fn is_pointwise(&self) -> bool {
        self.kernel == [1; 3] && self.stride == [1; 3] && self.pad == [0; 3]
    }

    fn taps(&self) -> usize {
        self.kernel.iter().product()
    }

    fn plane(&self) -> usize {
        self.output.iter().product()
    }
}

/// Visits every (column row, output row) pair of the im2col matrix. The
/// callback receives the column-matrix row (`ci·taps + tap`), the input
/// channel, the output row offset within the plane, the input row offset
/// within the channel, the valid `[lo, hi)` output-column range, and the
/// input column of `lo`.
#[inline]
fn for_each_tap_row(g: &Geom, mut f: impl FnMut(usize, usize, usize, usize, usize, usize, usize)) {
    let [id, ih, iw] = g.input;
    let [od, oh, ow] = g.output;
    let [kd, kh, kw] = g.kernel;
    let [sd, sh, sw] = g.stride;
    let [pd, ph, pw] = g.pad;
    for ci in 0..g.cin {
        for zd in 0..kd {
            let (d_lo, d_hi) = valid_range(od, id, zd, sd, pd);
            for zh in 0..kh {
                let (h_lo, h_hi) = valid_range(oh, ih, zh, sh, ph);
                for zw in 0..kw {
                    let (w_lo, w_hi) = valid_range(ow, iw, zw, sw, pw);
                    let row = ((ci * kd + zd) * kh + zh) * kw + zw;
                    if w_lo >= w_hi {
                        continue;
                    }
                    let ix0 = w_lo * sw + zw - pw;
                    for o_d in d_lo..d_hi {
                        let i_d = o_d * sd + zd - pd;
                        for o_h in h_lo..h_hi {
                            let i_h = o_h * sh + zh - ph;
                            f(row, ci, (o_d * oh + o_h) * ow, (i_d * ih + i_h) * iw, w_lo, w_hi, ix0);
                        }
                    }
                }
            }
        }
    }
}

/// Column matrix `[cin·taps, plane]`: entry (r, p) is the input value seen
/// by tap r at output position p, or 0 in the padding.
fn im2col(g: &Geom, input: &[f64]) -> Vec<f64> {
    let plane = g.plane();
    let in_plane: usize = g.input.iter().product();
    let sw = g.stride[2];
    let mut col = vec![0.0; g.cin * g.taps() * plane];
    for_each_tap_row(g, |row, ci, orow, irow, lo, hi, ix0| {
        let dst = &mut col[row * plane + orow + lo..row * plane + orow + hi];
        let base = ci * in_plane + irow + ix0;
        if sw == 1 {
            dst.copy_from_slice(&input[base..base + dst.len()]);
        } else {
            for (k, d) in dst.iter_mut().enumerate() {
                *d = input[base + k * sw];
            }
        }
    });
    col
}

/// Scatter-adds a column matrix back onto the input volume.
fn col2im(g: &Geom, col: &[f64]) -> Vec<f64> {
    let plane = g.plane();
    let in_plane: usize = g.input.iter().product();
    let sw = g.stride[2];
    let mut out = vec![0.0; g.in_len()];
    for_each_tap_row(g, |row, ci, orow, irow, lo, hi, ix0| {
        let src = &col[row * plane + orow + lo..row * plane + orow + hi];
        let base = ci * in_plane + irow + ix0;
        if sw == 1 {
            for (o, s) in out[base..base + src.len()].iter_mut().zip(src) {
                *o += s;
            }
        } else {
            for (k, s) in src.iter().enumerate() {
                out[base + k * sw] += s;
            }
        }
    });
    out
}

/// `out[co, :] = Σ_r weight[co, r] · col[r, :]`.
pub(crate) fn forward(g: &Geom, input: &[f64], weight: &[f64]) -> Vec<f64> {
    debug_assert_eq!(input.len(), g.in_len());
    debug_assert_eq!(weight.len(), g.w_len());
    let rows = g.cin * g.taps();
    if g.is_pointwise() {
        return matmul_view(View::rows(weight, rows), View::rows(input, g.plane()), g.cout, rows, g.plane());
    }
    let col = im2col(g, input);
    matmul_view(View::rows(weight, rows), View::rows(&col, g.plane()), g.cout, rows, g.plane())
}

/// Gradient with respect to the input; also the forward pass of a
/// transposed convolution.
pub(crate) fn backward_input(g: &Geom, grad_out: &[f64], weight: &[f64]) -> Vec<f64> {
    debug_assert_eq!(grad_out.len(), g.out_len());
    let rows = g.cin * g.taps();
    let col = matmul_view(View::transposed(weight, rows), View::rows(grad_out, g.plane()), rows, g.cout, g.plane());
    if g.is_pointwise() {
        return col;
    }
    col2im(g, &col)
}

pub(crate) fn backward_weight(g: &Geom, grad_out: &[f64], input: &[f64]) -> Vec<f64> {
    let rows = g.cin * g.taps();
    let plane = g.plane();
    let a = View::rows(grad_out, plane);
    if g.is_pointwise() {
        return matmul_view(a, View::transposed(input, plane), g.cout, plane, rows);
    }
    let col = im2col(g, input);
    matmul_view(a, View::transposed(&col, plane), g.cout, plane, rows)
}

fn out_extent(n: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if n + 2 * pad < k {
        return Err(shape_err!("kernel {k} larger than padded extent {}", n + 2 * pad));
    }
    Ok((n + 2 * pad - k) / stride + 1)
}

fn add_bias(out: &mut [f64], bias: &[f64]) {
    let plane = out.len() / bias.len();
    for (chunk, &b) in out.chunks_mut(plane).zip(bias) {
        chunk.iter_mut().for_each(|v| *v += b);
    }
}

fn bias_grad(g: &[f64], cout: usize) -> Vec<f64> {
    let plane = g.len() / cout;
    g.chunks(plane).map(|c| c.iter().sum()).collect()
}

fn check_bias(bias: Option<&Tensor>, cout: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.shape() != [cout] {
            return Err(shape_err!("bias shape {:?} does not match {cout} output channels", b.shape()));
        }
    }
    Ok(())
}

fn check_stride(stride: usize) -> Result<()> {
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be positive".into()));
    }
    Ok(())
}

/// Wraps a geometry into a differentiable op (regular direction).
fn conv_op(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    g: Geom,
    out_shape: Vec<usize>,
) -> Tensor {
    let mut out = forward(&g, input.data(), weight.data());
    if let Some(b) = bias {
        add_bias(&mut out, b.data());
    }
    let (xc, wc) = (input.clone(), weight.clone());
    let (rx, rw) = (input.requires_grad(), weight.requires_grad());
    let rb = bias.is_some_and(|b| b.requires_grad());
    let mut parents = vec![input.clone(), weight.clone()];
    if let Some(b) = bias {
        parents.push(b.clone());
    }
    let has_bias = bias.is_some();
    Tensor::from_op(
        out_shape,
        out,
        parents,
        Box::new(move |go, _| {
            let mut v = vec![
                rx.then(|| backward_input(&g, go, wc.data())),
                rw.then(|| backward_weight(&g, go, xc.data())),
            ];
            if has_bias {
                v.push(rb.then(|| bias_grad(go, g.cout)));
            }
            v
        }),
    )
}

/// Transposed direction: `g` describes the *regular* convolution whose input
/// gradient this op computes, so the op input has `g.output` extents.
fn conv_transpose_op(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    g: Geom,
    out_shape: Vec<usize>,
) -> Tensor {
    let mut out = backward_input(&g, input.data(), weight.data());
    if let Some(b) = bias {
        add_bias(&mut out, b.data());
    }
    let (xc, wc) = (input.clone(), weight.clone());
    let (rx, rw) = (input.requires_grad(), weight.requires_grad());
    let rb = bias.is_some_and(|b| b.requires_grad());
    let mut parents = vec![input.clone(), weight.clone()];
    if let Some(b) = bias {
        parents.push(b.clone());
    }
    let has_bias = bias.is_some();
    Tensor::from_op(
        out_shape,
        out,
        parents,
        Box::new(move |go, _| {
            let mut v = vec![
                rx.then(|| forward(&g, go, wc.data())),
                rw.then(|| backward_weight(&g, xc.data(), go)),
            ];
            if has_bias {
                v.push(rb.then(|| bias_grad(go, g.cin)));
            }
            v
        }),
    )
}

impl Tensor {
    /// 2D cross-correlation. `self`: `[C_in, H, W]`, `kernel`: `[C_out, C_in, kh, kw]`.
    pub fn conv2d(&self, kernel: &Tensor, bias: Option<&Tensor>, stride: usize, pad: usize) -> Result<Tensor> {
        check_stride(stride)?;
        let (&[cin, h, w], &[cout, kc, kh, kw]) = (self.shape(), kernel.shape()) else {
            return Err(shape_err!("conv2d expects [C,H,W] input and [O,C,kh,kw] kernel, got {:?} and {:?}",
                self.shape(), kernel.shape()));
        };
        if kc != cin {
            return Err(shape_err!("conv2d: kernel expects {kc} input channels, input has {cin}"));
        }
        check_bias(bias, cout)?;
        let oh = out_extent(h, kh, stride, pad)?;
        let ow = out_extent(w, kw, stride, pad)?;
        let g = Geom {
            cin,
            cout,
            input: [1, h, w],
            output: [1, oh, ow],
            kernel: [1, kh, kw],
            stride: [1, stride, stride],
            pad: [0, pad, pad],
        };
        Ok(conv_op(self, kernel, bias, g, vec![cout, oh, ow]))
    }

    /// 3D cross-correlation. `self`: `[C_in, T, H, W]`, `kernel`: `[C_out, C_in, kt, kh, kw]`.
    pub fn conv3d(&self, kernel: &Tensor, bias: Option<&Tensor>, stride: usize, pad: usize) -> Result<Tensor> {
        check_stride(stride)?;
        let (&[cin, t, h, w], &[cout, kc, kt, kh, kw]) = (self.shape(), kernel.shape()) else {
            return Err(shape_err!("conv3d expects [C,T,H,W] input and [O,C,kt,kh,kw] kernel, got {:?} and {:?}",
                self.shape(), kernel.shape()));
        };
        if kc != cin {
            return Err(shape_err!("conv3d: kernel expects {kc} input channels, input has {cin}"));
        }
        check_bias(bias, cout)?;
        let ot = out_extent(t, kt, stride, pad)?;
        let oh = out_extent(h, kh, stride, pad)?;
        let ow = out_extent(w, kw, stride, pad)?;
        let g = Geom {
            cin,
            cout,
            input: [t, h, w],
            output: [ot, oh, ow],
            kernel: [kt, kh, kw],
            stride: [stride; 3],
            pad: [pad; 3],
        };
        Ok(conv_op(self, kernel, bias, g, vec![cout, ot, oh, ow]))
    }

    /// Transposed 2D convolution (the input-gradient of `conv2d` with the same
    /// geometry). `self`: `[C_in, H, W]`, `kernel`: `[C_in, C_out, kh, kw]`.
    /// Output extent is `(H-1)*stride - 2*pad + k + output_padding` per axis,
    /// with `output_padding = (rows, cols)`.
    pub fn conv_transpose2d(
        &self,
        kernel: &Tensor,
        bias: Option<&Tensor>,
        stride: usize,
        pad: usize,
        output_padding: (usize, usize),
    ) -> Result<Tensor> {
        check_stride(stride)?;
        let (&[cin, h, w], &[kc, cout, kh, kw]) = (self.shape(), kernel.shape()) else {
            return Err(shape_err!("conv_transpose2d expects [C,H,W] input and [C,O,kh,kw] kernel, got {:?} and {:?}",
                self.shape(), kernel.shape()));
        };
        if kc != cin {
            return Err(shape_err!("conv_transpose2d: kernel expects {kc} input channels, input has {cin}"));
        }
        if output_padding.0 >= stride || output_padding.1 >= stride {
            return Err(Error::InvalidArgument(format!(
                "output padding {output_padding:?} must be smaller than stride {stride}"
            )));
        }
        check_bias(bias, cout)?;
        let extent = |n: usize, k: usize, op: usize| -> Result<usize> {
            let full = (n - 1) * stride + k + op;
            if full <= 2 * pad {
                return Err(shape_err!("transposed conv geometry yields non-positive extent"));
            }
            Ok(full - 2 * pad)
        };
        let oh = extent(h, kh, output_padding.0)?;
        let ow = extent(w, kw, output_padding.1)?;
        // The regular conv mapping [cout, oh, ow] -> [cin, h, w].
        let g = Geom {
            cin: cout,
            cout: cin,
            input: [1, oh, ow],
            output: [1, h, w],
            kernel: [1, kh, kw],
            stride: [1, stride, stride],
            pad: [0, pad, pad],
        };
        debug_assert_eq!(out_extent(oh, kh, stride, pad).ok(), Some(h));
        Ok(conv_transpose_op(self, kernel, bias, g, vec![cout, oh, ow]))
    }
}
