use super::array::{numel, strides};
use super::autodiff::Tensor;
use crate::error::{shape_err, Error, Result};

/// Output shape of a broadcast between equal-rank shapes, where each pair of
/// extents must match or one of them must be 1.
fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a.len() != b.len() {
        return Err(shape_err!("cannot broadcast {a:?} with {b:?}: rank differs"));
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Ok(x),
            (1, _) => Ok(y),
            (_, 1) => Ok(x),
            _ => Err(shape_err!("cannot broadcast {a:?} with {b:?}")),
        })
        .collect()
}

/// Maps every linear output index to the linear index of a broadcast input.
fn broadcast_map(out: &[usize], input: &[usize]) -> Vec<usize> {
    let n = numel(out);
    if out == input {
        return (0..n).collect();
    }
    let in_strides = strides(input);
    let eff: Vec<usize> = input
        .iter()
        .zip(&in_strides)
        .map(|(&d, &s)| if d == 1 { 0 } else { s })
        .collect();
    let rank = out.len();
    let mut idx = vec![0usize; rank];
    let mut map = Vec::with_capacity(n);
    let mut lin = 0usize;
    for _ in 0..n {
        map.push(lin);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            lin += eff[ax];
            if idx[ax] < out[ax] {
                break;
            }
            lin -= eff[ax] * out[ax];
            idx[ax] = 0;
        }
    }
    map
}

fn reduce_to(grad: &[f64], map: &[usize], len: usize) -> Vec<f64> {
    if map.len() == len {
        return grad.to_vec();
    }
    let mut g = vec![0.0; len];
    for (&gi, &m) in grad.iter().zip(map) {
        g[m] += gi;
    }
    g
}

#[derive(Clone, Copy)]
enum BinOp {
    Add,
    Sub,
    Mul,
}

fn binary(a: &Tensor, b: &Tensor, op: BinOp) -> Result<Tensor> {
    let shape = broadcast_shape(a.shape(), b.shape())?;
    let ma = broadcast_map(&shape, a.shape());
    let mb = broadcast_map(&shape, b.shape());
    let (ad, bd) = (a.data(), b.data());
    let data: Vec<f64> = ma
        .iter()
        .zip(&mb)
        .map(|(&i, &j)| match op {
            BinOp::Add => ad[i] + bd[j],
            BinOp::Sub => ad[i] - bd[j],
            BinOp::Mul => ad[i] * bd[j],
        })
        .collect();
    let (na, nb) = (a.numel(), b.numel());
    let (ac, bc) = (a.clone(), b.clone());
    let (ga, gb) = (a.requires_grad(), b.requires_grad());
    Ok(Tensor::from_op(
        shape,
        data,
        vec![a.clone(), b.clone()],
        Box::new(move |g, _| {
            let da = ga.then(|| match op {
                BinOp::Add | BinOp::Sub => reduce_to(g, &ma, na),
                BinOp::Mul => {
                    let bd = bc.data();
                    let prod: Vec<f64> = g.iter().zip(&mb).map(|(gi, &j)| gi * bd[j]).collect();
                    reduce_to(&prod, &ma, na)
                }
            });
            let db = gb.then(|| match op {
                BinOp::Add => reduce_to(g, &mb, nb),
                BinOp::Sub => {
                    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                    reduce_to(&neg, &mb, nb)
                }
                BinOp::Mul => {
                    let ad = ac.data();
                    let prod: Vec<f64> = g.iter().zip(&ma).map(|(gi, &i)| gi * ad[i]).collect();
                    reduce_to(&prod, &mb, nb)
                }
            });
            vec![da, db]
        }),
    ))
}

/// Elementwise map with derivative expressed through input `x` and output `y`.
fn unary(
    x: &Tensor,
    f: impl Fn(f64) -> f64,
    df: impl Fn(f64, f64) -> f64 + 'static,
) -> Tensor {
    let data: Vec<f64> = x.data().iter().map(|&v| f(v)).collect();
    let xc = x.clone();
    Tensor::from_op(
        x.shape().to_vec(),
        data,
        vec![x.clone()],
        Box::new(move |g, out| {
            let gx = g
                .iter()
                .zip(xc.data())
                .zip(out)
                .map(|((gi, &xi), &yi)| gi * df(xi, yi))
                .collect();
            vec![Some(gx)]
        }),
    )
}

pub(crate) fn sigmoid_f(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + libm::exp(-v))
    } else {
        let e = libm::exp(v);
        e / (1.0 + e)
    }
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        binary(self, other, BinOp::Add)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        binary(self, other, BinOp::Sub)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        binary(self, other, BinOp::Mul)
    }

    pub fn scalar_mul(&self, s: f64) -> Tensor {
        unary(self, |v| v * s, move |_, _| s)
    }

    pub fn add_scalar(&self, s: f64) -> Tensor {
        unary(self, |v| v + s, |_, _| 1.0)
    }

    pub fn neg(&self) -> Tensor {
        self.scalar_mul(-1.0)
    }

    pub fn relu(&self) -> Tensor {
        unary(self, |v| v.max(0.0), |x, _| if x >= 0.0 { 1.0 } else { 0.0 })
    }

    pub fn sigmoid(&self) -> Tensor {
        unary(self, sigmoid_f, |_, y| y * (1.0 - y))
    }

    pub fn sin(&self) -> Tensor {
        unary(self, libm::sin, |x, _| libm::cos(x))
    }

    pub fn exp(&self) -> Tensor {
        unary(self, libm::exp, |_, y| y)
    }

    pub fn square(&self) -> Tensor {
        unary(self, |v| v * v, |x, _| 2.0 * x)
    }

    /// Clamp into `[lo, hi]`; the gradient is 1 strictly inside the interval
    /// and at its boundary, 0 outside.
    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor {
        unary(self, move |v| v.clamp(lo, hi), move |x, _| if x >= lo && x <= hi { 1.0 } else { 0.0 })
    }

    /// Clamp into `[lo, hi]` with an identity gradient everywhere
    /// (straight-through), so saturated outputs still learn.
    pub fn clamp_st(&self, lo: f64, hi: f64) -> Tensor {
        unary(self, move |v| v.clamp(lo, hi), |_, _| 1.0)
    }

    /// `max(x, bound)`, letting gradients through below the bound only when
    /// they would push the value upward during descent.
    pub fn lower_bound(&self, bound: f64) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|&v| v.max(bound)).collect();
        let xc = self.clone();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g, _| {
                let gx = g
                    .iter()
                    .zip(xc.data())
                    .map(|(&gi, &x)| if x >= bound || gi < 0.0 { gi } else { 0.0 })
                    .collect();
                vec![Some(gx)]
            }),
        )
    }

    /// Parametric ReLU with a single learnable slope (`slope` has one element).
    /// At zero the positive branch applies.
    pub fn prelu(&self, slope: &Tensor) -> Result<Tensor> {
        if slope.numel() != 1 {
            return Err(shape_err!("prelu slope must hold one value, got {:?}", slope.shape()));
        }
        let a = slope.data()[0];
        let data: Vec<f64> = self.data().iter().map(|&v| if v >= 0.0 { v } else { a * v }).collect();
        let xc = self.clone();
        let (gx_req, ga_req) = (self.requires_grad(), slope.requires_grad());
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), slope.clone()],
            Box::new(move |g, _| {
                let x = xc.data();
                let gx = gx_req.then(|| {
                    g.iter().zip(x).map(|(&gi, &xi)| if xi >= 0.0 { gi } else { a * gi }).collect()
                });
                let ga = ga_req.then(|| {
                    let s: f64 = g.iter().zip(x).filter(|(_, &xi)| xi < 0.0).map(|(gi, xi)| gi * xi).sum();
                    vec![s]
                });
                vec![gx, ga]
            }),
        ))
    }

    pub fn sum(&self) -> Tensor {
        let s: f64 = self.data().iter().sum();
        let n = self.numel();
        Tensor::from_op(vec![1], vec![s], vec![self.clone()], Box::new(move |g, _| vec![Some(vec![g[0]; n])]))
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel();
        let s: f64 = self.data().iter().sum::<f64>() / n as f64;
        Tensor::from_op(
            vec![1],
            vec![s],
            vec![self.clone()],
            Box::new(move |g, _| vec![Some(vec![g[0] / n as f64; n])]),
        )
    }

    /// Sum over the given axes, keeping them with extent 1.
    pub fn sum_axes(&self, axes: &[usize]) -> Result<Tensor> {
        let shape = self.shape().to_vec();
        if let Some(&ax) = axes.iter().find(|&&ax| ax >= shape.len()) {
            return Err(shape_err!("axis {ax} out of range for shape {shape:?}"));
        }
        let mut out_shape = shape.clone();
        for &ax in axes {
            out_shape[ax] = 1;
        }
        let map = broadcast_map(&shape, &out_shape);
        let on = numel(&out_shape);
        let data = reduce_to(self.data(), &map, on);
        Ok(Tensor::from_op(
            out_shape,
            data,
            vec![self.clone()],
            Box::new(move |g, _| vec![Some(map.iter().map(|&m| g[m]).collect())]),
        ))
    }

    pub fn mean_axes(&self, axes: &[usize]) -> Result<Tensor> {
        let count: usize = axes.iter().map(|&ax| self.shape().get(ax).copied().unwrap_or(1)).product();
        Ok(self.sum_axes(axes)?.scalar_mul(1.0 / count as f64))
    }

    /// Maximum along one axis (kept with extent 1). Ties route the gradient
    /// to the first maximal element.
    pub fn max_axis(&self, axis: usize) -> Result<Tensor> {
        let shape = self.shape().to_vec();
        if axis >= shape.len() {
            return Err(shape_err!("axis {axis} out of range for shape {shape:?}"));
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = 1;
        let map = broadcast_map(&shape, &out_shape);
        let on = numel(&out_shape);
        let mut best = vec![f64::NEG_INFINITY; on];
        let mut arg = vec![usize::MAX; on];
        for (i, (&v, &m)) in self.data().iter().zip(&map).enumerate() {
            if arg[m] == usize::MAX || v > best[m] {
                best[m] = v;
                arg[m] = i;
            }
        }
        let n = self.numel();
        Ok(Tensor::from_op(
            out_shape,
            best,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; n];
                for (gi, &a) in g.iter().zip(&arg) {
                    gx[a] += gi;
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Mean over every axis except the leading (channel) axis.
    pub fn global_avg_pool(&self) -> Result<Tensor> {
        let axes: Vec<usize> = (1..self.rank()).collect();
        self.mean_axes(&axes)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() || shape.contains(&0) {
            return Err(shape_err!("cannot reshape {:?} into {shape:?}", self.shape()));
        }
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.data().to_vec(),
            vec![self.clone()],
            Box::new(|g, _| vec![Some(g.to_vec())]),
        ))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor> {
        let shape = self.shape();
        let mut check = perm.to_vec();
        check.sort_unstable();
        if check != (0..shape.len()).collect::<Vec<_>>() {
            return Err(shape_err!("invalid permutation {perm:?} for shape {shape:?}"));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let in_strides = strides(shape);
        // Strides of the input as seen from output axes.
        let perm_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let n = self.numel();
        let mut src = Vec::with_capacity(n);
        let rank = out_shape.len();
        let mut idx = vec![0usize; rank];
        let mut lin = 0usize;
        for _ in 0..n {
            src.push(lin);
            for ax in (0..rank).rev() {
                idx[ax] += 1;
                lin += perm_strides[ax];
                if idx[ax] < out_shape[ax] {
                    break;
                }
                lin -= perm_strides[ax] * out_shape[ax];
                idx[ax] = 0;
            }
        }
        let d = self.data();
        let data = src.iter().map(|&s| d[s]).collect();
        Ok(Tensor::from_op(
            out_shape,
            data,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; n];
                for (gi, &s) in g.iter().zip(&src) {
                    gx[s] = *gi;
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(tensors: &[Tensor], axis: usize) -> Result<Tensor> {
        let first = tensors.first().ok_or_else(|| shape_err!("concat of zero tensors"))?;
        let rank = first.rank();
        if axis >= rank {
            return Err(shape_err!("concat axis {axis} out of range for rank {rank}"));
        }
        for t in tensors {
            let ok = t.rank() == rank
                && t.shape().iter().zip(first.shape()).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(shape_err!("concat: {:?} incompatible with {:?}", t.shape(), first.shape()));
            }
        }
        let outer: usize = first.shape()[..axis].iter().product();
        let inner: usize = first.shape()[axis + 1..].iter().product();
        let widths: Vec<usize> = tensors.iter().map(|t| t.shape()[axis] * inner).collect();
        let total_w: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(outer * total_w);
        for o in 0..outer {
            for (t, &w) in tensors.iter().zip(&widths) {
                data.extend_from_slice(&t.data()[o * w..(o + 1) * w]);
            }
        }
        let mut out_shape = first.shape().to_vec();
        out_shape[axis] = tensors.iter().map(|t| t.shape()[axis]).sum();
        let req: Vec<bool> = tensors.iter().map(|t| t.requires_grad()).collect();
        Ok(Tensor::from_op(
            out_shape,
            data,
            tensors.to_vec(),
            Box::new(move |g, _| {
                let mut grads: Vec<Option<Vec<f64>>> =
                    req.iter().zip(&widths).map(|(&r, &w)| r.then(|| Vec::with_capacity(outer * w))).collect();
                let mut off = 0;
                for _ in 0..outer {
                    for (gr, &w) in grads.iter_mut().zip(&widths) {
                        if let Some(gr) = gr {
                            gr.extend_from_slice(&g[off..off + w]);
                        }
                        off += w;
                    }
                }
                grads
            }),
        ))
    }

    /// Stacks equal-shape tensors along a new leading axis.
    pub fn stack(tensors: &[Tensor]) -> Result<Tensor> {
        let first = tensors.first().ok_or_else(|| shape_err!("stack of zero tensors"))?;
        let mut reshaped = Vec::with_capacity(tensors.len());
        for t in tensors {
            if t.shape() != first.shape() {
                return Err(shape_err!("stack: {:?} differs from {:?}", t.shape(), first.shape()));
            }
            let mut s = vec![1];
            s.extend_from_slice(t.shape());
            reshaped.push(t.reshape(&s)?);
        }
        Tensor::concat(&reshaped, 0)
    }

    /// Slice `[start, start+len)` along axis 0.
    pub fn narrow0(&self, start: usize, len: usize) -> Result<Tensor> {
        let lead = *self.shape().first().ok_or_else(|| shape_err!("narrow0 on rank-0 tensor"))?;
        if len == 0 || start + len > lead {
            return Err(shape_err!("narrow0 [{start}, {}) out of range for extent {lead}", start + len));
        }
        let inner = self.numel() / lead;
        let data = self.data()[start * inner..(start + len) * inner].to_vec();
        let mut shape = self.shape().to_vec();
        shape[0] = len;
        let n = self.numel();
        Ok(Tensor::from_op(
            shape,
            data,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; n];
                gx[start * inner..(start + len) * inner].copy_from_slice(g);
                vec![Some(gx)]
            }),
        ))
    }

    /// Splits along axis 0 into its slices, dropping the leading axis.
    pub fn unstack(&self) -> Result<Vec<Tensor>> {
        let lead = *self.shape().first().ok_or_else(|| shape_err!("unstack on rank-0 tensor"))?;
        let rest = self.shape()[1..].to_vec();
        if rest.is_empty() {
            return Err(shape_err!("unstack needs rank >= 2"));
        }
        (0..lead).map(|i| self.narrow0(i, 1)?.reshape(&rest)).collect()
    }

    /// Mean squared error between equal-shape tensors.
    pub fn mse(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape() != other.shape() {
            return Err(shape_err!("mse: {:?} vs {:?}", self.shape(), other.shape()));
        }
        let n = self.numel() as f64;
        let diff: Vec<f64> = self.data().iter().zip(other.data()).map(|(a, b)| a - b).collect();
        let v = diff.iter().map(|d| d * d).sum::<f64>() / n;
        let (ra, rb) = (self.requires_grad(), other.requires_grad());
        Ok(Tensor::from_op(
            vec![1],
            vec![v],
            vec![self.clone(), other.clone()],
            Box::new(move |g, _| {
                let k = 2.0 * g[0] / n;
                let ga: Option<Vec<f64>> = (ra || rb).then(|| diff.iter().map(|d| k * d).collect());
                let gb = rb.then(|| ga.as_ref().unwrap().iter().map(|v| -v).collect());
                vec![if ra { ga } else { None }, gb]
            }),
        ))
    }

    /// Elementwise finite check used by callers that must reject bad inputs.
    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.data().iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("{what} contains non-finite values")))
        }
    }
}
