//! Dense matrix product with a register-tiled inner kernel.
//!
//! Every output element is accumulated from 0.0 over the inner index in
//! increasing order, independent of tiling, so results are bitwise
//! reproducible and identical to the naive triple loop.

const MR: usize = 4;
const NR: usize = 8;

/// Read-only matrix view with arbitrary row and column strides, so a
/// transposed operand needs no copy.
#[derive(Clone, Copy)]
pub(crate) struct View<'a> {
    pub data: &'a [f64],
    pub rs: usize,
    pub cs: usize,
}

impl<'a> View<'a> {
    pub fn rows(data: &'a [f64], cols: usize) -> Self {
        View { data, rs: cols, cs: 1 }
    }

    /// Transpose of a row-major matrix with `cols` columns.
    pub fn transposed(data: &'a [f64], cols: usize) -> Self {
        View { data, rs: 1, cs: cols }
    }

    #[inline(always)]
    fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.rs + c * self.cs]
    }
}

#[inline(always)]
fn tile(acc: &mut [[f64; NR]; MR], av: &[f64; MR], bv: &[f64; NR]) {
    for i in 0..MR {
        for j in 0..NR {
            acc[i][j] += av[i] * bv[j];
        }
    }
}

/// `C = A·B` with `A: [m, k]`, `B: [k, n]`, all row-major.
#[cfg(test)]
pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    matmul_view(View::rows(a, k), View::rows(b, n), m, k, n)
}

/// `C = A·B` for strided `A: [m, k]` and `B: [k, n]`; `C` is row-major.
pub(crate) fn matmul_view(a: View, b: View, m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    if m == 0 || n == 0 || k == 0 {
        return c;
    }
    let panels = n.div_ceil(NR);
    // B packed as [panel][k][NR], zero-padded past column n
    let mut packed = Vec::with_capacity(panels * k * NR);
    for p in 0..panels {
        let j0 = p * NR;
        let width = NR.min(n - j0);
        for r in 0..k {
            if b.cs == 1 {
                let s = r * b.rs + j0;
                packed.extend_from_slice(&b.data[s..s + width]);
            } else {
                packed.extend((j0..j0 + width).map(|j| b.at(r, j)));
            }
            packed.extend(std::iter::repeat_n(0.0, NR - width));
        }
    }
    // A packed as [k][MR] per row block
    let mut ablock = vec![0.0; k * MR];
    let mut i0 = 0;
    while i0 < m {
        let rows = MR.min(m - i0);
        if rows == MR {
            if a.rs == 1 {
                for (r, dst) in ablock.chunks_exact_mut(MR).enumerate() {
                    let s = r * a.cs + i0;
                    dst.copy_from_slice(&a.data[s..s + MR]);
                }
            } else {
                for (r, dst) in ablock.chunks_exact_mut(MR).enumerate() {
                    for (i, d) in dst.iter_mut().enumerate() {
                        *d = a.at(i0 + i, r);
                    }
                }
            }
        }
        for p in 0..panels {
            let panel = &packed[p * k * NR..(p + 1) * k * NR];
            let mut acc = [[0.0f64; NR]; MR];
            if rows == MR {
                let (ab, _) = ablock.as_chunks::<MR>();
                let (pb, _) = panel.as_chunks::<NR>();
                for r in 0..k {
                    tile(&mut acc, &ab[r], &pb[r]);
                }
            } else {
                for (r, bv) in panel.chunks_exact(NR).enumerate() {
                    for i in 0..rows {
                        let av = a.at(i0 + i, r);
                        for j in 0..NR {
                            acc[i][j] += av * bv[j];
                        }
                    }
                }
            }
            let j0 = p * NR;
            let width = NR.min(n - j0);
            for i in 0..rows {
                c[(i0 + i) * n + j0..(i0 + i) * n + j0 + width].copy_from_slice(&acc[i][..width]);
            }
        }
        i0 += MR;
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_naive_triple_loop_bitwise() {
        for &(m, k, n) in &[(1, 1, 1), (4, 3, 8), (5, 7, 9), (13, 20, 17), (3, 1, 30)] {
            let a: Vec<f64> = (0..m * k).map(|i| ((i * 37 % 11) as f64 - 5.0) * 0.37).collect();
            let b: Vec<f64> = (0..k * n).map(|i| ((i * 53 % 13) as f64 - 6.0) * 0.11).collect();
            let c = matmul(&a, &b, m, k, n);
            let at: Vec<f64> = (0..k * m).map(|i| a[(i % m) * k + i / m]).collect();
            let bt: Vec<f64> = (0..n * k).map(|i| b[(i % k) * n + i / k]).collect();
            let ct = matmul_view(View::transposed(&at, m), View::transposed(&bt, k), m, k, n);
            assert!(c.iter().zip(&ct).all(|(x, y)| x.to_bits() == y.to_bits()));
            for i in 0..m {
                for j in 0..n {
                    let mut s = 0.0;
                    for r in 0..k {
                        s += a[i * k + r] * b[r * n + j];
                    }
                    assert_eq!(c[i * n + j].to_bits(), s.to_bits());
                }
            }
        }
    }
}
