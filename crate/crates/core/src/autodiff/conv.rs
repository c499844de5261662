//! Direct 2-D convolution kernels on NCHW buffers, forward and backward.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeom {
    pub fn conv_out(&self) -> (usize, usize) {
        let f = |n: usize| (n + 2 * self.padding - self.kernel) / self.stride + 1;
        (f(self.in_h), f(self.in_w))
    }

    pub fn transpose_out(&self) -> (usize, usize) {
        let f = |n: usize| (n - 1) * self.stride + self.kernel - 2 * self.padding;
        (f(self.in_h), f(self.in_w))
    }
}

/// Range of output (conv) or input (transposed) positions `i` for which
/// `i * stride + k - padding` lands in `0..limit`.
#[inline]
fn valid_range(k: usize, stride: usize, padding: usize, limit: usize, count: usize) -> (usize, usize) {
    let lo = if padding > k { (padding - k).div_ceil(stride) } else { 0 };
    let hi_excl = if limit + padding > k { (limit + padding - k - 1) / stride + 1 } else { 0 };
    (lo, hi_excl.min(count))
}

/// Patch-matrix geometry: `channels` planes of `in_h x in_w`, kernel `k`,
/// sampled at `out_h x out_w` positions.
#[derive(Clone, Copy)]
struct Patches {
    channels: usize,
    in_h: usize,
    in_w: usize,
    k: usize,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
}

impl Patches {
    fn rows(&self) -> usize {
        self.channels * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// `cols[(c, kh, kw), (r, q)] = x[c, r*s + kh - p, q*s + kw - p]` (zero outside).
    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let (k, s, p) = (self.k, self.stride, self.padding);
        let n = self.cols();
        cols.fill(0.0);
        for c in 0..self.channels {
            let plane = &x[c * self.in_h * self.in_w..][..self.in_h * self.in_w];
            for kh in 0..k {
                let (r_lo, r_hi) = valid_range(kh, s, p, self.in_h, self.out_h);
                for kw in 0..k {
                    let (c_lo, c_hi) = valid_range(kw, s, p, self.in_w, self.out_w);
                    let row = &mut cols[((c * k + kh) * k + kw) * n..][..n];
                    for r in r_lo..r_hi {
                        let src = &plane[(r * s + kh - p) * self.in_w..][..self.in_w];
                        let dst = &mut row[r * self.out_w..][..self.out_w];
                        for q in c_lo..c_hi {
                            dst[q] = src[q * s + kw - p];
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of `im2col`: scatter-adds patch columns back onto the planes.
    fn col2im(&self, cols: &[f64], x: &mut [f64]) {
        let (k, s, p) = (self.k, self.stride, self.padding);
        let n = self.cols();
        for c in 0..self.channels {
            let plane = &mut x[c * self.in_h * self.in_w..][..self.in_h * self.in_w];
            for kh in 0..k {
                let (r_lo, r_hi) = valid_range(kh, s, p, self.in_h, self.out_h);
                for kw in 0..k {
                    let (c_lo, c_hi) = valid_range(kw, s, p, self.in_w, self.out_w);
                    let row = &cols[((c * k + kh) * k + kw) * n..][..n];
                    for r in r_lo..r_hi {
                        let dst = &mut plane[(r * s + kh - p) * self.in_w..][..self.in_w];
                        let src = &row[r * self.out_w..][..self.out_w];
                        for q in c_lo..c_hi {
                            dst[q * s + kw - p] += src[q];
                        }
                    }
                }
            }
        }
    }
}

/// Row-major operand view: element `(i, j)` sits at `i * rs + j * cs`.
#[derive(Clone, Copy)]
struct View<'a> {
    data: &'a [f64],
    rs: usize,
    cs: usize,
}

fn plain(data: &[f64], cols: usize) -> View<'_> {
    View { data, rs: cols, cs: 1 }
}

fn transposed(data: &[f64], cols: usize) -> View<'_> {
    View { data, rs: 1, cs: cols }
}

/// `c[m x n] = a[m x k] * b[k x n] + beta * c`, `c` dense row-major.
fn gemm(m: usize, k: usize, n: usize, a: View, b: View, beta: f64, c: &mut [f64]) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |v: &View, rows: usize, cols: usize| (rows - 1) * v.rs + (cols - 1) * v.cs;
    if k > 0 {
        assert!(last(&a, m, k) < a.data.len() && last(&b, k, n) < b.data.len());
    }
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above keep every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Dense product of row-major matrices, either optionally transposed:
/// `op(a)[m x k] * op(b)[k x n]`.
pub(crate) fn matmul(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    let va = if a_t { transposed(a, m) } else { plain(a, k) };
    let vb = if b_t { transposed(b, k) } else { plain(b, n) };
    gemm(m, k, n, va, vb, 0.0, &mut c);
    c
}

fn conv_patches(g: &ConvGeom) -> Patches {
    let (out_h, out_w) = g.conv_out();
    Patches { channels: g.in_channels, in_h: g.in_h, in_w: g.in_w, k: g.kernel, stride: g.stride, padding: g.padding, out_h, out_w }
}

/// A transposed convolution scatters onto the output grid exactly as a
/// convolution from that grid would gather from it.
fn transpose_patches(g: &ConvGeom) -> Patches {
    let (oh, ow) = g.transpose_out();
    Patches { channels: g.out_channels, in_h: oh, in_w: ow, k: g.kernel, stride: g.stride, padding: g.padding, out_h: g.in_h, out_w: g.in_w }
}

fn add_bias(out: &mut [f64], b: &[f64], plane: usize) {
    for (chunk, &bv) in out.chunks_mut(plane).zip(b.iter().cycle()) {
        chunk.fill(bv);
    }
}

fn bias_grad(dy: &[f64], channels: usize, plane: usize) -> Vec<f64> {
    let mut db = vec![0.0; channels];
    for (i, chunk) in dy.chunks(plane).enumerate() {
        db[i % channels] += chunk.iter().sum::<f64>();
    }
    db
}

/// `x: [N, C, H, W]`, `w: [O, C, k, k]`, `b: [O]`.
pub fn conv2d(g: &ConvGeom, x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let pt = conv_patches(g);
    let (rows, cols) = (pt.rows(), pt.cols());
    let in_len = g.in_channels * g.in_h * g.in_w;
    let out_len = g.out_channels * cols;
    let mut out = vec![0.0; g.batch * out_len];
    add_bias(&mut out, b, cols);
    let mut patch = vec![0.0; rows * cols];
    for n in 0..g.batch {
        pt.im2col(&x[n * in_len..][..in_len], &mut patch);
        gemm(g.out_channels, rows, cols, plain(w, rows), plain(&patch, cols), 1.0, &mut out[n * out_len..][..out_len]);
    }
    out
}

/// Returns `(dx, dw, db)` for `conv2d`.
/// `dw` stays zero when `need_w` is false.
pub fn conv2d_backward(g: &ConvGeom, x: &[f64], w: &[f64], dy: &[f64], need_w: bool) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let pt = conv_patches(g);
    let (rows, cols) = (pt.rows(), pt.cols());
    let in_len = g.in_channels * g.in_h * g.in_w;
    let out_len = g.out_channels * cols;
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; w.len()];
    let mut patch = vec![0.0; rows * cols];
    for n in 0..g.batch {
        let dyn_ = &dy[n * out_len..][..out_len];
        if need_w {
            pt.im2col(&x[n * in_len..][..in_len], &mut patch);
            gemm(g.out_channels, cols, rows, plain(dyn_, cols), transposed(&patch, cols), 1.0, &mut dw);
        }
        gemm(rows, g.out_channels, cols, transposed(w, rows), plain(dyn_, cols), 0.0, &mut patch);
        pt.col2im(&patch, &mut dx[n * in_len..][..in_len]);
    }
    (dx, dw, bias_grad(dy, g.out_channels, cols))
}

/// `x: [N, C, H, W]`, `w: [C, O, k, k]`, `b: [O]`.
pub fn conv_transpose2d(g: &ConvGeom, x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let pt = transpose_patches(g);
    let (rows, cols) = (pt.rows(), pt.cols());
    let in_len = g.in_channels * cols;
    let out_len = g.out_channels * pt.in_h * pt.in_w;
    let mut out = vec![0.0; g.batch * out_len];
    add_bias(&mut out, b, pt.in_h * pt.in_w);
    let mut patch = vec![0.0; rows * cols];
    for n in 0..g.batch {
        gemm(rows, g.in_channels, cols, transposed(w, rows), plain(&x[n * in_len..][..in_len], cols), 0.0, &mut patch);
        pt.col2im(&patch, &mut out[n * out_len..][..out_len]);
    }
    out
}

/// Returns `(dx, dw, db)` for `conv_transpose2d`.
/// `dw` stays zero when `need_w` is false.
pub fn conv_transpose2d_backward(g: &ConvGeom, x: &[f64], w: &[f64], dy: &[f64], need_w: bool) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let pt = transpose_patches(g);
    let (rows, cols) = (pt.rows(), pt.cols());
    let in_len = g.in_channels * cols;
    let out_len = g.out_channels * pt.in_h * pt.in_w;
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; w.len()];
    let mut patch = vec![0.0; rows * cols];
    for n in 0..g.batch {
        pt.im2col(&dy[n * out_len..][..out_len], &mut patch);
        let xn = &x[n * in_len..][..in_len];
        gemm(g.in_channels, rows, cols, plain(w, rows), plain(&patch, cols), 0.0, &mut dx[n * in_len..][..in_len]);
        if need_w {
            gemm(g.in_channels, cols, rows, plain(xn, cols), transposed(&patch, cols), 1.0, &mut dw);
        }
    }
    (dx, dw, bias_grad(dy, g.out_channels, pt.in_h * pt.in_w))
}
