//! Convolution-style kernels: im2col based (transposed) convolution with
//! "same" zero padding, bilinear ×2 upsampling and 3×3 box filtering.

use super::Array;

/// Geometry of a "same"-padded convolution over a `c × h × w` input.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub s: usize,
    pub ho: usize,
    pub wo: usize,
    pub pad_top: isize,
    pub pad_left: isize,
}

impl ConvGeom {
    /// Output size is `ceil(in / stride)`; the total padding is split with
    /// the extra row/column at the bottom/right.
    pub fn same(c: usize, h: usize, w: usize, k: usize, s: usize) -> Self {
        let ho = h.div_ceil(s);
        let wo = w.div_ceil(s);
        let pad_h = ((ho - 1) * s + k).saturating_sub(h);
        let pad_w = ((wo - 1) * s + k).saturating_sub(w);
        Self { c, h, w, k, s, ho, wo, pad_top: (pad_h / 2) as isize, pad_left: (pad_w / 2) as isize }
    }

    pub fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    pub fn cols(&self) -> usize {
        self.ho * self.wo
    }
}

pub fn output_size(input: usize, stride: usize) -> usize {
    input.div_ceil(stride)
}

fn im2col(g: &ConvGeom, x: &[f64], cols: &mut [f64]) {
    let n = g.cols();
    for c in 0..g.c {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = ((c * g.k + ky) * g.k + kx) * n;
                for oy in 0..g.ho {
                    let iy = (oy * g.s) as isize + ky as isize - g.pad_top;
                    let dst = &mut cols[row + oy * g.wo..row + (oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &x[(c * g.h + iy as usize) * g.w..(c * g.h + iy as usize + 1) * g.w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.s) as isize + kx as isize - g.pad_left;
                        *d = if ix < 0 || ix >= g.w as isize { 0.0 } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im(g: &ConvGeom, cols: &[f64], x: &mut [f64]) {
    let n = g.cols();
    for c in 0..g.c {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = ((c * g.k + ky) * g.k + kx) * n;
                for oy in 0..g.ho {
                    let iy = (oy * g.s) as isize + ky as isize - g.pad_top;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let base = (c * g.h + iy as usize) * g.w;
                    for ox in 0..g.wo {
                        let ix = (ox * g.s) as isize + kx as isize - g.pad_left;
                        if ix >= 0 && ix < g.w as isize {
                            x[base + ix as usize] += cols[row + oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Row-major matrix operand, optionally transposed.
#[derive(Clone, Copy)]
struct Mat<'a> {
    data: &'a [f64],
    rows: usize,
    cols: usize,
    transposed: bool,
}

impl<'a> Mat<'a> {
    fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        Self { data, rows, cols, transposed: false }
    }

    fn t(self) -> Self {
        Self { transposed: !self.transposed, ..self }
    }

    fn shape(&self) -> (usize, usize) {
        if self.transposed {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.cols as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// `c = beta · c + a · b` for row-major `c`.
fn gemm(a: Mat, b: Mat, beta: f64, c: &mut [f64]) {
    let (m, k) = a.shape();
    let (k2, n) = b.shape();
    assert_eq!(k, k2, "gemm inner dimensions");
    assert_eq!(c.len(), m * n, "gemm output size");
    assert!(a.data.len() >= a.rows * a.cols && b.data.len() >= b.rows * b.cols);
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: the operand buffers are at least as large as the strided
    // views described by (rows, cols, strides) and `c` is exactly m × n.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `x: [N, C, H, W]`, `w: [O, C, k, k]`, `b: [O]` → `[N, O, ceil(H/s), ceil(W/s)]`.
pub(crate) fn conv2d_forward(x: &Array, w: &Array, b: &Array, stride: usize) -> Array {
    let [n, c, h, wd] = dims4(x);
    let (o, k) = (w.shape()[0], w.shape()[2]);
    let g = ConvGeom::same(c, h, wd, k, stride);
    let mut out = Array::zeros(&[n, o, g.ho, g.wo]);
    let mut cols = vec![0.0; g.rows() * g.cols()];
    let in_sz = c * h * wd;
    let out_sz = o * g.cols();
    for i in 0..n {
        im2col(&g, &x.data()[i * in_sz..(i + 1) * in_sz], &mut cols);
        let dst = &mut out.data_mut()[i * out_sz..(i + 1) * out_sz];
        gemm(Mat::new(w.data(), o, g.rows()), Mat::new(&cols, g.rows(), g.cols()), 0.0, dst);
        for (oc, chunk) in dst.chunks_mut(g.cols()).enumerate() {
            let bias = b.data()[oc];
            chunk.iter_mut().for_each(|v| *v += bias);
        }
    }
    out
}

pub(crate) fn conv2d_backward(
    x: &Array,
    w: &Array,
    gout: &Array,
    stride: usize,
    needs: [bool; 3],
) -> [Option<Array>; 3] {
    let [n, c, h, wd] = dims4(x);
    let (o, k) = (w.shape()[0], w.shape()[2]);
    let g = ConvGeom::same(c, h, wd, k, stride);
    let in_sz = c * h * wd;
    let out_sz = o * g.cols();
    let mut gx = needs[0].then(|| Array::zeros(x.shape()));
    let mut gw = needs[1].then(|| Array::zeros(w.shape()));
    let mut cols = vec![0.0; g.rows() * g.cols()];
    for i in 0..n {
        let go = &gout.data()[i * out_sz..(i + 1) * out_sz];
        if let Some(gw) = gw.as_mut() {
            im2col(&g, &x.data()[i * in_sz..(i + 1) * in_sz], &mut cols);
            gemm(Mat::new(go, o, g.cols()), Mat::new(&cols, g.rows(), g.cols()).t(), 1.0, gw.data_mut());
        }
        if let Some(gx) = gx.as_mut() {
            gemm(Mat::new(w.data(), o, g.rows()).t(), Mat::new(go, o, g.cols()), 0.0, &mut cols);
            col2im(&g, &cols, &mut gx.data_mut()[i * in_sz..(i + 1) * in_sz]);
        }
    }
    let gb = needs[2].then(|| channel_sums(gout));
    [gx, gw, gb]
}

/// `x: [N, Cin, H, W]`, `w: [Cin, Cout, k, k]`, `b: [Cout]` →
/// `[N, Cout, H·s, W·s]`; the adjoint of a same-padded stride-`s` convolution.
pub(crate) fn conv_transpose2d_forward(x: &Array, w: &Array, b: &Array, stride: usize) -> Array {
    let [n, cin, h, wd] = dims4(x);
    let (cout, k) = (w.shape()[1], w.shape()[2]);
    let (hy, wy) = (h * stride, wd * stride);
    let g = ConvGeom::same(cout, hy, wy, k, stride);
    debug_assert_eq!((g.ho, g.wo), (h, wd));
    let mut out = Array::zeros(&[n, cout, hy, wy]);
    let mut cols = vec![0.0; g.rows() * g.cols()];
    let in_sz = cin * h * wd;
    let out_sz = cout * hy * wy;
    for i in 0..n {
        gemm(
            Mat::new(w.data(), cin, g.rows()).t(),
            Mat::new(&x.data()[i * in_sz..(i + 1) * in_sz], cin, g.cols()),
            0.0,
            &mut cols,
        );
        let dst = &mut out.data_mut()[i * out_sz..(i + 1) * out_sz];
        col2im(&g, &cols, dst);
        for (oc, chunk) in dst.chunks_mut(hy * wy).enumerate() {
            let bias = b.data()[oc];
            chunk.iter_mut().for_each(|v| *v += bias);
        }
    }
    out
}

pub(crate) fn conv_transpose2d_backward(
    x: &Array,
    w: &Array,
    gout: &Array,
    stride: usize,
    needs: [bool; 3],
) -> [Option<Array>; 3] {
    let [n, cin, h, wd] = dims4(x);
    let (cout, k) = (w.shape()[1], w.shape()[2]);
    let (hy, wy) = (h * stride, wd * stride);
    let g = ConvGeom::same(cout, hy, wy, k, stride);
    let in_sz = cin * h * wd;
    let out_sz = cout * hy * wy;
    let mut gx = needs[0].then(|| Array::zeros(x.shape()));
    let mut gw = needs[1].then(|| Array::zeros(w.shape()));
    let mut cols = vec![0.0; g.rows() * g.cols()];
    if gx.is_some() || gw.is_some() {
        for i in 0..n {
            im2col(&g, &gout.data()[i * out_sz..(i + 1) * out_sz], &mut cols);
            if let Some(gx) = gx.as_mut() {
                gemm(
                    Mat::new(w.data(), cin, g.rows()),
                    Mat::new(&cols, g.rows(), g.cols()),
                    0.0,
                    &mut gx.data_mut()[i * in_sz..(i + 1) * in_sz],
                );
            }
            if let Some(gw) = gw.as_mut() {
                gemm(
                    Mat::new(&x.data()[i * in_sz..(i + 1) * in_sz], cin, g.cols()),
                    Mat::new(&cols, g.rows(), g.cols()).t(),
                    1.0,
                    gw.data_mut(),
                );
            }
        }
    }
    let gb = needs[2].then(|| channel_sums(gout));
    [gx, gw, gb]
}

fn channel_sums(g: &Array) -> Array {
    let [n, c, h, w] = dims4(g);
    let mut out = Array::zeros(&[c]);
    for i in 0..n {
        for ch in 0..c {
            let start = (i * c + ch) * h * w;
            out.data_mut()[ch] += g.data()[start..start + h * w].iter().sum::<f64>();
        }
    }
    out
}

pub(crate) fn dims4(a: &Array) -> [usize; 4] {
    let s = a.shape();
    [s[0], s[1], s[2], s[3]]
}

/// Source index pair and weight of the upper neighbour for half-pixel ×2
/// upsampling along one axis.
fn upsample_taps(out_len: usize, in_len: usize) -> Vec<(usize, usize, f64)> {
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * 0.5 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

pub(crate) fn upsample2x_forward(x: &Array) -> Array {
    let [n, c, h, w] = dims4(x);
    let (ho, wo) = (2 * h, 2 * w);
    let ty = upsample_taps(ho, h);
    let tx = upsample_taps(wo, w);
    let mut out = Array::zeros(&[n, c, ho, wo]);
    for p in 0..n * c {
        let src = &x.data()[p * h * w..(p + 1) * h * w];
        let dst = &mut out.data_mut()[p * ho * wo..(p + 1) * ho * wo];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
                let bot = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
                dst[oy * wo + ox] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    out
}

pub(crate) fn upsample2x_backward(x_shape: &[usize], g: &Array) -> Array {
    let (n, c, h, w) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
    let (ho, wo) = (2 * h, 2 * w);
    let ty = upsample_taps(ho, h);
    let tx = upsample_taps(wo, w);
    let mut gx = Array::zeros(x_shape);
    for p in 0..n * c {
        let src = &g.data()[p * ho * wo..(p + 1) * ho * wo];
        let dst = &mut gx.data_mut()[p * h * w..(p + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let v = src[oy * wo + ox];
                dst[y0 * w + x0] += v * (1.0 - fy) * (1.0 - fx);
                dst[y0 * w + x1] += v * (1.0 - fy) * fx;
                dst[y1 * w + x0] += v * fy * (1.0 - fx);
                dst[y1 * w + x1] += v * fy * fx;
            }
        }
    }
    gx
}

/// Mean over the 3×3 neighbourhood with zero padding (always divides by 9).
/// The operator is self-adjoint, so it also serves as its own backward.
pub(crate) fn box3x3(x: &Array) -> Array {
    let [n, c, h, w] = dims4(x);
    let mut out = Array::zeros(x.shape());
    for p in 0..n * c {
        let src = &x.data()[p * h * w..(p + 1) * h * w];
        let dst = &mut out.data_mut()[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            for xx in 0..w {
                let mut acc = 0.0;
                for yy in y.saturating_sub(1)..(y + 2).min(h) {
                    for xq in xx.saturating_sub(1)..(xx + 2).min(w) {
                        acc += src[yy * w + xq];
                    }
                }
                dst[y * w + xx] = acc / 9.0;
            }
        }
    }
    out
}
