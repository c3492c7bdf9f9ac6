//! Operation tags with their forward kernels and vector-Jacobian products.

use super::array::strides;
use super::{conv, lie, warp, Array, GraphError};
use crate::geometry::CameraIntrinsics;

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Input,
    Param,
    Constant,
    /// Broadcasting binary arithmetic.
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Scale(f64),
    AddScalar(f64),
    Abs,
    Exp,
    Log,
    Sqrt,
    Square,
    LeakyRelu(f64),
    Softplus,
    Clamp {
        lo: f64,
        hi: f64,
    },
    Sum,
    Mean,
    /// Sum over the listed axes, keeping them with extent 1.
    SumAxes(Vec<usize>),
    MeanAxes(Vec<usize>),
    Reshape,
    Slice {
        axis: usize,
        start: usize,
        end: usize,
    },
    Concat {
        axis: usize,
    },
    /// Swaps the last two axes of a rank-3 array.
    TransposeLast,
    /// Batched `[B, m, k] × [B, k, n]`.
    MatMul,
    Conv2d {
        stride: usize,
    },
    ConvTranspose2d {
        stride: usize,
    },
    Upsample2x,
    Box3x3,
    ExpSo3,
    LogSo3,
    EulerToRotation,
    LeftJacobianInvApply,
    Reproject(CameraIntrinsics),
    ReprojectMask(CameraIntrinsics),
    GridSample,
    GridSampleMask {
        height: usize,
        width: usize,
    },
    RequirePositive(String),
    StopGradient,
}

impl Op {
    /// Whether gradients propagate through this op.
    pub fn differentiable(&self) -> bool {
        !matches!(self, Op::Input | Op::Constant | Op::ReprojectMask(_) | Op::GridSampleMask { .. } | Op::StopGradient)
    }

    pub(crate) fn eval(&self, x: &[&Array], shape: &[usize]) -> Result<Array, GraphError> {
        use Op::*;
        Ok(match self {
            Input | Param | Constant => unreachable!("leaves are not evaluated"),
            Add => binary(x[0], x[1], shape, |a, b| a + b),
            Sub => binary(x[0], x[1], shape, |a, b| a - b),
            Mul => binary(x[0], x[1], shape, |a, b| a * b),
            Div => binary(x[0], x[1], shape, |a, b| a / b),
            Neg => x[0].map(|v| -v),
            Scale(s) => x[0].map(|v| v * s),
            AddScalar(s) => x[0].map(|v| v + s),
            Abs => x[0].map(f64::abs),
            Exp => x[0].map(f64::exp),
            Log => x[0].map(f64::ln),
            Sqrt => x[0].map(f64::sqrt),
            Square => x[0].map(|v| v * v),
            LeakyRelu(s) => x[0].map(|v| if v > 0.0 { v } else { s * v }),
            Softplus => x[0].map(|v| v.max(0.0) + (-v.abs()).exp().ln_1p()),
            Clamp { lo, hi } => x[0].map(|v| v.clamp(*lo, *hi)),
            Sum => Array::scalar(x[0].sum()),
            Mean => Array::scalar(x[0].sum() / x[0].len() as f64),
            SumAxes(_) => reduce_to(x[0], shape, 1.0),
            MeanAxes(_) => {
                let k = x[0].len() / shape.iter().product::<usize>();
                reduce_to(x[0], shape, 1.0 / k as f64)
            }
            Reshape | StopGradient => Array::from_vec(shape, x[0].data().to_vec())?,
            Slice { axis, start, end } => slice(x[0], *axis, *start, *end),
            Concat { axis } => concat(x, *axis, shape),
            TransposeLast => transpose_last(x[0]),
            MatMul => matmul(x[0], x[1], false, false),
            Conv2d { stride } => conv::conv2d_forward(x[0], x[1], x[2], *stride),
            ConvTranspose2d { stride } => conv::conv_transpose2d_forward(x[0], x[1], x[2], *stride),
            Upsample2x => conv::upsample2x_forward(x[0]),
            Box3x3 => conv::box3x3(x[0]),
            ExpSo3 => lie::exp_so3_forward(x[0]),
            LogSo3 => lie::log_so3_forward(x[0]),
            EulerToRotation => lie::euler_forward(x[0]),
            LeftJacobianInvApply => lie::jl_inv_apply_forward(x[0], x[1]),
            Reproject(k) => warp::reproject_forward(k, x[0], x[1], x[2]),
            ReprojectMask(k) => warp::reproject_mask(k, x[0], x[1], x[2]),
            GridSample => warp::grid_sample_forward(x[0], x[1]),
            GridSampleMask { height, width } => warp::grid_sample_mask(x[0], *height, *width),
            RequirePositive(what) => {
                if !(x[0].data().iter().all(|&v| v > 0.0)) {
                    return Err(GraphError::EmptyMask(what.clone()));
                }
                x[0].clone()
            }
        })
    }

    /// Gradients with respect to each input, given the output gradient `g`.
    /// Entries are `None` where `needs` is false.
    pub(crate) fn backprop(&self, x: &[&Array], out: &Array, g: &Array, needs: &[bool]) -> Vec<Option<Array>> {
        use Op::*;
        let need = |i: usize| needs.get(i).copied().unwrap_or(false);
        let unary = |f: &dyn Fn(f64, f64, f64) -> f64| {
            let d = x[0].data().iter().zip(out.data()).zip(g.data()).map(|((&xi, &yi), &gi)| f(xi, yi, gi)).collect();
            vec![Some(Array::from_vec(x[0].shape(), d).expect("same shape"))]
        };
        match self {
            Input | Param | Constant | ReprojectMask(_) | GridSampleMask { .. } | StopGradient => {
                vec![None; x.len()]
            }
            Add => binary_backward(x[0], x[1], g, needs, |_, _, g| (g, g)),
            Sub => binary_backward(x[0], x[1], g, needs, |_, _, g| (g, -g)),
            Mul => binary_backward(x[0], x[1], g, needs, |a, b, g| (g * b, g * a)),
            Div => binary_backward(x[0], x[1], g, needs, |a, b, g| (g / b, -g * a / (b * b))),
            Neg => vec![Some(g.map(|v| -v))],
            Scale(s) => vec![Some(g.map(|v| v * s))],
            AddScalar(_) | Reshape | RequirePositive(_) => {
                vec![Some(Array::from_vec(x[0].shape(), g.data().to_vec()).expect("same size"))]
            }
            Abs => unary(&|x, _, g| {
                if x > 0.0 {
                    g
                } else if x < 0.0 {
                    -g
                } else {
                    0.0
                }
            }),
            Exp => unary(&|_, y, g| g * y),
            Log => unary(&|x, _, g| g / x),
            Sqrt => unary(&|_, y, g| 0.5 * g / y),
            Square => unary(&|x, _, g| 2.0 * x * g),
            LeakyRelu(s) => unary(&|x, _, g| if x > 0.0 { g } else { s * g }),
            Softplus => unary(&|x, _, g| g / (1.0 + (-x).exp())),
            Clamp { lo, hi } => unary(&|x, _, g| if x >= *lo && x <= *hi { g } else { 0.0 }),
            Sum => vec![Some(Array::full(x[0].shape(), g.item()))],
            Mean => vec![Some(Array::full(x[0].shape(), g.item() / x[0].len() as f64))],
            SumAxes(_) => vec![Some(expand_from(g, x[0].shape(), 1.0))],
            MeanAxes(_) => {
                let k = x[0].len() / g.len();
                vec![Some(expand_from(g, x[0].shape(), 1.0 / k as f64))]
            }
            Slice { axis, start, end } => {
                let mut gx = Array::zeros(x[0].shape());
                scatter_slice(&mut gx, g, *axis, *start, *end);
                vec![Some(gx)]
            }
            Concat { axis } => {
                let mut offset = 0;
                x.iter()
                    .enumerate()
                    .map(|(i, xi)| {
                        let len = xi.shape()[*axis];
                        let r = need(i).then(|| slice(g, *axis, offset, offset + len));
                        offset += len;
                        r
                    })
                    .collect()
            }
            TransposeLast => vec![Some(transpose_last(g))],
            MatMul => {
                vec![need(0).then(|| matmul(g, x[1], false, true)), need(1).then(|| matmul(x[0], g, true, false))]
            }
            Conv2d { stride } => conv::conv2d_backward(x[0], x[1], g, *stride, [need(0), need(1), need(2)]).into(),
            ConvTranspose2d { stride } => {
                conv::conv_transpose2d_backward(x[0], x[1], g, *stride, [need(0), need(1), need(2)]).into()
            }
            Upsample2x => vec![Some(conv::upsample2x_backward(x[0].shape(), g))],
            Box3x3 => vec![Some(conv::box3x3(g))],
            ExpSo3 => vec![Some(lie::exp_so3_backward(x[0], g))],
            LogSo3 => vec![Some(lie::log_so3_backward(x[0], out, g))],
            EulerToRotation => vec![Some(lie::euler_backward(x[0], g))],
            LeftJacobianInvApply => {
                let (gw, gt) = lie::jl_inv_apply_backward(x[0], x[1], g);
                vec![need(0).then_some(gw), need(1).then_some(gt)]
            }
            Reproject(k) => warp::reproject_backward(k, x[0], x[1], x[2], g, needs),
            GridSample => warp::grid_sample_backward(x[0], x[1], g, needs),
        }
    }
}

/// Numpy-style broadcast of two shapes (trailing alignment).
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let r = a.len().max(b.len());
    let pad = |s: &[usize], d: usize| if d + s.len() >= r { s[d + s.len() - r] } else { 1 };
    (0..r)
        .map(|d| {
            let (x, y) = (pad(a, d), pad(b, d));
            if x == y || y == 1 {
                Some(x)
            } else if x == 1 {
                Some(y)
            } else {
                None
            }
        })
        .collect()
}

/// For each flat index of `out`, the flat index of the broadcast source.
pub(crate) fn broadcast_offsets(out: &[usize], src: &[usize]) -> Vec<usize> {
    let r = out.len();
    let mut padded = vec![1; r - src.len()];
    padded.extend_from_slice(src);
    let st = strides(&padded);
    let eff: Vec<usize> = (0..r).map(|d| if padded[d] == 1 { 0 } else { st[d] }).collect();
    let n: usize = out.iter().product();
    let mut offs = Vec::with_capacity(n);
    let mut idx = vec![0usize; r];
    let mut off = 0usize;
    for _ in 0..n {
        offs.push(off);
        for d in (0..r).rev() {
            idx[d] += 1;
            off += eff[d];
            if idx[d] < out[d] {
                break;
            }
            off -= eff[d] * idx[d];
            idx[d] = 0;
        }
    }
    offs
}

fn binary(a: &Array, b: &Array, shape: &[usize], f: impl Fn(f64, f64) -> f64) -> Array {
    if a.shape() == b.shape() {
        let d = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Array::from_vec(shape, d).expect("same shape");
    }
    let oa = broadcast_offsets(shape, a.shape());
    let ob = broadcast_offsets(shape, b.shape());
    let d = oa.iter().zip(&ob).map(|(&i, &j)| f(a.data()[i], b.data()[j])).collect();
    Array::from_vec(shape, d).expect("broadcast shape")
}

fn binary_backward(
    a: &Array,
    b: &Array,
    g: &Array,
    needs: &[bool],
    f: impl Fn(f64, f64, f64) -> (f64, f64),
) -> Vec<Option<Array>> {
    let shape = g.shape();
    let oa = broadcast_offsets(shape, a.shape());
    let ob = broadcast_offsets(shape, b.shape());
    let mut ga = needs[0].then(|| Array::zeros(a.shape()));
    let mut gb = needs[1].then(|| Array::zeros(b.shape()));
    for k in 0..g.len() {
        let (da, db) = f(a.data()[oa[k]], b.data()[ob[k]], g.data()[k]);
        if let Some(ga) = ga.as_mut() {
            ga.data_mut()[oa[k]] += da;
        }
        if let Some(gb) = gb.as_mut() {
            gb.data_mut()[ob[k]] += db;
        }
    }
    vec![ga, gb]
}

fn reduce_to(x: &Array, shape: &[usize], scale: f64) -> Array {
    let offs = broadcast_offsets(x.shape(), shape);
    let mut out = Array::zeros(shape);
    for (k, &o) in offs.iter().enumerate() {
        out.data_mut()[o] += x.data()[k];
    }
    if scale != 1.0 {
        out.data_mut().iter_mut().for_each(|v| *v *= scale);
    }
    out
}

fn expand_from(g: &Array, shape: &[usize], scale: f64) -> Array {
    let offs = broadcast_offsets(shape, g.shape());
    let d = offs.iter().map(|&o| g.data()[o] * scale).collect();
    Array::from_vec(shape, d).expect("expanded shape")
}

fn outer_inner(shape: &[usize], axis: usize) -> (usize, usize) {
    (shape[..axis].iter().product(), shape[axis + 1..].iter().product())
}

pub(crate) fn slice(x: &Array, axis: usize, start: usize, end: usize) -> Array {
    let (outer, inner) = outer_inner(x.shape(), axis);
    let len = x.shape()[axis];
    let mut shape = x.shape().to_vec();
    shape[axis] = end - start;
    let mut d = Vec::with_capacity(outer * (end - start) * inner);
    for o in 0..outer {
        let base = o * len * inner;
        d.extend_from_slice(&x.data()[base + start * inner..base + end * inner]);
    }
    Array::from_vec(&shape, d).expect("slice shape")
}

fn scatter_slice(dst: &mut Array, src: &Array, axis: usize, start: usize, end: usize) {
    let (outer, inner) = outer_inner(dst.shape(), axis);
    let len = dst.shape()[axis];
    let w = (end - start) * inner;
    for o in 0..outer {
        let base = o * len * inner + start * inner;
        dst.data_mut()[base..base + w].copy_from_slice(&src.data()[o * w..(o + 1) * w]);
    }
}

fn concat(x: &[&Array], axis: usize, shape: &[usize]) -> Array {
    let mut out = Array::zeros(shape);
    let mut offset = 0;
    for xi in x {
        let len = xi.shape()[axis];
        scatter_slice(&mut out, xi, axis, offset, offset + len);
        offset += len;
    }
    out
}

fn transpose_last(x: &Array) -> Array {
    let s = x.shape();
    let (b, m, n) = (s[0], s[1], s[2]);
    let mut out = Array::zeros(&[b, n, m]);
    for i in 0..b {
        for r in 0..m {
            for c in 0..n {
                out.data_mut()[(i * n + c) * m + r] = x.data()[(i * m + r) * n + c];
            }
        }
    }
    out
}

/// Batched product with optional transposition of either operand.
fn matmul(a: &Array, b: &Array, ta: bool, tb: bool) -> Array {
    let (bs, ar, ac) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let (br, bc) = (b.shape()[1], b.shape()[2]);
    let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
    let n = if tb { br } else { bc };
    let at = |i: usize, r: usize, c: usize| {
        if ta {
            a.data()[(i * ar + c) * ac + r]
        } else {
            a.data()[(i * ar + r) * ac + c]
        }
    };
    let bt = |i: usize, r: usize, c: usize| {
        if tb {
            b.data()[(i * br + c) * bc + r]
        } else {
            b.data()[(i * br + r) * bc + c]
        }
    };
    let mut out = Array::zeros(&[bs, m, n]);
    for i in 0..bs {
        for r in 0..m {
            for c in 0..n {
                out.data_mut()[(i * m + r) * n + c] = (0..k).map(|q| at(i, r, q) * bt(i, q, c)).sum();
            }
        }
    }
    out
}
