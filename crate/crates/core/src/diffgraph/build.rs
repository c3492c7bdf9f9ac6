//! Graph builder methods. Each checks operand shapes and appends one node.

use super::conv::output_size;
use super::ops::broadcast_shape;
use super::{Graph, GraphError, NodeId, Op};
use crate::geometry::CameraIntrinsics;

fn mismatch(msg: String) -> GraphError {
    GraphError::ShapeMismatch(msg)
}

impl Graph {
    fn expect_rank(&self, x: NodeId, rank: usize, what: &str) -> Result<&[usize], GraphError> {
        let s = self.shape(x);
        if s.len() != rank {
            return Err(mismatch(format!("{what} expects rank {rank}, got {s:?}")));
        }
        Ok(s)
    }

    fn broadcast(&mut self, op: Op, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let shape = broadcast_shape(self.shape(a), self.shape(b)).ok_or_else(|| {
            mismatch(format!("{op:?}: cannot broadcast {:?} with {:?}", self.shape(a), self.shape(b)))
        })?;
        Ok(self.push(op, vec![a, b], shape))
    }

    fn unary(&mut self, op: Op, x: NodeId) -> NodeId {
        let shape = self.shape(x).to_vec();
        self.push(op, vec![x], shape)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.broadcast(Op::Add, a, b)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.broadcast(Op::Sub, a, b)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.broadcast(Op::Mul, a, b)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.broadcast(Op::Div, a, b)
    }

    pub fn neg(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::Neg, x)
    }

    pub fn scale(&mut self, x: NodeId, s: f64) -> NodeId {
        self.unary(Op::Scale(s), x)
    }

    pub fn add_scalar(&mut self, x: NodeId, s: f64) -> NodeId {
        self.unary(Op::AddScalar(s), x)
    }

    pub fn abs(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::Abs, x)
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::Exp, x)
    }

    pub fn log(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::Log, x)
    }

    pub fn sqrt(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::Sqrt, x)
    }

    pub fn square(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::Square, x)
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> NodeId {
        self.unary(Op::LeakyRelu(slope), x)
    }

    pub fn softplus(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::Softplus, x)
    }

    pub fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> NodeId {
        self.unary(Op::Clamp { lo, hi }, x)
    }

    /// Identity in the forward pass; blocks gradients.
    pub fn stop_gradient(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::StopGradient, x)
    }

    /// Identity that fails evaluation with [`GraphError::EmptyMask`] unless
    /// every element is positive. Used to guard normalizing counts.
    pub fn require_positive(&mut self, x: NodeId, what: &str) -> NodeId {
        self.unary(Op::RequirePositive(what.to_string()), x)
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Sum, vec![x], Vec::new())
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Mean, vec![x], Vec::new())
    }

    fn reduced_shape(&self, x: NodeId, axes: &[usize]) -> Result<Vec<usize>, GraphError> {
        let mut shape = self.shape(x).to_vec();
        for &a in axes {
            if a >= shape.len() {
                return Err(mismatch(format!("axis {a} out of range for {shape:?}")));
            }
            shape[a] = 1;
        }
        Ok(shape)
    }

    /// Sum over `axes`, which are kept with extent 1.
    pub fn sum_axes(&mut self, x: NodeId, axes: &[usize]) -> Result<NodeId, GraphError> {
        let shape = self.reduced_shape(x, axes)?;
        Ok(self.push(Op::SumAxes(axes.to_vec()), vec![x], shape))
    }

    pub fn mean_axes(&mut self, x: NodeId, axes: &[usize]) -> Result<NodeId, GraphError> {
        let shape = self.reduced_shape(x, axes)?;
        Ok(self.push(Op::MeanAxes(axes.to_vec()), vec![x], shape))
    }

    /// `[B, C, H, W]` → `[B, C]` by averaging over height and width.
    pub fn spatial_mean(&mut self, x: NodeId) -> Result<NodeId, GraphError> {
        let s = self.expect_rank(x, 4, "spatial_mean")?.to_vec();
        let m = self.mean_axes(x, &[2, 3])?;
        self.reshape(m, &[s[0], s[1]])
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId, GraphError> {
        let n: usize = self.shape(x).iter().product();
        if n != shape.iter().product::<usize>() {
            return Err(mismatch(format!("cannot reshape {:?} to {shape:?}", self.shape(x))));
        }
        Ok(self.push(Op::Reshape, vec![x], shape.to_vec()))
    }

    pub fn slice(&mut self, x: NodeId, axis: usize, start: usize, end: usize) -> Result<NodeId, GraphError> {
        let mut shape = self.shape(x).to_vec();
        if axis >= shape.len() || start >= end || end > shape[axis] {
            return Err(mismatch(format!("slice {start}..{end} on axis {axis} of {shape:?}")));
        }
        shape[axis] = end - start;
        Ok(self.push(Op::Slice { axis, start, end }, vec![x], shape))
    }

    pub fn concat(&mut self, xs: &[NodeId], axis: usize) -> Result<NodeId, GraphError> {
        let first = xs.first().ok_or_else(|| mismatch("concat of nothing".into()))?;
        let mut shape = self.shape(*first).to_vec();
        if axis >= shape.len() {
            return Err(mismatch(format!("concat axis {axis} out of range for {shape:?}")));
        }
        shape[axis] = 0;
        for &x in xs {
            let s = self.shape(x);
            let compatible =
                s.len() == shape.len() && s.iter().zip(&shape).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(mismatch(format!("concat of {s:?} onto {shape:?} along {axis}")));
            }
            shape[axis] += s[axis];
        }
        Ok(self.push(Op::Concat { axis }, xs.to_vec(), shape))
    }

    pub fn transpose_last(&mut self, x: NodeId) -> Result<NodeId, GraphError> {
        let s = self.expect_rank(x, 3, "transpose_last")?;
        let shape = vec![s[0], s[2], s[1]];
        Ok(self.push(Op::TransposeLast, vec![x], shape))
    }

    /// Batched matrix product `[B, m, k] × [B, k, n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let sa = self.expect_rank(a, 3, "matmul")?.to_vec();
        let sb = self.expect_rank(b, 3, "matmul")?.to_vec();
        if sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(mismatch(format!("matmul {sa:?} × {sb:?}")));
        }
        Ok(self.push(Op::MatMul, vec![a, b], vec![sa[0], sa[1], sb[2]]))
    }

    /// Same-padded convolution: `x: [N, C, H, W]`, `w: [O, C, k, k]`,
    /// `b: [O]`; output `[N, O, ceil(H/s), ceil(W/s)]`.
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId, stride: usize) -> Result<NodeId, GraphError> {
        let sx = self.expect_rank(x, 4, "conv2d input")?.to_vec();
        let sw = self.expect_rank(w, 4, "conv2d weight")?.to_vec();
        if sw[1] != sx[1] || sw[2] != sw[3] || self.shape(b) != [sw[0]] || stride == 0 {
            return Err(mismatch(format!(
                "conv2d input {sx:?}, weight {sw:?}, bias {:?}, stride {stride}",
                self.shape(b)
            )));
        }
        let shape = vec![sx[0], sw[0], output_size(sx[2], stride), output_size(sx[3], stride)];
        Ok(self.push(Op::Conv2d { stride }, vec![x, w, b], shape))
    }

    /// Transposed convolution, the adjoint of [`Graph::conv2d`]:
    /// `x: [N, Cin, H, W]`, `w: [Cin, Cout, k, k]`, `b: [Cout]`; output
    /// `[N, Cout, H·s, W·s]`.
    pub fn conv_transpose2d(&mut self, x: NodeId, w: NodeId, b: NodeId, stride: usize) -> Result<NodeId, GraphError> {
        let sx = self.expect_rank(x, 4, "conv_transpose2d input")?.to_vec();
        let sw = self.expect_rank(w, 4, "conv_transpose2d weight")?.to_vec();
        if sw[0] != sx[1] || sw[2] != sw[3] || self.shape(b) != [sw[1]] || stride == 0 {
            return Err(mismatch(format!("conv_transpose2d input {sx:?}, weight {sw:?}, bias {:?}", self.shape(b))));
        }
        let shape = vec![sx[0], sw[1], sx[2] * stride, sx[3] * stride];
        Ok(self.push(Op::ConvTranspose2d { stride }, vec![x, w, b], shape))
    }

    /// Bilinear ×2 upsampling (half-pixel centers, edge clamped).
    pub fn upsample2x(&mut self, x: NodeId) -> Result<NodeId, GraphError> {
        let s = self.expect_rank(x, 4, "upsample2x")?;
        let shape = vec![s[0], s[1], 2 * s[2], 2 * s[3]];
        Ok(self.push(Op::Upsample2x, vec![x], shape))
    }

    /// 3×3 box mean with zero padding.
    pub fn box3x3(&mut self, x: NodeId) -> Result<NodeId, GraphError> {
        self.expect_rank(x, 4, "box3x3")?;
        Ok(self.unary(Op::Box3x3, x))
    }

    fn expect_vec3(&self, x: NodeId, what: &str) -> Result<usize, GraphError> {
        match self.shape(x) {
            [b, 3] => Ok(*b),
            s => Err(mismatch(format!("{what} expects [B, 3], got {s:?}"))),
        }
    }

    fn expect_mat3(&self, x: NodeId, what: &str) -> Result<usize, GraphError> {
        match self.shape(x) {
            [b, 3, 3] => Ok(*b),
            s => Err(mismatch(format!("{what} expects [B, 3, 3], got {s:?}"))),
        }
    }

    /// Exponential map `[B, 3]` → rotation matrices `[B, 3, 3]`.
    pub fn exp_so3(&mut self, omega: NodeId) -> Result<NodeId, GraphError> {
        let b = self.expect_vec3(omega, "exp_so3")?;
        Ok(self.push(Op::ExpSo3, vec![omega], vec![b, 3, 3]))
    }

    /// Logarithm map `[B, 3, 3]` → `[B, 3]`.
    pub fn log_so3(&mut self, r: NodeId) -> Result<NodeId, GraphError> {
        let b = self.expect_mat3(r, "log_so3")?;
        Ok(self.push(Op::LogSo3, vec![r], vec![b, 3]))
    }

    /// Euler angles `(x, y, z)` → `Rz · Ry · Rx`.
    pub fn euler_to_rotation(&mut self, angles: NodeId) -> Result<NodeId, GraphError> {
        let b = self.expect_vec3(angles, "euler_to_rotation")?;
        Ok(self.push(Op::EulerToRotation, vec![angles], vec![b, 3, 3]))
    }

    /// `V(ω)⁻¹ t`, the translational part of the SE(3) logarithm.
    pub fn left_jacobian_inv_apply(&mut self, omega: NodeId, t: NodeId) -> Result<NodeId, GraphError> {
        let b = self.expect_vec3(omega, "left_jacobian_inv_apply")?;
        if self.expect_vec3(t, "left_jacobian_inv_apply")? != b {
            return Err(mismatch("rotation and translation batch sizes differ".into()));
        }
        Ok(self.push(Op::LeftJacobianInvApply, vec![omega, t], vec![b, 3]))
    }

    fn check_reproject(&self, depth: NodeId, r: NodeId, t: NodeId) -> Result<Vec<usize>, GraphError> {
        let s = self.expect_rank(depth, 4, "reproject depth")?.to_vec();
        if s[1] != 1 || self.expect_mat3(r, "reproject")? != s[0] || self.expect_vec3(t, "reproject")? != s[0] {
            return Err(mismatch(format!(
                "reproject depth {s:?}, rotation {:?}, translation {:?}",
                self.shape(r),
                self.shape(t)
            )));
        }
        Ok(s)
    }

    /// Coordinates `[B, H, W, 2]` in the target image of every pixel of
    /// `depth: [B, 1, H, W]` after the motion `p ↦ R p + t`.
    pub fn reproject(
        &mut self,
        k: &CameraIntrinsics,
        depth: NodeId,
        r: NodeId,
        t: NodeId,
    ) -> Result<NodeId, GraphError> {
        let s = self.check_reproject(depth, r, t)?;
        Ok(self.push(Op::Reproject(*k), vec![depth, r, t], vec![s[0], s[2], s[3], 2]))
    }

    /// `[B, 1, H, W]` mask of pixels that stay in front of the target camera.
    pub fn reproject_mask(
        &mut self,
        k: &CameraIntrinsics,
        depth: NodeId,
        r: NodeId,
        t: NodeId,
    ) -> Result<NodeId, GraphError> {
        let s = self.check_reproject(depth, r, t)?;
        Ok(self.push(Op::ReprojectMask(*k), vec![depth, r, t], s))
    }

    fn check_grid(&self, image: NodeId, coords: NodeId) -> Result<(Vec<usize>, Vec<usize>), GraphError> {
        let si = self.expect_rank(image, 4, "grid_sample image")?.to_vec();
        let sc = self.expect_rank(coords, 4, "grid_sample coordinates")?.to_vec();
        if sc[0] != si[0] || sc[3] != 2 {
            return Err(mismatch(format!("grid_sample image {si:?}, coordinates {sc:?}")));
        }
        Ok((si, sc))
    }

    /// Bilinear sampling of `image: [B, C, Hs, Ws]` at pixel coordinates
    /// `coords: [B, H, W, 2]`; out-of-image taps read 0.
    pub fn grid_sample(&mut self, image: NodeId, coords: NodeId) -> Result<NodeId, GraphError> {
        let (si, sc) = self.check_grid(image, coords)?;
        Ok(self.push(Op::GridSample, vec![image, coords], vec![si[0], si[1], sc[1], sc[2]]))
    }

    /// `[B, 1, H, W]` mask of sampling points inside `image`.
    pub fn grid_sample_mask(&mut self, image: NodeId, coords: NodeId) -> Result<NodeId, GraphError> {
        let (si, sc) = self.check_grid(image, coords)?;
        let op = Op::GridSampleMask { height: si[2], width: si[3] };
        Ok(self.push(op, vec![coords], vec![sc[0], 1, sc[1], sc[2]]))
    }
}
