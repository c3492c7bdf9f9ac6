//! Operations assembled from primitive nodes.

use super::{Graph, GraphError, NodeId};

pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

impl Graph {
    /// Per-pixel structural similarity of two `[B, C, H, W]` images with
    /// 3×3 zero-padded uniform windows, for unit dynamic range.
    pub fn ssim_3x3(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        if self.shape(a) != self.shape(b) {
            return Err(GraphError::ShapeMismatch(format!("ssim of {:?} and {:?}", self.shape(a), self.shape(b))));
        }
        let mu_a = self.box3x3(a)?;
        let mu_b = self.box3x3(b)?;
        let aa = self.square(a);
        let bb = self.square(b);
        let ab = self.mul(a, b)?;
        let e_aa = self.box3x3(aa)?;
        let e_bb = self.box3x3(bb)?;
        let e_ab = self.box3x3(ab)?;
        let mu_aa = self.square(mu_a);
        let mu_bb = self.square(mu_b);
        let mu_ab = self.mul(mu_a, mu_b)?;
        let var_a = self.sub(e_aa, mu_aa)?;
        let var_b = self.sub(e_bb, mu_bb)?;
        let cov = self.sub(e_ab, mu_ab)?;

        let l_num = self.scale(mu_ab, 2.0);
        let l_num = self.add_scalar(l_num, SSIM_C1);
        let c_num = self.scale(cov, 2.0);
        let c_num = self.add_scalar(c_num, SSIM_C2);
        let l_den = self.add(mu_aa, mu_bb)?;
        let l_den = self.add_scalar(l_den, SSIM_C1);
        let c_den = self.add(var_a, var_b)?;
        let c_den = self.add_scalar(c_den, SSIM_C2);
        let num = self.mul(l_num, c_num)?;
        let den = self.mul(l_den, c_den)?;
        self.div(num, den)
    }
}
