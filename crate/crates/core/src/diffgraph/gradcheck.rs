//! Central finite-difference verification of analytic gradients.
//!
//! The error of one coordinate is `|a − n| / max(|a|, |n|, floor)` where
//! `a` is the analytic and `n` the numeric derivative, and `floor` is 1% of
//! the largest analytic derivative of that leaf (at least 1e−8). The floor
//! keeps coordinates whose true derivative is essentially zero from
//! dominating through finite-difference round-off.

use super::{Graph, GraphError, NodeId};

/// Step used for coordinate `x`.
pub fn step_size(x: f64) -> f64 {
    1e-5 * x.abs().max(1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Leaf and flat index of the worst coordinate.
    pub worst: Option<(NodeId, usize)>,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

/// Compares analytic gradients of the scalar `loss` against central
/// differences for every leaf in `wrt`. Leaves with more than `max_coords`
/// elements are probed at evenly spaced coordinates.
pub fn check_gradients(
    graph: &mut Graph,
    loss: NodeId,
    wrt: &[NodeId],
    max_coords: usize,
) -> Result<GradCheckReport, GraphError> {
    graph.forward(&[loss])?;
    graph.backward(loss)?;
    let analytic: Vec<Vec<f64>> = wrt
        .iter()
        .map(|&id| match graph.grad(id) {
            Some(g) => g.data().to_vec(),
            None => vec![0.0; graph.shape(id).iter().product()],
        })
        .collect();

    let mut report =
        GradCheckReport { max_rel_error: 0.0, checked: 0, worst: None, worst_analytic: 0.0, worst_numeric: 0.0 };
    for (leaf, &id) in wrt.iter().enumerate() {
        let base = graph.value(id)?.clone();
        let n = base.len();
        let floor = analytic[leaf].iter().fold(0.0f64, |m, v| m.max(v.abs())) * 1e-2;
        let floor = floor.max(1e-8);
        let count = n.min(max_coords.max(1));
        for j in 0..count {
            let k = j * n / count;
            let x0 = base.data()[k];
            let h = step_size(x0);
            let mut probe = base.clone();
            probe.data_mut()[k] = x0 + h;
            graph.set_value(id, probe.clone())?;
            let fp = graph.eval(loss)?.item();
            probe.data_mut()[k] = x0 - h;
            graph.set_value(id, probe)?;
            let fm = graph.eval(loss)?.item();
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic[leaf][k];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((id, k));
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
        }
        graph.set_value(id, base)?;
    }
    graph.forward(&[loss])?;
    Ok(report)
}
