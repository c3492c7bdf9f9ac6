//! Adam and the step-wise learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::diffgraph::{Array, Graph, GraphError};

/// Adam with bias correction. Moment buffers are created on the first step
/// and indexed by the graph's parameter order.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    steps: u64,
    first: Vec<Array>,
    second: Vec<Array>,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self { beta1, beta2, epsilon, steps: 0, first: Vec::new(), second: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update with the gradients of the last backward pass.
    /// Parameters without a gradient are treated as having a zero gradient.
    pub fn step(&mut self, g: &mut Graph, learning_rate: f64) -> Result<(), GraphError> {
        let params = g.params().to_vec();
        if self.first.is_empty() {
            for &p in &params {
                let shape = g.value(p)?.shape().to_vec();
                self.first.push(Array::zeros(&shape));
                self.second.push(Array::zeros(&shape));
            }
        }
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, &p) in params.iter().enumerate() {
            let (value, grad) = g.param_mut(p)?;
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            let x = value.data_mut();
            for j in 0..x.len() {
                let gj = grad.map_or(0.0, |a| a.data()[j]);
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                x[j] -= learning_rate * (m[j] / c1) / ((v[j] / c2).sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

/// Base rate halved at each milestone epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base: f64,
    pub milestones: Vec<usize>,
}

impl LrSchedule {
    pub fn rate(&self, epoch: usize) -> f64 {
        let halvings = self.milestones.iter().filter(|&&m| epoch >= m).count();
        self.base * 0.5f64.powi(halvings as i32)
    }
}
