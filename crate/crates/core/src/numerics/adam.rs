use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam without weight decay, with one learning rate per parameter group.
///
/// Tensors are addressed by position; the caller passes parameters and
/// gradients in the same order on every step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Current learning rate of each group.
    pub group_lr: Vec<f64>,
    /// Group index of each tensor.
    pub tensor_group: Vec<usize>,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(tensor_sizes: &[usize], tensor_group: Vec<usize>, group_lr: Vec<f64>) -> Result<Self> {
        if tensor_group.len() != tensor_sizes.len() {
            return Err(Error::DimensionMismatch {
                context: "adam tensor groups",
                expected: tensor_sizes.len(),
                actual: tensor_group.len(),
            });
        }
        if let Some(&g) = tensor_group.iter().find(|&&g| g >= group_lr.len()) {
            return Err(Error::InvalidArgument(format!(
                "tensor group {g} has no learning rate ({} groups)",
                group_lr.len()
            )));
        }
        Ok(AdamState {
            step: 0,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            group_lr,
            tensor_group,
            m: tensor_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: tensor_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        })
    }

    /// Single-group convenience constructor.
    pub fn uniform(tensor_sizes: &[usize], lr: f64) -> Self {
        Self::new(tensor_sizes, vec![0; tensor_sizes.len()], vec![lr])
            .expect("one group covers every tensor")
    }

    /// Multiplies every group's learning rate by `factor`.
    pub fn decay(&mut self, factor: f64) {
        for lr in &mut self.group_lr {
            *lr *= factor;
        }
    }

    /// One bias-corrected Adam update.
    pub fn update(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::DimensionMismatch {
                context: "adam tensor count",
                expected: self.m.len(),
                actual: params.len().min(grads.len()),
            });
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[i].len() || g.len() != self.m[i].len() {
                return Err(Error::DimensionMismatch {
                    context: "adam tensor shape",
                    expected: self.m[i].len(),
                    actual: p.len().min(g.len()),
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let lr = self.group_lr[self.tensor_group[i]];
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for ((mj, vj), &gj) in m.iter_mut().zip(v.iter_mut()).zip(g.iter()) {
                *mj = b1 * *mj + (1.0 - b1) * gj;
                *vj = b2 * *vj + (1.0 - b2) * gj * gj;
            }
            if lr == 0.0 {
                continue;
            }
            for ((pj, mj), vj) in p.iter_mut().zip(m.iter()).zip(v.iter()) {
                *pj -= lr * (mj / bc1) / ((vj / bc2).sqrt() + eps);
            }
        }
        Ok(())
    }
}
