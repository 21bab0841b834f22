use crate::error::{RaiseError, Result};
use crate::numerics::Matrix;

/// A trainable tensor with its gradient accumulator and Adam moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Matrix,
    pub grad: Matrix,
    adam_m: Matrix,
    adam_v: Matrix,
    step_count: u64,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Matrix) -> Self {
        let (r, c) = value.shape();
        Parameter {
            name: name.into(),
            value,
            grad: Matrix::zeros(r, c),
            adam_m: Matrix::zeros(r, c),
            adam_v: Matrix::zeros(r, c),
            step_count: 0,
        }
    }

    pub fn zeros(name: impl Into<String>, rows: usize, cols: usize) -> Self {
        Parameter::new(name, Matrix::zeros(rows, cols))
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    /// Replaces the value, keeping optimizer state. Shape must match.
    pub fn set_value(&mut self, value: Matrix) -> Result<()> {
        if value.shape() != self.value.shape() {
            return Err(RaiseError::Dimension {
                op: "set_value",
                left: self.value.shape(),
                right: value.shape(),
            });
        }
        self.value = value;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamHyper {
    pub fn with_lr(lr: f64) -> Self {
        AdamHyper {
            lr,
            ..Default::default()
        }
    }
}

/// One bias-corrected Adam update. Advances the moments and step count and
/// clears the gradient.
pub fn adam_step(p: &mut Parameter, h: &AdamHyper) -> Result<()> {
    if !p.grad.is_finite() {
        return Err(RaiseError::NonFinite(format!("gradient of parameter `{}`", p.name)));
    }
    p.step_count += 1;
    let t = p.step_count as i32;
    let bc1 = 1.0 - h.beta1.powi(t);
    let bc2 = 1.0 - h.beta2.powi(t);
    let g = p.grad.as_slice();
    let m = p.adam_m.as_mut_slice();
    let v = p.adam_v.as_mut_slice();
    let x = p.value.as_mut_slice();
    for i in 0..g.len() {
        m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g[i];
        v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g[i] * g[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        x[i] -= h.lr * m_hat / (v_hat.sqrt() + h.eps);
    }
    p.grad.fill(0.0);
    Ok(())
}
