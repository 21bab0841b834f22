//! Dense linear algebra, activations, initialization, Adam and a
//! finite-difference gradient oracle.

mod gradcheck;
pub mod madd;
mod matrix;
mod param;
mod rng;

pub use gradcheck::{finite_diff_grad, max_relative_error, worst_gradient_error};
pub use matrix::{dot, relu, relu_backward, softmax, softmax_rows, softmax_rows_backward, Matrix};
pub use param::{adam_step, AdamHyper, Parameter};
pub use rng::SeededRng;

/// Anything that owns trainable tensors.
pub trait Parameterized {
    fn params(&self) -> Vec<&Parameter>;
    fn params_mut(&mut self) -> Vec<&mut Parameter>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }
}

/// Glorot-uniform matrix: entries in `±√(6 / (rows + cols))`, drawn in
/// row-major order from `SeededRng::new(seed)`.
pub fn glorot_init(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = SeededRng::new(seed);
    glorot_from(rows, cols, &mut rng)
}

pub(crate) fn glorot_from(rows: usize, cols: usize, rng: &mut SeededRng) -> Matrix {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let mut m = Matrix::zeros(rows, cols);
    for v in m.as_mut_slice() {
        *v = rng.uniform_in(-limit, limit);
    }
    m
}
