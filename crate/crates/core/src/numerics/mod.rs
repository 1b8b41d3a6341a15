//! Dense tensors, the gradient tape, parameters and gradient checking.

mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckConfig, GradCheckReport};
pub use params::{ParamSlot, ParamStore};
pub use tape::{Grads, Tape, Var};
pub use tensor::{argmax, softmax_in_place, Tensor};

use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Gaussian-initialized matrix with standard deviation `std`.
pub fn random_normal<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, std: f64) -> Tensor {
    let normal = Normal::new(0.0, std).expect("finite std");
    let data = (0..rows * cols).map(|_| normal.sample(rng)).collect();
    Tensor::matrix(rows, cols, data).expect("positive dims")
}
