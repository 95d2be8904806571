//! Dense and recurrent layers with hand-derived gradients.
//!
//! Gradients are stored in the same struct type as the parameters they
//! belong to, so an optimizer only needs to walk two [`Params`] values in
//! lock-step.

mod activation;
mod adam;
mod dense;
mod dropout;
mod gradcheck;
mod loss;
mod lstm;
mod matrix;
pub mod weights;

pub use adam::{AdamConfig, AdamState};
pub use dense::Dense;
pub use dropout::{dropout, Dropout, DropoutMode};
pub use gradcheck::{grad_check, GradCheckReport};
pub use loss::{huber, mse};
pub use lstm::{LstmCache, LstmParams};
pub use matrix::{dot, gemm, Matrix};

/// Flat views over every trainable tensor, in a fixed order.
pub trait Params {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Adds `other` element-wise.
    fn accumulate(&mut self, other: &Self) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }

    fn scale(&mut self, k: f64) {
        for t in self.tensors_mut() {
            for v in t.iter_mut() {
                *v *= k;
            }
        }
    }

    fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.fill(0.0);
        }
    }
}

pub(crate) fn uniform_fill<R: rand::Rng>(dst: &mut [f64], bound: f64, rng: &mut R) {
    for v in dst {
        *v = rng.random_range(-bound..=bound);
    }
}
