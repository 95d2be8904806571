use rand::Rng;

use super::matrix::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropoutMode {
    Train,
    Eval,
}

/// Output of a dropout layer plus the per-unit multipliers needed for the
/// backward pass (`0` or `1 / (1 - rate)`; all ones in eval mode).
#[derive(Debug, Clone)]
pub struct Dropout {
    pub output: Matrix,
    pub mask: Vec<f64>,
}

impl Dropout {
    pub fn backward(&self, dy: &Matrix) -> Matrix {
        let data = dy.as_slice().iter().zip(&self.mask).map(|(d, m)| d * m).collect();
        Matrix::from_vec(dy.rows(), dy.cols(), data).expect("mask matches activations")
    }
}

/// Inverted dropout.
pub fn dropout<R: Rng>(x: &Matrix, rate: f64, mode: DropoutMode, rng: &mut R) -> Result<Dropout> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidInput(format!("dropout rate {rate} must lie in [0, 1)")));
    }
    if mode == DropoutMode::Eval || rate == 0.0 {
        return Ok(Dropout {
            output: x.clone(),
            mask: vec![1.0; x.as_slice().len()],
        });
    }
    let keep = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = (0..x.as_slice().len())
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect();
    let data = x.as_slice().iter().zip(&mask).map(|(v, m)| v * m).collect();
    Ok(Dropout {
        output: Matrix::from_vec(x.rows(), x.cols(), data)?,
        mask,
    })
}
