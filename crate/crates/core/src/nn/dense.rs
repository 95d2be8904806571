use rand::Rng;

use super::matrix::{dot, gemm, Matrix};
use super::{uniform_fill, Params};
use crate::error::{Error, Result};

/// Affine layer `y = x W^T + b`, with `W` stored `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    weight: Matrix,
    bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Matrix::zeros(outputs, inputs),
            bias: vec![0.0; outputs],
        }
    }

    /// Uniform `±1/sqrt(fan_in)` weights, zero bias.
    pub fn init<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let mut d = Self::zeros(inputs, outputs);
        uniform_fill(d.weight.as_mut_slice(), 1.0 / (inputs as f64).sqrt(), rng);
        d
    }

    pub fn from_parts(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::shape(weight.rows(), bias.len()));
        }
        Ok(Self { weight, bias })
    }

    pub fn inputs(&self) -> usize {
        self.weight.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.rows()
    }

    pub fn weight(&self) -> &Matrix {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.inputs(), self.outputs())
    }

    /// `x` is `B x in`.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        x.check_shape(x.rows(), self.inputs())?;
        let mut y = Matrix::zeros(x.rows(), self.outputs());
        gemm(1.0, x, false, &self.weight, true, 0.0, &mut y);
        y.add_row_vector(&self.bias);
        Ok(y)
    }

    /// Single-row forward pass with a fixed summation order.
    pub fn forward_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.inputs() {
            return Err(Error::shape(self.inputs(), x.len()));
        }
        Ok((0..self.outputs())
            .map(|r| self.bias[r] + dot(self.weight.row(r), x))
            .collect())
    }

    /// Returns parameter gradients and the gradient with respect to `x`.
    pub fn backward(&self, x: &Matrix, dy: &Matrix) -> Result<(Dense, Matrix)> {
        x.check_shape(x.rows(), self.inputs())?;
        dy.check_shape(x.rows(), self.outputs())?;
        let mut grads = self.zeros_like();
        gemm(1.0, dy, true, x, false, 0.0, &mut grads.weight);
        dy.add_column_sums_to(&mut grads.bias);
        let mut dx = Matrix::zeros(x.rows(), self.inputs());
        gemm(1.0, dy, false, &self.weight, false, 0.0, &mut dx);
        Ok((grads, dx))
    }
}

impl Params for Dense {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![self.weight.as_slice(), &self.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.weight.as_mut_slice(), &mut self.bias]
    }
}
