use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Mean squared error over every element, with its gradient.
pub fn mse(pred: &Matrix, target: &Matrix) -> Result<(f64, Matrix)> {
    target.check_shape(pred.rows(), pred.cols())?;
    let n = pred.as_slice().len();
    if n == 0 {
        return Err(Error::InvalidInput("empty prediction".into()));
    }
    let mut loss = 0.0;
    let grad: Vec<f64> = pred
        .as_slice()
        .iter()
        .zip(target.as_slice())
        .map(|(p, t)| {
            let d = p - t;
            loss += d * d;
            2.0 * d / n as f64
        })
        .collect();
    Ok((loss / n as f64, Matrix::from_vec(pred.rows(), pred.cols(), grad)?))
}

/// Huber loss with threshold `delta` on a flat residual list, averaged, with
/// the gradient with respect to the predictions.
pub fn huber(pred: &[f64], target: &[f64], delta: f64) -> (f64, Vec<f64>) {
    debug_assert_eq!(pred.len(), target.len());
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let d = p - t;
            if d.abs() <= delta {
                loss += 0.5 * d * d;
                d / n
            } else {
                loss += delta * (d.abs() - 0.5 * delta);
                delta * d.signum() / n
            }
        })
        .collect();
    (loss / n, grad)
}
