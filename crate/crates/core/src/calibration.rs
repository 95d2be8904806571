//! Position and orientation standardization of trajectories.
//!
//! A trajectory is centered on its mean position, then rotated so that the
//! dominant direction of its point cloud (first principal component) points
//! along `+x`. [`StreamingCalibrator`] fits the same transform on an initial
//! buffer of samples and freezes it for the rest of the stream.

use nalgebra::{Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::data::{Trajectory, Vec3};
use crate::error::{Error, Result};

/// `R (x - mean)` for every point `x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationTransform {
    pub mean: Vec3,
    pub rotation: Matrix3<f64>,
}

impl CalibrationTransform {
    pub fn identity() -> Self {
        Self {
            mean: Vec3::zeros(),
            rotation: Matrix3::identity(),
        }
    }

    #[inline]
    pub fn apply_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * (p - self.mean)
    }

    pub fn apply(&self, traj: &Trajectory) -> Trajectory {
        traj.map_positions(|p| self.apply_point(p))
    }

    /// Angle of the relative rotation between two transforms, radians.
    pub fn rotation_angle_to(&self, other: &CalibrationTransform) -> f64 {
        let rel = self.rotation.transpose() * other.rotation;
        ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
    }
}

#[derive(Serialize, Deserialize)]
struct TransformJson {
    mean: [f64; 3],
    /// Row-major.
    rotation: [f64; 9],
}

impl Serialize for CalibrationTransform {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let r = &self.rotation;
        TransformJson {
            mean: [self.mean[0], self.mean[1], self.mean[2]],
            rotation: [
                r[(0, 0)], r[(0, 1)], r[(0, 2)],
                r[(1, 0)], r[(1, 1)], r[(1, 2)],
                r[(2, 0)], r[(2, 1)], r[(2, 2)],
            ],
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for CalibrationTransform {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = TransformJson::deserialize(d)?;
        Ok(Self {
            mean: Vec3::from(j.mean),
            rotation: Matrix3::from_row_slice(&j.rotation),
        })
    }
}

pub fn mean_position(points: &[Vec3]) -> Vec3 {
    let sum = points.iter().fold(Vec3::zeros(), |acc, p| acc + p);
    sum / points.len() as f64
}

/// Shifts the trajectory so that its mean sits at the origin.
pub fn center(traj: &Trajectory) -> (Trajectory, Vec3) {
    let mean = mean_position(traj.positions());
    (traj.map_positions(|p| p - mean), mean)
}

/// Unit eigenvector of the largest eigenvalue of the second-moment matrix of
/// already-centered points, signed so its largest-magnitude component is
/// positive.
pub fn principal_direction(centered: &[Vec3]) -> Result<Vec3> {
    if centered.len() < 2 {
        return Err(Error::TooShort {
            needed: 2,
            got: centered.len(),
        });
    }
    let cov = centered
        .iter()
        .fold(Matrix3::zeros(), |acc, p| acc + p * p.transpose())
        / centered.len() as f64;
    if !(cov.trace() > 0.0) {
        return Err(Error::DegenerateTrajectory);
    }
    let eig = SymmetricEigen::new(cov);
    let top = eig.eigenvalues.imax();
    let mut p: Vec3 = eig.eigenvectors.column(top).into_owned();
    p /= p.norm();

    let mut lead = 0;
    for i in 1..3 {
        if p[i].abs() > p[lead].abs() {
            lead = i;
        }
    }
    if p[lead] < 0.0 {
        p = -p;
    }
    Ok(p)
}

const ALIGNED_EPS: f64 = 1e-12;

/// Rotation taking the unit vector `p` onto `e_x` (column-vector convention).
pub fn alignment_rotation(p: &Vec3) -> Result<Matrix3<f64>> {
    let norm = p.norm();
    if !norm.is_finite() || (norm - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!(
            "direction must be a unit vector, norm is {norm}"
        )));
    }
    let c = p[0];
    if 1.0 - c < ALIGNED_EPS {
        return Ok(Matrix3::identity());
    }
    if 1.0 + c < ALIGNED_EPS {
        // half turn about e_z
        return Ok(Matrix3::from_diagonal(&Vec3::new(-1.0, -1.0, 1.0)));
    }
    let v = p.cross(&Vec3::x());
    let k = v.cross_matrix();
    // (1 - c) / s^2 == 1 / (1 + c), without cancellation when s is small
    Ok(Matrix3::identity() + k + k * k * (1.0 / (1.0 + c)))
}

/// Fits the centering + alignment transform on a set of points.
pub fn fit_transform(points: &[Vec3]) -> Result<CalibrationTransform> {
    let mean = mean_position(points);
    let centered: Vec<Vec3> = points.iter().map(|p| p - mean).collect();
    let scale = mean.amax().max(1.0);
    let spread = centered.iter().map(|p| p.norm_squared()).sum::<f64>() / points.len() as f64;
    // rounding residue of centering a constant signal is not motion
    if spread <= (1e-12 * scale).powi(2) {
        return Err(Error::DegenerateTrajectory);
    }
    let p = principal_direction(&centered)?;
    Ok(CalibrationTransform {
        mean,
        rotation: alignment_rotation(&p)?,
    })
}

pub fn calibrate(traj: &Trajectory) -> Result<(Trajectory, CalibrationTransform)> {
    let transform = fit_transform(traj.positions())?;
    Ok((transform.apply(traj), transform))
}

#[derive(Debug, Clone, PartialEq)]
pub enum StreamOutput {
    /// Still filling the reference buffer.
    Buffering,
    /// Calibrated samples, oldest first. The call that completes the buffer
    /// returns the whole buffer; later calls return one sample.
    Ready(Vec<Vec3>),
}

#[derive(Debug, Clone)]
pub struct StreamingCalibrator {
    buffer_len: usize,
    buffer: Vec<Vec3>,
    fitted: Option<CalibrationTransform>,
    known: Option<CalibrationTransform>,
}

impl StreamingCalibrator {
    pub fn new(buffer_len: usize) -> Result<Self> {
        if buffer_len < 2 {
            return Err(Error::InvalidInput(format!(
                "calibration buffer needs at least 2 samples, got {buffer_len}"
            )));
        }
        Ok(Self {
            buffer_len,
            buffer: Vec::with_capacity(buffer_len),
            fitted: None,
            known: None,
        })
    }

    /// Buffers `buffer_len` samples like [`StreamingCalibrator::new`] but
    /// releases them with a transform known in advance instead of fitting
    /// one on the buffer.
    pub fn with_transform(buffer_len: usize, transform: CalibrationTransform) -> Result<Self> {
        let mut c = Self::new(buffer_len)?;
        c.known = Some(transform);
        Ok(c)
    }

    pub fn buffer_len(&self) -> usize {
        self.buffer_len
    }

    pub fn transform(&self) -> Option<&CalibrationTransform> {
        self.fitted.as_ref()
    }

    /// Consumes one raw sample. If fitting fails the buffer is discarded and
    /// the next `buffer_len` samples form a new reference.
    pub fn push(&mut self, sample: Vec3) -> Result<StreamOutput> {
        if let Some(t) = &self.fitted {
            return Ok(StreamOutput::Ready(vec![t.apply_point(&sample)]));
        }
        self.buffer.push(sample);
        if self.buffer.len() < self.buffer_len {
            return Ok(StreamOutput::Buffering);
        }
        let buffered = std::mem::take(&mut self.buffer);
        let t = match self.known {
            Some(t) => t,
            None => fit_transform(&buffered)?,
        };
        self.fitted = Some(t);
        Ok(StreamOutput::Ready(
            buffered.iter().map(|p| t.apply_point(p)).collect(),
        ))
    }
}

/// Convenience: run a whole trajectory through a fresh streaming calibrator.
pub fn streaming_calibrate_trajectory(
    traj: &Trajectory,
    buffer_len: usize,
) -> Result<(Trajectory, CalibrationTransform)> {
    let mut cal = StreamingCalibrator::new(buffer_len)?;
    if traj.len() < buffer_len {
        return Err(Error::TooShort {
            needed: buffer_len,
            got: traj.len(),
        });
    }
    let mut out = Vec::with_capacity(traj.len());
    for p in traj.positions() {
        if let StreamOutput::Ready(pts) = cal.push(*p)? {
            out.extend(pts);
        }
    }
    let t = *cal.transform().expect("buffer filled");
    Ok((Trajectory::with_start(traj.id.clone(), traj.rate, traj.t0, out)?, t))
}
