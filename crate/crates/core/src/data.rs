//! Trajectory and phase containers, dataset splitting, min-max scaling,
//! discrete velocities and the circular error metric.

use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

pub const DEFAULT_RATE: f64 = 100.0;

/// Wraps an angle into `[-π, π)`.
#[inline]
pub fn wrap_angle(x: f64) -> f64 {
    (x + PI).rem_euclid(2.0 * PI) - PI
}

/// A uniformly sampled 3D trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: String,
    /// Samples per second.
    pub rate: f64,
    /// Timestamp of the first sample, seconds.
    pub t0: f64,
    positions: Vec<Vec3>,
}

impl Trajectory {
    pub fn new(id: impl Into<String>, rate: f64, positions: Vec<Vec3>) -> Result<Self> {
        Self::with_start(id, rate, 0.0, positions)
    }

    pub fn with_start(
        id: impl Into<String>,
        rate: f64,
        t0: f64,
        positions: Vec<Vec3>,
    ) -> Result<Self> {
        if !(rate.is_finite() && rate > 0.0) {
            return Err(Error::InvalidInput(format!("sample rate {rate} must be positive")));
        }
        if !t0.is_finite() {
            return Err(Error::InvalidInput("start time must be finite".into()));
        }
        if positions.len() < 2 {
            return Err(Error::TooShort {
                needed: 2,
                got: positions.len(),
            });
        }
        if let Some(i) = positions.iter().position(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::InvalidInput(format!("non-finite coordinate at sample {i}")));
        }
        Ok(Self {
            id: id.into(),
            rate,
            t0,
            positions,
        })
    }

    /// Builds a trajectory from explicit timestamps, checking they are evenly spaced.
    pub fn from_timed(id: impl Into<String>, times: &[f64], positions: Vec<Vec3>) -> Result<Self> {
        if times.len() != positions.len() {
            return Err(Error::shape(
                format!("{} timestamps", positions.len()),
                times.len(),
            ));
        }
        if times.len() < 2 {
            return Err(Error::TooShort {
                needed: 2,
                got: times.len(),
            });
        }
        let n = times.len();
        let dt = (times[n - 1] - times[0]) / (n - 1) as f64;
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidInput("timestamps must be strictly increasing".into()));
        }
        for (i, w) in times.windows(2).enumerate() {
            let step = w[1] - w[0];
            if !(step > 0.0) || (step - dt).abs() > 1e-6 * dt.max(1.0) {
                return Err(Error::InvalidInput(format!(
                    "irregular timestamp spacing at sample {}",
                    i + 1
                )));
            }
        }
        Self::with_start(id, 1.0 / dt, times[0], positions)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 / self.rate
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.time(i)).collect()
    }

    /// Same timing and id, new positions.
    pub fn map_positions(&self, f: impl FnMut(&Vec3) -> Vec3) -> Self {
        Self {
            id: self.id.clone(),
            rate: self.rate,
            t0: self.t0,
            positions: self.positions.iter().map(f).collect(),
        }
    }
}

/// Per-sample phases in `[-π, π]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct PhaseSeries(Vec<f64>);

impl PhaseSeries {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values
            .iter()
            .position(|v| !(v.is_finite() && (-PI..=PI).contains(v)))
        {
            return Err(Error::InvalidInput(format!(
                "phase {} at sample {i} outside [-pi, pi]",
                values[i]
            )));
        }
        Ok(Self(values))
    }

    /// Wraps arbitrary real angles into range.
    pub fn from_unwrapped(values: impl IntoIterator<Item = f64>) -> Self {
        Self(values.into_iter().map(wrap_angle).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for PhaseSeries {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<PhaseSeries> for Vec<f64> {
    fn from(p: PhaseSeries) -> Self {
        p.0
    }
}

/// `|arg(exp(j(θ - θ̂)))|`, in `[0, π]`.
pub fn circular_error(theta: f64, theta_hat: f64) -> Result<f64> {
    if !(theta.is_finite() && theta_hat.is_finite()) {
        return Err(Error::InvalidInput("phase must be finite".into()));
    }
    let d = theta - theta_hat;
    Ok(d.sin().atan2(d.cos()).abs())
}

pub fn mean_circular_error(truth: &PhaseSeries, estimate: &PhaseSeries) -> Result<f64> {
    mean_circular_error_slices(truth.values(), estimate.values())
}

pub(crate) fn mean_circular_error_slices(truth: &[f64], estimate: &[f64]) -> Result<f64> {
    if truth.len() != estimate.len() {
        return Err(Error::shape(truth.len(), estimate.len()));
    }
    if truth.is_empty() {
        return Err(Error::TooShort { needed: 1, got: 0 });
    }
    let mut sum = 0.0;
    for (&a, &b) in truth.iter().zip(estimate) {
        sum += circular_error(a, b)?;
    }
    Ok(sum / truth.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

/// Seeded shuffle of `ids`, then `floor(fraction * len)` to training and the
/// remainder to validation. `test_ids` is left empty.
pub fn split_dataset(ids: &[String], train_fraction: f64, seed: u64) -> Result<DatasetSplit> {
    if ids.is_empty() {
        return Err(Error::InvalidInput("cannot split an empty id list".into()));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidInput(format!(
            "train fraction {train_fraction} must lie in (0, 1)"
        )));
    }
    let mut shuffled = ids.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    // 0.7 * 10 must give 7, not 6
    let n_train = ((train_fraction * ids.len() as f64) + 1e-9).floor() as usize;
    let val_ids = shuffled.split_off(n_train);
    Ok(DatasetSplit {
        train_ids: shuffled,
        val_ids,
        test_ids: Vec::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl MinMaxScaler {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Result<Self> {
        for axis in 0..3 {
            if !(max[axis] > min[axis]) {
                return Err(Error::DegenerateAxis(axis));
            }
        }
        Ok(Self { min, max })
    }

    /// Per-axis global extremes over every sample of the pool.
    pub fn fit<'a>(pool: impl IntoIterator<Item = &'a Trajectory>) -> Result<Self> {
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        let mut seen = false;
        for traj in pool {
            for p in traj.positions() {
                seen = true;
                for axis in 0..3 {
                    min[axis] = min[axis].min(p[axis]);
                    max[axis] = max[axis].max(p[axis]);
                }
            }
        }
        if !seen {
            return Err(Error::InvalidInput("cannot fit a scaler on an empty pool".into()));
        }
        Self::new(min, max)
    }

    /// `(x - min) / (max - min)` per axis, unclamped.
    #[inline]
    pub fn scale(&self, p: &Vec3) -> Vec3 {
        Vec3::new(
            (p[0] - self.min[0]) / (self.max[0] - self.min[0]),
            (p[1] - self.min[1]) / (self.max[1] - self.min[1]),
            (p[2] - self.min[2]) / (self.max[2] - self.min[2]),
        )
    }

    pub fn apply(&self, traj: &Trajectory) -> Trajectory {
        traj.map_positions(|p| self.scale(p))
    }
}

/// Backward differences scaled by the sample rate; the first velocity is zero.
pub fn discrete_velocity(traj: &Trajectory) -> Vec<Vec3> {
    velocities(traj.positions(), traj.rate)
}

pub(crate) fn velocities(positions: &[Vec3], rate: f64) -> Vec<Vec3> {
    let mut out = Vec::with_capacity(positions.len());
    if positions.is_empty() {
        return out;
    }
    out.push(Vec3::zeros());
    out.extend(positions.windows(2).map(|w| (w[1] - w[0]) * rate));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryError {
    pub id: String,
    pub mean_error: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub trajectories: Vec<TrajectoryError>,
    pub mean: f64,
    pub std: f64,
}

impl ErrorReport {
    /// Aggregates per-trajectory errors; `std` is the population standard deviation.
    pub fn from_errors(trajectories: Vec<TrajectoryError>) -> Result<Self> {
        if trajectories.is_empty() {
            return Err(Error::InvalidInput("no trajectories to report".into()));
        }
        let errs: Vec<f64> = trajectories.iter().map(|t| t.mean_error).collect();
        let (mean, std) = mean_std(&errs);
        Ok(Self {
            trajectories,
            mean,
            std,
        })
    }
}

pub(crate) fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn traj(points: &[[f64; 3]]) -> Trajectory {
        Trajectory::new("t", 100.0, points.iter().map(|p| Vec3::from(*p)).collect()).unwrap()
    }

    #[test]
    fn circular_error_examples() {
        assert_abs_diff_eq!(circular_error(0.5, 0.2).unwrap(), 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(
            circular_error(PI - 0.1, -(PI - 0.1)).unwrap(),
            0.2,
            epsilon = 1e-12
        );
        assert_eq!(circular_error(1.234, 1.234).unwrap(), 0.0);
        assert_eq!(circular_error(0.0, PI).unwrap(), PI);
        assert!(matches!(circular_error(f64::NAN, 0.0), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn mean_error_examples() {
        let a = PhaseSeries::new(vec![0.1; 50]).unwrap();
        let b = PhaseSeries::new(vec![0.3; 50]).unwrap();
        assert_abs_diff_eq!(mean_circular_error(&a, &b).unwrap(), 0.2, epsilon = 1e-12);
        assert_eq!(mean_circular_error(&a, &a).unwrap(), 0.0);

        let truth = PhaseSeries::new(vec![0.0, PI / 2.0]).unwrap();
        let est = PhaseSeries::new(vec![0.1, PI / 2.0 - 0.3]).unwrap();
        assert_abs_diff_eq!(mean_circular_error(&truth, &est).unwrap(), 0.2, epsilon = 1e-12);

        let short = PhaseSeries::new(vec![0.0]).unwrap();
        assert!(matches!(
            mean_circular_error(&truth, &short),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn phase_series_rejects_out_of_range() {
        assert!(PhaseSeries::new(vec![0.0, 4.0]).is_err());
        let w = PhaseSeries::from_unwrapped([4.0, -7.0]);
        assert!(w.values().iter().all(|v| (-PI..=PI).contains(v)));
    }

    #[test]
    fn split_sizes_and_determinism() {
        let ids: Vec<String> = (0..10).map(|i| format!("t{i}")).collect();
        let s = split_dataset(&ids, 0.7, 3).unwrap();
        assert_eq!((s.train_ids.len(), s.val_ids.len()), (7, 3));

        let ids: Vec<String> = (0..144).map(|i| format!("t{i}")).collect();
        let s = split_dataset(&ids, 0.7, 3).unwrap();
        assert_eq!((s.train_ids.len(), s.val_ids.len()), (100, 44));
        assert_eq!(s, split_dataset(&ids, 0.7, 3).unwrap());

        assert!(split_dataset(&[], 0.7, 0).is_err());
        assert!(split_dataset(&ids, 1.0, 0).is_err());
    }

    #[test]
    fn minmax_examples() {
        let t = traj(&[[2.0, 0.0, 1.0], [4.0, 1.0, 2.0], [6.0, 2.0, 3.0]]);
        let s = MinMaxScaler::fit([&t]).unwrap();
        let scaled = s.apply(&t);
        let xs: Vec<f64> = scaled.positions().iter().map(|p| p[0]).collect();
        assert_eq!(xs, vec![0.0, 0.5, 1.0]);
        assert_eq!(s.scale(&Vec3::new(8.0, 0.0, 1.0))[0], 1.5);

        // unseen trajectory uses the pool's parameters
        let unseen = traj(&[[0.0, -2.0, 1.0], [2.0, 0.0, 1.0]]);
        let u = s.apply(&unseen);
        assert_eq!(u.positions()[0], Vec3::new(-0.5, -1.0, 0.0));

        let flat = traj(&[[1.0, 0.0, 5.0], [2.0, 1.0, 5.0]]);
        assert!(matches!(MinMaxScaler::fit([&flat]), Err(Error::DegenerateAxis(2))));
    }

    #[test]
    fn velocity_examples() {
        let c = traj(&[[1.0, 1.0, 1.0]; 5]);
        assert!(discrete_velocity(&c).iter().all(|v| *v == Vec3::zeros()));

        let lin = Trajectory::new(
            "lin",
            100.0,
            (0..20).map(|i| Vec3::new(i as f64 / 100.0, 0.0, 0.0)).collect(),
        )
        .unwrap();
        let v = discrete_velocity(&lin);
        assert_eq!(v.len(), 20);
        assert_eq!(v[0], Vec3::zeros());
        for vi in &v[1..] {
            assert_abs_diff_eq!(vi[0], 1.0, epsilon = 1e-12);
        }

        let two = traj(&[[0.0, 0.0, 0.0], [0.01, 0.0, 0.0]]);
        assert_abs_diff_eq!(discrete_velocity(&two)[1][0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn trajectory_validation() {
        assert!(matches!(
            Trajectory::new("x", 100.0, vec![Vec3::zeros()]),
            Err(Error::TooShort { .. })
        ));
        assert!(Trajectory::new("x", 100.0, vec![Vec3::zeros(), Vec3::new(f64::NAN, 0.0, 0.0)])
            .is_err());
        let t = Trajectory::from_timed("x", &[1.0, 1.01, 1.02], vec![Vec3::zeros(); 3]).unwrap();
        assert_abs_diff_eq!(t.rate, 100.0, epsilon = 1e-9);
        assert!(Trajectory::from_timed("x", &[0.0, 0.01, 0.03], vec![Vec3::zeros(); 3]).is_err());
    }

    proptest! {
        #[test]
        fn circular_error_symmetric_and_periodic(a in -50.0f64..50.0, b in -50.0f64..50.0, k in -5i32..5) {
            let e = circular_error(a, b).unwrap();
            prop_assert!((0.0..=PI).contains(&e));
            prop_assert_eq!(e, circular_error(b, a).unwrap());
            let shifted = circular_error(a + 2.0 * PI * k as f64, b).unwrap();
            prop_assert!((e - shifted).abs() < 1e-12);
        }

        #[test]
        fn split_is_partition(n in 1usize..200, frac in 0.05f64..0.95, seed in any::<u64>()) {
            let ids: Vec<String> = (0..n).map(|i| i.to_string()).collect();
            let s = split_dataset(&ids, frac, seed).unwrap();
            let mut all: Vec<String> = s.train_ids.iter().chain(&s.val_ids).cloned().collect();
            all.sort();
            let mut expect = ids.clone();
            expect.sort();
            prop_assert_eq!(all, expect);
            prop_assert_eq!(s.train_ids.len(), (frac * n as f64 + 1e-9).floor() as usize);
        }

        #[test]
        fn minmax_pool_extremes_map_to_unit(pts in prop::collection::vec(prop::array::uniform3(-100.0f64..100.0), 2..40)) {
            let t = traj(&pts);
            if let Ok(s) = MinMaxScaler::fit([&t]) {
                let scaled = s.apply(&t);
                for axis in 0..3 {
                    let vals: Vec<f64> = scaled.positions().iter().map(|p| p[axis]).collect();
                    prop_assert_eq!(vals.iter().cloned().fold(f64::INFINITY, f64::min), 0.0);
                    prop_assert_eq!(vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max), 1.0);
                }
            }
        }

        #[test]
        fn velocity_of_linear_motion_is_slope(slope in prop::array::uniform3(-5.0f64..5.0), n in 2usize..50) {
            let s = Vec3::from(slope);
            let t = Trajectory::new("l", 100.0, (0..n).map(|i| s * (i as f64 / 100.0)).collect()).unwrap();
            for v in &discrete_velocity(&t)[1..] {
                prop_assert!((v - s).norm() < 1e-9);
            }
        }
    }
}
