//! Offline ground-truth phase: project a calibrated trajectory on its
//! dominant axis and take the argument of the analytic signal.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::data::{PhaseSeries, Trajectory};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticSignal(Vec<Complex64>);

impl AnalyticSignal {
    pub fn samples(&self) -> &[Complex64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn phases(&self) -> Vec<f64> {
        self.0.iter().map(|z| z.im.atan2(z.re)).collect()
    }

    pub fn max_amplitude(&self) -> f64 {
        self.0.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

/// x-coordinate of a calibrated trajectory with its mean removed.
pub fn project_principal(calibrated: &Trajectory) -> Vec<f64> {
    let xs: Vec<f64> = calibrated.positions().iter().map(|p| p[0]).collect();
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.into_iter().map(|x| x - mean).collect()
}

/// FFT, keep DC, double the positive bins, keep Nyquist (even length),
/// zero the negative bins, inverse FFT.
pub fn analytic_signal(x: &[f64]) -> Result<AnalyticSignal> {
    let n = x.len();
    if n < 4 {
        return Err(Error::TooShort { needed: 4, got: n });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("signal contains non-finite values".into()));
    }
    let mut planner = FftPlanner::<f64>::new();
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);

    let positive_end = n.div_ceil(2); // bins 1..positive_end are doubled
    for b in &mut buf[1..positive_end] {
        *b *= 2.0;
    }
    let negative_start = if n.is_multiple_of(2) { n / 2 + 1 } else { positive_end };
    for b in &mut buf[negative_start..] {
        *b = Complex64::new(0.0, 0.0);
    }

    planner.plan_fft_inverse(n).process(&mut buf);
    let scale = 1.0 / n as f64;
    for b in &mut buf {
        *b *= scale;
    }
    Ok(AnalyticSignal(buf))
}

/// Below this analytic-signal amplitude the phase is undefined.
pub const MIN_AMPLITUDE: f64 = 1e-9;

/// Wrapped phase of the analytic signal of [`project_principal`].
pub fn phase_labels(calibrated: &Trajectory) -> Result<PhaseSeries> {
    let z = analytic_signal(&project_principal(calibrated))?;
    if z.max_amplitude() < MIN_AMPLITUDE {
        return Err(Error::DegenerateSignal);
    }
    PhaseSeries::new(z.phases())
}
