//! Phase-to-position mapping producing human-like planar oscillations.
//!
//! Units follow the reference trajectory. The bundled reference is in
//! millimetres, the native unit of the motion-capture exports.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Trajectory, Vec3, DEFAULT_RATE};
use crate::error::{Error, Result};

pub const DEFAULT_NOISE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionSynthParams {
    /// Mid-range per axis.
    pub center: [f64; 3],
    pub amp_x: f64,
    pub amp_y: f64,
    /// Standard deviation of the additive per-axis noise.
    pub noise: f64,
    pub seed: u64,
}

impl MotionSynthParams {
    pub fn validate(&self) -> Result<()> {
        let finite = self.center.iter().all(|c| c.is_finite());
        if !(finite && self.amp_x >= 0.0 && self.amp_y >= 0.0 && self.noise >= 0.0)
            || !(self.amp_x.is_finite() && self.amp_y.is_finite() && self.noise.is_finite())
        {
            return Err(Error::InvalidConfig(
                "synth: amplitudes and noise must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Scales both amplitudes, keeping the centre.
    pub fn scaled(&self, fx: f64, fy: f64) -> Self {
        Self {
            amp_x: self.amp_x * fx,
            amp_y: self.amp_y * fy,
            ..*self
        }
    }
}

pub fn fit_synth_params(reference: &Trajectory, noise: f64, seed: u64) -> Result<MotionSynthParams> {
    if reference.is_empty() {
        return Err(Error::TooShort { needed: 1, got: 0 });
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in reference.positions() {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    for k in 0..2 {
        if !(hi[k] - lo[k] > 0.0) {
            return Err(Error::DegenerateReference(k));
        }
    }
    let params = MotionSynthParams {
        center: [0, 1, 2].map(|k| (lo[k] + hi[k]) / 2.0),
        amp_x: (hi[0] - lo[0]) / 2.0,
        amp_y: (hi[1] - lo[1]) / 6.0,
        noise,
        seed,
    };
    params.validate()?;
    Ok(params)
}

pub fn synthesize(theta: f64, params: &MotionSynthParams, rng: &mut impl Rng) -> Vec3 {
    let mut eta = [0.0; 3];
    for e in &mut eta {
        let z: f64 = rng.sample(StandardNormal);
        *e = params.noise * z;
    }
    let [cx, cy, cz] = params.center;
    Vec3::new(
        cx + params.amp_x * theta.cos() + eta[0],
        cy + params.amp_y * theta.sin() + eta[1],
        cz + eta[2],
    )
}

pub fn synthesize_trajectory(
    id: impl Into<String>,
    phases: &[f64],
    rate: f64,
    params: &MotionSynthParams,
    rng: &mut impl Rng,
) -> Result<Trajectory> {
    if phases.is_empty() {
        return Err(Error::TooShort { needed: 1, got: 0 });
    }
    if let Some(bad) = phases.iter().find(|p| !p.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite phase {bad}")));
    }
    let positions = phases.iter().map(|&th| synthesize(th, params, rng)).collect();
    Trajectory::new(id, rate, positions)
}

/// Bundled reference exemplar: a 0.5 Hz planar ellipse, 150 mm along x,
/// 30 mm along y, at a constant height of 1000 mm, 30 s at 100 Hz.
pub fn reference_trajectory() -> Trajectory {
    let rate = DEFAULT_RATE;
    let positions = (0..3000)
        .map(|i| {
            let th = 2.0 * PI * 0.5 * i as f64 / rate;
            Vec3::new(150.0 * th.cos(), 30.0 * th.sin(), 1000.0)
        })
        .collect();
    Trajectory::new("reference", rate, positions).expect("valid reference")
}
