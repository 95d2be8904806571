//! Windowed LSTM phase estimator.
//!
//! The model sees the last `w` samples of normalized position and velocity
//! (6 features per step), runs a single-layer LSTM, applies dropout to the
//! final hidden state and maps it through a 2-unit linear head read as
//! `(sin θ, cos θ)`. The phase is `atan2` of the two outputs.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{velocities, MinMaxScaler, PhaseSeries, Trajectory, Vec3};
use crate::error::{Error, Result};
use crate::nn::weights::WeightsFile;
use crate::nn::{dropout, mse, AdamConfig, AdamState, Dense, DropoutMode, LstmParams, Matrix, Params};
use crate::par::{self, Exec};

pub const FEATURES: usize = 6;
pub const WEIGHTS_KIND: &str = "lstm-estimator";

pub type Feature = [f64; FEATURES];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    pub window: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Samples per gradient work unit. Units are reduced in a fixed order,
    /// so this changes speed, not results, across thread counts.
    pub grad_chunk: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            window: 10,
            hidden: 128,
            dropout: 0.2,
            epochs: 10,
            batch_size: 32,
            lr: 1e-3,
            seed: 0,
            grad_chunk: 32,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.window < 2 {
            return bad("estimator window must be at least 2");
        }
        if self.hidden == 0 || self.epochs == 0 || self.batch_size == 0 || self.grad_chunk == 0 {
            return bad("estimator counts must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout rate must lie in [0, 1)");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub input: Vec<Feature>,
    /// `(sin θ, cos θ)`.
    pub target: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmModel {
    pub window: usize,
    pub dropout: f64,
    pub lstm: LstmParams,
    pub head: Dense,
}

impl LstmModel {
    pub fn init(config: &EstimatorConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let lstm = LstmParams::init(FEATURES, config.hidden, &mut rng);
        let head = Dense::init(config.hidden, 2, &mut rng);
        Ok(Self {
            window: config.window,
            dropout: config.dropout,
            lstm,
            head,
        })
    }

    /// Head outputs `(ŝ, ĉ)` for one window, dropout in eval mode.
    pub fn head_output(&self, window: &[Feature]) -> Result<[f64; 2]> {
        if window.len() != self.window {
            return Err(Error::shape(
                format!("{}x{FEATURES} window", self.window),
                format!("{}x{FEATURES}", window.len()),
            ));
        }
        let rows: Vec<&[f64]> = window.iter().map(|f| &f[..]).collect();
        let h = self.lstm.last_hidden(&rows)?;
        let out = self.head.forward_one(&h)?;
        Ok([out[0], out[1]])
    }

    pub fn to_weights(&self, scaler: &MinMaxScaler) -> WeightsFile {
        let meta = serde_json::json!({
            "window": self.window,
            "hidden": self.lstm.hidden_size(),
            "features": FEATURES,
            "dropout": self.dropout,
            "scaler": scaler,
        });
        let mut w = WeightsFile::new(WEIGHTS_KIND, meta);
        w.push_lstm("lstm", &self.lstm);
        w.push_dense("head", &self.head);
        w
    }

    pub fn from_weights(w: &WeightsFile) -> Result<(Self, MinMaxScaler)> {
        w.expect_kind(WEIGHTS_KIND)?;
        let meta_err = |k: &str| Error::InvalidInput(format!("estimator weights missing `{k}`"));
        let window = w.meta["window"].as_u64().ok_or_else(|| meta_err("window"))? as usize;
        let dropout = w.meta["dropout"].as_f64().ok_or_else(|| meta_err("dropout"))?;
        let scaler: MinMaxScaler = serde_json::from_value(w.meta["scaler"].clone())
            .map_err(|_| meta_err("scaler"))?;
        let lstm = w.lstm("lstm")?;
        let head = w.dense("head")?;
        if lstm.input_size() != FEATURES || head.inputs() != lstm.hidden_size() || head.outputs() != 2 {
            return Err(Error::shape(
                format!("{FEATURES} -> H -> 2"),
                format!("{} -> {} -> {}", lstm.input_size(), head.inputs(), head.outputs()),
            ));
        }
        Ok((
            Self {
                window,
                dropout,
                lstm,
                head,
            },
            scaler,
        ))
    }
}

/// Normalized position plus velocity (of the normalized positions) for
/// every sample of a calibrated trajectory.
pub fn trajectory_features(calibrated: &Trajectory, scaler: &MinMaxScaler) -> Vec<Feature> {
    let scaled: Vec<Vec3> = calibrated.positions().iter().map(|p| scaler.scale(p)).collect();
    let vel = velocities(&scaled, calibrated.rate);
    scaled
        .iter()
        .zip(&vel)
        .map(|(p, v)| [p[0], p[1], p[2], v[0], v[1], v[2]])
        .collect()
}

/// One training sample per time index `t` in `[w, T]` (1-based).
pub fn make_windows(
    calibrated: &Trajectory,
    labels: &PhaseSeries,
    scaler: &MinMaxScaler,
    window: usize,
) -> Result<Vec<TrainingSample>> {
    if labels.len() != calibrated.len() {
        return Err(Error::shape(calibrated.len(), labels.len()));
    }
    if calibrated.len() < window {
        return Err(Error::TooShort {
            needed: window,
            got: calibrated.len(),
        });
    }
    let feats = trajectory_features(calibrated, scaler);
    Ok((window..=feats.len())
        .map(|end| {
            let th = labels.values()[end - 1];
            TrainingSample {
                input: feats[end - window..end].to_vec(),
                target: [th.sin(), th.cos()],
            }
        })
        .collect())
}

/// `atan2(ŝ, ĉ)`.
pub fn phase_from_head(out: [f64; 2]) -> Result<f64> {
    let [s, c] = out;
    if !(s.hypot(c) >= 1e-9) {
        return Err(Error::DegeneratePhase);
    }
    Ok(s.atan2(c))
}

pub fn estimate_phase(model: &LstmModel, window: &[Feature]) -> Result<f64> {
    phase_from_head(model.head_output(window)?)
}

/// Windowed batch inference over a calibrated trajectory. Entry `i` is the
/// estimate at sample `i`; the first `w - 1` entries are `None`.
pub fn estimate_trajectory(
    model: &LstmModel,
    scaler: &MinMaxScaler,
    calibrated: &Trajectory,
    exec: Exec,
) -> Result<Vec<Option<f64>>> {
    let w = model.window;
    let feats = trajectory_features(calibrated, scaler);
    if feats.len() < w {
        return Ok(vec![None; feats.len()]);
    }
    let est: Result<Vec<f64>> = par::map_range(exec, feats.len() - w + 1, |i| {
        estimate_phase(model, &feats[i..i + w])
    })
    .into_iter()
    .collect();
    let mut out = vec![None; w - 1];
    out.extend(est?.into_iter().map(Some));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OnlineOutput {
    /// Fewer than `w` samples seen so far.
    Warmup,
    Phase(f64),
}

/// Sliding-window estimator fed one calibrated sample at a time.
#[derive(Debug, Clone)]
pub struct OnlineEstimator<'m> {
    model: &'m LstmModel,
    scaler: MinMaxScaler,
    rate: f64,
    prev: Option<Vec3>,
    window: VecDeque<Feature>,
}

impl<'m> OnlineEstimator<'m> {
    pub fn new(model: &'m LstmModel, scaler: MinMaxScaler, rate: f64) -> Self {
        Self {
            model,
            scaler,
            rate,
            prev: None,
            window: VecDeque::with_capacity(model.window),
        }
    }

    pub fn push(&mut self, calibrated_sample: &Vec3) -> Result<OnlineOutput> {
        let p = self.scaler.scale(calibrated_sample);
        let v = match self.prev {
            Some(q) => (p - q) * self.rate,
            None => Vec3::zeros(),
        };
        self.prev = Some(p);
        if self.window.len() == self.model.window {
            self.window.pop_front();
        }
        self.window.push_back([p[0], p[1], p[2], v[0], v[1], v[2]]);
        if self.window.len() < self.model.window {
            return Ok(OnlineOutput::Warmup);
        }
        let (a, b) = self.window.as_slices();
        let phase = if b.is_empty() {
            estimate_phase(self.model, a)?
        } else {
            let contiguous: Vec<Feature> = a.iter().chain(b).copied().collect();
            estimate_phase(self.model, &contiguous)?
        };
        Ok(OnlineOutput::Phase(phase))
    }
}

/// Runs an [`OnlineEstimator`] over a whole stream.
pub fn online_estimate(
    model: &LstmModel,
    scaler: &MinMaxScaler,
    rate: f64,
    stream: &[Vec3],
) -> Result<Vec<OnlineOutput>> {
    let mut est = OnlineEstimator::new(model, *scaler, rate);
    stream.iter().map(|p| est.push(p)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    /// Mean circular error over validation windows, if any.
    pub val_error: Option<f64>,
}

struct ChunkResult {
    loss_sum: f64,
    lstm: LstmParams,
    head: Dense,
}

fn stack_inputs(samples: &[&TrainingSample], window: usize) -> Vec<Matrix> {
    (0..window)
        .map(|t| {
            Matrix::from_fn(samples.len(), FEATURES, |b, k| samples[b].input[t][k])
        })
        .collect()
}

fn chunk_gradients(
    model: &LstmModel,
    samples: &[&TrainingSample],
    batch_size: usize,
    rng_seed: u64,
) -> Result<ChunkResult> {
    let n = samples.len();
    let xs = stack_inputs(samples, model.window);
    let (hs, cache) = model.lstm.forward(&xs)?;
    let last = hs.last().expect("window >= 2");
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let dropped = dropout(last, model.dropout, DropoutMode::Train, &mut rng)?;
    let pred = model.head.forward(&dropped.output)?;
    let target = Matrix::from_fn(n, 2, |b, k| samples[b].target[k]);
    let (loss, mut dpred) = mse(&pred, &target)?;
    // mse averages over this chunk; rescale to the full-batch mean
    let k = n as f64 / batch_size as f64;
    for v in dpred.as_mut_slice() {
        *v *= k;
    }
    let (head_grads, d_drop) = model.head.backward(&dropped.output, &dpred)?;
    let d_last = dropped.backward(&d_drop);
    let mut d_hidden = vec![Matrix::zeros(n, model.lstm.hidden_size()); model.window - 1];
    d_hidden.push(d_last);
    let lstm_grads = model.lstm.backward_params(&cache, &d_hidden)?;
    Ok(ChunkResult {
        loss_sum: loss * n as f64,
        lstm: lstm_grads,
        head: head_grads,
    })
}

/// Mean circular error of the model over a sample set using batched
/// forward passes (dropout off).
pub fn evaluate_samples(model: &LstmModel, samples: &[TrainingSample], exec: Exec) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("no samples to evaluate".into()));
    }
    const CHUNK: usize = 256;
    let chunks: Vec<&[TrainingSample]> = samples.chunks(CHUNK).collect();
    let sums = par::try_map(exec, &chunks, |chunk| -> Result<f64> {
        let refs: Vec<&TrainingSample> = chunk.iter().collect();
        let xs = stack_inputs(&refs, model.window);
        let (hs, _) = model.lstm.forward(&xs)?;
        let pred = model.head.forward(hs.last().expect("window >= 2"))?;
        let mut sum = 0.0;
        for (b, s) in chunk.iter().enumerate() {
            let est = pred.get(b, 0).atan2(pred.get(b, 1));
            let truth = s.target[0].atan2(s.target[1]);
            sum += crate::data::circular_error(truth, est)?;
        }
        Ok(sum)
    })?;
    Ok(sums.iter().sum::<f64>() / samples.len() as f64)
}

/// Trains from scratch: fixed epoch count, seeded shuffling, Adam on the MSE
/// of the `(sin, cos)` head. Returns the final model and per-epoch history.
pub fn train(
    train_samples: &[TrainingSample],
    val_samples: &[TrainingSample],
    config: &EstimatorConfig,
    exec: Exec,
    mut progress: impl FnMut(&EpochStats),
) -> Result<(LstmModel, Vec<EpochStats>)> {
    config.validate()?;
    if train_samples.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    for s in train_samples.iter().chain(val_samples) {
        if s.input.len() != config.window {
            return Err(Error::shape(config.window, s.input.len()));
        }
    }
    let mut model = LstmModel::init(config)?;
    let mut adam_lstm = AdamState::new(AdamConfig { lr: config.lr, ..AdamConfig::default() }, &model.lstm);
    let mut adam_head = AdamState::new(AdamConfig { lr: config.lr, ..AdamConfig::default() }, &model.head);
    let mut order: Vec<usize> = (0..train_samples.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed ^ (0x5eed_0000 + epoch as u64));
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;

        for (bi, batch_idx) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&TrainingSample> = batch_idx.iter().map(|&i| &train_samples[i]).collect();
            let chunks: Vec<&[&TrainingSample]> = batch.chunks(config.grad_chunk).collect();
            let base = config
                .seed
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add(((epoch as u64) << 40) ^ ((bi as u64) << 8));
            let results = par::map_range(exec, chunks.len(), |ci| {
                chunk_gradients(&model, chunks[ci], batch.len(), base.wrapping_add(ci as u64))
            });
            let mut results = results.into_iter();
            let first = results.next().expect("non-empty batch")?;
            let (mut g_lstm, mut g_head) = (first.lstm, first.head);
            loss_sum += first.loss_sum;
            for r in results {
                let r = r?;
                g_lstm.accumulate(&r.lstm);
                g_head.accumulate(&r.head);
                loss_sum += r.loss_sum;
            }
            adam_lstm.step(&mut model.lstm, &g_lstm)?;
            adam_head.step(&mut model.head, &g_head)?;
        }

        let val_error = if val_samples.is_empty() {
            None
        } else {
            Some(evaluate_samples(&model, val_samples, exec)?)
        };
        let stats = EpochStats {
            epoch: epoch + 1,
            train_loss: loss_sum / train_samples.len() as f64,
            val_error,
        };
        progress(&stats);
        history.push(stats);
    }
    Ok((model, history))
}
