//! DQN agent driving the controlled oscillator's natural frequency.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::calibration::{fit_transform, CalibrationTransform, StreamOutput, StreamingCalibrator};
use crate::data::{circular_error, mean_std, MinMaxScaler, Vec3};
use crate::error::{Error, Result};
use crate::estimator::{LstmModel, OnlineEstimator, OnlineOutput};
use crate::kuramoto::{order_parameter, run, KuramotoConfig, KuramotoState, SimRun, Simulator};
use crate::nn::weights::WeightsFile;
use crate::nn::{huber, AdamConfig, AdamState, Dense, Matrix, Params};
use crate::par::{self, Exec};
use crate::seed::derive_seed;
use crate::synth::{synthesize, MotionSynthParams};

pub const WEIGHTS_KIND: &str = "dqn-qnet";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObservationMode {
    True,
    Estimated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    /// Number of discrete frequencies.
    pub actions: usize,
    /// Half-width of the action range in units of the frequency std.
    pub action_span: f64,
    pub mode: ObservationMode,
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_steps: usize,
    pub replay_capacity: usize,
    pub batch_size: usize,
    pub target_sync: usize,
    pub episodes: usize,
    pub hidden: usize,
    pub lr: f64,
    pub huber_delta: f64,
    /// Simulator steps each decision is held for.
    pub hold: usize,
    pub seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            actions: 11,
            action_span: 3.0,
            mode: ObservationMode::True,
            gamma: 0.9,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_steps: 5000,
            replay_capacity: 10_000,
            batch_size: 32,
            target_sync: 100,
            episodes: 200,
            hidden: 64,
            lr: 1e-3,
            huber_delta: 1.0,
            hold: 5,
            seed: 0,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("agent: {m}")));
        if self.actions < 2 {
            return bad("need at least 2 actions");
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        let unit = 0.0..=1.0;
        if !unit.contains(&self.epsilon_start) || !unit.contains(&self.epsilon_end) {
            return bad("epsilon must lie in [0, 1]");
        }
        if self.replay_capacity == 0
            || self.batch_size == 0
            || self.target_sync == 0
            || self.hidden == 0
            || self.hold == 0
        {
            return bad("capacities, batch size, sync interval, width and hold must be positive");
        }
        if !(self.lr > 0.0 && self.huber_delta > 0.0 && self.action_span >= 0.0) {
            return bad("lr and huber delta must be positive, span non-negative");
        }
        Ok(())
    }

    pub fn epsilon(&self, step: usize) -> f64 {
        if self.epsilon_decay_steps == 0 {
            return self.epsilon_end;
        }
        let frac = (step as f64 / self.epsilon_decay_steps as f64).min(1.0);
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }
}

/// Evenly spaced frequencies over `μ ± span·σ`.
pub fn action_set(kuramoto: &KuramotoConfig, agent: &AgentConfig) -> Vec<f64> {
    let k = agent.actions;
    let lo = kuramoto.freq_mean - agent.action_span * kuramoto.freq_std;
    let hi = kuramoto.freq_mean + agent.action_span * kuramoto.freq_std;
    (0..k)
        .map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64)
        .collect()
}

pub fn observation_dim(oscillators: usize) -> usize {
    2 * (oscillators - 1) + 1
}

/// `(sin(θ_i − θ_a), cos(θ_i − θ_a))` for every `i ≠ a`, then `r`.
pub fn observation(phases: &[f64], controlled: usize) -> Vec<f64> {
    let th_a = phases[controlled];
    let mut obs = Vec::with_capacity(observation_dim(phases.len()));
    for (i, th) in phases.iter().enumerate() {
        if i != controlled {
            let d = th - th_a;
            obs.push(d.sin());
            obs.push(d.cos());
        }
    }
    obs.push(order_parameter(phases));
    obs
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlAction {
    pub index: usize,
    pub omega: f64,
}

/// Two hidden ReLU layers and a linear Q head.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    pub layers: [Dense; 3],
}

pub struct QCache {
    x: Matrix,
    h1: Matrix,
    h2: Matrix,
}

fn relu_in_place(m: &mut Matrix) {
    for v in m.as_mut_slice() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

fn relu_mask(d: &mut Matrix, h: &Matrix) {
    for (g, a) in d.as_mut_slice().iter_mut().zip(h.as_slice()) {
        if *a <= 0.0 {
            *g = 0.0;
        }
    }
}

impl QNetwork {
    pub fn init(inputs: usize, hidden: usize, actions: usize, rng: &mut impl Rng) -> Self {
        Self {
            layers: [
                Dense::init(inputs, hidden, rng),
                Dense::init(hidden, hidden, rng),
                Dense::init(hidden, actions, rng),
            ],
        }
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn actions(&self) -> usize {
        self.layers[2].outputs()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: [
                self.layers[0].zeros_like(),
                self.layers[1].zeros_like(),
                self.layers[2].zeros_like(),
            ],
        }
    }

    /// Q-values for one observation.
    pub fn q_values(&self, obs: &[f64]) -> Result<Vec<f64>> {
        let relu = |mut v: Vec<f64>| {
            v.iter_mut().for_each(|x| *x = x.max(0.0));
            v
        };
        let h1 = relu(self.layers[0].forward_one(obs)?);
        let h2 = relu(self.layers[1].forward_one(&h1)?);
        self.layers[2].forward_one(&h2)
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, QCache)> {
        let mut h1 = self.layers[0].forward(x)?;
        relu_in_place(&mut h1);
        let mut h2 = self.layers[1].forward(&h1)?;
        relu_in_place(&mut h2);
        let q = self.layers[2].forward(&h2)?;
        Ok((
            q,
            QCache {
                x: x.clone(),
                h1,
                h2,
            },
        ))
    }

    pub fn backward(&self, cache: &QCache, dq: &Matrix) -> Result<QNetwork> {
        let (g3, mut dh2) = self.layers[2].backward(&cache.h2, dq)?;
        relu_mask(&mut dh2, &cache.h2);
        let (g2, mut dh1) = self.layers[1].backward(&cache.h1, &dh2)?;
        relu_mask(&mut dh1, &cache.h1);
        let (g1, _) = self.layers[0].backward(&cache.x, &dh1)?;
        Ok(Self { layers: [g1, g2, g3] })
    }
}

/// A Q-network, the frequencies its outputs stand for and the number of
/// simulator steps each greedy decision is held.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub qnet: QNetwork,
    pub actions: Vec<f64>,
    pub hold: usize,
}

impl Policy {
    pub fn new(qnet: QNetwork, actions: Vec<f64>, hold: usize) -> Result<Self> {
        if actions.len() != qnet.actions() {
            return Err(Error::shape(qnet.actions(), actions.len()));
        }
        if hold == 0 {
            return Err(Error::InvalidInput("hold must be positive".into()));
        }
        Ok(Self { qnet, actions, hold })
    }

    /// Greedy frequency for one observation.
    pub fn act(&self, obs: &[f64]) -> Result<f64> {
        Ok(self.actions[greedy(&self.qnet.q_values(obs)?)])
    }

    pub fn to_weights(&self, controlled: usize) -> WeightsFile {
        let meta = serde_json::json!({
            "inputs": self.qnet.inputs(),
            "hidden": self.qnet.layers[0].outputs(),
            "action_values": self.actions,
            "hold": self.hold,
            "controlled": controlled,
        });
        let mut w = WeightsFile::new(WEIGHTS_KIND, meta);
        for (i, l) in self.qnet.layers.iter().enumerate() {
            w.push_dense(&format!("layer{i}"), l);
        }
        w
    }

    pub fn from_weights(w: &WeightsFile) -> Result<Self> {
        w.expect_kind(WEIGHTS_KIND)?;
        let layers = [w.dense("layer0")?, w.dense("layer1")?, w.dense("layer2")?];
        for pair in layers.windows(2) {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::shape(pair[0].outputs(), pair[1].inputs()));
            }
        }
        let actions: Vec<f64> = serde_json::from_value(w.meta["action_values"].clone())
            .map_err(|_| Error::InvalidInput("q-network weights missing `action_values`".into()))?;
        let hold = w.meta["hold"]
            .as_u64()
            .ok_or_else(|| Error::InvalidInput("q-network weights missing `hold`".into()))?;
        Self::new(QNetwork { layers }, actions, hold as usize)
    }
}

impl Params for QNetwork {
    fn tensors(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| l.tensors()).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(|l| l.tensors_mut()).collect()
    }
}

/// Index of the largest value, lowest index on ties.
pub fn greedy(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in q.iter().enumerate().skip(1) {
        if *v > q[best] {
            best = i;
        }
    }
    best
}

pub fn select_action(
    qnet: &QNetwork,
    obs: &[f64],
    epsilon: f64,
    actions: &[f64],
    rng: &mut impl Rng,
) -> Result<ControlAction> {
    if obs.len() != qnet.inputs() {
        return Err(Error::shape(qnet.inputs(), obs.len()));
    }
    if actions.len() != qnet.actions() {
        return Err(Error::shape(qnet.actions(), actions.len()));
    }
    let explore = rng.random::<f64>() < epsilon;
    let index = if explore {
        rng.random_range(0..actions.len())
    } else {
        greedy(&qnet.q_values(obs)?)
    };
    Ok(ControlAction {
        index,
        omega: actions[index],
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_obs: Vec<f64>,
}

/// Fixed-capacity ring buffer with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// `n` draws with replacement.
    pub fn sample<'a>(&'a self, n: usize, rng: &mut impl Rng) -> Vec<&'a Transition> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..n)
            .map(|_| &self.items[rng.random_range(0..self.items.len())])
            .collect()
    }
}

/// Huber TD loss on the taken actions and its gradient for the online net.
pub fn td_loss(
    qnet: &QNetwork,
    target: &QNetwork,
    batch: &[&Transition],
    gamma: f64,
    delta: f64,
) -> Result<(f64, QNetwork)> {
    let n = batch.len();
    let dim = qnet.inputs();
    let x = Matrix::from_fn(n, dim, |b, k| batch[b].obs[k]);
    let x_next = Matrix::from_fn(n, dim, |b, k| batch[b].next_obs[k]);
    let (q, cache) = qnet.forward(&x)?;
    let (q_next, _) = target.forward(&x_next)?;
    let pred: Vec<f64> = batch.iter().enumerate().map(|(b, t)| q.get(b, t.action)).collect();
    let goal: Vec<f64> = batch
        .iter()
        .enumerate()
        .map(|(b, t)| {
            let best = q_next.row(b).iter().copied().fold(f64::NEG_INFINITY, f64::max);
            t.reward + gamma * best
        })
        .collect();
    let (loss, g) = huber(&pred, &goal, delta);
    let mut dq = Matrix::zeros(n, qnet.actions());
    for (b, t) in batch.iter().enumerate() {
        dq.set(b, t.action, g[b]);
    }
    Ok((loss, qnet.backward(&cache, &dq)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub episode: usize,
    pub mean_reward: f64,
    pub epsilon: f64,
    pub mean_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedAgent {
    pub policy: Policy,
    pub history: Vec<EpisodeStats>,
}

/// Episode `e` simulates with its own derived Kuramoto seed.
pub fn training_episode_seed(kuramoto: &KuramotoConfig, episode: usize) -> u64 {
    derive_seed(kuramoto.seed, 1_000_000 + episode as u64)
}

pub fn train_dqn(
    kuramoto: &KuramotoConfig,
    agent: &AgentConfig,
    mut progress: impl FnMut(&EpisodeStats),
) -> Result<TrainedAgent> {
    kuramoto.validate()?;
    agent.validate()?;
    if agent.mode != ObservationMode::True {
        return Err(Error::InvalidConfig(
            "agent: training observes true phases".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(agent.seed);
    let actions = action_set(kuramoto, agent);
    let dim = observation_dim(kuramoto.oscillators);
    let mut qnet = QNetwork::init(dim, agent.hidden, agent.actions, &mut rng);
    let mut target = qnet.clone();
    let mut adam = AdamState::new(
        AdamConfig {
            lr: agent.lr,
            ..AdamConfig::default()
        },
        &qnet,
    );
    let mut replay = ReplayBuffer::new(agent.replay_capacity);
    let mut history = Vec::with_capacity(agent.episodes);
    let mut global_step = 0usize;
    let a = kuramoto.controlled;

    for episode in 0..agent.episodes {
        let cfg = KuramotoConfig {
            seed: training_episode_seed(kuramoto, episode),
            ..kuramoto.clone()
        };
        let mut sim = Simulator::new(&cfg)?;
        let mut obs = observation(&sim.state().phases, a);
        let (mut reward_sum, mut loss_sum, mut updates) = (0.0, 0.0, 0usize);
        let mut eps = agent.epsilon(global_step);
        while !sim.is_done() {
            eps = agent.epsilon(global_step);
            let act = select_action(&qnet, &obs, eps, &actions, &mut rng)?;
            let (mut held_sum, mut held) = (0.0, 0usize);
            while held < agent.hold && !sim.is_done() {
                held_sum += order_parameter(&sim.step(Some(act.omega)).phases);
                held += 1;
            }
            let next_obs = observation(&sim.state().phases, a);
            let reward = held_sum / held as f64;
            reward_sum += held_sum;
            replay.push(Transition {
                obs: std::mem::replace(&mut obs, next_obs.clone()),
                action: act.index,
                reward,
                next_obs,
            });
            global_step += 1;
            if replay.len() >= agent.batch_size {
                let batch = replay.sample(agent.batch_size, &mut rng);
                let (loss, grads) = td_loss(&qnet, &target, &batch, agent.gamma, agent.huber_delta)?;
                adam.step(&mut qnet, &grads)?;
                loss_sum += loss;
                updates += 1;
            }
            if global_step.is_multiple_of(agent.target_sync) {
                target = qnet.clone();
            }
        }
        let steps = sim.steps_taken().max(1);
        let stats = EpisodeStats {
            episode: episode + 1,
            mean_reward: reward_sum / steps as f64,
            epsilon: eps,
            mean_loss: if updates > 0 { loss_sum / updates as f64 } else { 0.0 },
        };
        progress(&stats);
        history.push(stats);
    }
    Ok(TrainedAgent {
        policy: Policy::new(qnet, actions, agent.hold)?,
        history,
    })
}

/// Phases as seen by the agent.
pub trait PhaseObserver {
    fn observe(&mut self, state: &KuramotoState) -> Result<Vec<f64>>;
}

pub struct TrueObserver;

impl PhaseObserver for TrueObserver {
    fn observe(&mut self, state: &KuramotoState) -> Result<Vec<f64>> {
        Ok(state.phases.clone())
    }
}

/// Where the closed loop gets each participant's calibration from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClosedLoopCalibration {
    /// Markers are read in the participant's local frame, known in advance
    /// from their reference motion. The buffer only delays the stream.
    #[default]
    Reference,
    /// Fit on the first `buffer` live samples and freeze.
    Buffer,
}

/// Everything the estimated-phase observer needs.
#[derive(Debug, Clone, Copy)]
pub struct EstimatorContext<'m> {
    pub model: &'m LstmModel,
    pub scaler: MinMaxScaler,
    pub synth: MotionSynthParams,
    /// Calibration buffer length in samples.
    pub buffer: usize,
    pub calibration: ClosedLoopCalibration,
}

/// Calibration of a participant's local frame, fitted on one clean cycle of
/// their synthesized motion.
pub fn participant_transform(synth: &MotionSynthParams) -> Result<CalibrationTransform> {
    let clean = MotionSynthParams { noise: 0.0, ..*synth };
    let mut rng = ChaCha8Rng::seed_from_u64(clean.seed);
    let n = 360;
    let cycle: Vec<Vec3> = (0..n)
        .map(|i| synthesize(2.0 * std::f64::consts::PI * i as f64 / n as f64, &clean, &mut rng))
        .collect();
    fit_transform(&cycle)
}

#[derive(Debug, Clone, Copy)]
pub enum EstimatorSource<'m> {
    Lstm(EstimatorContext<'m>),
    /// Reports the true phase; used to check the plumbing.
    Perfect,
}

struct Track<'m> {
    calibrator: StreamingCalibrator,
    online: Option<OnlineEstimator<'m>>,
    rng: ChaCha8Rng,
    held: f64,
    ready: bool,
    error_sum: f64,
    error_count: usize,
}

/// Synthesizes a marker stream per oscillator from the true phases,
/// calibrates it online and runs the estimator. Until an estimate exists
/// the last value (initially 0) is held.
pub struct EstimatedObserver<'m> {
    source: EstimatorSource<'m>,
    tracks: Vec<Track<'m>>,
    /// Raw synthesized positions, per oscillator, when recording.
    pub positions: Option<Vec<Vec<Vec3>>>,
    /// Estimates handed to the agent, per step.
    pub history: Vec<Vec<f64>>,
}

impl<'m> EstimatedObserver<'m> {
    pub fn new(source: EstimatorSource<'m>, oscillators: usize, rate: f64, seed: u64) -> Result<Self> {
        let (buffer, known) = match &source {
            EstimatorSource::Lstm(ctx) => (
                ctx.buffer,
                match ctx.calibration {
                    ClosedLoopCalibration::Reference => Some(participant_transform(&ctx.synth)?),
                    ClosedLoopCalibration::Buffer => None,
                },
            ),
            EstimatorSource::Perfect => (2, None),
        };
        let tracks = (0..oscillators)
            .map(|i| {
                Ok(Track {
                    calibrator: match known {
                        Some(t) => StreamingCalibrator::with_transform(buffer, t)?,
                        None => StreamingCalibrator::new(buffer)?,
                    },
                    online: match &source {
                        EstimatorSource::Lstm(ctx) => Some(OnlineEstimator::new(ctx.model, ctx.scaler, rate)),
                        EstimatorSource::Perfect => None,
                    },
                    rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64)),
                    held: 0.0,
                    ready: false,
                    error_sum: 0.0,
                    error_count: 0,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            source,
            tracks,
            positions: None,
            history: Vec::new(),
        })
    }

    pub fn record_positions(mut self) -> Self {
        self.positions = Some(vec![Vec::new(); self.tracks.len()]);
        self
    }

    /// Mean circular error per oscillator over steps with an estimate.
    pub fn phase_errors(&self) -> Vec<Option<f64>> {
        self.tracks
            .iter()
            .map(|t| (t.error_count > 0).then(|| t.error_sum / t.error_count as f64))
            .collect()
    }
}

impl PhaseObserver for EstimatedObserver<'_> {
    fn observe(&mut self, state: &KuramotoState) -> Result<Vec<f64>> {
        if state.phases.len() != self.tracks.len() {
            return Err(Error::shape(self.tracks.len(), state.phases.len()));
        }
        for (i, (track, &truth)) in self.tracks.iter_mut().zip(&state.phases).enumerate() {
            match &self.source {
                EstimatorSource::Perfect => {
                    track.held = truth;
                    track.ready = true;
                }
                EstimatorSource::Lstm(ctx) => {
                    let raw = synthesize(truth, &ctx.synth, &mut track.rng);
                    if let Some(p) = self.positions.as_mut() {
                        p[i].push(raw);
                    }
                    let calibrated = match track.calibrator.push(raw) {
                        Ok(StreamOutput::Ready(pts)) => pts,
                        Ok(StreamOutput::Buffering) => Vec::new(),
                        // a degenerate reference is dropped and refilled
                        Err(Error::DegenerateTrajectory) => Vec::new(),
                        Err(e) => return Err(e),
                    };
                    let online = track.online.as_mut().expect("lstm track");
                    for p in &calibrated {
                        if let OnlineOutput::Phase(est) = online.push(p)? {
                            track.held = est;
                            track.ready = true;
                        }
                    }
                }
            }
            if track.ready {
                track.error_sum += circular_error(truth, track.held)?;
                track.error_count += 1;
            }
        }
        let seen: Vec<f64> = self.tracks.iter().map(|t| t.held).collect();
        self.history.push(seen.clone());
        Ok(seen)
    }
}

/// Greedy closed-loop run from the configured seed. The observer sees every
/// step; the policy is queried every `hold` steps.
pub fn run_controlled(
    policy: &Policy,
    kuramoto: &KuramotoConfig,
    observer: &mut dyn PhaseObserver,
) -> Result<SimRun> {
    let a = kuramoto.controlled;
    let (mut step, mut omega) = (0usize, 0.0);
    let mut controller = |state: &KuramotoState| -> Result<f64> {
        let phases = observer.observe(state)?;
        if step % policy.hold == 0 {
            omega = policy.act(&observation(&phases, a))?;
        }
        step += 1;
        Ok(omega)
    };
    run(kuramoto, Some(&mut controller))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    /// ⟨r⟩ per trial.
    pub trials: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl ModeSummary {
    pub fn from_trials(trials: Vec<f64>) -> Result<Self> {
        if trials.is_empty() {
            return Err(Error::InvalidInput("no trials".into()));
        }
        let (mean, std) = mean_std(&trials);
        Ok(Self { trials, mean, std })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub t: f64,
    pub df: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopReport {
    pub kuramoto_seeds: Vec<u64>,
    pub baseline: ModeSummary,
    pub true_phase: Option<ModeSummary>,
    pub estimated: Option<ModeSummary>,
    /// Mean circular error per oscillator, averaged over trials.
    pub phase_error: Option<Vec<f64>>,
    pub phase_error_mean: Option<f64>,
    pub welch: Option<WelchResult>,
}

/// Traces from the first trial, for plotting.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialDetail {
    pub dt: f64,
    pub true_run: Option<SimRun>,
    pub estimated_run: Option<SimRun>,
    /// Estimates handed to the agent at each controlled step.
    pub estimates: Vec<Vec<f64>>,
    /// Raw synthesized marker positions, per oscillator.
    pub positions: Vec<Vec<Vec3>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalModes {
    pub true_phase: bool,
    pub estimated: bool,
}

impl EvalModes {
    pub const BOTH: Self = Self {
        true_phase: true,
        estimated: true,
    };
}

pub fn trial_seed(kuramoto: &KuramotoConfig, trial: usize) -> u64 {
    derive_seed(kuramoto.seed, trial as u64)
}

/// Run, per-oscillator errors, observed estimates and marker positions.
type EstimatedTrial = (SimRun, Vec<Option<f64>>, Vec<Vec<f64>>, Vec<Vec<Vec3>>);

struct TrialOutcome {
    baseline: f64,
    true_run: Option<SimRun>,
    estimated: Option<EstimatedTrial>,
}

/// Runs `trials` seeded 30 s episodes in each requested mode plus the
/// uncontrolled baseline. Trials share nothing but the read-only networks.
pub fn closed_loop_eval(
    policy: &Policy,
    kuramoto: &KuramotoConfig,
    source: EstimatorSource<'_>,
    trials: usize,
    modes: EvalModes,
    exec: Exec,
) -> Result<(ClosedLoopReport, TrialDetail)> {
    kuramoto.validate()?;
    if trials == 0 {
        return Err(Error::InvalidInput("need at least one trial".into()));
    }
    let seeds: Vec<u64> = (0..trials).map(|i| trial_seed(kuramoto, i)).collect();
    let synth_seed = match &source {
        EstimatorSource::Lstm(ctx) => ctx.synth.seed,
        EstimatorSource::Perfect => 0,
    };
    let rate = 1.0 / kuramoto.dt;
    let outcomes = par::try_map(exec, &seeds, |&seed| -> Result<TrialOutcome> {
        let cfg = KuramotoConfig {
            seed,
            ..kuramoto.clone()
        };
        let baseline = run(&cfg, None)?.metrics.mean_r;
        let true_run = if modes.true_phase {
            Some(run_controlled(policy, &cfg, &mut TrueObserver)?)
        } else {
            None
        };
        let estimated = if modes.estimated {
            let mut obs = EstimatedObserver::new(
                source,
                cfg.oscillators,
                rate,
                derive_seed(synth_seed, seed),
            )?
            .record_positions();
            let sim = run_controlled(policy, &cfg, &mut obs)?;
            let errors = obs.phase_errors();
            Some((sim, errors, obs.history, obs.positions.unwrap_or_default()))
        } else {
            None
        };
        Ok(TrialOutcome {
            baseline,
            true_run,
            estimated,
        })
    })?;

    let baseline = ModeSummary::from_trials(outcomes.iter().map(|o| o.baseline).collect())?;
    let true_phase = if modes.true_phase {
        Some(ModeSummary::from_trials(
            outcomes.iter().map(|o| o.true_run.as_ref().unwrap().metrics.mean_r).collect(),
        )?)
    } else {
        None
    };
    let (estimated, phase_error) = if modes.estimated {
        let summary = ModeSummary::from_trials(
            outcomes.iter().map(|o| o.estimated.as_ref().unwrap().0.metrics.mean_r).collect(),
        )?;
        let m = kuramoto.oscillators;
        let per_osc: Vec<f64> = (0..m)
            .map(|i| {
                let vals: Vec<f64> = outcomes
                    .iter()
                    .filter_map(|o| o.estimated.as_ref().unwrap().1[i])
                    .collect();
                if vals.is_empty() {
                    f64::NAN
                } else {
                    vals.iter().sum::<f64>() / vals.len() as f64
                }
            })
            .collect();
        (Some(summary), Some(per_osc))
    } else {
        (None, None)
    };
    let welch = match (&true_phase, &estimated) {
        (Some(a), Some(b)) => Some(welch_t_test(&a.trials, &b.trials)?),
        _ => None,
    };
    let phase_error_mean = phase_error
        .as_ref()
        .map(|v| v.iter().sum::<f64>() / v.len() as f64);

    let mut first = outcomes.into_iter().next().expect("at least one trial");
    let (estimated_run, estimates, positions) = match first.estimated.take() {
        Some((sim, _, hist, pos)) => (Some(sim), hist, pos),
        None => (None, Vec::new(), Vec::new()),
    };
    let detail = TrialDetail {
        dt: kuramoto.dt,
        true_run: first.true_run,
        estimated_run,
        estimates,
        positions,
    };
    Ok((
        ClosedLoopReport {
            kuramoto_seeds: seeds,
            baseline,
            true_phase,
            estimated,
            phase_error,
            phase_error_mean,
            welch,
        },
        detail,
    ))
}

/// ⟨r⟩ of the uncontrolled network for each seed.
pub fn baseline_mean_r(kuramoto: &KuramotoConfig, seeds: &[u64], exec: Exec) -> Result<Vec<f64>> {
    par::try_map(exec, seeds, |&seed| {
        let cfg = KuramotoConfig {
            seed,
            ..kuramoto.clone()
        };
        Ok(run(&cfg, None)?.metrics.mean_r)
    })
}

fn sample_mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Welch's unequal-variance two-sample t-test, two-sided.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<WelchResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InvalidInput("welch test needs at least 2 samples per group".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("welch test samples must be finite".into()));
    }
    let (ma, va) = sample_mean_var(a);
    let (mb, vb) = sample_mean_var(b);
    let (sa, sb) = (va / a.len() as f64, vb / b.len() as f64);
    let se2 = sa + sb;
    if se2 <= 0.0 {
        return Err(Error::InvalidInput("welch test samples have zero variance".into()));
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (a.len() as f64 - 1.0) + sb * sb / (b.len() as f64 - 1.0));
    let p = if t == 0.0 {
        1.0
    } else {
        beta_reg(df / 2.0, 0.5, df / (df + t * t)).clamp(0.0, 1.0)
    };
    Ok(WelchResult { t, df, p })
}
