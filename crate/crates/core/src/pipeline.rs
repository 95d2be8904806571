//! Stage orchestration: dataset generation, estimator training and
//! evaluation, closed-loop artifacts and plot-ready reports.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calibration::{calibrate, streaming_calibrate_trajectory};
use crate::control::{AgentConfig, ClosedLoopCalibration, ClosedLoopReport, TrialDetail};
use crate::data::{
    circular_error, split_dataset, ErrorReport, MinMaxScaler, PhaseSeries, Trajectory, TrajectoryError,
    DEFAULT_RATE,
};
use crate::error::{Error, Result};
use crate::estimator::{
    estimate_trajectory, make_windows, train, EpochStats, EstimatorConfig, LstmModel, TrainingSample,
};
use crate::io;
use crate::kuramoto::{run, KuramotoConfig};
use crate::oracle::phase_labels;
use crate::par::{self, Exec};
use crate::seed::derive_seed;
use crate::synth::{fit_synth_params, reference_trajectory, synthesize_trajectory, MotionSynthParams, DEFAULT_NOISE};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub count: usize,
    pub groups: usize,
    /// Leading groups whose trajectories form the train/validation pool.
    pub pool_groups: usize,
    pub train_fraction: f64,
    /// Seconds per trajectory.
    pub duration: f64,
    pub rate: f64,
    /// Relative per-group amplitude jitter.
    pub jitter: f64,
    pub noise: f64,
    /// Optional reference trajectory CSV; the bundled exemplar otherwise.
    pub reference: Option<PathBuf>,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            count: 288,
            groups: 6,
            pool_groups: 3,
            train_fraction: 0.7,
            duration: 30.0,
            rate: DEFAULT_RATE,
            jitter: 0.1,
            noise: DEFAULT_NOISE,
            reference: None,
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("dataset: {m}")));
        if self.count == 0 || self.groups == 0 {
            return bad("count and groups must be positive");
        }
        if self.pool_groups > self.groups {
            return bad("pool_groups exceeds groups");
        }
        if !(0.0..=1.0).contains(&self.train_fraction) {
            return bad("train_fraction must lie in [0, 1]");
        }
        if !(self.rate > 0.0 && self.duration > 0.0) {
            return bad("rate and duration must be positive");
        }
        if !(0.0..1.0).contains(&self.jitter) || !(self.noise >= 0.0) {
            return bad("jitter must lie in [0, 1), noise must be non-negative");
        }
        Ok(())
    }

    pub fn samples(&self) -> usize {
        (self.duration * self.rate).round() as usize
    }

    /// Trajectories per group, remainder to the leading groups.
    pub fn group_sizes(&self) -> Vec<usize> {
        (0..self.groups)
            .map(|g| self.count / self.groups + usize::from(g < self.count % self.groups))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory.
    pub trajectory: PathBuf,
    pub labels: Option<PathBuf>,
    pub split: Split,
    pub group: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub rate: f64,
    pub entries: BTreeMap<String, ManifestEntry>,
}

/// One generated trajectory held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledTrajectory {
    pub raw: Trajectory,
    pub labels: PhaseSeries,
    pub split: Split,
    pub group: usize,
}

impl LabeledTrajectory {
    pub fn id(&self) -> &str {
        &self.raw.id
    }
}

pub fn trajectory_id(group: usize, index: usize) -> String {
    format!("g{}_t{:03}", group + 1, index)
}

/// Ground-truth labels: whole-trajectory calibration, then the analytic
/// signal phase of the principal coordinate.
pub fn label_trajectory(raw: &Trajectory) -> Result<PhaseSeries> {
    let (calibrated, _) = calibrate(raw)?;
    phase_labels(&calibrated)
}

pub fn load_reference(config: &DatasetConfig) -> Result<Trajectory> {
    match &config.reference {
        Some(p) => io::read_trajectory_csv(p, "reference"),
        None => Ok(reference_trajectory()),
    }
}

/// Generates and labels the synthetic corpus in memory, ordered by id.
pub fn generate_dataset(config: &DatasetConfig, exec: Exec) -> Result<Vec<LabeledTrajectory>> {
    config.validate()?;
    let base = fit_synth_params(&load_reference(config)?, config.noise, config.seed)?;
    let samples = config.samples();
    let kcfg_base = KuramotoConfig {
        dt: 1.0 / config.rate,
        horizon: (samples - 1) as f64 / config.rate,
        ..KuramotoConfig::default()
    };
    let m = kcfg_base.oscillators;

    struct Job {
        id: String,
        group: usize,
        phases: Vec<f64>,
        params: MotionSynthParams,
        seed: u64,
    }
    let mut jobs = Vec::with_capacity(config.count);
    for (g, &size) in config.group_sizes().iter().enumerate() {
        let mut grng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 10_000 + g as u64));
        let fx = 1.0 + config.jitter * grng.random_range(-1.0..=1.0);
        let fy = 1.0 + config.jitter * grng.random_range(-1.0..=1.0);
        let params = base.scaled(fx, fy);
        let runs = size.div_ceil(m);
        let sims = par::try_map_range(exec, runs, |r| {
            let cfg = KuramotoConfig {
                seed: derive_seed(config.seed, 20_000 + (g * 1000 + r) as u64),
                ..kcfg_base.clone()
            };
            run(&cfg, None)
        })?;
        for k in 0..size {
            let sim = &sims[k / m];
            let phases: Vec<f64> = sim.states[..samples].iter().map(|s| s.phases[k % m]).collect();
            jobs.push(Job {
                id: trajectory_id(g, k),
                group: g,
                phases,
                params,
                seed: derive_seed(config.seed, 30_000 + jobs.len() as u64),
            });
        }
    }

    let built = par::try_map(exec, &jobs, |job| -> Result<(Trajectory, PhaseSeries)> {
        let mut rng = ChaCha8Rng::seed_from_u64(job.seed);
        let raw = synthesize_trajectory(job.id.clone(), &job.phases, config.rate, &job.params, &mut rng)?;
        let labels = label_trajectory(&raw)?;
        Ok((raw, labels))
    })?;

    let pool_ids: Vec<String> = jobs
        .iter()
        .filter(|j| j.group < config.pool_groups)
        .map(|j| j.id.clone())
        .collect();
    let split = split_dataset(&pool_ids, config.train_fraction, derive_seed(config.seed, 40_000))?;
    let val: std::collections::BTreeSet<&String> = split.val_ids.iter().collect();

    let mut out: Vec<LabeledTrajectory> = jobs
        .iter()
        .zip(built)
        .map(|(job, (raw, labels))| LabeledTrajectory {
            split: if job.group >= config.pool_groups {
                Split::Test
            } else if val.contains(&job.id) {
                Split::Val
            } else {
                Split::Train
            },
            group: job.group,
            raw,
            labels,
        })
        .collect();
    out.sort_by(|a, b| a.raw.id.cmp(&b.raw.id));
    Ok(out)
}

/// Writes `trajectories/<id>.csv`, `labels/<id>.csv` and `manifest.json`.
pub fn write_dataset(dir: &Path, data: &[LabeledTrajectory], rate: f64) -> Result<DatasetManifest> {
    let mut entries = BTreeMap::new();
    for item in data {
        let traj_rel = PathBuf::from("trajectories").join(format!("{}.csv", item.id()));
        let label_rel = PathBuf::from("labels").join(format!("{}.csv", item.id()));
        io::write_trajectory_csv(&dir.join(&traj_rel), &item.raw)?;
        io::write_phase_csv(&dir.join(&label_rel), &item.raw.times(), &item.labels)?;
        entries.insert(
            item.id().to_string(),
            ManifestEntry {
                trajectory: traj_rel,
                labels: Some(label_rel),
                split: item.split,
                group: item.group,
            },
        );
    }
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        rate,
        entries,
    };
    io::write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let m: DatasetManifest = io::read_json(path).map_err(|e| match e {
        Error::Format { message, .. } => Error::InvalidManifest(format!("{}: {message}", path.display())),
        other => other,
    })?;
    if m.version != MANIFEST_VERSION {
        return Err(Error::InvalidManifest(format!(
            "{}: unsupported version {}",
            path.display(),
            m.version
        )));
    }
    Ok(m)
}

/// Loads every entry (optionally only some splits). Entries without labels
/// are an error.
pub fn load_dataset(manifest_path: &Path, splits: Option<&[Split]>) -> Result<Vec<LabeledTrajectory>> {
    let manifest = read_manifest(manifest_path)?;
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    let wanted: Vec<(&String, &ManifestEntry)> = manifest
        .entries
        .iter()
        .filter(|(_, e)| splits.is_none_or(|s| s.contains(&e.split)))
        .collect();
    let mut out = Vec::with_capacity(wanted.len());
    for (id, e) in wanted {
        let label_path = e
            .labels
            .as_ref()
            .ok_or_else(|| Error::InvalidManifest(format!("entry `{id}` has no labels")))?;
        let raw = io::read_trajectory_csv(&root.join(&e.trajectory), id.clone())?;
        let (_, labels) = io::read_phase_csv(&root.join(label_path))?;
        if labels.len() != raw.len() {
            return Err(Error::InvalidManifest(format!(
                "entry `{id}`: {} labels for {} samples",
                labels.len(),
                raw.len()
            )));
        }
        out.push(LabeledTrajectory {
            raw,
            labels,
            split: e.split,
            group: e.group,
        });
    }
    Ok(out)
}

/// Scaler fitted on the calibrated training trajectories, plus windows for
/// the training and validation splits.
pub fn prepare_training(
    data: &[LabeledTrajectory],
    window: usize,
    exec: Exec,
) -> Result<(MinMaxScaler, Vec<TrainingSample>, Vec<TrainingSample>)> {
    let calibrated = par::try_map(exec, data, |d| calibrate(&d.raw).map(|(c, _)| c))?;
    let scaler = MinMaxScaler::fit(
        data.iter()
            .zip(&calibrated)
            .filter(|(d, _)| d.split == Split::Train)
            .map(|(_, c)| c),
    )?;
    let windows = |split: Split| -> Result<Vec<TrainingSample>> {
        let idx: Vec<usize> = (0..data.len()).filter(|&i| data[i].split == split).collect();
        let per = par::try_map(exec, &idx, |&i| {
            make_windows(&calibrated[i], &data[i].labels, &scaler, window)
        })?;
        Ok(per.into_iter().flatten().collect())
    };
    Ok((scaler, windows(Split::Train)?, windows(Split::Val)?))
}

pub struct TrainedEstimator {
    pub model: LstmModel,
    pub scaler: MinMaxScaler,
    pub history: Vec<EpochStats>,
}

pub fn train_estimator(
    data: &[LabeledTrajectory],
    config: &EstimatorConfig,
    exec: Exec,
    progress: impl FnMut(&EpochStats),
) -> Result<TrainedEstimator> {
    let (scaler, train_set, val_set) = prepare_training(data, config.window, exec)?;
    let (model, history) = train(&train_set, &val_set, config, exec, progress)?;
    Ok(TrainedEstimator {
        model,
        scaler,
        history,
    })
}

/// Per-trajectory phase estimates aligned with the labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryEstimate {
    pub id: String,
    pub times: Vec<f64>,
    pub labels: PhaseSeries,
    pub estimates: Vec<Option<f64>>,
    /// First sample index counted in the error.
    pub first_scored: usize,
}

impl TrajectoryEstimate {
    pub fn error(&self) -> Result<TrajectoryError> {
        let mut sum = 0.0;
        let mut n = 0;
        for i in self.first_scored..self.labels.len() {
            if let Some(est) = self.estimates[i] {
                sum += circular_error(self.labels.values()[i], est)?;
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::TooShort {
                needed: self.first_scored + 1,
                got: self.labels.len(),
            });
        }
        Ok(TrajectoryError {
            id: self.id.clone(),
            mean_error: sum / n as f64,
            samples: n,
        })
    }
}

/// Online-equivalent windowed inference after whole-trajectory calibration,
/// or streaming calibration from the first `buffer` samples.
pub fn estimate_labeled(
    model: &LstmModel,
    scaler: &MinMaxScaler,
    item: &LabeledTrajectory,
    buffer: Option<usize>,
    exec: Exec,
) -> Result<TrajectoryEstimate> {
    let calibrated = match buffer {
        None => calibrate(&item.raw)?.0,
        Some(l) => streaming_calibrate_trajectory(&item.raw, l)?.0,
    };
    let estimates = estimate_trajectory(model, scaler, &calibrated, exec)?;
    let first_scored = model.window.max(buffer.unwrap_or(0)) - 1;
    Ok(TrajectoryEstimate {
        id: item.raw.id.clone(),
        times: item.raw.times(),
        labels: item.labels.clone(),
        estimates,
        first_scored,
    })
}

/// Error report over the given trajectories. Trajectories run in parallel,
/// each one sequentially inside.
pub fn evaluate(
    model: &LstmModel,
    scaler: &MinMaxScaler,
    data: &[&LabeledTrajectory],
    buffer: Option<usize>,
    exec: Exec,
) -> Result<(ErrorReport, Vec<TrajectoryEstimate>)> {
    if data.is_empty() {
        return Err(Error::InvalidInput("nothing to evaluate".into()));
    }
    let estimates = par::try_map(exec, data, |item| {
        estimate_labeled(model, scaler, item, buffer, Exec::Sequential)
    })?;
    let errors = estimates.iter().map(|e| e.error()).collect::<Result<Vec<_>>>()?;
    Ok((ErrorReport::from_errors(errors)?, estimates))
}

/// `t,theta,theta_hat,error`; rows before the first estimate are omitted.
pub fn write_estimate_csv(path: &Path, est: &TrajectoryEstimate) -> Result<()> {
    let mut rows = Vec::new();
    for i in 0..est.labels.len() {
        if let Some(e) = est.estimates[i] {
            let th = est.labels.values()[i];
            rows.push([est.times[i], th, e, circular_error(th, e)?]);
        }
    }
    let header: Vec<String> = ["t", "theta", "theta_hat", "error"].iter().map(|s| s.to_string()).collect();
    io::write_csv(path, &header, rows)
}

/// Everything needed to reproduce a CLI run, plus where its outputs went.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    /// Artifact role to path.
    pub artifacts: BTreeMap<String, PathBuf>,
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        Self {
            command: command.to_string(),
            config,
            seeds: BTreeMap::new(),
            artifacts: BTreeMap::new(),
            timings: BTreeMap::new(),
        }
    }

    pub fn check_artifacts(&self) -> Result<()> {
        for (role, p) in &self.artifacts {
            if !p.exists() {
                return Err(Error::MissingArtifacts(format!("{role}: {}", p.display())));
            }
        }
        Ok(())
    }
}

pub const RUN_MANIFEST: &str = "run_manifest.json";

/// Artifact roles the report stage understands.
pub mod roles {
    pub const ESTIMATES_DIR: &str = "estimates_dir";
    pub const ERROR_REPORT: &str = "error_report";
    pub const CLOSED_LOOP_REPORT: &str = "closed_loop_report";
    pub const CLOSED_LOOP_TRACE: &str = "closed_loop_trace";
    pub const MARKER_POSITIONS: &str = "marker_positions";
}

/// Writes the first trial's traces and a long-format marker position CSV.
/// Trace columns: phases of the true-mode run, true phases and estimates of
/// the estimated-mode run, both `r` traces and both control inputs.
pub fn write_closed_loop_detail(dir: &Path, detail: &TrialDetail) -> Result<(PathBuf, Option<PathBuf>)> {
    let (Some(t_run), Some(e_run)) = (&detail.true_run, &detail.estimated_run) else {
        return Err(Error::MissingArtifacts(
            "closed-loop traces need both observation modes".into(),
        ));
    };
    let m = t_run.states[0].phases.len();
    let steps = t_run.controls.len();
    let mut header = vec!["t".to_string()];
    header.extend((0..m).map(|i| format!("theta_true_mode_{i}")));
    header.extend((0..m).map(|i| format!("theta_{i}")));
    header.extend((0..m).map(|i| format!("theta_hat_{i}")));
    header.extend(["r_true", "r_est", "omega_true", "omega_est"].map(String::from));
    let rows = (0..steps).map(|k| {
        let mut row = Vec::with_capacity(header.len());
        row.push(t_run.states[k].time);
        row.extend_from_slice(&t_run.states[k].phases);
        row.extend_from_slice(&e_run.states[k].phases);
        row.extend_from_slice(&detail.estimates[k]);
        row.push(t_run.metrics.r[k]);
        row.push(e_run.metrics.r[k]);
        row.push(t_run.controls[k]);
        row.push(e_run.controls[k]);
        row
    });
    let trace = dir.join("closed_loop_trace.csv");
    io::write_csv(&trace, &header, rows)?;
    let positions = if detail.positions.iter().any(|p| !p.is_empty()) {
        let path = dir.join("marker_positions.csv");
        let header: Vec<String> = ["t", "oscillator", "x", "y", "z"].iter().map(|s| s.to_string()).collect();
        let rows = detail.positions.iter().enumerate().flat_map(|(i, ps)| {
            ps.iter()
                .enumerate()
                .map(move |(k, p)| [k as f64 * detail.dt, i as f64, p.x, p.y, p.z])
        });
        io::write_csv(&path, &header, rows)?;
        Some(path)
    } else {
        None
    };
    Ok((trace, positions))
}

fn column(rows: &[Vec<f64>], header: &[String], name: &str) -> Result<Vec<f64>> {
    let i = header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::MissingArtifacts(format!("trace column `{name}`")))?;
    Ok(rows.iter().map(|r| r[i]).collect())
}

fn read_wide_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let header: Vec<String> = text
        .lines()
        .next()
        .unwrap_or_default()
        .split(',')
        .map(|s| s.trim().to_string())
        .collect();
    let names: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = io::read_csv(path, &names)?;
    Ok((header, rows))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub runs: Vec<PathBuf>,
    pub files: Vec<PathBuf>,
    pub error_reports: Vec<ErrorReport>,
    pub table: Vec<TableRow>,
}

/// One row of the closed-loop comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub run: PathBuf,
    pub mean_r_true: Option<f64>,
    pub std_r_true: Option<f64>,
    pub mean_r_estimated: Option<f64>,
    pub std_r_estimated: Option<f64>,
    pub mean_r_baseline: f64,
    pub p_value: Option<f64>,
    pub phase_error: Option<f64>,
}

/// Consolidates completed runs into plot-ready files under `out`.
pub fn report(run_paths: &[PathBuf], out: &Path) -> Result<ReportSummary> {
    if run_paths.is_empty() {
        return Err(Error::MissingArtifacts("no runs given".into()));
    }
    io::ensure_dir(out)?;
    let mut summary = ReportSummary {
        runs: run_paths.to_vec(),
        files: Vec::new(),
        error_reports: Vec::new(),
        table: Vec::new(),
    };
    for (ri, path) in run_paths.iter().enumerate() {
        let manifest: RunManifest = io::read_json(path)?;
        manifest.check_artifacts()?;
        let tag = format!("run{ri}");
        let mut used = false;

        if let Some(p) = manifest.artifacts.get(roles::ERROR_REPORT) {
            summary.error_reports.push(io::read_json(p)?);
            used = true;
        }
        if let Some(dir) = manifest.artifacts.get(roles::ESTIMATES_DIR) {
            // phase traces and per-sample error of the first trajectory
            let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
                .map_err(|e| Error::io(dir, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "csv"))
                .collect();
            files.sort();
            if let Some(first) = files.first() {
                let dst = out.join(format!("{tag}_phase_estimate.csv"));
                std::fs::copy(first, &dst).map_err(|e| Error::io(&dst, e))?;
                summary.files.push(dst);
                used = true;
            }
        }
        if let Some(p) = manifest.artifacts.get(roles::CLOSED_LOOP_REPORT) {
            let rep: ClosedLoopReport = io::read_json(p)?;
            summary.table.push(TableRow {
                run: path.clone(),
                mean_r_true: rep.true_phase.as_ref().map(|m| m.mean),
                std_r_true: rep.true_phase.as_ref().map(|m| m.std),
                mean_r_estimated: rep.estimated.as_ref().map(|m| m.mean),
                std_r_estimated: rep.estimated.as_ref().map(|m| m.std),
                mean_r_baseline: rep.baseline.mean,
                p_value: rep.welch.map(|w| w.p),
                phase_error: rep.phase_error_mean,
            });
            used = true;
        }
        if let Some(p) = manifest.artifacts.get(roles::CLOSED_LOOP_TRACE) {
            summary.files.extend(closed_loop_figures(p, out, &tag)?);
            used = true;
        }
        if let Some(p) = manifest.artifacts.get(roles::MARKER_POSITIONS) {
            let dst = out.join(format!("{tag}_trajectory_3d.csv"));
            std::fs::copy(p, &dst).map_err(|e| Error::io(&dst, e))?;
            summary.files.push(dst);
            used = true;
        }
        if !used {
            return Err(Error::MissingArtifacts(format!(
                "{}: no reportable artifacts",
                path.display()
            )));
        }
    }
    let table = out.join("table.json");
    io::write_json(&table, &summary.table)?;
    summary.files.push(table);
    let consolidated = out.join("report.json");
    summary.files.push(consolidated.clone());
    io::write_json(&consolidated, &summary)?;
    Ok(summary)
}

fn closed_loop_figures(trace: &Path, out: &Path, tag: &str) -> Result<Vec<PathBuf>> {
    let (header, rows) = read_wide_csv(trace)?;
    let m = header.iter().filter(|h| h.starts_with("theta_hat_")).count();
    let t = column(&rows, &header, "t")?;
    let mut files = Vec::new();

    let mut err_header = vec!["t".to_string()];
    err_header.extend((0..m).map(|i| format!("error_{i}")));
    let truth: Vec<Vec<f64>> = (0..m)
        .map(|i| column(&rows, &header, &format!("theta_{i}")))
        .collect::<Result<_>>()?;
    let est: Vec<Vec<f64>> = (0..m)
        .map(|i| column(&rows, &header, &format!("theta_hat_{i}")))
        .collect::<Result<_>>()?;
    let err_rows = (0..t.len())
        .map(|k| {
            let mut row = vec![t[k]];
            for i in 0..m {
                row.push(circular_error(truth[i][k], est[i][k])?);
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    let p = out.join(format!("{tag}_oscillator_errors.csv"));
    io::write_csv(&p, &err_header, err_rows)?;
    files.push(p);

    let (rt, re) = (column(&rows, &header, "r_true")?, column(&rows, &header, "r_est")?);
    let p = out.join(format!("{tag}_order_parameter.csv"));
    let h: Vec<String> = ["t", "r_true", "r_est", "r_diff"].iter().map(|s| s.to_string()).collect();
    io::write_csv(&p, &h, (0..t.len()).map(|k| [t[k], rt[k], re[k], rt[k] - re[k]]))?;
    files.push(p);

    let (wt, we) = (column(&rows, &header, "omega_true")?, column(&rows, &header, "omega_est")?);
    let p = out.join(format!("{tag}_control_input.csv"));
    let h: Vec<String> = ["t", "omega_true", "omega_est"].iter().map(|s| s.to_string()).collect();
    io::write_csv(&p, &h, (0..t.len()).map(|k| [t[k], wt[k], we[k]]))?;
    files.push(p);
    Ok(files)
}

/// Merged configuration for every stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Global seed; stage seeds are derived from it.
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub estimator: EstimatorConfig,
    pub kuramoto: KuramotoConfig,
    pub agent: AgentConfig,
    pub eval: EvalConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Calibration buffer for the closed loop, in samples.
    pub buffer: usize,
    pub trials: usize,
    /// Named Kuramoto preset overriding the coupling, if set.
    pub preset: Option<String>,
    pub calibration: ClosedLoopCalibration,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            buffer: 3,
            trials: 5,
            preset: None,
            calibration: ClosedLoopCalibration::default(),
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dataset: DatasetConfig::default(),
            estimator: EstimatorConfig::default(),
            kuramoto: KuramotoConfig::default(),
            agent: AgentConfig::default(),
            eval: EvalConfig::default(),
        }
        .with_seed(0)
    }
}

impl ExperimentConfig {
    /// Sets the global seed and re-derives every stage seed from it.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.dataset.seed = derive_seed(seed, 1);
        self.estimator.seed = derive_seed(seed, 2);
        self.kuramoto.seed = derive_seed(seed, 3);
        self.agent.seed = derive_seed(seed, 4);
        self
    }

    pub fn seeds(&self) -> BTreeMap<String, u64> {
        BTreeMap::from([
            ("global".to_string(), self.seed),
            ("dataset".to_string(), self.dataset.seed),
            ("estimator".to_string(), self.estimator.seed),
            ("kuramoto".to_string(), self.kuramoto.seed),
            ("agent".to_string(), self.agent.seed),
            ("synth".to_string(), derive_seed(self.seed, 5)),
        ])
    }

    /// Marker synthesis for the closed loop: the reference fit, with its own
    /// noise seed.
    pub fn closed_loop_synth(&self) -> Result<MotionSynthParams> {
        fit_synth_params(&load_reference(&self.dataset)?, self.dataset.noise, derive_seed(self.seed, 5))
    }

    /// Kuramoto settings for the closed loop, with the preset applied.
    pub fn closed_loop_kuramoto(&self) -> Result<KuramotoConfig> {
        let mut k = self.kuramoto.clone();
        if let Some(name) = &self.eval.preset {
            k.coupling = crate::kuramoto::Preset::parse(name)?.config().coupling;
        }
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.estimator.validate()?;
        self.kuramoto.validate()?;
        self.agent.validate()?;
        self.closed_loop_kuramoto()?;
        if self.eval.buffer < 2 || self.eval.trials == 0 {
            return Err(Error::InvalidConfig(
                "eval: buffer must be at least 2 and trials positive".into(),
            ));
        }
        Ok(())
    }
}
