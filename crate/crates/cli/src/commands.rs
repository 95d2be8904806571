use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use oscphase::calibration::{calibrate, CalibrationTransform, StreamOutput, StreamingCalibrator};
use oscphase::control::{
    self, closed_loop_eval, train_dqn, EstimatorContext, EstimatorSource, EvalModes, Policy,
};
use oscphase::data::{MinMaxScaler, Trajectory, DEFAULT_RATE};
use oscphase::estimator::{estimate_trajectory, LstmModel, OnlineEstimator, OnlineOutput};
use oscphase::io;
use oscphase::kuramoto::{self, Preset};
use oscphase::nn::weights::WeightsFile;
use oscphase::par::Exec;
use oscphase::pipeline::{
    self, roles, write_closed_loop_detail, ExperimentConfig, RunManifest, Split, RUN_MANIFEST,
};
use oscphase::seed::derive_seed;
use oscphase::synth::synthesize_trajectory;
use oscphase::{Error, Result};

use crate::{config, Cli, Command, ModeArg, SplitArg};

struct Ctx {
    cfg: ExperimentConfig,
    out: PathBuf,
    exec: Exec,
    manifest: RunManifest,
}

impl Ctx {
    fn artifact(&mut self, role: &str, path: &Path) {
        self.manifest.artifacts.insert(role.to_string(), path.to_path_buf());
    }

    fn timed<T>(&mut self, stage: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let v = f(self)?;
        self.manifest
            .timings
            .insert(stage.to_string(), start.elapsed().as_secs_f64());
        Ok(v)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = config::load(cli.config.as_deref(), cli.seed)?;
    let exec = configure_threads(cli.threads)?;
    io::ensure_dir(&cli.out)?;
    let name = command_name(&cli.command);
    let mut snapshot = serde_json::to_value(&cfg).expect("config serializes");
    snapshot["args"] = serde_json::Value::String(format!("{:?}", cli.command));
    let mut manifest = RunManifest::new(name, snapshot);
    manifest.seeds = cfg.seeds();
    let mut ctx = Ctx {
        cfg,
        out: cli.out,
        exec,
        manifest,
    };
    match &cli.command {
        Command::Gen(a) => gen(&mut ctx, a.count),
        Command::Calibrate(a) => calibrate_cmd(&mut ctx, &a.input, a.buffer),
        Command::Label(a) => label(&mut ctx, &a.input),
        Command::Train(a) => train(&mut ctx, &a.dataset),
        Command::Infer(a) => infer(&mut ctx, &a.weights, &a.input, a.online, a.buffer),
        Command::Evaluate(a) => evaluate(&mut ctx, &a.weights, &a.dataset, a.split, a.buffer),
        Command::Synth(a) => synth(&mut ctx, a.phases.as_deref()),
        Command::Sim(a) => sim(&mut ctx, a.preset.as_deref()),
        Command::RlTrain => rl_train(&mut ctx),
        Command::RlEval(a) => rl_eval(&mut ctx, a),
        Command::Report(a) => report(&mut ctx, &a.runs),
    }?;
    ctx.manifest.check_artifacts()?;
    io::write_json(&ctx.path(RUN_MANIFEST), &ctx.manifest)
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Gen(_) => "gen",
        Command::Calibrate(_) => "calibrate",
        Command::Label(_) => "label",
        Command::Train(_) => "train",
        Command::Infer(_) => "infer",
        Command::Evaluate(_) => "evaluate",
        Command::Synth(_) => "synth",
        Command::Sim(_) => "sim",
        Command::RlTrain => "rl-train",
        Command::RlEval(_) => "rl-eval",
        Command::Report(_) => "report",
    }
}

fn configure_threads(threads: Option<usize>) -> Result<Exec> {
    match threads {
        Some(0) => Err(Error::InvalidConfig("--threads must be positive".into())),
        Some(1) => Ok(Exec::Sequential),
        #[cfg(feature = "parallel")]
        Some(n) => {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
            Ok(Exec::Parallel)
        }
        _ => Ok(Exec::default()),
    }
}

fn gen(ctx: &mut Ctx, count: Option<usize>) -> Result<()> {
    if let Some(n) = count {
        ctx.cfg.dataset.count = n;
        ctx.cfg.dataset.validate()?;
        ctx.manifest.config["dataset"]["count"] = n.into();
    }
    let data = ctx.timed("generate", |c| pipeline::generate_dataset(&c.cfg.dataset, c.exec))?;
    let out = ctx.out.clone();
    let rate = ctx.cfg.dataset.rate;
    ctx.timed("write", |_| pipeline::write_dataset(&out, &data, rate))?;
    ctx.artifact("dataset_manifest", &out.join("manifest.json"));
    eprintln!("wrote {} trajectories to {}", data.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct TransformJson {
    mean: [f64; 3],
    /// Row-major.
    rotation: [[f64; 3]; 3],
}

impl From<&CalibrationTransform> for TransformJson {
    fn from(t: &CalibrationTransform) -> Self {
        let r = &t.rotation;
        Self {
            mean: [t.mean.x, t.mean.y, t.mean.z],
            rotation: [0, 1, 2].map(|i| [r[(i, 0)], r[(i, 1)], r[(i, 2)]]),
        }
    }
}

fn calibrate_cmd(ctx: &mut Ctx, input: &Path, buffer: Option<usize>) -> Result<()> {
    let raw = io::read_trajectory_csv(input, "input")?;
    let (cal, t) = match buffer {
        None => calibrate(&raw)?,
        Some(l) => oscphase::calibration::streaming_calibrate_trajectory(&raw, l)?,
    };
    let traj = ctx.path("calibrated.csv");
    io::write_trajectory_csv(&traj, &cal)?;
    let tf = ctx.path("transform.json");
    io::write_json(&tf, &TransformJson::from(&t))?;
    ctx.artifact("calibrated", &traj);
    ctx.artifact("transform", &tf);
    Ok(())
}

fn label(ctx: &mut Ctx, input: &Path) -> Result<()> {
    let raw = io::read_trajectory_csv(input, "input")?;
    let labels = pipeline::label_trajectory(&raw)?;
    let p = ctx.path("labels.csv");
    io::write_phase_csv(&p, &raw.times(), &labels)?;
    ctx.artifact("labels", &p);
    Ok(())
}

fn train(ctx: &mut Ctx, dataset: &Path) -> Result<()> {
    let data = pipeline::load_dataset(dataset, Some(&[Split::Train, Split::Val]))?;
    let ecfg = ctx.cfg.estimator.clone();
    let exec = ctx.exec;
    let trained = ctx.timed("train", |_| {
        pipeline::train_estimator(&data, &ecfg, exec, |s| {
            eprintln!(
                "epoch {:>3}  loss {:.6}  val error {}",
                s.epoch,
                s.train_loss,
                s.val_error.map_or("-".into(), |v| format!("{v:.4} rad"))
            )
        })
    })?;
    let w = ctx.path("estimator.json");
    trained.model.to_weights(&trained.scaler).save(&w)?;
    let h = ctx.path("training_history.json");
    io::write_json(&h, &trained.history)?;
    ctx.artifact("estimator_weights", &w);
    ctx.artifact("training_history", &h);
    Ok(())
}

fn load_estimator(path: &Path) -> Result<(LstmModel, MinMaxScaler)> {
    LstmModel::from_weights(&WeightsFile::load(path)?)
}

fn infer(ctx: &mut Ctx, weights: &Path, input: &Path, online: bool, buffer: Option<usize>) -> Result<()> {
    let (model, scaler) = load_estimator(weights)?;
    let raw = io::read_trajectory_csv(input, "input")?;
    let estimates: Vec<Option<f64>> = if online {
        let l = buffer.unwrap_or(ctx.cfg.eval.buffer);
        stream_estimates(&model, &scaler, &raw, l)?
    } else {
        let cal = match buffer {
            None => calibrate(&raw)?.0,
            Some(l) => oscphase::calibration::streaming_calibrate_trajectory(&raw, l)?.0,
        };
        estimate_trajectory(&model, &scaler, &cal, ctx.exec)?
    };
    let rows: Vec<[f64; 2]> = estimates
        .iter()
        .enumerate()
        .filter_map(|(i, e)| e.map(|v| [raw.time(i), v]))
        .collect();
    let p = ctx.path("phase_estimate.csv");
    io::write_csv(&p, &["t".to_string(), "theta_hat".to_string()], rows)?;
    ctx.artifact("phase_estimate", &p);
    Ok(())
}

/// Sample-by-sample: streaming calibration feeding the online estimator.
fn stream_estimates(model: &LstmModel, scaler: &MinMaxScaler, raw: &Trajectory, buffer: usize) -> Result<Vec<Option<f64>>> {
    let mut cal = StreamingCalibrator::new(buffer)?;
    let mut est = OnlineEstimator::new(model, *scaler, raw.rate);
    let mut out = Vec::with_capacity(raw.len());
    for p in raw.positions() {
        match cal.push(*p)? {
            StreamOutput::Buffering => out.push(None),
            StreamOutput::Ready(pts) => {
                // samples released from the buffer replace their placeholders
                out.truncate(out.len() + 1 - pts.len());
                for q in &pts {
                    out.push(match est.push(q)? {
                        OnlineOutput::Warmup => None,
                        OnlineOutput::Phase(v) => Some(v),
                    });
                }
            }
        }
    }
    Ok(out)
}

fn evaluate(
    ctx: &mut Ctx,
    weights: &Path,
    dataset: &Path,
    split: SplitArg,
    buffer: Option<usize>,
) -> Result<()> {
    let (model, scaler) = load_estimator(weights)?;
    let split = match split {
        SplitArg::Train => Split::Train,
        SplitArg::Val => Split::Val,
        SplitArg::Test => Split::Test,
    };
    let data = pipeline::load_dataset(dataset, Some(&[split]))?;
    if data.is_empty() {
        return Err(Error::InvalidManifest(format!("no {split:?} trajectories in the manifest")));
    }
    let refs: Vec<_> = data.iter().collect();
    let exec = ctx.exec;
    let (report, estimates) =
        ctx.timed("evaluate", |_| pipeline::evaluate(&model, &scaler, &refs, buffer, exec))?;
    let dir = ctx.path("estimates");
    for e in &estimates {
        pipeline::write_estimate_csv(&dir.join(format!("{}.csv", e.id)), e)?;
    }
    let p = ctx.path("error_report.json");
    io::write_json(&p, &report)?;
    ctx.artifact(roles::ESTIMATES_DIR, &dir);
    ctx.artifact(roles::ERROR_REPORT, &p);
    eprintln!("mean circular error {:.4} ± {:.4} rad over {} trajectories", report.mean, report.std, estimates.len());
    Ok(())
}

fn synth(ctx: &mut Ctx, phases: Option<&Path>) -> Result<()> {
    let params = ctx.cfg.closed_loop_synth()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    match phases {
        Some(p) => {
            let (times, series) = io::read_phase_csv(p)?;
            let rate = if times.len() >= 2 {
                1.0 / (times[1] - times[0])
            } else {
                DEFAULT_RATE
            };
            let traj = synthesize_trajectory("synth", series.values(), rate, &params, &mut rng)?;
            let out = ctx.path("synth.csv");
            io::write_trajectory_csv(&out, &traj)?;
            ctx.artifact("trajectory", &out);
        }
        None => {
            let k = ctx.cfg.closed_loop_kuramoto()?;
            let sim = kuramoto::run(&k, None)?;
            for i in 0..k.oscillators {
                let ph: Vec<f64> = sim.states.iter().map(|s| s.phases[i]).collect();
                let mut r = ChaCha8Rng::seed_from_u64(derive_seed(params.seed, i as u64));
                let traj = synthesize_trajectory(format!("osc{i}"), &ph, 1.0 / k.dt, &params, &mut r)?;
                let out = ctx.path(&format!("synth_{i}.csv"));
                io::write_trajectory_csv(&out, &traj)?;
                ctx.artifact(&format!("trajectory_{i}"), &out);
            }
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct SimSummary {
    seed: u64,
    coupling: f64,
    mean_r: f64,
}

fn sim(ctx: &mut Ctx, preset: Option<&str>) -> Result<()> {
    let mut k = ctx.cfg.closed_loop_kuramoto()?;
    if let Some(name) = preset {
        k.coupling = Preset::parse(name)?.config().coupling;
    }
    let run = ctx.timed("simulate", |_| kuramoto::run(&k, None))?;
    let trace = ctx.path("trace.csv");
    io::write_trace_csv(&trace, &run)?;
    let summary = ctx.path("sim.json");
    io::write_json(
        &summary,
        &SimSummary {
            seed: k.seed,
            coupling: k.coupling,
            mean_r: run.metrics.mean_r,
        },
    )?;
    ctx.artifact("trace", &trace);
    ctx.artifact("summary", &summary);
    eprintln!("mean order parameter {:.4}", run.metrics.mean_r);
    Ok(())
}

fn rl_train(ctx: &mut Ctx) -> Result<()> {
    let k = ctx.cfg.closed_loop_kuramoto()?;
    let agent = ctx.cfg.agent.clone();
    let trained = ctx.timed("train", |_| {
        train_dqn(&k, &agent, |s| {
            if s.episode % 10 == 0 {
                eprintln!(
                    "episode {:>4}  mean reward {:.4}  epsilon {:.3}  loss {:.5}",
                    s.episode, s.mean_reward, s.epsilon, s.mean_loss
                );
            }
        })
    })?;
    let w = ctx.path("qnet.json");
    trained.policy.to_weights(k.controlled).save(&w)?;
    let h = ctx.path("rl_history.json");
    io::write_json(&h, &trained.history)?;
    ctx.artifact("qnet_weights", &w);
    ctx.artifact("rl_history", &h);
    Ok(())
}

fn rl_eval(ctx: &mut Ctx, a: &crate::RlEvalArgs) -> Result<()> {
    if let Some(t) = a.trials {
        ctx.cfg.eval.trials = t;
    }
    if let Some(l) = a.buffer {
        ctx.cfg.eval.buffer = l;
    }
    if let Some(p) = &a.preset {
        ctx.cfg.eval.preset = Some(p.clone());
    }
    ctx.cfg.validate()?;
    ctx.manifest.config["eval"] = serde_json::to_value(&ctx.cfg.eval).expect("serializable");
    let k = ctx.cfg.closed_loop_kuramoto()?;
    let policy = Policy::from_weights(&WeightsFile::load(&a.qnet)?)?;
    let modes = EvalModes {
        true_phase: a.mode != ModeArg::Estimated,
        estimated: a.mode != ModeArg::True,
    };
    let estimator = match (&a.weights, modes.estimated) {
        (Some(p), true) => Some(load_estimator(p)?),
        (None, true) => {
            return Err(Error::InvalidInput(
                "the estimated mode needs --weights".into(),
            ))
        }
        _ => None,
    };
    let source = match &estimator {
        Some((model, scaler)) => EstimatorSource::Lstm(EstimatorContext {
            model,
            scaler: *scaler,
            synth: ctx.cfg.closed_loop_synth()?,
            buffer: ctx.cfg.eval.buffer,
            calibration: ctx.cfg.eval.calibration,
        }),
        None => EstimatorSource::Perfect,
    };
    let trials = ctx.cfg.eval.trials;
    let exec = ctx.exec;
    let (report, detail) = ctx.timed("closed_loop", |_| {
        closed_loop_eval(&policy, &k, source, trials, modes, exec)
    })?;
    let p = ctx.path("closed_loop_report.json");
    io::write_json(&p, &report)?;
    ctx.artifact(roles::CLOSED_LOOP_REPORT, &p);
    if modes == EvalModes::BOTH {
        let (trace, positions) = write_closed_loop_detail(&ctx.out, &detail)?;
        ctx.artifact(roles::CLOSED_LOOP_TRACE, &trace);
        if let Some(pp) = positions {
            ctx.artifact(roles::MARKER_POSITIONS, &pp);
        }
    }
    print_closed_loop(&report);
    Ok(())
}

fn print_closed_loop(r: &control::ClosedLoopReport) {
    eprintln!("baseline   <r> = {:.4} ± {:.4}", r.baseline.mean, r.baseline.std);
    if let Some(m) = &r.true_phase {
        eprintln!("true phase <r> = {:.4} ± {:.4}", m.mean, m.std);
    }
    if let Some(m) = &r.estimated {
        eprintln!("estimated  <r> = {:.4} ± {:.4}", m.mean, m.std);
    }
    if let Some(w) = &r.welch {
        eprintln!("Welch t = {:.3}, p = {:.3}", w.t, w.p);
    }
    if let Some(e) = r.phase_error_mean {
        eprintln!("mean phase error {e:.4} rad");
    }
}

fn report(ctx: &mut Ctx, runs: &[PathBuf]) -> Result<()> {
    let runs: Vec<PathBuf> = runs
        .iter()
        .map(|p| if p.is_dir() { p.join(RUN_MANIFEST) } else { p.clone() })
        .collect();
    let summary = pipeline::report(&runs, &ctx.out)?;
    for f in &summary.files {
        let name = f.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        ctx.artifact(&name, f);
    }
    eprintln!("wrote {} report files to {}", summary.files.len(), ctx.out.display());
    Ok(())
}
