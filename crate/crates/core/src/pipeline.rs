//! End-to-end runs: simulate datasets, validate models, and smooth.
//!
//! Errors carry the stage that failed.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::blocktridiag::AffineProjector;
use crate::config::{CustomMatrices, ModelKind, PenaltySpec, RunConfig};
use crate::drs::{self, HistoryEntry, OptimalityReport, RateEstimate, Status};
use crate::error::{Error, Result};
use crate::io;
use crate::navigation::{self, PositionFix};
use crate::plq::Penalty;
use crate::sim;
use crate::statespace::{self, SmoothingProblem, StepModel, SurjectivityReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Simulate,
    Ingest,
    Build,
    Validate,
    Factor,
    Initialize,
    Solve,
    Output,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Config => "config",
            Stage::Simulate => "simulate",
            Stage::Ingest => "ingest",
            Stage::Build => "build",
            Stage::Validate => "validate",
            Stage::Factor => "factor",
            Stage::Initialize => "initialize",
            Stage::Solve => "solve",
            Stage::Output => "output",
        };
        f.write_str(s)
    }
}

#[derive(Debug)]
pub struct PipelineError {
    pub stage: Stage,
    pub source: Error,
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} stage failed: {}", self.stage, self.source)
    }
}

impl std::error::Error for PipelineError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

impl PipelineError {
    /// 1 for an invalid or unsolvable model, 2 for bad input or usage.
    pub fn exit_code(&self) -> i32 {
        match self.source {
            Error::Argument(_) | Error::Data(_) | Error::Io { .. } | Error::Csv(_) | Error::Json(_) => 2,
            _ => 1,
        }
    }
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, PipelineError>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, PipelineError> {
        self.map_err(|source| PipelineError { stage, source })
    }
}

pub type PipelineResult<T> = std::result::Result<T, PipelineError>;

/// A model ready for validation and smoothing, in physical units.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub model: ModelKind,
    pub problem: SmoothingProblem,
    pub times: Vec<f64>,
    /// Solver units per state coordinate; all ones unless rescaled.
    pub units: Vec<f64>,
    pub state_names: Vec<String>,
    /// `(step, row)` pairs removed because they carried no information.
    pub dropped_rows: Vec<(usize, usize)>,
    /// Known states per step; may cover only the leading coordinates.
    pub truth: Option<Vec<DVector<f64>>>,
    pub fixes: Vec<PositionFix>,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn penalty_or(spec: &Option<PenaltySpec>, default: Penalty) -> Result<Penalty> {
    spec.as_ref().map_or(Ok(default), PenaltySpec::to_penalty)
}

/// Reads the configured inputs, or simulates them from the seed when no input
/// files are named, then builds the smoothing problem.
pub fn prepare(cfg: &RunConfig, base_dir: &Path) -> PipelineResult<Prepared> {
    cfg.validate().at(Stage::Config)?;
    let mut prep = match cfg.model {
        ModelKind::DcMotor => prepare_dc_motor(cfg, base_dir)?,
        ModelKind::KinematicNav => prepare_nav(cfg, base_dir)?,
        ModelKind::CustomCsv => prepare_custom(cfg, base_dir)?,
    };
    prep.dropped_rows = prep.problem.drop_zero_measurement_rows();
    Ok(prep)
}

fn prepare_dc_motor(cfg: &RunConfig, base: &Path) -> PipelineResult<Prepared> {
    let data = match &cfg.io.dc_motor_csv {
        Some(p) => io::read_dc_motor_csv(&resolve(base, p)).at(Stage::Ingest)?,
        None => sim::simulate_dc_motor(&cfg.dc_motor, cfg.seed).at(Stage::Simulate)?,
    };
    if data.t.is_empty() {
        return Err(Error::Data("dc motor data has no rows".into())).at(Stage::Ingest);
    }
    let p = &cfg.dc_motor;
    let (x0, steps) = sim::dc_motor_steps(p.x_init, &data.input, &data.y, p.process_sd, p.meas_sd).at(Stage::Build)?;
    let pens = &cfg.penalties;
    let process = penalty_or(&pens.process, Penalty::quadratic(0.5).expect("valid")).at(Stage::Build)?;
    let meas = penalty_or(&pens.measurement, Penalty::huber(1.345, 1.0).expect("valid")).at(Stage::Build)?;
    let state = penalty_or(&pens.state, Penalty::zero()).at(Stage::Build)?;
    let problem = SmoothingProblem::with_uniform_penalties(x0, steps, &process, &meas, &state).at(Stage::Build)?;
    let truth = (data.truth.len() == data.t.len()).then(|| data.truth.iter().map(|x| DVector::from_column_slice(x)).collect());
    Ok(Prepared {
        model: cfg.model,
        units: vec![1.0; 2],
        state_names: vec!["velocity".into(), "angle".into()],
        problem,
        times: data.t,
        dropped_rows: vec![],
        truth,
        fixes: vec![],
    })
}

fn prepare_nav(cfg: &RunConfig, base: &Path) -> PipelineResult<Prepared> {
    let (imu, fixes, truth) = match (&cfg.io.imu_csv, &cfg.io.fixes_csv) {
        (Some(a), Some(b)) => {
            let imu = io::read_imu_csv(&resolve(base, a)).at(Stage::Ingest)?;
            let fixes = io::read_fixes_csv(&resolve(base, b)).at(Stage::Ingest)?;
            let truth = match &cfg.io.truth_csv {
                Some(t) => Some(io::read_nav_truth_csv(&resolve(base, t)).at(Stage::Ingest)?),
                None => None,
            };
            (imu, fixes, truth)
        }
        (None, None) => {
            let d = sim::simulate_mooring(&cfg.mooring, cfg.seed).at(Stage::Simulate)?;
            (d.imu, d.fixes, Some(d.truth))
        }
        _ => {
            return Err(Error::Argument("imu_csv and fixes_csv must be given together".into())).at(Stage::Config);
        }
    };
    let nav_cfg = cfg.nav.to_nav_config(&cfg.penalties).at(Stage::Config)?;
    let mut nav = navigation::build_problem(&imu, &fixes, &nav_cfg).at(Stage::Build)?;
    if !nav_cfg.bias_axes.is_empty() {
        nav = navigation::augment_bias(nav, &nav_cfg.bias_axes).at(Stage::Build)?;
    }
    let mut names: Vec<String> = ["x", "y", "z", "vx", "vy", "vz", "ax", "ay", "az"].map(String::from).to_vec();
    names.extend(nav.bias_axes.iter().map(|a| format!("bias_{}", ["x", "y", "z"][a.index()])));
    let truth = match truth {
        Some(t) if t.len() == nav.times.len() => Some(
            t.iter()
                .map(|s| {
                    DVector::from_iterator(9, s.position.iter().chain(&s.velocity).chain(&s.acceleration).copied())
                })
                .collect(),
        ),
        Some(t) => {
            return Err(Error::Data(format!("truth has {} rows but the IMU has {}", t.len(), nav.times.len())))
                .at(Stage::Ingest)
        }
        None => None,
    };
    Ok(Prepared {
        model: cfg.model,
        units: nav.units(),
        state_names: names,
        problem: nav.problem,
        times: nav.times,
        dropped_rows: vec![],
        truth,
        fixes,
    })
}

fn simulate_custom(m: &CustomMatrices, steps: usize, seed: u64) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = |len: usize| DVector::from_fn(len, |_, _| StandardNormal.sample(&mut rng));
    let mut truth = Vec::with_capacity(steps);
    let mut ys = Vec::with_capacity(steps);
    let mut x = m.x0.clone();
    for k in 0..steps {
        let prior = if k == 0 { m.x0.clone() } else { &m.transition * &x };
        x = prior + &m.process_offset + &m.qroot * normal(m.qroot.ncols());
        ys.push(&m.h * &x + &m.rroot * normal(m.rroot.ncols()));
        truth.push(x.clone());
    }
    (truth, ys)
}

fn prepare_custom(cfg: &RunConfig, base: &Path) -> PipelineResult<Prepared> {
    let c = cfg.custom.as_ref().expect("validated");
    let m = c.matrices().at(Stage::Config)?;
    let n = m.x0.len();
    let (times, ys, truth) = match &cfg.io.measurements_csv {
        Some(p) => {
            let (t, y) = io::read_measurements_csv(&resolve(base, p), m.h.nrows()).at(Stage::Ingest)?;
            let y: Vec<DVector<f64>> = y.into_iter().map(DVector::from_vec).collect();
            let truth = match &cfg.io.truth_csv {
                Some(tp) => Some(read_state_truth(&resolve(base, tp), n, t.len()).at(Stage::Ingest)?),
                None => None,
            };
            (t, y, truth)
        }
        None => {
            let (truth, y) = simulate_custom(&m, c.steps, cfg.seed);
            ((1..=c.steps).map(|k| k as f64).collect(), y, Some(truth))
        }
    };
    if ys.is_empty() {
        return Err(Error::Data("measurement file has no rows".into())).at(Stage::Ingest);
    }
    let steps: Vec<StepModel> = ys
        .into_iter()
        .enumerate()
        .map(|(k, y)| {
            StepModel::new((k > 0).then(|| m.transition.clone()), m.h.clone(), m.qroot.clone(), m.rroot.clone(), y)
                .with_offset(m.process_offset.clone())
        })
        .collect();
    let pens = &cfg.penalties;
    let q = Penalty::quadratic(0.5).expect("valid");
    let process = penalty_or(&pens.process, q.clone()).at(Stage::Build)?;
    let meas = penalty_or(&pens.measurement, q).at(Stage::Build)?;
    let state = penalty_or(&pens.state, Penalty::zero()).at(Stage::Build)?;
    let problem = SmoothingProblem::with_uniform_penalties(m.x0.clone(), steps, &process, &meas, &state).at(Stage::Build)?;
    Ok(Prepared {
        model: cfg.model,
        units: vec![1.0; n],
        state_names: state_columns(n),
        problem,
        times,
        dropped_rows: vec![],
        truth,
        fixes: vec![],
    })
}

fn state_columns(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("x{i}")).collect()
}

fn read_state_truth(path: &Path, n: usize, rows: usize) -> Result<Vec<DVector<f64>>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let table = io::read_table(file)?;
    let mut expected = vec!["t".to_string()];
    expected.extend(state_columns(n));
    if table.header != expected {
        return Err(Error::Data(format!("truth CSV header must be {:?}", expected.join(","))));
    }
    if table.rows.len() != rows {
        return Err(Error::Data(format!("truth has {} rows, measurements have {rows}", table.rows.len())));
    }
    Ok(table.rows.iter().map(|r| DVector::from_column_slice(&r[1..])).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub model: ModelKind,
    pub steps: usize,
    pub state_dim: usize,
    pub rows: usize,
    pub cols: usize,
    pub dropped_rows: Vec<(usize, usize)>,
    pub surjectivity: SurjectivityReport,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.surjectivity.surjective
    }
}

pub fn validate(cfg: &RunConfig, base_dir: &Path) -> PipelineResult<ValidationReport> {
    let prep = prepare(cfg, base_dir)?;
    Ok(validation_report(&prep))
}

fn validation_report(prep: &Prepared) -> ValidationReport {
    let layout = prep.problem.layout();
    ValidationReport {
        model: prep.model,
        steps: prep.problem.len(),
        state_dim: prep.problem.state_dim(),
        rows: layout.total_rows(),
        cols: layout.total_cols(),
        dropped_rows: prep.dropped_rows.clone(),
        surjectivity: statespace::check_surjectivity(&prep.problem),
    }
}

/// Writes the synthetic dataset for the configured model into `out_dir`.
/// Existing files are only replaced with `force`.
pub fn simulate(cfg: &RunConfig, out_dir: &Path, force: bool) -> PipelineResult<Vec<PathBuf>> {
    cfg.validate().at(Stage::Config)?;
    let names: &[&str] = match cfg.model {
        ModelKind::DcMotor => &["dc_motor.csv"],
        ModelKind::KinematicNav => &["imu.csv", "fixes.csv", "truth.csv"],
        ModelKind::CustomCsv => &["measurements.csv", "truth.csv"],
    };
    let paths: Vec<PathBuf> = names.iter().map(|n| out_dir.join(n)).collect();
    if !force {
        if let Some(p) = paths.iter().find(|p| p.exists()) {
            return Err(Error::Argument(format!("{} exists; pass --force to overwrite", p.display()))).at(Stage::Output);
        }
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e)).at(Stage::Output)?;
    match cfg.model {
        ModelKind::DcMotor => {
            let d = sim::simulate_dc_motor(&cfg.dc_motor, cfg.seed).at(Stage::Simulate)?;
            io::write_dc_motor_csv(&paths[0], &d).at(Stage::Output)?;
        }
        ModelKind::KinematicNav => {
            let d = sim::simulate_mooring(&cfg.mooring, cfg.seed).at(Stage::Simulate)?;
            io::write_imu_csv(&paths[0], &d.imu).at(Stage::Output)?;
            io::write_fixes_csv(&paths[1], &d.fixes).at(Stage::Output)?;
            io::write_nav_truth_csv(&paths[2], &d.truth).at(Stage::Output)?;
        }
        ModelKind::CustomCsv => {
            let c = cfg.custom.as_ref().expect("validated");
            let m = c.matrices().at(Stage::Config)?;
            let (truth, ys) = simulate_custom(&m, c.steps, cfg.seed);
            let mut yh = vec!["t".to_string()];
            yh.extend((1..=m.h.nrows()).map(|i| format!("y{i}")));
            let mut xh = vec!["t".to_string()];
            xh.extend(state_columns(m.x0.len()));
            let with_t = |k: usize, v: &DVector<f64>| {
                let mut r = vec![(k + 1) as f64];
                r.extend(v.iter());
                r
            };
            let yh: Vec<&str> = yh.iter().map(String::as_str).collect();
            let xh: Vec<&str> = xh.iter().map(String::as_str).collect();
            io::write_table(&paths[0], &yh, ys.iter().enumerate().map(|(k, y)| with_t(k, y))).at(Stage::Output)?;
            io::write_table(&paths[1], &xh, truth.iter().enumerate().map(|(k, x)| with_t(k, x))).at(Stage::Output)?;
        }
    }
    Ok(paths)
}

/// Summary written to `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub model: ModelKind,
    pub seed: u64,
    pub status: Status,
    pub iterations: usize,
    pub objective: f64,
    pub certificate: OptimalityReport,
    /// Contraction factor fitted to the step sizes; absent for short runs.
    pub rate: Option<RateEstimate>,
    pub steps: usize,
    pub state_dim: usize,
    pub surjective: bool,
    pub dropped_rows: Vec<(usize, usize)>,
    /// Root-mean-square error per state coordinate with known truth.
    pub truth_rmse: Option<Vec<(String, f64)>>,
    /// Final value of each bias state.
    pub bias: Vec<(String, f64)>,
}

/// Everything a smoothing run produces, in physical units.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub prepared: Prepared,
    pub z: Vec<f64>,
    pub history: Vec<HistoryEntry>,
}

impl RunOutput {
    pub fn states(&self) -> Vec<DVector<f64>> {
        self.prepared.problem.layout().states(&self.z)
    }
}

/// Runs the solver without writing anything. With `force`, a failed
/// surjectivity check does not stop the run.
pub fn run(cfg: &RunConfig, base_dir: &Path, force: bool) -> PipelineResult<RunOutput> {
    let prep = prepare(cfg, base_dir)?;
    let report = statespace::check_surjectivity(&prep.problem);
    if !report.surjective && !force {
        let bad: Vec<String> = report.failing_steps().take(5).map(|s| s.step.to_string()).collect();
        return Err(Error::Model(format!(
            "measurement block is rank deficient at step(s) {}{}",
            bad.join(", "),
            if report.failing_steps().count() > 5 { ", …" } else { "" }
        )))
        .at(Stage::Validate);
    }

    let rescaled = prep.units.iter().any(|u| *u != 1.0);
    let scaled = if rescaled {
        statespace::rescale_states(&prep.problem, &prep.units).at(Stage::Build)?
    } else {
        prep.problem.clone()
    };
    let asm = statespace::assemble(&scaled).at(Stage::Build)?;
    let proj = AffineProjector::from_assembled(&asm).at(Stage::Factor)?;

    let (z0, zeta0) = if prep.model == ModelKind::KinematicNav {
        let z = navigation::initialize_by_propagation(&scaled, &prep.fixes, &proj, &prep.units).at(Stage::Initialize)?;
        let n = z.len();
        (z, vec![0.0; n])
    } else {
        drs::default_start(&proj)
    };
    let sol = drs::solve(&proj, &asm.penalty, &cfg.solver, &z0, &zeta0).at(Stage::Solve)?;
    let objective = asm.penalty.eval(&sol.z).at(Stage::Solve)?;
    let steps: Vec<f64> = sol.history.iter().map(|h| h.step).collect();
    let rate = drs::estimate_rate(&steps).ok();

    let mut z = sol.z;
    if rescaled {
        statespace::restore_state_units(asm.layout(), &prep.units, &mut z);
    }
    let layout = prep.problem.layout();
    let states = layout.states(&z);
    let truth_rmse = prep.truth.as_ref().map(|truth| {
        let n = truth.first().map_or(0, |t| t.len());
        (0..n)
            .map(|i| {
                let mse = states.iter().zip(truth).map(|(x, t)| (x[i] - t[i]).powi(2)).sum::<f64>() / states.len() as f64;
                (prep.state_names[i].clone(), mse.sqrt())
            })
            .collect()
    });
    let last = states.last().expect("nonempty");
    let bias = prep
        .state_names
        .iter()
        .enumerate()
        .filter(|(_, name)| name.starts_with("bias_"))
        .map(|(i, name)| (name.clone(), last[i]))
        .collect();
    let report = RunReport {
        model: prep.model,
        seed: cfg.seed,
        status: sol.status,
        iterations: sol.iterations,
        objective,
        certificate: sol.certificate,
        rate,
        steps: prep.problem.len(),
        state_dim: prep.problem.state_dim(),
        surjective: report.surjective,
        dropped_rows: prep.dropped_rows.clone(),
        truth_rmse,
        bias,
    };
    Ok(RunOutput {
        report,
        prepared: prep,
        z,
        history: sol.history,
    })
}

/// Smooths and writes `states.csv`, `residuals.csv`, `history.csv` and
/// `run.json` into `out_dir`.
pub fn smooth(cfg: &RunConfig, base_dir: &Path, out_dir: &Path, force: bool) -> PipelineResult<RunOutput> {
    let out = run(cfg, base_dir, force)?;
    write_outputs(&out, out_dir).at(Stage::Output)?;
    Ok(out)
}

fn write_outputs(out: &RunOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let prep = &out.prepared;
    let layout = prep.problem.layout();

    let mut header = vec!["step", "t"];
    header.extend(prep.state_names.iter().map(String::as_str));
    let rows = out.states().into_iter().enumerate().map(|(k, x)| {
        let mut r = vec![(k + 1) as f64, prep.times[k]];
        r.extend(x.iter());
        r
    });
    io::write_table(&dir.join("states.csv"), &header, rows)?;

    let path = dir.join("residuals.csv");
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    w.write_record(["step", "t", "block", "index", "value"])?;
    for k in 0..layout.steps() {
        let (step, t) = ((k + 1).to_string(), prep.times[k].to_string());
        for (block, off, len) in [
            ("process", layout.process_offset(k), layout.process_len(k)),
            ("measurement", layout.meas_offset(k), layout.meas_len(k)),
        ] {
            for (i, v) in out.z[off..off + len].iter().enumerate() {
                w.write_record([step.as_str(), t.as_str(), block, &(i + 1).to_string(), &v.to_string()])?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    io::write_table(
        &dir.join("history.csv"),
        &["iter", "objective", "feasibility", "step"],
        out.history
            .iter()
            .map(|h| vec![h.iter as f64, h.objective, h.feasibility, h.step]),
    )?;

    let path = dir.join("run.json");
    let mut text = serde_json::to_string_pretty(&out.report)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(())
}
