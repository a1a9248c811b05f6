//! Command layer: solves, twin experiments, assimilation, closure training,
//! gradient checks and dataset generation, with all file output.

pub mod config;
pub mod files;
mod train;

use std::cell::RefCell;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

pub use config::{ExperimentConfig, MeshSpec, ModelSpecKind, ObjectiveKind, ObservedSet, TruthShape, TwinSpec};
pub use files::{list_samples, read_observations, read_state, write_sample, Sample, SampleMeta};
pub use train::{cmd_train, rank_correlation, MemberReport, TrainReport};

use crate::corrections::{CorrectionModel, ForceMode, ModelKind};
use crate::error::{Error, Result};
use crate::optimize::{
    fd_gradient_check, full_state_loss, implicit_loss, run_optimizer, write_loss_csv, FdReport, ObservationOp,
    OptimizeResult, PartialObjective, Reparam,
};
use crate::plants::{eddy_viscosity, Plant, PlantKind, StateVector};
use crate::solver::{newton_solve, state_inner, write_history_csv, SolveResult};
use crate::util::seeded;

/// Process exit code for a failed command: 2 when a solve did not converge,
/// 3 when an input or check was rejected, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NotConverged { .. } | Error::PersistentInvalid { .. } | Error::DatasetShort { .. } => 2,
        Error::Config(_)
        | Error::Validation(_)
        | Error::Mesh(_)
        | Error::Parse(_)
        | Error::LengthMismatch { .. }
        | Error::NonPositiveWeight { .. }
        | Error::ReceptiveField { .. }
        | Error::NegativeEddyViscosity { .. } => 3,
        _ => 1,
    }
}

pub(crate) fn csv_file(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    Ok(std::io::BufWriter::new(std::fs::File::create(path)?))
}

fn prepare(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    cfg.validate()?;
    std::fs::create_dir_all(out)?;
    Ok(())
}

/// Solves and writes the history, even when the solve fails to converge.
fn solve_logged(plant: &Plant, model: &CorrectionModel, cfg: &ExperimentConfig, out: &Path) -> Result<SolveResult> {
    let res = newton_solve(plant, model, &plant.uniform_state(), &cfg.newton);
    let history = match &res {
        Ok(r) => Some(&r.history),
        Err(Error::NotConverged { history, .. }) => Some(history),
        Err(_) => None,
    };
    if let Some(h) = history {
        let mut f = csv_file(&out.join("history.csv"))?;
        write_history_csv(h, &mut f)?;
        f.flush()?;
    }
    res
}

fn write_extras(plant: &Plant, w: &StateVector, out: &Path) -> Result<()> {
    let mut f = csv_file(&out.join("mesh.dat"))?;
    plant.mesh.write_to(&mut f)?;
    f.flush()?;
    files::write_state(&out.join("state.dat"), plant, w)?;
    if plant.kind == PlantKind::NsSa {
        files::write_scalar_field(&out.join("mu_t.dat"), plant, "mu_t", &eddy_viscosity(plant, w)?)?;
    }
    Ok(())
}

/// `solve`: converged state (`state.dat`, plus `mu_t.dat` with the
/// turbulence model), `mesh.dat` and `history.csv`.
pub fn cmd_solve(cfg: &ExperimentConfig, out: &Path) -> Result<SolveResult> {
    prepare(cfg, out)?;
    let plant = cfg.build_plant()?;
    let model = cfg.build_model(&plant)?;
    let res = solve_logged(&plant, &model, cfg, out)?;
    write_extras(&plant, &res.state, out)?;
    let mut t = toml::Table::new();
    t.insert("iterations".into(), (res.iterations as i64).into());
    t.insert("final_residual".into(), res.final_residual().into());
    files::write_manifest(out, "solve", cfg, t)?;
    Ok(res)
}

/// Truth field of a twin experiment at the cell centres.
pub fn twin_truth(plant: &Plant, mode: ForceMode, twin: &TwinSpec) -> Result<Vec<f64>> {
    let mut theta = Vec::with_capacity(plant.layout.n_interior());
    for i in 0..plant.layout.ni {
        for j in 0..plant.layout.nj {
            theta.push(twin.truth.eval(plant.mesh.cell_center(i, j)));
        }
    }
    if mode == ForceMode::MuT {
        if let Some(k) = theta.iter().position(|&a| !(a >= 0.0)) {
            return Err(Error::Config(format!("eddy-viscosity truth is negative at cell {k}")));
        }
    }
    Ok(theta)
}

pub struct TwinReport {
    pub truth: Vec<f64>,
    pub solve: SolveResult,
    pub observations: PartialObjective,
}

/// `twin`: solves with a known correction and writes `truth.dat`,
/// `state.dat`, `mesh.dat`, `history.csv` and `observations.csv`.
pub fn cmd_twin(cfg: &ExperimentConfig, out: &Path) -> Result<TwinReport> {
    prepare(cfg, out)?;
    let plant = cfg.build_plant()?;
    let mode = cfg.mode();
    let truth = twin_truth(&plant, mode, &cfg.twin)?;
    let model = CorrectionModel::field(&plant, mode, truth.clone())?;
    let solve = solve_logged(&plant, &model, cfg, out)?;
    files::write_scalar_field(&out.join("truth.dat"), &plant, "alpha", &truth)?;
    write_extras(&plant, &solve.state, out)?;

    let h = match cfg.objective.observe {
        ObservedSet::Velocities => ObservationOp::velocities(&plant)?,
        ObservedSet::Full => ObservationOp::full(&plant)?,
    };
    let mut y = h.apply(&plant, &solve.state.data);
    if cfg.twin.noise > 0.0 {
        let mut rng = seeded(cfg.seed);
        for v in y.iter_mut() {
            let e: f64 = rng.sample(StandardNormal);
            *v *= 1.0 + cfg.twin.noise * e;
        }
    }
    let observations = PartialObjective::volume_weighted(&plant, h, y)?;
    files::write_observations(&out.join("observations.csv"), &observations)?;

    let mut t = toml::Table::new();
    t.insert("iterations".into(), (solve.iterations as i64).into());
    t.insert("final_residual".into(), solve.final_residual().into());
    t.insert("observations".into(), (observations.y.len() as i64).into());
    files::write_manifest(out, "twin", cfg, t)?;
    Ok(TwinReport {
        truth,
        solve,
        observations,
    })
}

/// Typical magnitude of the correction field, used to scale the
/// regularization weight.
fn alpha_scale(plant: &Plant, mode: ForceMode) -> f64 {
    match mode {
        ForceMode::MuT => plant.config.mu(),
        _ => 1.0,
    }
}

/// A loss in the raw parameters, its value at the start and the
/// regularization weight actually applied.
struct Problem<'a> {
    plant: &'a Plant,
    model: CorrectionModel,
    target: Target,
    gamma: f64,
    /// Last converged state, the starting point of the next implicit solve.
    /// `None` starts every solve from the uniform state, which keeps the
    /// solver error a smooth function of `theta` for difference quotients.
    warm: Option<RefCell<StateVector>>,
    cfg: &'a ExperimentConfig,
}

enum Target {
    Full(StateVector),
    Partial(PartialObjective),
}

impl<'a> Problem<'a> {
    fn new(cfg: &'a ExperimentConfig, plant: &'a Plant, warm_start: bool) -> Result<Self> {
        let model = cfg.build_model(plant)?;
        if model.is_zero() {
            return Err(Error::Config("assimilation needs a field or network correction".into()));
        }
        let target = match cfg.objective.kind {
            ObjectiveKind::FullState => {
                let p = cfg
                    .objective
                    .measured
                    .as_ref()
                    .ok_or_else(|| Error::Config("full-state objective needs objective.measured".into()))?;
                Target::Full(files::read_state(p, plant)?)
            }
            ObjectiveKind::Partial => {
                let p = cfg
                    .objective
                    .observations
                    .as_ref()
                    .ok_or_else(|| Error::Config("partial objective needs objective.observations".into()))?;
                Target::Partial(files::read_observations(p, plant)?)
            }
        };
        let mut prob = Problem {
            plant,
            model,
            target,
            gamma: 0.0,
            warm: warm_start.then(|| RefCell::new(plant.uniform_state())),
            cfg,
        };
        if cfg.objective.gamma > 0.0 {
            let theta0 = prob.model.theta.clone();
            let (j0, _) = prob.eval(&theta0)?;
            let area: f64 = plant.cell_volumes().iter().sum();
            let s = alpha_scale(plant, prob.model.mode);
            prob.gamma = cfg.objective.gamma * j0 / (area * s * s);
        }
        Ok(prob)
    }

    /// Loss and raw gradient at `theta`.
    fn eval(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.eval_with(theta, self.gamma)
    }

    fn eval_with(&self, theta: &[f64], gamma: f64) -> Result<(f64, Vec<f64>)> {
        let model = self.model.with_theta(theta.to_vec())?;
        match &self.target {
            Target::Full(w) => full_state_loss(self.plant, &model, w, &state_inner(self.plant), gamma),
            Target::Partial(obj) => {
                let w0 = match &self.warm {
                    Some(w) => w.borrow().clone(),
                    None => self.plant.uniform_state(),
                };
                let e = implicit_loss(self.plant, &model, obj, &w0, &self.cfg.newton, gamma)?;
                if let Some(w) = &self.warm {
                    *w.borrow_mut() = e.context.state;
                }
                Ok((e.loss, e.grad))
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct AssimilateReport {
    pub theta: Vec<f64>,
    pub result: OptimizeResult,
    /// Loss without the regularization term, at the start and the end.
    pub initial_misfit: f64,
    pub final_misfit: f64,
    pub gamma: f64,
    /// `||theta - truth||_M / ||truth||_M`, when a truth file is configured.
    pub relative_error: Option<f64>,
    /// Share of cells whose error is within 10% of `max |truth|`.
    pub within_tenth: Option<f64>,
}

/// `assimilate`: optimizes the correction against the configured objective
/// and writes `theta.dat` (or `checkpoint.txt`), `loss.csv` and the
/// manifest.
pub fn cmd_assimilate(cfg: &ExperimentConfig, out: &Path) -> Result<AssimilateReport> {
    prepare(cfg, out)?;
    let plant = cfg.build_plant()?;
    let prob = Problem::new(cfg, &plant, true)?;
    let reparam = Reparam::new(&prob.model.param_inner);
    let opt = &cfg.optimizer;
    if let Some(lb) = opt.lower_bound {
        if lb != 0.0 && reparam.factor.n.iter().any(|&n| n != 1.0) {
            return Err(Error::Config("a nonzero lower bound needs an identity parameter metric".into()));
        }
    }
    let theta0 = prob.model.theta.clone();
    let initial_misfit = prob.eval_with(&theta0, 0.0)?.0;
    let result = run_optimizer(
        reparam.wrap(|th: &[f64]| prob.eval(th)),
        &reparam.to_tilde(&theta0),
        opt,
    )?;
    let theta = reparam.from_tilde(&result.theta);
    let final_misfit = prob.eval_with(&theta, 0.0)?.0;

    let mut f = csv_file(&out.join("loss.csv"))?;
    write_loss_csv(&result.history, &mut f)?;
    f.flush()?;
    match &prob.model.kind {
        ModelKind::Cnn(net) => {
            let mut f = csv_file(&out.join("checkpoint.txt"))?;
            net.write_checkpoint(&theta, &mut f)?;
            f.flush()?;
        }
        _ => files::write_scalar_field(&out.join("theta.dat"), &plant, "alpha", &theta)?,
    }

    let (mut relative_error, mut within_tenth) = (None, None);
    if let Some(p) = &cfg.objective.truth {
        let truth = config::read_alpha(p, &plant)?;
        let diff: Vec<f64> = theta.iter().zip(&truth).map(|(a, b)| a - b).collect();
        let ip = &prob.model.param_inner;
        let tn = ip.norm(&truth)?;
        relative_error = Some(ip.norm(&diff)? / if tn > 0.0 { tn } else { 1.0 });
        let peak = truth.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        let ok = diff.iter().filter(|d| d.abs() <= 0.1 * peak).count();
        within_tenth = Some(ok as f64 / diff.len() as f64);
    }

    let mut t = toml::Table::new();
    t.insert("iterations".into(), (result.history.len() as i64 - 1).into());
    t.insert("stop".into(), format!("{:?}", result.stop).into());
    t.insert("initial_loss".into(), result.history[0].loss.into());
    t.insert("final_loss".into(), result.loss.into());
    t.insert("initial_misfit".into(), initial_misfit.into());
    t.insert("final_misfit".into(), final_misfit.into());
    t.insert("gamma".into(), prob.gamma.into());
    if let Some(e) = relative_error {
        t.insert("relative_error".into(), e.into());
    }
    if let Some(w) = within_tenth {
        t.insert("within_tenth".into(), w.into());
    }
    files::write_manifest(out, "assimilate", cfg, t)?;
    Ok(AssimilateReport {
        theta,
        result,
        initial_misfit,
        final_misfit,
        gamma: prob.gamma,
        relative_error,
        within_tenth,
    })
}

/// `checkgrad`: compares the analytic gradient of the configured objective
/// with central differences and writes `checkgrad.csv`. Fails validation
/// when the configured tolerance is not met.
pub fn cmd_checkgrad(cfg: &ExperimentConfig, out: &Path) -> Result<FdReport> {
    prepare(cfg, out)?;
    let plant = cfg.build_plant()?;
    let prob = Problem::new(cfg, &plant, false)?;
    let c = &cfg.checkgrad;
    let theta0 = prob.model.theta.clone();
    let report = fd_gradient_check(|th: &[f64]| prob.eval(th), &theta0, c.samples, &c.steps, cfg.seed)?;
    let mut f = csv_file(&out.join("checkgrad.csv"))?;
    writeln!(f, "index,analytic,step,fd,rel_err")?;
    for e in &report.entries {
        for ((h, fd), r) in report.steps.iter().zip(&e.fd).zip(&e.rel_err) {
            writeln!(f, "{},{:.16e},{:.16e},{:.16e},{:.16e}", e.index, e.analytic, h, fd, r)?;
        }
    }
    f.flush()?;
    let passed = report.passes(c.tol);
    let mut t = toml::Table::new();
    t.insert("max_rel_error".into(), report.max_rel_error.into());
    t.insert("passed".into(), passed.into());
    files::write_manifest(out, "checkgrad", cfg, t)?;
    if !passed {
        return Err(Error::Validation(format!(
            "gradient check error {:e} exceeds {:e}",
            report.max_rel_error, c.tol
        )));
    }
    Ok(report)
}

/// Draws `(angle, pressure ratio, bump height)` uniformly in the
/// configured ranges.
fn draw_params(rng: &mut crate::util::SeededRng, d: &config::DatasetSpec) -> (f64, f64, f64) {
    let mut u = |r: [f64; 2]| if r[1] > r[0] { rng.random_range(r[0]..r[1]) } else { r[0] };
    let a = u(d.angle_deg);
    let p = u(d.pressure_ratio);
    let h = u(d.bump_height);
    (a, p, h)
}

#[derive(Clone, Debug)]
pub struct DatasetReport {
    pub samples: Vec<SampleMeta>,
    /// Draws whose solve failed, with the reason.
    pub skipped: Vec<(SampleMeta, String)>,
}

/// `gen-dataset`: converged turbulence-model solves over random inflow
/// angle, outflow pressure and bump height. With `n = 1` the single sample
/// uses the configured boundary and mesh. Failed draws are logged to
/// `skipped.csv` and replaced.
pub fn cmd_gen_dataset(cfg: &ExperimentConfig, out: &Path) -> Result<DatasetReport> {
    prepare(cfg, out)?;
    if cfg.plant != PlantKind::NsSa {
        return Err(Error::Config("datasets are generated with the turbulence-model plant".into()));
    }
    let (ni, nj, h0, width) = match cfg.mesh {
        MeshSpec::BumpChannel {
            ni,
            nj,
            bump_height,
            bump_width,
        } => (ni, nj, bump_height, bump_width),
        _ => return Err(Error::Config("datasets need a bump-channel mesh".into())),
    };
    let (a0, p0) = match cfg.boundary {
        config::BoundarySetup::Channel {
            angle_deg,
            pressure_ratio,
        } => (angle_deg, pressure_ratio),
        _ => return Err(Error::Config("datasets need channel boundaries".into())),
    };
    let d = &cfg.dataset;
    let mut rng = seeded(cfg.seed);
    let mut report = DatasetReport {
        samples: Vec::new(),
        skipped: Vec::new(),
    };
    let max_attempts = d.n * d.attempts_per_sample.max(1);
    let mut attempt = 0;
    while report.samples.len() < d.n && attempt < max_attempts {
        attempt += 1;
        let (angle, ratio, height) = if d.n == 1 { (a0, p0, h0) } else { draw_params(&mut rng, d) };
        let mut sub = cfg.clone();
        sub.mesh = MeshSpec::BumpChannel {
            ni,
            nj,
            bump_height: height,
            bump_width: width,
        };
        sub.boundary = config::BoundarySetup::Channel {
            angle_deg: angle,
            pressure_ratio: ratio,
        };
        let mut meta = SampleMeta {
            angle_deg: angle,
            pressure_ratio: ratio,
            bump_height: height,
            iterations: 0,
        };
        let plant = sub.build_plant()?;
        let model = CorrectionModel::zero(ForceMode::Beta);
        match newton_solve(&plant, &model, &plant.uniform_state(), &cfg.newton) {
            Ok(res) => {
                meta.iterations = res.iterations;
                let dir = out.join(format!("sample_{:03}", report.samples.len()));
                let mu_t = eddy_viscosity(&plant, &res.state)?;
                let mu_t = crate::plants::io::Field::new(ni, nj, &["mu_t"], mu_t)?;
                write_sample(&dir, &meta, &plant.mesh, &files::state_field(&plant, &res.state)?, &mu_t)?;
                report.samples.push(meta);
            }
            Err(e) if exit_code(&e) == 2 || matches!(e, Error::InvalidState { .. } | Error::InflowDecode { .. }) => {
                report.skipped.push((meta, e.to_string()));
            }
            Err(e) => return Err(e),
        }
    }
    let mut f = csv_file(&out.join("skipped.csv"))?;
    writeln!(f, "angle_deg,pressure_ratio,bump_height,reason")?;
    for (m, r) in &report.skipped {
        writeln!(f, "{:.16e},{:.16e},{:.16e},\"{}\"", m.angle_deg, m.pressure_ratio, m.bump_height, r.replace('"', "'"))?;
    }
    f.flush()?;
    let mut t = toml::Table::new();
    t.insert("samples".into(), (report.samples.len() as i64).into());
    t.insert("skipped".into(), (report.skipped.len() as i64).into());
    files::write_manifest(out, "gen-dataset", cfg, t)?;
    if report.samples.len() < d.n {
        return Err(Error::DatasetShort {
            converged: report.samples.len(),
            requested: d.n,
        });
    }
    Ok(report)
}
