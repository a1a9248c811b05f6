//! Pseudo-transient Newton solves and implicit-layer differentiation.
//!
//! Each step solves `(D/CFL + dF/dw) dw = -F(w)`, where `D` holds the local
//! spectral radius per unit volume on interior rows and zeros on ghost
//! rows. The CFL number follows switched evolution relaxation,
//! `CFL_n = CFL_0 (|F_0| / |F_n|)^p`, capped at `max_cfl`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corrections::CorrectionModel;
use crate::error::{check_len, Error, Result};
use crate::linalg::{lu_solve, transpose_solve, InnerProduct, SparseOperator};
use crate::plants::full::{full_jacobian, full_residual, theta_adjoint, theta_tangent};
use crate::plants::{Plant, StateVector};

/// One row of the convergence history.
#[derive(Clone, Debug, PartialEq)]
pub struct IterRecord {
    pub iter: usize,
    pub cfl: f64,
    pub residual_qnorm: f64,
}

/// Step rejections allowed before giving up on one iteration.
pub const MAX_RETRIES: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NewtonConfig {
    pub cfl0: f64,
    /// Exponent of the residual ratio in the CFL law.
    pub cfl_growth: f64,
    pub max_cfl: f64,
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_iters: usize,
    /// Reassemble the Jacobian every this many iterations.
    pub refactor_every: usize,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig {
            cfl0: 10.0,
            cfl_growth: 1.0,
            max_cfl: f64::INFINITY,
            abs_tol: 1e-12,
            rel_tol: 1e-12,
            max_iters: 100,
            refactor_every: 1,
        }
    }
}

impl NewtonConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cfl0 > 0.0) || !(self.max_cfl > 0.0) || !(self.cfl_growth >= 0.0) {
            return Err(Error::Config("CFL settings must be positive".into()));
        }
        if !(self.abs_tol > 0.0 && self.rel_tol > 0.0) {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        if self.max_iters == 0 || self.refactor_every == 0 {
            return Err(Error::Config("iteration counts must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SolveResult {
    pub state: StateVector,
    pub history: Vec<IterRecord>,
    pub iterations: usize,
    /// `dF/dw` at the returned state, factorized.
    pub jacobian: SparseOperator,
    pub converged: bool,
}

impl SolveResult {
    pub fn final_residual(&self) -> f64 {
        self.history.last().map_or(f64::NAN, |h| h.residual_qnorm)
    }
}

/// State-space inner product: cell volumes, ghost cells included.
pub fn state_inner(plant: &Plant) -> InnerProduct {
    InnerProduct::new(plant.state_weights()).expect("cell volumes are positive")
}

fn is_state_failure(e: &Error) -> bool {
    matches!(e, Error::InvalidState { .. } | Error::InflowDecode { .. })
}

/// Interior-row pseudo-time diagonal at the given CFL.
fn shifted(jac: &SparseOperator, plant: &Plant, radius: &[f64], cfl: f64) -> Result<SparseOperator> {
    let mut a = jac.clone();
    if cfl.is_finite() {
        let m = plant.m();
        let mut d = vec![0.0; plant.layout.len()];
        for (k, cell) in plant.layout.interior_cells().into_iter().enumerate() {
            for v in 0..m {
                d[cell * m + v] = radius[k] / cfl;
            }
        }
        a.add_diagonal(&d)?;
    }
    a.factorize()?;
    Ok(a)
}

pub fn newton_solve(plant: &Plant, model: &CorrectionModel, w0: &StateVector, cfg: &NewtonConfig) -> Result<SolveResult> {
    cfg.validate()?;
    check_len(plant.layout.len(), w0.data.len())?;
    let q = state_inner(plant);
    let mut w = w0.data.clone();
    let mut r = full_residual(plant, model, &w)?;
    let r0 = q.norm(&r)?;
    let tol = cfg.abs_tol.max(cfg.rel_tol * r0);
    let mut cfl = cfg.cfl0.min(cfg.max_cfl);
    let mut history = vec![IterRecord {
        iter: 0,
        cfl,
        residual_qnorm: r0,
    }];
    let mut rn = r0;
    let mut jac: Option<SparseOperator> = None;
    let mut it = 0;
    while rn > tol {
        if it == cfg.max_iters {
            return Err(Error::NotConverged {
                iterations: it,
                last_residual: rn,
                history,
            });
        }
        if jac.is_none() || it % cfg.refactor_every == 0 {
            jac = Some(full_jacobian(plant, model, &w)?);
        }
        let j = jac.as_ref().unwrap();
        let radius = plant.spectral_radius(&w)?;
        let neg: Vec<f64> = r.iter().map(|x| -x).collect();
        let mut tries = 0;
        let (w_new, r_new, n_new) = loop {
            let a = shifted(j, plant, &radius, cfl)?;
            let dw = lu_solve(&a, &neg)?;
            let cand: Vec<f64> = w.iter().zip(&dw).map(|(x, d)| x + d).collect();
            let reason = match full_residual(plant, model, &cand) {
                Ok(rc) => {
                    let nc = q.norm(&rc)?;
                    if nc.is_finite() && nc <= 10.0 * rn {
                        break (cand, rc, nc);
                    }
                    format!("residual grew from {rn:e} to {nc:e}")
                }
                Err(e) if is_state_failure(&e) => e.to_string(),
                Err(e) => return Err(e),
            };
            tries += 1;
            if tries > MAX_RETRIES {
                return Err(Error::PersistentInvalid {
                    retries: MAX_RETRIES,
                    reason,
                });
            }
            cfl = if cfl.is_finite() { cfl * 0.5 } else { cfg.cfl0 };
        };
        it += 1;
        w = w_new;
        r = r_new;
        rn = n_new;
        history.push(IterRecord {
            iter: it,
            cfl,
            residual_qnorm: rn,
        });
        cfl = if rn > 0.0 {
            (cfg.cfl0 * (r0 / rn).powf(cfg.cfl_growth)).min(cfg.max_cfl)
        } else {
            cfg.max_cfl
        };
    }
    let mut jacobian = full_jacobian(plant, model, &w)?;
    jacobian.factorize()?;
    Ok(SolveResult {
        state: StateVector::new(plant.kind, plant.layout, w)?,
        history,
        iterations: it,
        jacobian,
        converged: true,
    })
}

pub fn write_history_csv(history: &[IterRecord], mut out: impl Write) -> Result<()> {
    writeln!(out, "iter,cfl,residual_qnorm")?;
    for h in history {
        writeln!(out, "{},{:.16e},{:.16e}", h.iter, h.cfl, h.residual_qnorm)?;
    }
    Ok(())
}

/// What the backward pass needs from a forward solve.
#[derive(Clone, Debug)]
pub struct ImplicitContext {
    pub state: StateVector,
    pub model: CorrectionModel,
    pub jacobian: SparseOperator,
    pub history: Vec<IterRecord>,
}

/// Solves `F(w; theta) = 0` with the parameters held by `model`.
pub fn implicit_forward(plant: &Plant, model: &CorrectionModel, w0: &StateVector, cfg: &NewtonConfig) -> Result<ImplicitContext> {
    let res = newton_solve(plant, model, w0, cfg)?;
    Ok(ImplicitContext {
        state: res.state,
        model: model.clone(),
        jacobian: res.jacobian,
        history: res.history,
    })
}

/// Maps a cotangent on `w*` to the Euclidean gradient in `theta`:
/// `(dF/dtheta)^T lambda` with `(dF/dw)^T lambda = -w_bar`.
pub fn implicit_backward(plant: &Plant, ctx: &ImplicitContext, w_bar: &[f64]) -> Result<Vec<f64>> {
    check_len(plant.layout.len(), w_bar.len())?;
    if w_bar.iter().all(|x| *x == 0.0) {
        return Ok(vec![0.0; ctx.model.n_params()]);
    }
    let lambda = adjoint_solve(ctx, w_bar)?;
    theta_adjoint(plant, &ctx.model, &ctx.state.data, &lambda)
}

/// `lambda` solving `(dF/dw)^T lambda = -w_bar`.
pub fn adjoint_solve(ctx: &ImplicitContext, w_bar: &[f64]) -> Result<Vec<f64>> {
    let neg: Vec<f64> = w_bar.iter().map(|x| -x).collect();
    transpose_solve(&ctx.jacobian, &neg)
}

/// `dw*/dtheta . dtheta` from one tangent linear solve.
pub fn tangent_solve(plant: &Plant, ctx: &ImplicitContext, dtheta: &[f64]) -> Result<Vec<f64>> {
    let b = theta_tangent(plant, &ctx.model, &ctx.state.data, dtheta)?;
    let neg: Vec<f64> = b.iter().map(|x| -x).collect();
    lu_solve(&ctx.jacobian, &neg)
}
