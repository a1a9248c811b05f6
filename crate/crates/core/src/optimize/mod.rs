//! Objectives, gradients in the parameter metric, and optimizers.
//!
//! Loss functions return the raw derivative `dJ/dtheta`. Optimizers work on
//! `theta~ = N theta` with `N^2 = M`, where the gradient is `N^-1 dJ/dtheta`;
//! a plain step there is an `M^-1` preconditioned step on `theta`.

mod fdcheck;
mod optimizer;

pub use fdcheck::{fd_gradient_check, FdEntry, FdReport};
pub use optimizer::{
    run_minibatch, run_optimizer, write_loss_csv, LossRecord, OptimizeResult, OptimizerConfig, OptimizerKind,
    StopReason,
};

use serde::{Deserialize, Serialize};

use crate::corrections::CorrectionModel;
use crate::error::{check_len, Error, Result};
use crate::linalg::{cholesky_diag, DiagFactor, InnerProduct};
use crate::plants::full::{full_residual, theta_adjoint};
use crate::plants::{Plant, PlantKind, StateVector};
use crate::solver::{implicit_backward, implicit_forward, ImplicitContext, NewtonConfig};

/// Quantity read by one observation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObsVar {
    /// Stored variable `v` as is.
    State(usize),
    /// `rho u / rho`.
    VelocityX,
    /// `rho v / rho`.
    VelocityY,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub var: ObsVar,
    pub i: usize,
    pub j: usize,
}

/// Selection of interior values, with velocity decoding for flow plants.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationOp {
    pub entries: Vec<Observation>,
}

impl ObservationOp {
    pub fn new(plant: &Plant, entries: Vec<Observation>) -> Result<Self> {
        let l = plant.layout;
        for o in &entries {
            if o.i >= l.ni || o.j >= l.nj {
                return Err(Error::Config(format!("observation at ({}, {}) is outside the interior", o.i, o.j)));
            }
            let ok = match o.var {
                ObsVar::State(v) => v < l.m,
                _ => plant.kind != PlantKind::Scalar,
            };
            if !ok {
                return Err(Error::Config(format!("{:?} is not observable on the {:?} plant", o.var, plant.kind)));
            }
        }
        Ok(ObservationOp { entries })
    }

    /// Both velocity components on every interior cell.
    pub fn velocities(plant: &Plant) -> Result<Self> {
        let mut e = Vec::new();
        for i in 0..plant.layout.ni {
            for j in 0..plant.layout.nj {
                e.push(Observation { var: ObsVar::VelocityX, i, j });
                e.push(Observation { var: ObsVar::VelocityY, i, j });
            }
        }
        Self::new(plant, e)
    }

    /// Every stored variable on every interior cell.
    pub fn full(plant: &Plant) -> Result<Self> {
        let mut e = Vec::new();
        for i in 0..plant.layout.ni {
            for j in 0..plant.layout.nj {
                for v in 0..plant.m() {
                    e.push(Observation { var: ObsVar::State(v), i, j });
                }
            }
        }
        Self::new(plant, e)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn apply(&self, plant: &Plant, w: &[f64]) -> Vec<f64> {
        let l = plant.layout;
        self.entries
            .iter()
            .map(|o| {
                let (a, b) = (o.i + l.g, o.j + l.g);
                match o.var {
                    ObsVar::State(v) => w[l.idx(a, b, v)],
                    ObsVar::VelocityX => w[l.idx(a, b, 1)] / w[l.idx(a, b, 0)],
                    ObsVar::VelocityY => w[l.idx(a, b, 2)] / w[l.idx(a, b, 0)],
                }
            })
            .collect()
    }

    /// `(dH/dw)^T y_bar` as a full-state vector.
    pub fn adjoint(&self, plant: &Plant, w: &[f64], y_bar: &[f64]) -> Vec<f64> {
        let l = plant.layout;
        let mut out = vec![0.0; w.len()];
        for (o, yb) in self.entries.iter().zip(y_bar) {
            let (a, b) = (o.i + l.g, o.j + l.g);
            let comp = match o.var {
                ObsVar::State(v) => {
                    out[l.idx(a, b, v)] += yb;
                    continue;
                }
                ObsVar::VelocityX => 1,
                ObsVar::VelocityY => 2,
            };
            let (r, ir) = (w[l.idx(a, b, 0)], l.idx(a, b, comp));
            out[ir] += yb / r;
            out[l.idx(a, b, 0)] -= yb * w[ir] / (r * r);
        }
        out
    }
}

/// Partial observations `y` with weights `q`.
#[derive(Clone, Debug, PartialEq)]
pub struct PartialObjective {
    pub h: ObservationOp,
    pub y: Vec<f64>,
    pub q: Vec<f64>,
}

impl PartialObjective {
    pub fn new(h: ObservationOp, y: Vec<f64>, q: Vec<f64>) -> Result<Self> {
        check_len(h.len(), y.len())?;
        InnerProduct::new(q.clone())?;
        Ok(PartialObjective { h, y, q })
    }

    /// Observation weights equal to the volume of the observed cell.
    pub fn volume_weighted(plant: &Plant, h: ObservationOp, y: Vec<f64>) -> Result<Self> {
        let q = h.entries.iter().map(|o| plant.mesh.volume(o.i, o.j)).collect();
        Self::new(h, y, q)
    }

    /// `||H w - y||^2_Q` and its full-state gradient.
    pub fn misfit(&self, plant: &Plant, w: &[f64]) -> (f64, Vec<f64>) {
        let hw = self.h.apply(plant, w);
        let mut j = 0.0;
        let mut ybar = Vec::with_capacity(hw.len());
        for ((a, b), q) in hw.iter().zip(&self.y).zip(&self.q) {
            let d = a - b;
            j += q * d * d;
            ybar.push(2.0 * q * d);
        }
        (j, self.h.adjoint(plant, w, &ybar))
    }
}

/// `gamma ||alpha||^2` weighted by cell volumes, with its gradients in
/// `theta` and in `w`.
fn regularization(plant: &Plant, model: &CorrectionModel, w: &StateVector, gamma: f64) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if gamma == 0.0 || model.is_zero() {
        return Ok((0.0, vec![0.0; model.n_params()], vec![0.0; w.data.len()]));
    }
    if gamma < 0.0 {
        return Err(Error::Config(format!("regularization weight {gamma} is negative")));
    }
    let alpha = model.alpha(plant, w)?;
    let vols = plant.cell_volumes();
    let j = gamma * alpha.iter().zip(vols).map(|(a, v)| a * a * v).sum::<f64>();
    let bar: Vec<f64> = alpha.iter().zip(vols).map(|(a, v)| 2.0 * gamma * a * v).collect();
    let (gt, gw) = model.param_gradient_via_chain(plant, w, &bar)?;
    Ok((j, gt, gw))
}

/// Explicit layer: `J = ||F(w_m; theta)||^2_Q + gamma ||alpha||^2` and the raw
/// gradient `2 (dF/dtheta)^T Q F`, from one reverse sweep and no solve.
pub fn full_state_loss(
    plant: &Plant,
    model: &CorrectionModel,
    w_m: &StateVector,
    q: &InnerProduct,
    gamma: f64,
) -> Result<(f64, Vec<f64>)> {
    let r = full_residual(plant, model, &w_m.data)?;
    check_len(q.len(), r.len())?;
    let mut j = 0.0;
    let mut seed = Vec::with_capacity(r.len());
    for (x, wt) in r.iter().zip(q.weights()) {
        j += wt * x * x;
        seed.push(2.0 * wt * x);
    }
    let mut g = theta_adjoint(plant, model, &w_m.data, &seed)?;
    let (jr, gr, _) = regularization(plant, model, w_m, gamma)?;
    for (a, b) in g.iter_mut().zip(gr) {
        *a += b;
    }
    Ok((j + jr, g))
}

/// [`full_state_loss`] with the gradient taken in `theta~ = N theta`.
pub fn full_state_loss_and_grad(
    plant: &Plant,
    model: &CorrectionModel,
    w_m: &StateVector,
    q: &InnerProduct,
    gamma: f64,
) -> Result<(f64, Vec<f64>)> {
    let (j, g) = full_state_loss(plant, model, w_m, q, gamma)?;
    Ok((j, Reparam::new(&model.param_inner).grad_tilde(&g)))
}

/// Loss, raw gradient and solver context of one implicit evaluation.
#[derive(Clone, Debug)]
pub struct ImplicitEval {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub context: ImplicitContext,
}

/// Implicit layer: solve `F(w; theta) = 0`, evaluate the observation misfit
/// on `w*` and pull its gradient back through one adjoint solve.
pub fn implicit_loss(
    plant: &Plant,
    model: &CorrectionModel,
    objective: &PartialObjective,
    w0: &StateVector,
    cfg: &NewtonConfig,
    gamma: f64,
) -> Result<ImplicitEval> {
    let context = implicit_forward(plant, model, w0, cfg)?;
    let w = &context.state;
    let (jm, mut w_bar) = objective.misfit(plant, &w.data);
    let (jr, gr, gw) = regularization(plant, model, w, gamma)?;
    for (a, b) in w_bar.iter_mut().zip(gw) {
        *a += b;
    }
    let mut grad = implicit_backward(plant, &context, &w_bar)?;
    for (a, b) in grad.iter_mut().zip(gr) {
        *a += b;
    }
    Ok(ImplicitEval {
        loss: jm + jr,
        grad,
        context,
    })
}

/// [`implicit_loss`] with the gradient taken in `theta~ = N theta`.
pub fn implicit_loss_and_grad(
    plant: &Plant,
    model: &CorrectionModel,
    objective: &PartialObjective,
    w0: &StateVector,
    cfg: &NewtonConfig,
    gamma: f64,
) -> Result<(f64, Vec<f64>)> {
    let e = implicit_loss(plant, model, objective, w0, cfg, gamma)?;
    Ok((e.loss, Reparam::new(&model.param_inner).grad_tilde(&e.grad)))
}

/// Change of variables `theta~ = N theta` for a diagonal metric `M = N^2`.
#[derive(Clone, Debug, PartialEq)]
pub struct Reparam {
    pub factor: DiagFactor,
}

impl Reparam {
    pub fn new(m: &InnerProduct) -> Self {
        Reparam {
            factor: cholesky_diag(m),
        }
    }

    pub fn to_tilde(&self, theta: &[f64]) -> Vec<f64> {
        theta.iter().zip(&self.factor.n).map(|(t, n)| t * n).collect()
    }

    pub fn from_tilde(&self, tilde: &[f64]) -> Vec<f64> {
        tilde.iter().zip(&self.factor.n).map(|(t, n)| t / n).collect()
    }

    /// Gradient in `theta~` from the raw gradient in `theta`.
    pub fn grad_tilde(&self, g: &[f64]) -> Vec<f64> {
        g.iter().zip(&self.factor.n).map(|(g, n)| g / n).collect()
    }

    /// Riesz representative of the gradient in the `M` metric, `M^-1 g`.
    pub fn m_gradient(&self, g: &[f64]) -> Vec<f64> {
        g.iter().zip(&self.factor.n).map(|(g, n)| g / (n * n)).collect()
    }

    /// Wraps a raw loss so that it reads and differentiates in `theta~`.
    pub fn wrap<'a>(
        &'a self,
        mut f: impl FnMut(&[f64]) -> Result<(f64, Vec<f64>)> + 'a,
    ) -> impl FnMut(&[f64]) -> Result<(f64, Vec<f64>)> + 'a {
        move |tilde: &[f64]| {
            let (j, g) = f(&self.from_tilde(tilde))?;
            Ok((j, self.grad_tilde(&g)))
        }
    }
}

#[cfg(test)]
mod tests;
