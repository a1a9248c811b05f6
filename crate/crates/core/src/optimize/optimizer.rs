//! Gradient descent and L-BFGS with Armijo backtracking, full or mini-batch.

use std::collections::VecDeque;
use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::inner::{dot, norm2};
use crate::util::seeded;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    GradientDescent,
    Lbfgs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    /// Fixed step of gradient descent and first trial step of L-BFGS.
    pub step: f64,
    pub line_search: bool,
    pub memory: usize,
    pub max_iters: usize,
    /// Stop when `|J_k - J_{k-1}| / J_0` drops below this.
    pub tol: f64,
    pub grad_tol: f64,
    pub c1: f64,
    pub backtrack: f64,
    pub max_backtracks: usize,
    /// Entries are clipped from below after every step.
    pub lower_bound: Option<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Lbfgs,
            step: 1.0,
            line_search: true,
            memory: 10,
            max_iters: 100,
            tol: 1e-6,
            grad_tol: 0.0,
            c1: 1e-4,
            backtrack: 0.5,
            max_backtracks: 30,
            lower_bound: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    Tolerance,
    MaxIters,
    ZeroGradient,
    LineSearchFailed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossRecord {
    pub iter: usize,
    pub loss: f64,
    pub normalized_loss: f64,
    pub grad_norm: f64,
    pub step_size: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizeResult {
    pub theta: Vec<f64>,
    pub loss: f64,
    pub history: Vec<LossRecord>,
    pub stop: StopReason,
}

/// Curvature pairs of the two-loop recursion.
struct Memory {
    depth: usize,
    pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)>,
}

impl Memory {
    /// Stores the pair if it carries positive curvature. A rejected pair
    /// also drops the history, which otherwise keeps steering the iterates
    /// with a model that the current region contradicts.
    fn push(&mut self, s: Vec<f64>, y: Vec<f64>) {
        let sy = dot(&s, &y);
        if !(sy > 0.0) {
            self.pairs.clear();
            return;
        }
        if self.depth == 0 {
            return;
        }
        if self.pairs.len() == self.depth {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y, 1.0 / sy));
    }

    fn direction(&self, g: &[f64]) -> Vec<f64> {
        let mut q = g.to_vec();
        let mut a = Vec::with_capacity(self.pairs.len());
        for (s, y, rho) in self.pairs.iter().rev() {
            let ai = rho * dot(s, &q);
            for (qk, yk) in q.iter_mut().zip(y) {
                *qk -= ai * yk;
            }
            a.push(ai);
        }
        if let Some((s, y, _)) = self.pairs.back() {
            let gamma = dot(s, y) / dot(y, y);
            for qk in q.iter_mut() {
                *qk *= gamma;
            }
        }
        for ((s, y, rho), ai) in self.pairs.iter().zip(a.into_iter().rev()) {
            let b = rho * dot(y, &q);
            for (qk, sk) in q.iter_mut().zip(s) {
                *qk += (ai - b) * sk;
            }
        }
        q.iter().map(|x| -x).collect()
    }
}

/// Failures that make a trial point unusable without invalidating the run.
fn recoverable(e: &Error) -> bool {
    matches!(
        e,
        Error::NotConverged { .. }
            | Error::PersistentInvalid { .. }
            | Error::InvalidState { .. }
            | Error::InflowDecode { .. }
            | Error::NegativeEddyViscosity { .. }
            | Error::Singular { .. }
    )
}

/// Minimizes `f`, which returns the loss and its gradient.
pub fn run_optimizer(
    mut f: impl FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    theta0: &[f64],
    cfg: &OptimizerConfig,
) -> Result<OptimizeResult> {
    run_minibatch(|x, _| f(x), 1, 1, theta0, cfg, 0)
}

/// Minimizes a sum over `n_samples` with fixed, disjoint batches visited in
/// turn. L-BFGS curvature pairs come from gradients on the first batch
/// (the anchor) so that they compare like with like. With one batch this is
/// plain full-batch optimization.
pub fn run_minibatch(
    mut f: impl FnMut(&[f64], &[usize]) -> Result<(f64, Vec<f64>)>,
    n_samples: usize,
    batch_size: usize,
    theta0: &[f64],
    cfg: &OptimizerConfig,
    seed: u64,
) -> Result<OptimizeResult> {
    if n_samples == 0 || batch_size == 0 {
        return Err(Error::Config("empty dataset or batch".into()));
    }
    let mut order: Vec<usize> = (0..n_samples).collect();
    if batch_size < n_samples {
        order.shuffle(&mut seeded(seed));
    }
    let batches: Vec<Vec<usize>> = order
        .chunks(batch_size)
        .map(|c| {
            let mut c = c.to_vec();
            c.sort_unstable();
            c
        })
        .collect();
    let nb = batches.len();

    let clip = |x: &mut Vec<f64>| {
        if let Some(lb) = cfg.lower_bound {
            for v in x.iter_mut() {
                *v = v.max(lb);
            }
        }
    };
    let mut x = theta0.to_vec();
    clip(&mut x);
    let (mut fx, mut gx) = f(&x, &batches[0])?;
    let j0 = if fx != 0.0 { fx.abs() } else { 1.0 };
    let mut anchor_g = gx.clone();
    let mut history = vec![LossRecord {
        iter: 0,
        loss: fx,
        normalized_loss: fx / j0,
        grad_norm: norm2(&gx),
        step_size: 0.0,
    }];
    let mut mem = Memory {
        depth: if cfg.kind == OptimizerKind::Lbfgs { cfg.memory } else { 0 },
        pairs: VecDeque::new(),
    };
    let mut stop = StopReason::MaxIters;
    for k in 0..cfg.max_iters {
        let b = k % nb;
        if k > 0 && nb > 1 {
            (fx, gx) = f(&x, &batches[b])?;
        }
        let gn = norm2(&gx);
        if gn == 0.0 || gn <= cfg.grad_tol {
            stop = StopReason::ZeroGradient;
            break;
        }
        let mut d = mem.direction(&gx);
        if !(dot(&gx, &d) < 0.0) {
            mem.pairs.clear();
            d = gx.iter().map(|g| -g).collect();
        }
        let mut t = if mem.pairs.is_empty() { cfg.step } else { 1.0 };
        let mut accepted = None;
        for _ in 0..=cfg.max_backtracks {
            let mut xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            clip(&mut xn);
            match f(&xn, &batches[b]) {
                Ok((fnew, gnew)) => {
                    let decrease: f64 = gx.iter().zip(xn.iter().zip(&x)).map(|(g, (a, b))| g * (a - b)).sum();
                    if !cfg.line_search || (fnew.is_finite() && fnew <= fx + cfg.c1 * decrease) {
                        accepted = Some((xn, fnew, gnew));
                        break;
                    }
                }
                Err(e) if cfg.line_search && recoverable(&e) => {}
                Err(e) => return Err(e),
            }
            t *= cfg.backtrack;
        }
        let Some((xn, fnew, gnew)) = accepted else {
            stop = StopReason::LineSearchFailed;
            break;
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = if nb == 1 {
            gnew.iter().zip(&gx).map(|(a, b)| a - b).collect()
        } else {
            let ga = if b == 0 { gnew.clone() } else { f(&xn, &batches[0])?.1 };
            let y = ga.iter().zip(&anchor_g).map(|(a, b)| a - b).collect();
            anchor_g = ga;
            y
        };
        if mem.depth > 0 {
            mem.push(s, y);
        }
        let change = (fx - fnew).abs() / j0;
        x = xn;
        fx = fnew;
        gx = gnew;
        history.push(LossRecord {
            iter: k + 1,
            loss: fx,
            normalized_loss: fx / j0,
            grad_norm: norm2(&gx),
            step_size: t,
        });
        if change < cfg.tol {
            stop = StopReason::Tolerance;
            break;
        }
    }
    Ok(OptimizeResult {
        theta: x,
        loss: fx,
        history,
        stop,
    })
}

pub fn write_loss_csv(history: &[LossRecord], mut out: impl Write) -> Result<()> {
    writeln!(out, "iter,loss,normalized_loss,grad_norm,step_size")?;
    for h in history {
        writeln!(
            out,
            "{},{:.16e},{:.16e},{:.16e},{:.16e}",
            h.iter, h.loss, h.normalized_loss, h.grad_norm, h.step_size
        )?;
    }
    Ok(())
}
