//! Central finite-difference check of a gradient.

use crate::error::Result;
use crate::util::{sample_indices, seeded};

#[derive(Clone, Debug, PartialEq)]
pub struct FdEntry {
    pub index: usize,
    pub analytic: f64,
    /// One central difference per step.
    pub fd: Vec<f64>,
    pub rel_err: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FdReport {
    pub steps: Vec<f64>,
    pub entries: Vec<FdEntry>,
    /// Worst over entries of the error at the best step.
    pub max_rel_error: f64,
}

fn best(e: &FdEntry) -> f64 {
    e.rel_err.iter().cloned().fold(f64::INFINITY, f64::min)
}

impl FdReport {
    /// Every entry either meets `tol` at the coarsest step or improves
    /// under refinement, and the best errors meet `tol`.
    pub fn passes(&self, tol: f64) -> bool {
        let refines = self
            .entries
            .iter()
            .all(|e| e.rel_err.first().is_none_or(|&first| first <= tol || best(e) < first));
        refines && self.max_rel_error <= tol
    }
}

/// Entries whose analytic gradient is this small relative to the largest
/// one are not sampled; their relative error measures rounding, not the
/// gradient.
pub const SAMPLING_FLOOR: f64 = 1e-6;

/// Compares `f`'s gradient with central differences on `samples` entries
/// drawn with a fixed seed.
pub fn fd_gradient_check(
    mut f: impl FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    theta: &[f64],
    samples: usize,
    steps: &[f64],
    seed: u64,
) -> Result<FdReport> {
    let (_, g) = f(theta)?;
    let gmax = g.iter().fold(0.0f64, |s, x| s.max(x.abs()));
    let eligible: Vec<usize> = (0..g.len()).filter(|&k| g[k].abs() > SAMPLING_FLOOR * gmax).collect();
    let pick = sample_indices(&mut seeded(seed), eligible.len(), samples);
    let mut entries = Vec::with_capacity(pick.len());
    for p in pick {
        let k = eligible[p];
        let mut fd = Vec::with_capacity(steps.len());
        let mut rel = Vec::with_capacity(steps.len());
        for &h in steps {
            let mut tp = theta.to_vec();
            tp[k] += h;
            let mut tm = theta.to_vec();
            tm[k] -= h;
            let d = (f(&tp)?.0 - f(&tm)?.0) / (2.0 * h);
            rel.push((d - g[k]).abs() / g[k].abs().max(d.abs()).max(f64::MIN_POSITIVE));
            fd.push(d);
        }
        entries.push(FdEntry {
            index: k,
            analytic: g[k],
            fd,
            rel_err: rel,
        });
    }
    let max_rel_error = entries.iter().map(best).fold(0.0, f64::max);
    Ok(FdReport {
        steps: steps.to_vec(),
        entries,
        max_rel_error,
    })
}
