//! Closure training: a directional network for the eddy viscosity, fitted
//! with the explicit residual loss over a dataset of turbulence-model
//! solves projected onto the laminar variables.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::corrections::{CorrectionModel, ForceMode, ModelKind};
use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;
use crate::harness::{csv_file, files, Sample};
use crate::linalg::InnerProduct;
use crate::optimize::{full_state_loss, run_minibatch, write_loss_csv};
use crate::plants::io::Field;
use crate::plants::{BoundarySpec, Plant, PlantKind, StateVector};
use crate::solver::state_inner;
use crate::util::seeded;

#[derive(Clone, Debug)]
pub struct MemberReport {
    pub seed: u64,
    pub theta: Vec<f64>,
    pub iterations: usize,
    /// Training loss over its initial value, on the whole training set.
    pub train_normalized: f64,
    pub val_normalized: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    /// Sample indices (in name order) of each subset.
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub members: Vec<MemberReport>,
    /// Rank correlation between ensemble error and spread, per evaluated
    /// sample.
    pub rank_correlation: Vec<(String, f64)>,
}

struct Case {
    name: String,
    plant: Plant,
    w: StateVector,
    q: InnerProduct,
    target: Vec<f64>,
}

fn load_case(cfg: &ExperimentConfig, s: &Sample) -> Result<Case> {
    let r = cfg.physics.stencil_radius;
    let mesh = if s.mesh.g < r { s.mesh.with_ghost_depth(r)? } else { s.mesh.clone() };
    let bc = BoundarySpec::channel(&cfg.physics, s.meta.angle_deg, s.meta.pressure_ratio);
    let plant = Plant::new(PlantKind::Ns, cfg.physics.clone(), mesh, bc)?;
    let w = files::read_state(&s.dir.join("state.dat"), &plant)?;
    let target = Field::load(&s.dir.join("mu_t.dat"))?
        .column("mu_t")
        .ok_or_else(|| Error::Config(format!("{} has no mu_t column", s.dir.display())))?;
    let q = state_inner(&plant);
    let name = s.dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(Case { name, plant, w, q, target })
}

/// Average ranks (ties share their mean rank).
fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut k = 0;
    while k < idx.len() {
        let mut e = k;
        while e + 1 < idx.len() && x[idx[e + 1]] == x[idx[k]] {
            e += 1;
        }
        let avg = 0.5 * (k + e) as f64;
        for &i in &idx[k..=e] {
            r[i] = avg;
        }
        k = e + 1;
    }
    r
}

/// Spearman rank correlation; zero when either input is constant.
pub fn rank_correlation(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

fn total_loss(cases: &[Case], models: &[CorrectionModel], set: &[usize], theta: &[f64]) -> Result<(f64, Vec<f64>)> {
    let mut j = 0.0;
    let mut g = vec![0.0; theta.len()];
    for &s in set {
        let c = &cases[s];
        let (js, gs) = full_state_loss(&c.plant, &models[s].with_theta(theta.to_vec())?, &c.w, &c.q, 0.0)?;
        j += js;
        for (a, b) in g.iter_mut().zip(gs) {
            *a += b;
        }
    }
    Ok((j, g))
}

/// `train`: reads the dataset at `dataset.path`, splits it with the run
/// seed, trains `train.ensemble` networks (seeds `correction.seed + e`)
/// and writes per-member losses and checkpoints, the split, and for every
/// validation sample (training samples when there is no validation set)
/// the ensemble mean, spread, target and error fields.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<TrainReport> {
    cfg.validate()?;
    std::fs::create_dir_all(out)?;
    if cfg.mode() != ForceMode::MuT {
        return Err(Error::Config("closure training fits the eddy-viscosity correction".into()));
    }
    let dir = cfg
        .dataset
        .path
        .as_ref()
        .ok_or_else(|| Error::Config("training needs dataset.path".into()))?;
    let samples = files::list_samples(dir)?;
    if samples.is_empty() {
        return Err(Error::Config(format!("no samples in {}", dir.display())));
    }
    let cases = samples.iter().map(|s| load_case(cfg, s)).collect::<Result<Vec<_>>>()?;

    let n = cases.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded(cfg.seed));
    let n_train = ((cfg.train.train_fraction * n as f64).round() as usize).clamp(1, n);
    let mut train = order[..n_train].to_vec();
    let mut validation = order[n_train..].to_vec();
    train.sort_unstable();
    validation.sort_unstable();
    let mut f = csv_file(&out.join("split.csv"))?;
    writeln!(f, "sample,set")?;
    for (k, c) in cases.iter().enumerate() {
        writeln!(f, "{},{}", c.name, if train.contains(&k) { "train" } else { "validation" })?;
    }
    f.flush()?;

    let batch = match cfg.train.batch_size {
        0 => n_train,
        b => b.min(n_train),
    };
    let mut members = Vec::new();
    let mut models_by_member = Vec::new();
    for e in 0..cfg.train.ensemble.max(1) {
        let seed = cfg.correction.seed + e as u64;
        let net = cfg.fresh_network(&cases[0].plant, seed)?;
        let models = cases
            .iter()
            .map(|c| CorrectionModel::cnn(&c.plant, ForceMode::MuT, net.clone(), None))
            .collect::<Result<Vec<_>>>()?;
        let theta0 = models[0].theta.clone();
        let res = run_minibatch(
            |theta, idx| {
                let set: Vec<usize> = idx.iter().map(|&k| train[k]).collect();
                total_loss(&cases, &models, &set, theta)
            },
            n_train,
            batch,
            &theta0,
            &cfg.optimizer,
            seed,
        )?;
        let ratio = |set: &[usize]| -> Result<Option<f64>> {
            if set.is_empty() {
                return Ok(None);
            }
            let j0 = total_loss(&cases, &models, set, &theta0)?.0;
            let j1 = total_loss(&cases, &models, set, &res.theta)?.0;
            Ok(Some(j1 / j0))
        };
        let train_normalized = ratio(&train)?.unwrap_or(f64::NAN);
        let val_normalized = ratio(&validation)?;

        let mut f = csv_file(&out.join(format!("loss_member{e}.csv")))?;
        write_loss_csv(&res.history, &mut f)?;
        f.flush()?;
        if let ModelKind::Cnn(net) = &models[0].kind {
            let mut f = csv_file(&out.join(format!("checkpoint_member{e}.txt")))?;
            net.write_checkpoint(&res.theta, &mut f)?;
            f.flush()?;
        }
        members.push(MemberReport {
            seed,
            theta: res.theta,
            iterations: res.history.len() - 1,
            train_normalized,
            val_normalized,
        });
        models_by_member.push(models);
    }

    let mut f = csv_file(&out.join("members.csv"))?;
    writeln!(f, "seed,iterations,train_normalized,val_normalized")?;
    for m in &members {
        writeln!(
            f,
            "{},{},{:.16e},{:.16e}",
            m.seed,
            m.iterations,
            m.train_normalized,
            m.val_normalized.unwrap_or(f64::NAN)
        )?;
    }
    f.flush()?;

    let eval_set = if validation.is_empty() { &train } else { &validation };
    let mut rank = Vec::new();
    for &s in eval_set {
        let c = &cases[s];
        let preds = members
            .iter()
            .zip(&models_by_member)
            .map(|(m, models)| models[s].with_theta(m.theta.clone())?.alpha(&c.plant, &c.w))
            .collect::<Result<Vec<_>>>()?;
        let k = preds.len() as f64;
        let ncell = c.target.len();
        let mut values = Vec::with_capacity(4 * ncell);
        let (mut err, mut spread) = (Vec::with_capacity(ncell), Vec::with_capacity(ncell));
        for cell in 0..ncell {
            let mean = preds.iter().map(|p| p[cell]).sum::<f64>() / k;
            let var = preds.iter().map(|p| (p[cell] - mean).powi(2)).sum::<f64>() / k;
            let e = (mean - c.target[cell]).abs();
            values.extend_from_slice(&[mean, var.sqrt(), c.target[cell], e]);
            err.push(e);
            spread.push(var.sqrt());
        }
        Field::new(c.plant.layout.ni, c.plant.layout.nj, &["mean", "std", "target", "error"], values)?
            .save(&out.join(format!("ensemble_{}.dat", c.name)))?;
        rank.push((c.name.clone(), rank_correlation(&err, &spread)));
    }

    let mut t = toml::Table::new();
    t.insert("samples".into(), (n as i64).into());
    t.insert("train".into(), (train.len() as i64).into());
    t.insert("validation".into(), (validation.len() as i64).into());
    let best = members.iter().map(|m| m.train_normalized).fold(f64::INFINITY, f64::min);
    t.insert("best_train_normalized".into(), best.into());
    let mut rc = toml::Table::new();
    for (name, r) in &rank {
        rc.insert(name.clone(), (*r).into());
    }
    t.insert("rank_correlation".into(), rc.into());
    files::write_manifest(out, "train", cfg, t)?;
    Ok(TrainReport {
        train,
        validation,
        members,
        rank_correlation: rank,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_correlation_examples() {
        assert_eq!(rank_correlation(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), 1.0);
        assert_eq!(rank_correlation(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), -1.0);
        assert_eq!(rank_correlation(&[1.0, 1.0], &[1.0, 2.0]), 0.0);
        assert_eq!(ranks(&[5.0, 1.0, 5.0]), vec![1.5, 0.0, 1.5]);
    }
}
