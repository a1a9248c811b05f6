//! Observation files, state dumps, dataset samples and run manifests.

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;
use crate::mesh::StructuredMesh;
use crate::optimize::{ObsVar, Observation, ObservationOp, PartialObjective};
use crate::plants::io::Field;
use crate::plants::{Plant, StateVector};
use crate::util::fmt17;

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    Ok(std::io::BufWriter::new(std::fs::File::create(path)?))
}

/// Interior values of `w` under the plant's variable names.
pub fn state_field(plant: &Plant, w: &StateVector) -> Result<Field> {
    Field::new(plant.layout.ni, plant.layout.nj, plant.kind.var_names(), w.interior())
}

pub fn write_state(path: &Path, plant: &Plant, w: &StateVector) -> Result<()> {
    state_field(plant, w)?.save(path)
}

/// A state for `plant` from a dump holding at least the plant's variables
/// (extra columns, such as the turbulence variable, are dropped).
pub fn read_state(path: &Path, plant: &Plant) -> Result<StateVector> {
    let field = Field::load(path)?;
    if field.ni != plant.layout.ni || field.nj != plant.layout.nj {
        return Err(Error::Config(format!(
            "{} holds a {}x{} field, the mesh is {}x{}",
            path.display(),
            field.ni,
            field.nj,
            plant.layout.ni,
            plant.layout.nj
        )));
    }
    let names = plant.kind.var_names();
    let cols = names
        .iter()
        .map(|n| {
            field
                .column(n)
                .ok_or_else(|| Error::Config(format!("{} has no {n} column", path.display())))
        })
        .collect::<Result<Vec<_>>>()?;
    let m = names.len();
    let mut interior = vec![0.0; field.ni * field.nj * m];
    for (v, col) in cols.iter().enumerate() {
        for (k, x) in col.iter().enumerate() {
            interior[k * m + v] = *x;
        }
    }
    plant.state_from_interior(&interior)
}

pub fn write_scalar_field(path: &Path, plant: &Plant, name: &str, values: &[f64]) -> Result<()> {
    Field::new(plant.layout.ni, plant.layout.nj, &[name], values.to_vec())?.save(path)
}

fn var_label(v: ObsVar) -> String {
    match v {
        ObsVar::State(k) => format!("w{k}"),
        ObsVar::VelocityX => "u".into(),
        ObsVar::VelocityY => "v".into(),
    }
}

fn parse_var(s: &str) -> Result<ObsVar> {
    match s {
        "u" => Ok(ObsVar::VelocityX),
        "v" => Ok(ObsVar::VelocityY),
        _ => s
            .strip_prefix('w')
            .and_then(|k| k.parse().ok())
            .map(ObsVar::State)
            .ok_or_else(|| Error::Parse(format!("unknown observed variable {s:?}"))),
    }
}

/// CSV `var,i,j,value,weight`, one observation per line.
pub fn write_observations(path: &Path, obj: &PartialObjective) -> Result<()> {
    let mut out = create(path)?;
    writeln!(out, "var,i,j,value,weight")?;
    for ((o, y), q) in obj.h.entries.iter().zip(&obj.y).zip(&obj.q) {
        writeln!(out, "{},{},{},{},{}", var_label(o.var), o.i, o.j, fmt17(*y), fmt17(*q))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_observations(path: &Path, plant: &Plant) -> Result<PartialObjective> {
    let input = BufReader::new(std::fs::File::open(path)?);
    let mut lines = input.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim() != "var,i,j,value,weight" {
        return Err(Error::Parse(format!("bad observation header {header:?}")));
    }
    let (mut entries, mut y, mut q) = (Vec::new(), Vec::new(), Vec::new());
    for (n, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 5 {
            return Err(Error::Parse(format!("observation line {} has {} fields", n + 2, cols.len())));
        }
        let num = |s: &str| -> Result<f64> { s.parse().map_err(|_| Error::Parse(format!("bad number {s:?}"))) };
        let idx = |s: &str| -> Result<usize> { s.parse().map_err(|_| Error::Parse(format!("bad index {s:?}"))) };
        entries.push(Observation {
            var: parse_var(cols[0])?,
            i: idx(cols[1])?,
            j: idx(cols[2])?,
        });
        y.push(num(cols[3])?);
        q.push(num(cols[4])?);
    }
    PartialObjective::new(ObservationOp::new(plant, entries)?, y, q)
}

/// Parameters of one generated dataset sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub angle_deg: f64,
    pub pressure_ratio: f64,
    pub bump_height: f64,
    pub iterations: usize,
}

/// One dataset sample on disk: `sample.toml`, `mesh.dat`, `state.dat` and
/// the eddy-viscosity target `mu_t.dat`.
#[derive(Clone, Debug)]
pub struct Sample {
    pub dir: PathBuf,
    pub meta: SampleMeta,
    pub mesh: StructuredMesh,
}

pub fn write_sample(
    dir: &Path,
    meta: &SampleMeta,
    mesh: &StructuredMesh,
    state: &Field,
    mu_t: &Field,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let text = toml::to_string(meta).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(dir.join("sample.toml"), text)?;
    let mut out = create(&dir.join("mesh.dat"))?;
    mesh.write_to(&mut out)?;
    out.flush()?;
    state.save(&dir.join("state.dat"))?;
    mu_t.save(&dir.join("mu_t.dat"))
}

/// Samples of a dataset directory, in name order.
pub fn list_samples(dir: &Path) -> Result<Vec<Sample>> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("sample.toml").is_file())
        .collect();
    dirs.sort();
    dirs.into_iter()
        .map(|d| {
            let text = std::fs::read_to_string(d.join("sample.toml"))?;
            let meta: SampleMeta = toml::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
            let mesh = StructuredMesh::read_from(BufReader::new(std::fs::File::open(d.join("mesh.dat"))?))?;
            Ok(Sample { dir: d, meta, mesh })
        })
        .collect()
}

/// Writes `manifest.toml`: command, seed, config hash, crate version,
/// tolerances in force and command-specific results.
pub fn write_manifest(out: &Path, command: &str, cfg: &ExperimentConfig, results: toml::Table) -> Result<()> {
    let mut t = toml::Table::new();
    t.insert("command".into(), command.into());
    t.insert("version".into(), env!("CARGO_PKG_VERSION").into());
    t.insert("seed".into(), toml::Value::Integer(cfg.seed as i64));
    t.insert("config_hash".into(), cfg.hash()?.into());
    let mut tol = toml::Table::new();
    tol.insert("newton_abs_tol".into(), cfg.newton.abs_tol.into());
    tol.insert("newton_rel_tol".into(), cfg.newton.rel_tol.into());
    tol.insert("newton_max_iters".into(), (cfg.newton.max_iters as i64).into());
    tol.insert("optimizer_tol".into(), cfg.optimizer.tol.into());
    tol.insert("optimizer_grad_tol".into(), cfg.optimizer.grad_tol.into());
    tol.insert("optimizer_max_iters".into(), (cfg.optimizer.max_iters as i64).into());
    tol.insert("checkgrad_tol".into(), cfg.checkgrad.tol.into());
    t.insert("tolerances".into(), tol.into());
    t.insert("results".into(), results.into());
    std::fs::write(out.join("manifest.toml"), toml::to_string(&t).map_err(|e| Error::Config(e.to_string()))?)?;
    std::fs::write(out.join("config.toml"), cfg.to_toml()?)?;
    Ok(())
}
