//! Ghost-cell fill `w_o = B(w_i)`.
//!
//! Ghosts along the i-edges are filled first for interior rows, then ghosts
//! along the j-edges for every column, corners included. Each ghost reads at
//! most one other cell, so the fill is a chain of cell-local maps.

use serde::{Deserialize, Serialize};

use crate::ad::Scalar;
use crate::error::{Error, Result};
use crate::layout::Layout;
use crate::mesh::StructuredMesh;
use crate::plants::{Plant, PlantConfig, PlantKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundaryCondition {
    /// Flow plants: freestream ghosts. Scalar plant: homogeneous Dirichlet.
    FarField,
    /// Scalar plant: face value fixed to `value`.
    Dirichlet { value: f64 },
    /// Fixed total pressure, total `cp T` and flow angle; static pressure
    /// taken from the interior.
    Inflow {
        total_pressure: f64,
        total_that: f64,
        angle_deg: f64,
    },
    /// Fixed static pressure; other quantities extrapolated.
    Outflow { pressure: f64 },
    /// No-slip adiabatic wall by mirror reflection.
    Wall,
    Periodic,
}

impl BoundaryCondition {
    /// Inflow carrying the freestream total conditions.
    pub fn inflow_from(config: &PlantConfig, angle_deg: f64) -> Self {
        BoundaryCondition::Inflow {
            total_pressure: config.total_pressure_inf(),
            total_that: config.total_that_inf(),
            angle_deg,
        }
    }

    pub fn outflow_from(config: &PlantConfig, pressure_ratio: f64) -> Self {
        BoundaryCondition::Outflow {
            pressure: config.p_inf() * pressure_ratio,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Edge {
    IMin,
    IMax,
    JMin,
    JMax,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundarySpec {
    pub imin: BoundaryCondition,
    pub imax: BoundaryCondition,
    pub jmin: BoundaryCondition,
    pub jmax: BoundaryCondition,
}

impl BoundarySpec {
    pub fn uniform(bc: BoundaryCondition) -> Self {
        BoundarySpec {
            imin: bc.clone(),
            imax: bc.clone(),
            jmin: bc.clone(),
            jmax: bc,
        }
    }

    /// Inflow at `imin`, outflow at `imax`, wall at `jmin`, far field at `jmax`.
    pub fn channel(config: &PlantConfig, angle_deg: f64, pressure_ratio: f64) -> Self {
        BoundarySpec {
            imin: BoundaryCondition::inflow_from(config, angle_deg),
            imax: BoundaryCondition::outflow_from(config, pressure_ratio),
            jmin: BoundaryCondition::Wall,
            jmax: BoundaryCondition::FarField,
        }
    }

    pub fn get(&self, e: Edge) -> &BoundaryCondition {
        match e {
            Edge::IMin => &self.imin,
            Edge::IMax => &self.imax,
            Edge::JMin => &self.jmin,
            Edge::JMax => &self.jmax,
        }
    }

    pub fn validate(&self, kind: PlantKind) -> Result<()> {
        let per = |bc: &BoundaryCondition| *bc == BoundaryCondition::Periodic;
        if per(&self.imin) != per(&self.imax) || per(&self.jmin) != per(&self.jmax) {
            return Err(Error::Config("periodic edges must come in opposite pairs".into()));
        }
        for e in [Edge::IMin, Edge::IMax, Edge::JMin, Edge::JMax] {
            let bc = self.get(e);
            let ok = match (kind, bc) {
                (_, BoundaryCondition::FarField | BoundaryCondition::Periodic) => true,
                (PlantKind::Scalar, BoundaryCondition::Dirichlet { .. } | BoundaryCondition::Outflow { .. }) => true,
                (PlantKind::Scalar, _) => false,
                (_, BoundaryCondition::Dirichlet { .. }) => false,
                (_, BoundaryCondition::Inflow { total_pressure, total_that, .. }) => {
                    *total_pressure > 0.0 && *total_that > 0.0
                }
                (_, BoundaryCondition::Outflow { pressure }) => *pressure > 0.0,
                (_, BoundaryCondition::Wall) => true,
            };
            if !ok {
                return Err(Error::Config(format!("{bc:?} on {e:?} is not valid for the {kind:?} plant")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct GhostFill {
    pub ghost: usize,
    pub source: Option<usize>,
    pub edge: Edge,
}

/// Fill order and source cell of every ghost.
pub(crate) fn fill_sequence(layout: &Layout, bc: &BoundarySpec) -> Vec<GhostFill> {
    let (ni, nj, g) = (layout.ni, layout.nj, layout.g);
    let mut out = Vec::new();
    let src = |edge: Edge, mirror: usize, partner: usize| match bc.get(edge) {
        BoundaryCondition::Periodic => Some(partner),
        BoundaryCondition::FarField => None,
        _ => Some(mirror),
    };
    for b in g..g + nj {
        for k in 1..=g {
            out.push(GhostFill {
                ghost: layout.cell(g - k, b),
                source: src(Edge::IMin, layout.cell(g + k - 1, b), layout.cell(g + ni - k, b)),
                edge: Edge::IMin,
            });
            out.push(GhostFill {
                ghost: layout.cell(g + ni - 1 + k, b),
                source: src(Edge::IMax, layout.cell(g + ni - k, b), layout.cell(g + k - 1, b)),
                edge: Edge::IMax,
            });
        }
    }
    for a in 0..layout.ext_ni() {
        for k in 1..=g {
            out.push(GhostFill {
                ghost: layout.cell(a, g - k),
                source: src(Edge::JMin, layout.cell(a, g + k - 1), layout.cell(a, g + nj - k)),
                edge: Edge::JMin,
            });
            out.push(GhostFill {
                ghost: layout.cell(a, g + nj - 1 + k),
                source: src(Edge::JMax, layout.cell(a, g + nj - k), layout.cell(a, g + k - 1)),
                edge: Edge::JMax,
            });
        }
    }
    out
}

/// Interior cells each ghost cell depends on.
pub(crate) fn ghost_sources(layout: &Layout, fills: &[GhostFill]) -> Vec<Vec<usize>> {
    let mut deps: Vec<Vec<usize>> = (0..layout.n_cells())
        .map(|c| {
            let (a, b) = layout.coords(c);
            if layout.is_interior(a, b) {
                vec![c]
            } else {
                Vec::new()
            }
        })
        .collect();
    for f in fills {
        deps[f.ghost] = f.source.map(|s| deps[s].clone()).unwrap_or_default();
    }
    deps
}

fn interior_coords(layout: &Layout, cell: usize) -> (isize, isize) {
    let (a, b) = layout.coords(cell);
    (a as isize - layout.g as isize, b as isize - layout.g as isize)
}

pub(crate) fn pressure<S: Scalar>(gamma: f64, c: &[S]) -> S {
    (c[3] - (c[1] * c[1] + c[2] * c[2]) / c[0] * 0.5) * (gamma - 1.0)
}

/// Overwrites the ghost cells of `w` with `B(w_i)`.
pub fn bc_fill_in_place<S: Scalar>(plant: &Plant, w: &mut [S]) -> Result<()> {
    let m = plant.m();
    let layout = &plant.layout;
    let cfg = &plant.config;
    let gamma = cfg.gamma;
    let fs: Vec<f64> = cfg.freestream(m);
    for f in plant.fills() {
        let gbase = f.ghost * m;
        let sbase = f.source.map(|s| s * m);
        let bc = plant.bc.get(f.edge);
        if plant.kind == PlantKind::Scalar {
            let s = sbase.map(|s| w[s]);
            w[gbase] = match (bc, s) {
                (BoundaryCondition::Periodic | BoundaryCondition::Outflow { .. }, Some(s)) => s,
                (BoundaryCondition::Dirichlet { value }, Some(s)) => -s + 2.0 * value,
                (BoundaryCondition::FarField, None) => S::zero(),
                _ => unreachable!("validated boundary set"),
            };
            continue;
        }
        let mut cell = [S::zero(); 5];
        match bc {
            BoundaryCondition::FarField => {
                for v in 0..m {
                    cell[v] = S::cst(fs[v]);
                }
            }
            BoundaryCondition::Periodic => {
                let s = sbase.unwrap();
                cell[..m].copy_from_slice(&w[s..s + m]);
            }
            BoundaryCondition::Wall => {
                let s = sbase.unwrap();
                cell[..m].copy_from_slice(&w[s..s + m]);
                cell[1] = -cell[1];
                cell[2] = -cell[2];
                if m == 5 {
                    cell[4] = -cell[4];
                }
            }
            BoundaryCondition::Outflow { pressure: pb } => {
                let s = sbase.unwrap();
                cell[..m].copy_from_slice(&w[s..s + m]);
                let (rho, ru, rv) = (cell[0], cell[1], cell[2]);
                cell[3] = (ru * ru + rv * rv) / rho * 0.5 + pb / (gamma - 1.0);
            }
            BoundaryCondition::Inflow {
                total_pressure,
                total_that,
                angle_deg,
            } => {
                let s = sbase.unwrap();
                let p = pressure(gamma, &w[s..s + m]);
                let (i, j) = interior_coords(layout, f.ghost);
                if !(p.value() > 0.0) || !(w[s].value() > 0.0) {
                    return Err(Error::InflowDecode { i, j });
                }
                let that = (p / *total_pressure).powf((gamma - 1.0) / gamma) * *total_that;
                let q2 = (-that + *total_that) * 2.0;
                if !(q2.value() > 0.0) {
                    return Err(Error::InflowDecode { i, j });
                }
                let q = q2.sqrt();
                let rho = p / that * (gamma / (gamma - 1.0));
                let a = angle_deg.to_radians();
                cell[0] = rho;
                cell[1] = rho * q * a.cos();
                cell[2] = rho * q * a.sin();
                cell[3] = p / (gamma - 1.0) + rho * q2 * 0.5;
                if m == 5 {
                    cell[4] = rho * (cfg.nut_ratio * cfg.mu());
                }
            }
            BoundaryCondition::Dirichlet { .. } => unreachable!("validated boundary set"),
        }
        w[gbase..gbase + m].copy_from_slice(&cell[..m]);
    }
    Ok(())
}

/// `w` with its ghost cells replaced by `B(w_i)`.
pub fn bc_fill<S: Scalar>(plant: &Plant, w: &[S]) -> Result<Vec<S>> {
    let mut out = w.to_vec();
    bc_fill_in_place(plant, &mut out)?;
    Ok(out)
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let l2 = dx * dx + dy * dy;
    let t = if l2 > 0.0 {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / l2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (x, y) = (a[0] + t * dx - p[0], a[1] + t * dy - p[1]);
    x.hypot(y)
}

/// Exact distance from each interior cell centre to the nearest wall face.
pub fn wall_distance(mesh: &StructuredMesh, bc: &BoundarySpec) -> Vec<f64> {
    let (ni, nj) = (mesh.ni, mesh.nj);
    let mut segs = Vec::new();
    if bc.imin == BoundaryCondition::Wall {
        segs.extend((0..nj).map(|j| (mesh.node(0, j), mesh.node(0, j + 1))));
    }
    if bc.imax == BoundaryCondition::Wall {
        segs.extend((0..nj).map(|j| (mesh.node(ni, j), mesh.node(ni, j + 1))));
    }
    if bc.jmin == BoundaryCondition::Wall {
        segs.extend((0..ni).map(|i| (mesh.node(i, 0), mesh.node(i + 1, 0))));
    }
    if bc.jmax == BoundaryCondition::Wall {
        segs.extend((0..ni).map(|i| (mesh.node(i, nj), mesh.node(i + 1, nj))));
    }
    let mut d = Vec::with_capacity(ni * nj);
    for i in 0..ni {
        for j in 0..nj {
            let c = mesh.cell_center(i, j);
            d.push(
                segs.iter()
                    .map(|&(a, b)| segment_distance(c, a, b))
                    .fold(f64::INFINITY, f64::min),
            );
        }
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plant(kind: PlantKind, bc: BoundarySpec) -> Plant {
        let mesh = StructuredMesh::build_cartesian(6, 4, 1.5, 1.0, 1.0).unwrap();
        Plant::new(kind, PlantConfig::default(), mesh, bc).unwrap()
    }

    #[test]
    fn far_field_ghosts_equal_freestream() {
        let p = plant(PlantKind::NsSa, BoundarySpec::uniform(BoundaryCondition::FarField));
        let w = p.uniform_state();
        let filled = bc_fill(&p, &w.data).unwrap();
        assert_eq!(filled, w.data);
    }

    #[test]
    fn periodic_copies_opposite_band() {
        let p = plant(PlantKind::Ns, BoundarySpec::uniform(BoundaryCondition::Periodic));
        let l = p.layout;
        let mut w = p.uniform_state().data;
        for (k, x) in w.iter_mut().enumerate() {
            *x += 1e-3 * ((k * 37 % 101) as f64);
        }
        let f = bc_fill(&p, &w).unwrap();
        for b in l.g..l.g + l.nj {
            for k in 1..=l.g {
                for v in 0..4 {
                    assert_eq!(f[l.idx(l.g - k, b, v)].to_bits(), f[l.idx(l.g + l.ni - k, b, v)].to_bits());
                    assert_eq!(f[l.idx(l.g + l.ni - 1 + k, b, v)].to_bits(), f[l.idx(l.g + k - 1, b, v)].to_bits());
                }
            }
        }
    }

    #[test]
    fn wall_mirror_on_one_cell() {
        let cfg = PlantConfig::default();
        let p = plant(PlantKind::NsSa, BoundarySpec::channel(&cfg, 0.0, 1.0));
        let l = p.layout;
        let mut w = p.uniform_state().data;
        let cell = [1.1, 0.3, -0.2, 3.2, 0.004];
        let first = l.idx(l.g + 2, l.g, 0);
        w[first..first + 5].copy_from_slice(&cell);
        let f = bc_fill(&p, &w).unwrap();
        let ghost = l.idx(l.g + 2, l.g - 1, 0);
        assert_eq!(&f[ghost..ghost + 5], &[1.1, -0.3, 0.2, 3.2, -0.004]);
        // same pressure, hence same temperature and density
        assert_eq!(pressure(1.4, &f[ghost..ghost + 5]), pressure(1.4, &cell));
    }

    #[test]
    fn inflow_reproduces_freestream_at_freestream_pressure() {
        let cfg = PlantConfig::default();
        let p = plant(PlantKind::NsSa, BoundarySpec::channel(&cfg, 0.0, 1.0));
        let w = p.uniform_state().data;
        let f = bc_fill(&p, &w).unwrap();
        let l = p.layout;
        for b in l.g..l.g + l.nj {
            for a in 0..l.g {
                for v in 0..5 {
                    let (x, y) = (f[l.idx(a, b, v)], w[l.idx(a, b, v)]);
                    assert!((x - y).abs() < 1e-12 * y.abs().max(1.0), "{x} vs {y}");
                }
            }
        }
    }

    #[test]
    fn inflow_rejects_pressure_above_total() {
        let cfg = PlantConfig::default();
        let p = plant(PlantKind::Ns, BoundarySpec::channel(&cfg, 0.0, 1.0));
        let l = p.layout;
        let mut w = p.uniform_state().data;
        let c = l.idx(l.g, l.g + 1, 0);
        w[c + 3] *= 2.0;
        assert!(matches!(bc_fill(&p, &w), Err(Error::InflowDecode { .. })));
    }

    #[test]
    fn scalar_dirichlet_is_odd_reflection() {
        let p = plant(PlantKind::Scalar, BoundarySpec::uniform(BoundaryCondition::Dirichlet { value: 0.5 }));
        let l = p.layout;
        let mut w = vec![0.0; l.len()];
        w[l.idx(l.g, l.g + 1, 0)] = 2.0;
        let f = bc_fill(&p, &w).unwrap();
        assert_eq!(f[l.idx(l.g - 1, l.g + 1, 0)], -1.0);
    }

    #[test]
    fn wall_distance_on_flat_channel() {
        let cfg = PlantConfig::default();
        let mesh = StructuredMesh::build_cartesian(6, 4, 3.0, 1.0, 1.0).unwrap();
        let d = wall_distance(&mesh, &BoundarySpec::channel(&cfg, 0.0, 1.0));
        for i in 0..6 {
            for j in 0..4 {
                assert!((d[i * 4 + j] - (j as f64 + 0.5) * 0.25).abs() < 1e-15);
            }
        }
        let d = wall_distance(&mesh, &BoundarySpec::uniform(BoundaryCondition::FarField));
        assert!(d.iter().all(|x| x.is_infinite()));
    }
}
