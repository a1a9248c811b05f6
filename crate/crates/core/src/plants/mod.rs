//! Governing-equation residuals.
//!
//! The full discrete residual over the state `w = (w_i, w_o)` is
//!
//! ```text
//! rows of w_o:  w_o - B(w_i)
//! rows of w_i:  R_i(w_i, w_o) + f(w, alpha)
//! ```
//!
//! with `B` the ghost fill, `R_i` the flux balance per unit volume and `f`
//! the correction forcing.

pub mod bc;
pub mod full;
pub mod io;
pub mod ns;
pub mod scalar;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::layout::Layout;
use crate::linalg::StencilPattern;
use crate::mesh::{GhostGeometry, StructuredMesh};

pub use bc::{BoundaryCondition, BoundarySpec, Edge};
pub use full::{BcOp, ForceOp, FullResidualOp, ResidualOp};
pub use ns::{eddy_viscosity, production_term};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantKind {
    /// Advection-diffusion of one scalar.
    Scalar,
    /// Laminar compressible Navier-Stokes, `[rho, rho u, rho v, rho E]`.
    Ns,
    /// Navier-Stokes with the one-equation turbulence transport, adds `rho nu~`.
    NsSa,
}

impl PlantKind {
    pub fn m(self) -> usize {
        match self {
            PlantKind::Scalar => 1,
            PlantKind::Ns => 4,
            PlantKind::NsSa => 5,
        }
    }

    pub fn var_names(self) -> &'static [&'static str] {
        match self {
            PlantKind::Scalar => &["phi"],
            PlantKind::Ns => &["rho", "rhou", "rhov", "rhoE"],
            PlantKind::NsSa => &["rho", "rhou", "rhov", "rhoE", "rhonut"],
        }
    }
}

/// Coefficients of the one-equation turbulence model (no trip terms, no ft2).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SaConstants {
    pub cb1: f64,
    pub cb2: f64,
    pub sigma: f64,
    pub kappa: f64,
    pub cw2: f64,
    pub cw3: f64,
    pub cv1: f64,
    pub cv2: f64,
    pub cv3: f64,
}

impl Default for SaConstants {
    fn default() -> Self {
        SaConstants {
            cb1: 0.1355,
            cb2: 0.622,
            sigma: 2.0 / 3.0,
            kappa: 0.41,
            cw2: 0.3,
            cw3: 2.0,
            cv1: 7.1,
            cv2: 0.7,
            cv3: 0.9,
        }
    }
}

impl SaConstants {
    pub fn cw1(&self) -> f64 {
        self.cb1 / (self.kappa * self.kappa) + (1.0 + self.cb2) / self.sigma
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScalarParams {
    pub ax: f64,
    pub ay: f64,
    pub nu: f64,
    /// Add the source that makes `sin(pi x) sin(pi y)` an exact solution.
    pub manufactured: bool,
}

impl Default for ScalarParams {
    fn default() -> Self {
        ScalarParams {
            ax: 1.0,
            ay: 0.5,
            nu: 0.5,
            manufactured: false,
        }
    }
}

/// Discretization and physical constants. Flow quantities are scaled by the
/// freestream density, speed and a unit length, so `mu = 1/Re`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantConfig {
    pub stencil_radius: usize,
    pub mach: f64,
    pub reynolds: f64,
    /// Freestream flow direction in degrees from the x axis.
    pub angle_deg: f64,
    pub gamma: f64,
    pub prandtl: f64,
    pub prandtl_t: f64,
    /// Freestream turbulence variable as a multiple of the laminar kinematic viscosity.
    pub nut_ratio: f64,
    pub muscl_kappa: f64,
    /// Minmod slope limiter; off by default because it is not differentiable at kinks.
    pub limiter: bool,
    pub sa: SaConstants,
    pub scalar: ScalarParams,
}

impl Default for PlantConfig {
    fn default() -> Self {
        PlantConfig {
            stencil_radius: 2,
            mach: 0.5,
            reynolds: 500.0,
            angle_deg: 0.0,
            gamma: 1.4,
            prandtl: 0.72,
            prandtl_t: 0.9,
            nut_ratio: 3.0,
            muscl_kappa: 1.0 / 3.0,
            limiter: false,
            sa: SaConstants::default(),
            scalar: ScalarParams::default(),
        }
    }
}

impl PlantConfig {
    pub fn mu(&self) -> f64 {
        1.0 / self.reynolds
    }

    pub fn p_inf(&self) -> f64 {
        1.0 / (self.gamma * self.mach * self.mach)
    }

    /// `cp T` of the freestream.
    pub fn that_inf(&self) -> f64 {
        self.gamma / (self.gamma - 1.0) * self.p_inf()
    }

    pub fn total_pressure_inf(&self) -> f64 {
        let g = self.gamma;
        self.p_inf() * (1.0 + 0.5 * (g - 1.0) * self.mach * self.mach).powf(g / (g - 1.0))
    }

    pub fn total_that_inf(&self) -> f64 {
        self.that_inf() + 0.5
    }

    /// Freestream conservative state for `m` variables.
    pub fn freestream(&self, m: usize) -> Vec<f64> {
        let a = self.angle_deg.to_radians();
        let (u, v) = (a.cos(), a.sin());
        let p = self.p_inf();
        let mut w = vec![1.0, u, v, p / (self.gamma - 1.0) + 0.5];
        if m == 5 {
            w.push(self.nut_ratio * self.mu());
        }
        w.truncate(m);
        w
    }
}

/// A mesh, boundary conditions and discretization bound together.
#[derive(Clone, Debug)]
pub struct Plant {
    pub kind: PlantKind,
    pub config: PlantConfig,
    pub mesh: StructuredMesh,
    pub geom: GhostGeometry,
    pub bc: BoundarySpec,
    pub layout: Layout,
    /// Nearest wall-face distance per interior cell (infinite without walls).
    pub wall_distance: Vec<f64>,
    source: Vec<f64>,
    fills: Vec<bc::GhostFill>,
    pattern: StencilPattern,
}

impl Plant {
    pub fn new(kind: PlantKind, config: PlantConfig, mesh: StructuredMesh, bc: BoundarySpec) -> Result<Self> {
        let r = config.stencil_radius;
        if r < 2 {
            return Err(Error::Config(format!(
                "stencil radius {r} is below the radius 2 of the second-order scheme"
            )));
        }
        if r > mesh.g {
            return Err(Error::Config(format!(
                "stencil radius {r} exceeds ghost depth {}",
                mesh.g
            )));
        }
        if !(config.prandtl_t > 0.0) || !(config.prandtl > 0.0) {
            return Err(Error::Config("Prandtl numbers must be positive".into()));
        }
        if kind != PlantKind::Scalar && !(config.mach > 0.0 && config.reynolds > 0.0 && config.gamma > 1.0) {
            return Err(Error::Config("flow constants out of range".into()));
        }
        bc.validate(kind)?;
        let layout = Layout::new(mesh.ni, mesh.nj, mesh.g, kind.m());
        let geom = mesh.ghost_geometry();
        let wall_distance = bc::wall_distance(&mesh, &bc);
        let source = if kind == PlantKind::Scalar && config.scalar.manufactured {
            scalar::manufactured_source(&mesh, &config.scalar)
        } else {
            vec![0.0; layout.n_interior()]
        };
        let fills = bc::fill_sequence(&layout, &bc);
        let sources = bc::ghost_sources(&layout, &fills);
        let pattern = StencilPattern::new(layout, r, |cell| sources[cell].clone());
        Ok(Plant {
            kind,
            config,
            mesh,
            geom,
            bc,
            layout,
            wall_distance,
            source,
            fills,
            pattern,
        })
    }

    pub fn m(&self) -> usize {
        self.layout.m
    }

    /// Declared coupling pattern of the full residual.
    pub fn pattern(&self) -> &StencilPattern {
        &self.pattern
    }

    pub fn stencil_radius(&self) -> usize {
        self.config.stencil_radius
    }

    pub(crate) fn fills(&self) -> &[bc::GhostFill] {
        &self.fills
    }

    pub(crate) fn source(&self) -> &[f64] {
        &self.source
    }

    /// Uniform state: the freestream for flow plants, zero for the scalar plant.
    pub fn uniform_state(&self) -> StateVector {
        let cell = match self.kind {
            PlantKind::Scalar => vec![0.0],
            _ => self.config.freestream(self.m()),
        };
        let mut data = Vec::with_capacity(self.layout.len());
        for _ in 0..self.layout.n_cells() {
            data.extend_from_slice(&cell);
        }
        StateVector::new(self.kind, self.layout, data).unwrap()
    }

    /// State with interior values from `interior` (index `(i*nj + j)*m + v`)
    /// and ghosts filled by the boundary conditions.
    pub fn state_from_interior(&self, interior: &[f64]) -> Result<StateVector> {
        check_len(self.layout.n_interior() * self.m(), interior.len())?;
        let mut s = self.uniform_state();
        let m = self.m();
        for (k, cell) in self.layout.interior_cells().into_iter().enumerate() {
            s.data[cell * m..(cell + 1) * m].copy_from_slice(&interior[k * m..(k + 1) * m]);
        }
        bc::bc_fill_in_place(self, &mut s.data)?;
        Ok(s)
    }

    /// Volume weights for every entry of a full state (ghost cells included).
    pub fn state_weights(&self) -> Vec<f64> {
        let m = self.m();
        self.geom.volumes().iter().flat_map(|&v| std::iter::repeat_n(v, m)).collect()
    }

    /// Volume weights over interior cells, one per cell.
    pub fn cell_volumes(&self) -> &[f64] {
        self.mesh.volumes()
    }

    /// Pseudo-time diagonal `lambda_c / V_c` per interior cell; `1/dt` is
    /// this divided by the CFL number.
    pub fn spectral_radius(&self, w: &[f64]) -> Result<Vec<f64>> {
        match self.kind {
            PlantKind::Scalar => Ok(scalar::spectral_radius(self)),
            _ => ns::spectral_radius(self, w),
        }
    }
}

/// Full state over the extended grid.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    pub kind: PlantKind,
    pub layout: Layout,
    pub data: Vec<f64>,
}

impl StateVector {
    pub fn new(kind: PlantKind, layout: Layout, data: Vec<f64>) -> Result<Self> {
        check_len(layout.len(), data.len())?;
        if layout.m != kind.m() {
            return Err(Error::Config(format!(
                "layout carries {} values per cell, plant needs {}",
                layout.m,
                kind.m()
            )));
        }
        Ok(StateVector { kind, layout, data })
    }

    pub fn get(&self, a: usize, b: usize, v: usize) -> f64 {
        self.data[self.layout.idx(a, b, v)]
    }

    /// Interior values, index `(i*nj + j)*m + v`.
    pub fn interior(&self) -> Vec<f64> {
        let m = self.layout.m;
        let mut out = Vec::with_capacity(self.layout.n_interior() * m);
        for cell in self.layout.interior_cells() {
            out.extend_from_slice(&self.data[cell * m..(cell + 1) * m]);
        }
        out
    }

    /// Values of ghost cells in extended-index order.
    pub fn ghosts(&self) -> Vec<f64> {
        let m = self.layout.m;
        let mut out = Vec::new();
        for cell in 0..self.layout.n_cells() {
            let (a, b) = self.layout.coords(cell);
            if !self.layout.is_interior(a, b) {
                out.extend_from_slice(&self.data[cell * m..(cell + 1) * m]);
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}
