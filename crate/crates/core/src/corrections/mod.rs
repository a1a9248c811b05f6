//! Trainable correction models producing the field `alpha` consumed by the
//! force layer.

pub mod cnn;

use serde::{Deserialize, Serialize};

use crate::ad::{vjp, Scalar};
use crate::error::{check_len, Error, Result};
use crate::linalg::InnerProduct;
use crate::plants::{Plant, PlantKind, StateVector};

pub use cnn::DirectionalCnn;

/// How `alpha` enters the residual.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForceMode {
    /// Eddy viscosity added to the laminar stresses and heat flux.
    MuT,
    /// Scales the production of the turbulence equation.
    Beta,
    /// Added pointwise to the scalar residual.
    ScalarSource,
}

impl ForceMode {
    pub fn plant_kind(self) -> PlantKind {
        match self {
            ForceMode::MuT => PlantKind::Ns,
            ForceMode::Beta => PlantKind::NsSa,
            ForceMode::ScalarSource => PlantKind::Scalar,
        }
    }

    /// Extra cells of `alpha` a residual row reads beyond its own cell.
    pub fn coupling_radius(self) -> usize {
        match self {
            ForceMode::MuT => 1,
            _ => 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ModelKind {
    /// No correction: `f = 0`.
    Zero,
    /// One parameter per interior cell, `alpha = theta`.
    Field,
    Cnn(DirectionalCnn),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrectionModel {
    pub mode: ForceMode,
    pub kind: ModelKind,
    pub theta: Vec<f64>,
    pub param_inner: InnerProduct,
}

fn check_mode(plant: &Plant, mode: ForceMode) -> Result<()> {
    if plant.kind != mode.plant_kind() {
        return Err(Error::Config(format!(
            "{mode:?} correction needs the {:?} plant, got {:?}",
            mode.plant_kind(),
            plant.kind
        )));
    }
    Ok(())
}

impl CorrectionModel {
    pub fn zero(mode: ForceMode) -> Self {
        CorrectionModel {
            mode,
            kind: ModelKind::Zero,
            theta: Vec::new(),
            param_inner: InnerProduct::identity(0),
        }
    }

    /// Field parameters with the cell-volume inner product.
    pub fn field(plant: &Plant, mode: ForceMode, theta: Vec<f64>) -> Result<Self> {
        check_mode(plant, mode)?;
        check_len(plant.layout.n_interior(), theta.len())?;
        Ok(CorrectionModel {
            mode,
            kind: ModelKind::Field,
            theta,
            param_inner: InnerProduct::new(plant.cell_volumes().to_vec())?,
        })
    }

    /// Network closure with identity inner product; `theta` defaults to the
    /// seeded initialization.
    pub fn cnn(plant: &Plant, mode: ForceMode, net: DirectionalCnn, theta: Option<Vec<f64>>) -> Result<Self> {
        check_mode(plant, mode)?;
        let limit = plant.stencil_radius();
        let declared = net.receptive_radius();
        if declared > limit {
            return Err(Error::ReceptiveField {
                measured: declared,
                declared,
                limit,
                offsets: Vec::new(),
            });
        }
        if net.gate != (mode == ForceMode::MuT) {
            return Err(Error::Config("softplus gate must be on exactly in eddy-viscosity mode".into()));
        }
        if net.channels_in != plant.m() + 1 {
            return Err(Error::Config(format!(
                "network expects {} input channels, plant provides {}",
                net.channels_in,
                plant.m() + 1
            )));
        }
        let theta = theta.unwrap_or_else(|| net.init_params());
        check_len(net.n_params(), theta.len())?;
        Ok(CorrectionModel {
            mode,
            param_inner: InnerProduct::identity(theta.len()),
            kind: ModelKind::Cnn(net),
            theta,
        })
    }

    pub fn with_theta(&self, theta: Vec<f64>) -> Result<Self> {
        check_len(self.theta.len(), theta.len())?;
        Ok(CorrectionModel {
            theta,
            ..self.clone()
        })
    }

    pub fn n_params(&self) -> usize {
        self.theta.len()
    }

    pub fn is_zero(&self) -> bool {
        self.kind == ModelKind::Zero
    }

    /// Cells of `w` (per direction) one value of `alpha` depends on.
    pub fn receptive_radius(&self) -> usize {
        match &self.kind {
            ModelKind::Zero | ModelKind::Field => 0,
            ModelKind::Cnn(net) => net.receptive_radius(),
        }
    }

    /// `alpha_theta(w)` per interior cell for any scalar type.
    pub fn alpha_generic<S: Scalar>(&self, plant: &Plant, theta: &[S], w: &[S]) -> Result<Vec<S>> {
        match &self.kind {
            ModelKind::Zero => Ok(vec![S::zero(); plant.layout.n_interior()]),
            ModelKind::Field => Ok(theta.to_vec()),
            ModelKind::Cnn(net) => Ok(net.forward(plant, theta, w)),
        }
    }

    pub fn alpha(&self, plant: &Plant, w: &StateVector) -> Result<Vec<f64>> {
        self.alpha_generic(plant, &self.theta, &w.data)
    }

    /// Reverse-mode pull-back of a cotangent on `alpha` to `(theta, w)`.
    pub fn param_gradient_via_chain(
        &self,
        plant: &Plant,
        w: &StateVector,
        alpha_bar: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        check_len(plant.layout.n_interior(), alpha_bar.len())?;
        let np = self.theta.len();
        match &self.kind {
            ModelKind::Zero => Ok((Vec::new(), vec![0.0; w.data.len()])),
            ModelKind::Field => Ok((alpha_bar.to_vec(), vec![0.0; w.data.len()])),
            ModelKind::Cnn(_) => {
                let mut x = self.theta.clone();
                x.extend_from_slice(&w.data);
                let (_, g) = vjp(&x, alpha_bar, |v| self.alpha_generic(plant, &v[..np], &v[np..]))?;
                Ok((g[..np].to_vec(), g[np..].to_vec()))
            }
        }
    }

    /// Cells of `w` one residual row reaches through the forcing: the model
    /// radius plus the coupling of the force layer.
    pub fn forcing_radius(&self) -> usize {
        match self.kind {
            ModelKind::Zero | ModelKind::Field => 0,
            ModelKind::Cnn(_) => self.receptive_radius() + self.mode.coupling_radius(),
        }
    }

    /// Fails when the forcing would reach outside the residual stencil, which
    /// would break the sparsity of the Jacobian.
    pub fn check_forcing_fits(&self, plant: &Plant) -> Result<()> {
        let limit = plant.stencil_radius();
        if self.forcing_radius() > limit {
            return Err(Error::ReceptiveField {
                measured: self.forcing_radius(),
                declared: self.receptive_radius(),
                limit,
                offsets: Vec::new(),
            });
        }
        Ok(())
    }

    /// Perturbs one central interior cell of `w` and measures how far the
    /// response of `alpha` reaches. Fails when the measured radius exceeds the
    /// declared one or the declared radius exceeds the plant stencil.
    pub fn receptive_field_check(&self, plant: &Plant, w: &StateVector) -> Result<usize> {
        let layout = &plant.layout;
        let (ci, cj) = (layout.ni / 2, layout.nj / 2);
        let base = self.alpha(plant, w)?;
        let mut pert = w.clone();
        let cell = layout.interior_cell(ci, cj);
        for v in 0..layout.m {
            let x = &mut pert.data[cell * layout.m + v];
            *x += 1e-3 * x.abs().max(1e-2);
        }
        let moved = self.alpha(plant, &pert)?;
        let mut offsets = Vec::new();
        let mut measured = 0;
        for i in 0..layout.ni {
            for j in 0..layout.nj {
                let k = i * layout.nj + j;
                if moved[k] != base[k] {
                    let (di, dj) = (i as isize - ci as isize, j as isize - cj as isize);
                    measured = measured.max(di.unsigned_abs()).max(dj.unsigned_abs());
                    offsets.push((di, dj));
                }
            }
        }
        let declared = self.receptive_radius();
        let limit = plant.stencil_radius();
        if measured > declared || declared > limit {
            return Err(Error::ReceptiveField {
                measured,
                declared,
                limit,
                offsets,
            });
        }
        Ok(measured)
    }
}

#[cfg(test)]
mod tests;
