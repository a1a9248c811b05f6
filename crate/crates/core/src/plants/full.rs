//! The hybrid residual and its layered operators.

use crate::ad::{vjp, Scalar};
use crate::corrections::{CorrectionModel, ForceMode};
use crate::error::{check_len, Error, Result};
use crate::linalg::{assemble_jacobian, AdOp, Kernel, SparseOperator};
use crate::plants::bc::bc_fill;
use crate::plants::ns::NsEval;
use crate::plants::{scalar, Plant, PlantKind};

/// `R_i(w)` for interior rows, index `(i*nj + j)*m + v`.
pub fn interior_residual<S: Scalar>(plant: &Plant, w: &[S]) -> Result<Vec<S>> {
    check_len(plant.layout.len(), w.len())?;
    match plant.kind {
        PlantKind::Scalar => Ok(scalar::residual(plant, w)),
        _ => NsEval::new(plant, w)?.residual(),
    }
}

/// Interior residual plus forcing `f(w, alpha)` for one correction mode.
fn forced_residual<S: Scalar>(plant: &Plant, mode: ForceMode, w: &[S], alpha: Option<&[S]>) -> Result<Vec<S>> {
    check_len(plant.layout.len(), w.len())?;
    let m = plant.m();
    if let Some(a) = alpha {
        check_len(plant.layout.n_interior(), a.len())?;
        if plant.kind != mode.plant_kind() {
            return Err(Error::Config(format!("{mode:?} forcing does not apply to the {:?} plant", plant.kind)));
        }
    }
    match plant.kind {
        PlantKind::Scalar => {
            let mut out = scalar::residual(plant, w);
            if let Some(a) = alpha {
                for (o, x) in out.iter_mut().zip(a) {
                    *o += *x;
                }
            }
            Ok(out)
        }
        _ => {
            let eval = NsEval::new(plant, w)?;
            let mut out = eval.residual()?;
            let Some(a) = alpha else { return Ok(out) };
            match mode {
                ForceMode::MuT => {
                    for (o, f) in out.iter_mut().zip(eval.force_mu_t(a)?) {
                        *o += f;
                    }
                }
                ForceMode::Beta => {
                    for (k, p) in eval.production().into_iter().enumerate() {
                        out[k * m + 4] -= a[k] * p;
                    }
                }
                ForceMode::ScalarSource => unreachable!("checked against the plant kind"),
            }
            Ok(out)
        }
    }
}

/// Forcing alone, `f(w, alpha)`, interior rows.
pub fn forcing<S: Scalar>(plant: &Plant, mode: ForceMode, w: &[S], alpha: &[S]) -> Result<Vec<S>> {
    check_len(plant.layout.len(), w.len())?;
    check_len(plant.layout.n_interior(), alpha.len())?;
    let m = plant.m();
    if plant.kind != mode.plant_kind() {
        return Err(Error::Config(format!("{mode:?} forcing does not apply to the {:?} plant", plant.kind)));
    }
    match mode {
        ForceMode::ScalarSource => Ok(alpha.to_vec()),
        ForceMode::MuT => NsEval::new(plant, w)?.force_mu_t(alpha),
        ForceMode::Beta => {
            let p = NsEval::new(plant, w)?.production();
            let mut out = vec![S::zero(); plant.layout.n_interior() * m];
            for (k, p) in p.into_iter().enumerate() {
                out[k * m + 4] = -(alpha[k] * p);
            }
            Ok(out)
        }
    }
}

/// The full hybrid residual over the extended state: ghost rows
/// `w_o - B(w_i)`, interior rows `R_i(w) + f(w, alpha_theta(w))`.
pub fn full_residual_generic<S: Scalar>(
    plant: &Plant,
    model: &CorrectionModel,
    theta: &[S],
    w: &[S],
) -> Result<Vec<S>> {
    let layout = &plant.layout;
    check_len(layout.len(), w.len())?;
    check_len(model.n_params(), theta.len())?;
    let m = plant.m();
    let filled = bc_fill(plant, w)?;
    let alpha = if model.is_zero() {
        None
    } else {
        Some(model.alpha_generic(plant, theta, w)?)
    };
    let interior = forced_residual(plant, model.mode, w, alpha.as_deref())?;
    let mut out: Vec<S> = w.iter().zip(&filled).map(|(a, b)| *a - *b).collect();
    for (k, cell) in layout.interior_cells().into_iter().enumerate() {
        out[cell * m..(cell + 1) * m].copy_from_slice(&interior[k * m..(k + 1) * m]);
    }
    Ok(out)
}

/// Full residual at the model's current parameters.
pub fn full_residual(plant: &Plant, model: &CorrectionModel, w: &[f64]) -> Result<Vec<f64>> {
    full_residual_generic(plant, model, &model.theta, w)
}

/// `(d_theta F)^T lambda` at fixed `w`.
pub fn theta_adjoint(plant: &Plant, model: &CorrectionModel, w: &[f64], lambda: &[f64]) -> Result<Vec<f64>> {
    check_len(plant.layout.len(), lambda.len())?;
    if model.n_params() == 0 {
        return Ok(Vec::new());
    }
    let (_, g) = vjp(&model.theta, lambda, |th| {
        let wc: Vec<_> = w.iter().map(|&x| Scalar::cst(x)).collect();
        full_residual_generic(plant, model, th, &wc)
    })?;
    Ok(g)
}

/// `d_theta F . dtheta` at fixed `w`.
pub fn theta_tangent(plant: &Plant, model: &CorrectionModel, w: &[f64], dtheta: &[f64]) -> Result<Vec<f64>> {
    check_len(model.n_params(), dtheta.len())?;
    if model.n_params() == 0 {
        return Ok(vec![0.0; w.len()]);
    }
    let (_, mut t) = crate::ad::jvp::<1, _>(&model.theta, &[dtheta], |th| {
        let wc: Vec<_> = w.iter().map(|&x| Scalar::cst(x)).collect();
        full_residual_generic(plant, model, th, &wc)
    })?;
    Ok(t.pop().unwrap())
}

/// Sparse `d_w F` assembled by stencil coloring on the plant pattern.
pub fn full_jacobian(plant: &Plant, model: &CorrectionModel, w: &[f64]) -> Result<SparseOperator> {
    model.check_forcing_fits(plant)?;
    let op = FullResidualOp::new(plant, model);
    assemble_jacobian(&op, w, plant.pattern())
}

/// Ghost fill `w -> B(w_i)` written into a full-length vector; interior
/// entries pass through.
pub struct BcKernel<'a>(pub &'a Plant);
pub type BcOp<'a> = AdOp<BcKernel<'a>>;

impl Kernel for BcKernel<'_> {
    fn input_len(&self) -> usize {
        self.0.layout.len()
    }
    fn output_len(&self) -> usize {
        self.0.layout.len()
    }
    fn apply<S: Scalar>(&self, x: &[S]) -> Result<Vec<S>> {
        bc_fill(self.0, x)
    }
}

/// `w -> R_i(w)`, interior rows only.
pub struct ResidualKernel<'a>(pub &'a Plant);
pub type ResidualOp<'a> = AdOp<ResidualKernel<'a>>;

impl Kernel for ResidualKernel<'_> {
    fn input_len(&self) -> usize {
        self.0.layout.len()
    }
    fn output_len(&self) -> usize {
        self.0.layout.n_interior() * self.0.m()
    }
    fn apply<S: Scalar>(&self, x: &[S]) -> Result<Vec<S>> {
        interior_residual(self.0, x)
    }
}

/// `(w, alpha) -> f(w, alpha)` with `alpha` appended to the input.
pub struct ForceKernel<'a> {
    pub plant: &'a Plant,
    pub mode: ForceMode,
}
pub type ForceOp<'a> = AdOp<ForceKernel<'a>>;

impl Kernel for ForceKernel<'_> {
    fn input_len(&self) -> usize {
        self.plant.layout.len() + self.plant.layout.n_interior()
    }
    fn output_len(&self) -> usize {
        self.plant.layout.n_interior() * self.plant.m()
    }
    fn apply<S: Scalar>(&self, x: &[S]) -> Result<Vec<S>> {
        let n = self.plant.layout.len();
        forcing(self.plant, self.mode, &x[..n], &x[n..])
    }
}

/// `w -> F(w; theta)` at fixed parameters.
pub struct FullResidualKernel<'a> {
    pub plant: &'a Plant,
    pub model: &'a CorrectionModel,
}
pub type FullResidualOp<'a> = AdOp<FullResidualKernel<'a>>;

impl<'a> FullResidualOp<'a> {
    pub fn new(plant: &'a Plant, model: &'a CorrectionModel) -> Self {
        AdOp(FullResidualKernel { plant, model })
    }
}

impl Kernel for FullResidualKernel<'_> {
    fn input_len(&self) -> usize {
        self.plant.layout.len()
    }
    fn output_len(&self) -> usize {
        self.plant.layout.len()
    }
    fn apply<S: Scalar>(&self, x: &[S]) -> Result<Vec<S>> {
        let th: Vec<S> = self.model.theta.iter().map(|&t| S::cst(t)).collect();
        full_residual_generic(self.plant, self.model, &th, x)
    }
}
