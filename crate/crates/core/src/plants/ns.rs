//! Compressible Navier-Stokes residual with optional turbulence transport.
//!
//! Convective fluxes: MUSCL reconstruction of `(rho, u, v, p, nu~)` and a
//! Rusanov flux. Viscous fluxes: face gradients from averaged Green-Gauss
//! cell gradients with a correction along the line joining the two centres.
//! Temperature appears only as `T^ = cp T = gamma/(gamma-1) p/rho`, so the
//! heat flux is `(mu/Pr + mu_t/Pr_t) grad T^`.

use crate::ad::Scalar;
use crate::error::{Error, Result};
use crate::plants::{Plant, PlantKind, StateVector};

/// Per-face viscous kernels, already multiplied by the scaled face normal.
#[derive(Clone, Copy, Debug)]
pub(crate) struct FaceVisc<S> {
    /// Normalized stress `tau^ . S` with `tau^ = grad U + grad U^T - 2/3 div U I`.
    pub tn: [S; 2],
    /// `(tau^ . S) . U_face`.
    pub work: S,
    /// `grad T^ . S`.
    pub heat: S,
    /// `grad nu~ . S`.
    pub dnut: S,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Face {
    pub l: usize,
    pub r: usize,
    pub s: [f64; 2],
    pub l_interior: bool,
    pub r_interior: bool,
    /// Cells at `l - 1` and `r + 1` along the face direction.
    pub ll: usize,
    pub rr: usize,
}

/// Interior faces and boundary faces of the interior block, i-faces first.
pub(crate) fn faces(plant: &Plant) -> Vec<Face> {
    let l = &plant.layout;
    let (g, ni, nj) = (l.g, l.ni, l.nj);
    let mut out = Vec::with_capacity((ni + 1) * nj + ni * (nj + 1));
    for a in g..=g + ni {
        for b in g..g + nj {
            out.push(Face {
                l: l.cell(a - 1, b),
                r: l.cell(a, b),
                s: plant.geom.i_face(a, b),
                l_interior: a > g,
                r_interior: a < g + ni,
                ll: l.cell(a - 2, b),
                rr: l.cell(a + 1, b),
            });
        }
    }
    for a in g..g + ni {
        for b in g..=g + nj {
            out.push(Face {
                l: l.cell(a, b - 1),
                r: l.cell(a, b),
                s: plant.geom.j_face(a, b),
                l_interior: b > g,
                r_interior: b < g + nj,
                ll: l.cell(a, b - 2),
                rr: l.cell(a, b + 1),
            });
        }
    }
    out
}

pub(crate) struct NsEval<'a, S: Scalar> {
    plant: &'a Plant,
    sa: bool,
    /// `(rho, u, v, p, nu~)` per extended cell.
    pub prim: Vec<[S; 5]>,
    /// Gradients of `(u, v, T^, nu~)` per extended cell.
    pub grad: Vec<[[S; 2]; 4]>,
    /// Eddy viscosity of the transport model per extended cell.
    mu_t: Vec<S>,
    pub faces: Vec<Face>,
    pub visc: Vec<FaceVisc<S>>,
}

fn invalid(plant: &Plant, cell: usize, reason: &str) -> Error {
    let (a, b) = plant.layout.coords(cell);
    let g = plant.layout.g as isize;
    Error::InvalidState {
        i: a as isize - g,
        j: b as isize - g,
        reason: reason.to_string(),
    }
}

fn that<S: Scalar>(gamma: f64, q: &[S; 5]) -> S {
    q[3] / q[0] * (gamma / (gamma - 1.0))
}

impl<'a, S: Scalar> NsEval<'a, S> {
    pub fn new(plant: &'a Plant, w: &[S]) -> Result<Self> {
        let layout = &plant.layout;
        let m = layout.m;
        let sa = plant.kind == PlantKind::NsSa;
        let gamma = plant.config.gamma;
        let mu = plant.config.mu();

        let mut prim = Vec::with_capacity(layout.n_cells());
        for cell in 0..layout.n_cells() {
            let c = &w[cell * m..(cell + 1) * m];
            let rho = c[0];
            if !(rho.value() > 0.0) {
                return Err(invalid(plant, cell, "non-positive density"));
            }
            let u = c[1] / rho;
            let v = c[2] / rho;
            let p = (c[3] - (c[1] * u + c[2] * v) * 0.5) * (gamma - 1.0);
            if !(p.value() > 0.0) {
                return Err(invalid(plant, cell, "non-positive pressure"));
            }
            let nut = if sa { c[4] / rho } else { S::zero() };
            prim.push([rho, u, v, p, nut]);
        }

        let mut mu_t = Vec::new();
        if sa {
            let cv1_3 = plant.config.sa.cv1.powi(3);
            for (cell, q) in prim.iter().enumerate() {
                let (a, b) = layout.coords(cell);
                let chi = q[4] * q[0] / mu;
                if layout.is_interior(a, b) && !(chi.value() > -1.0) {
                    return Err(invalid(plant, cell, "turbulence variable below bound"));
                }
                mu_t.push(if q[4].value() > 0.0 {
                    let chi3 = chi * chi * chi;
                    q[0] * q[4] * chi3 / (chi3 + cv1_3)
                } else {
                    S::zero()
                });
            }
        }

        let nq = if sa { 4 } else { 3 };
        let zero2 = [S::zero(); 2];
        let mut grad = vec![[zero2; 4]; layout.n_cells()];
        let (g, ni, nj) = (layout.g, layout.ni, layout.nj);
        let geom = &plant.geom;
        for a in g - 1..=g + ni {
            for b in g - 1..=g + nj {
                let corner = (a == g - 1 || a == g + ni) && (b == g - 1 || b == g + nj);
                if corner {
                    continue;
                }
                let inv_2v = 0.5 / geom.volume(a, b);
                let (e, wst, n, s) = (
                    layout.cell(a + 1, b),
                    layout.cell(a - 1, b),
                    layout.cell(a, b + 1),
                    layout.cell(a, b - 1),
                );
                let (se, sw, sn, ss) = (geom.i_face(a + 1, b), geom.i_face(a, b), geom.j_face(a, b + 1), geom.j_face(a, b));
                let c = layout.cell(a, b);
                let qv = |cell: usize, k: usize| -> S {
                    let q = &prim[cell];
                    match k {
                        0 => q[1],
                        1 => q[2],
                        2 => that(gamma, q),
                        _ => q[4],
                    }
                };
                for k in 0..nq {
                    let (qe, qw, qn, qs) = (qv(e, k), qv(wst, k), qv(n, k), qv(s, k));
                    for d in 0..2 {
                        grad[c][k][d] = (qe * se[d] - qw * sw[d] + qn * sn[d] - qs * ss[d]) * inv_2v;
                    }
                }
            }
        }

        let faces = faces(plant);
        let mut eval = NsEval {
            plant,
            sa,
            prim,
            grad,
            mu_t,
            faces,
            visc: Vec::new(),
        };
        eval.visc = eval.faces.iter().map(|f| eval.face_visc(f)).collect();
        Ok(eval)
    }

    fn face_visc(&self, f: &Face) -> FaceVisc<S> {
        let gamma = self.plant.config.gamma;
        let (cl, cr) = (self.plant.geom_center(f.l), self.plant.geom_center(f.r));
        let d = [cr[0] - cl[0], cr[1] - cl[1]];
        let d2 = d[0] * d[0] + d[1] * d[1];
        let (ql, qr) = (&self.prim[f.l], &self.prim[f.r]);
        let phis = |k: usize, q: &[S; 5]| -> S {
            match k {
                0 => q[1],
                1 => q[2],
                2 => that(gamma, q),
                _ => q[4],
            }
        };
        let nq = if self.sa { 4 } else { 3 };
        let mut gf = [[S::zero(); 2]; 4];
        for k in 0..nq {
            let (gl, gr) = (self.grad[f.l][k], self.grad[f.r][k]);
            let gx = (gl[0] + gr[0]) * 0.5;
            let gy = (gl[1] + gr[1]) * 0.5;
            let corr = (phis(k, qr) - phis(k, ql) - gx * d[0] - gy * d[1]) / d2;
            gf[k] = [gx + corr * d[0], gy + corr * d[1]];
        }
        let uf = (ql[1] + qr[1]) * 0.5;
        let vf = (ql[2] + qr[2]) * 0.5;
        let [ux, uy] = gf[0];
        let [vx, vy] = gf[1];
        let div = ux + vy;
        let txx = ux * 2.0 - div * (2.0 / 3.0);
        let tyy = vy * 2.0 - div * (2.0 / 3.0);
        let txy = uy + vx;
        let tn = [txx * f.s[0] + txy * f.s[1], txy * f.s[0] + tyy * f.s[1]];
        FaceVisc {
            tn,
            work: tn[0] * uf + tn[1] * vf,
            heat: gf[2][0] * f.s[0] + gf[2][1] * f.s[1],
            dnut: gf[3][0] * f.s[0] + gf[3][1] * f.s[1],
        }
    }

    fn reconstruct(&self, f: &Face) -> Result<([S; 5], [S; 5])> {
        let kappa = self.plant.config.muscl_kappa;
        let limiter = self.plant.config.limiter;
        let (qll, ql, qr, qrr) = (&self.prim[f.ll], &self.prim[f.l], &self.prim[f.r], &self.prim[f.rr]);
        let mut left = *ql;
        let mut right = *qr;
        let nv = if self.sa { 5 } else { 4 };
        for k in 0..nv {
            let (dm, d0, dp) = (ql[k] - qll[k], qr[k] - ql[k], qrr[k] - qr[k]);
            if limiter {
                let beta = (3.0 - kappa) / (1.0 - kappa);
                left[k] = ql[k] + (minmod(dm, d0 * beta) * (1.0 - kappa) + minmod(d0, dm * beta) * (1.0 + kappa)) * 0.25;
                right[k] = qr[k] - (minmod(dp, d0 * beta) * (1.0 - kappa) + minmod(d0, dp * beta) * (1.0 + kappa)) * 0.25;
            } else {
                left[k] = ql[k] + (dm * (1.0 - kappa) + d0 * (1.0 + kappa)) * 0.25;
                right[k] = qr[k] - (dp * (1.0 - kappa) + d0 * (1.0 + kappa)) * 0.25;
            }
        }
        if !(left[0].value() > 0.0 && left[3].value() > 0.0) {
            return Err(invalid(self.plant, f.l, "reconstructed face state is not physical"));
        }
        if !(right[0].value() > 0.0 && right[3].value() > 0.0) {
            return Err(invalid(self.plant, f.r, "reconstructed face state is not physical"));
        }
        Ok((left, right))
    }

    /// Rusanov flux through the face, scaled by its area.
    fn convective(&self, f: &Face) -> Result<[S; 5]> {
        let gamma = self.plant.config.gamma;
        let (ql, qr) = self.reconstruct(f)?;
        let area = f.s[0].hypot(f.s[1]);
        let (nx, ny) = (f.s[0] / area, f.s[1] / area);
        let side = |q: &[S; 5]| {
            let (rho, u, v, p, nut) = (q[0], q[1], q[2], q[3], q[4]);
            let un = u * nx + v * ny;
            let re = p / (gamma - 1.0) + rho * (u * u + v * v) * 0.5;
            let c = (p * gamma / rho).sqrt();
            let flux = [rho * un, rho * u * un + p * nx, rho * v * un + p * ny, (re + p) * un, rho * nut * un];
            let cons = [rho, rho * u, rho * v, re, rho * nut];
            (flux, cons, un.abs() + c)
        };
        let (fl, wl, sl) = side(&ql);
        let (fr, wr, sr) = side(&qr);
        let lam = sl.max(sr);
        let mut out = [S::zero(); 5];
        for k in 0..5 {
            out[k] = ((fl[k] + fr[k]) - lam * (wr[k] - wl[k])) * (0.5 * area);
        }
        Ok(out)
    }

    /// Interior residual, index `(i*nj + j)*m + v`.
    pub fn residual(&self) -> Result<Vec<S>> {
        let plant = self.plant;
        let layout = &plant.layout;
        let cfg = &plant.config;
        let m = layout.m;
        let mu = cfg.mu();
        let sigma = cfg.sa.sigma;
        let mut out = vec![S::zero(); layout.n_interior() * m];
        for (f, fv) in self.faces.iter().zip(&self.visc) {
            let conv = self.convective(f)?;
            let (mu_eff, kap) = if self.sa {
                let mt = (self.mu_t[f.l] + self.mu_t[f.r]) * 0.5;
                (mt + mu, mt / cfg.prandtl_t + mu / cfg.prandtl)
            } else {
                (S::cst(mu), S::cst(mu / cfg.prandtl))
            };
            let mut flux = [S::zero(); 5];
            flux[0] = conv[0];
            flux[1] = conv[1] - mu_eff * fv.tn[0];
            flux[2] = conv[2] - mu_eff * fv.tn[1];
            flux[3] = conv[3] - (mu_eff * fv.work + kap * fv.heat);
            if self.sa {
                let (ql, qr) = (&self.prim[f.l], &self.prim[f.r]);
                let d = ((ql[0] * ql[4] + qr[0] * qr[4]) * 0.5 + mu) * (1.0 / sigma);
                flux[4] = conv[4] - d * fv.dnut;
            }
            if f.l_interior {
                let k = self.interior_index(f.l);
                for v in 0..m {
                    out[k * m + v] += flux[v];
                }
            }
            if f.r_interior {
                let k = self.interior_index(f.r);
                for v in 0..m {
                    out[k * m + v] -= flux[v];
                }
            }
        }
        let vols = plant.mesh.volumes();
        for (k, chunk) in out.chunks_mut(m).enumerate() {
            let inv = 1.0 / vols[k];
            for x in chunk.iter_mut() {
                *x *= inv;
            }
        }
        if self.sa {
            let src = self.sa_sources();
            for (k, (p, dc)) in src.into_iter().enumerate() {
                out[k * m + 4] = out[k * m + 4] - p - dc;
            }
        }
        Ok(out)
    }

    fn interior_index(&self, cell: usize) -> usize {
        let l = &self.plant.layout;
        let (a, b) = l.coords(cell);
        (a - l.g) * l.nj + (b - l.g)
    }

    /// Production and (cross-diffusion - destruction) per interior cell.
    fn sa_sources(&self) -> Vec<(S, S)> {
        let plant = self.plant;
        let c = &plant.config.sa;
        let mu = plant.config.mu();
        let cw1 = c.cw1();
        let k2 = c.kappa * c.kappa;
        let cw3_6 = c.cw3.powi(6);
        let layout = &plant.layout;
        let mut out = Vec::with_capacity(layout.n_interior());
        for (k, cell) in layout.interior_cells().into_iter().enumerate() {
            let q = &self.prim[cell];
            let gr = &self.grad[cell];
            let d = plant.wall_distance[k];
            let inv_d2 = if d.is_finite() { 1.0 / (d * d) } else { 0.0 };
            let (p, dd) = sa_terms(q[0], q[4], mu, gr[1][0] - gr[0][1], inv_d2, c, cw1, k2, cw3_6);
            let gn = gr[3];
            let cross = q[0] * (gn[0] * gn[0] + gn[1] * gn[1]) * (c.cb2 / c.sigma);
            out.push((p, cross - dd));
        }
        out
    }

    /// Production per interior cell.
    pub fn production(&self) -> Vec<S> {
        let plant = self.plant;
        let c = &plant.config.sa;
        let mu = plant.config.mu();
        let (cw1, k2, cw3_6) = (c.cw1(), c.kappa * c.kappa, c.cw3.powi(6));
        plant
            .layout
            .interior_cells()
            .into_iter()
            .enumerate()
            .map(|(k, cell)| {
                let q = &self.prim[cell];
                let gr = &self.grad[cell];
                let d = plant.wall_distance[k];
                let inv_d2 = if d.is_finite() { 1.0 / (d * d) } else { 0.0 };
                sa_terms(q[0], q[4], mu, gr[1][0] - gr[0][1], inv_d2, c, cw1, k2, cw3_6).0
            })
            .collect()
    }

    /// Eddy-viscosity forcing for a non-negative field `alpha` per interior cell.
    pub fn force_mu_t(&self, alpha: &[S]) -> Result<Vec<S>> {
        let plant = self.plant;
        let layout = &plant.layout;
        let m = layout.m;
        for (cell, a) in alpha.iter().enumerate() {
            if a.value() < 0.0 {
                return Err(Error::NegativeEddyViscosity { cell, value: a.value() });
            }
        }
        let prt = plant.config.prandtl_t;
        let mut out = vec![S::zero(); layout.n_interior() * m];
        for (f, fv) in self.faces.iter().zip(&self.visc) {
            let kl = f.l_interior.then(|| self.interior_index(f.l));
            let kr = f.r_interior.then(|| self.interior_index(f.r));
            let af = match (kl, kr) {
                (Some(l), Some(r)) => (alpha[l] + alpha[r]) * 0.5,
                (Some(l), None) => alpha[l],
                (None, Some(r)) => alpha[r],
                (None, None) => unreachable!(),
            };
            let ft = [af * fv.tn[0], af * fv.tn[1], af * (fv.work + fv.heat * (1.0 / prt))];
            if let Some(l) = kl {
                for v in 0..3 {
                    out[l * m + 1 + v] -= ft[v];
                }
            }
            if let Some(r) = kr {
                for v in 0..3 {
                    out[r * m + 1 + v] += ft[v];
                }
            }
        }
        let vols = plant.mesh.volumes();
        for (k, chunk) in out.chunks_mut(m).enumerate() {
            let inv = 1.0 / vols[k];
            for x in chunk.iter_mut() {
                *x *= inv;
            }
        }
        Ok(out)
    }
}

fn minmod<S: Scalar>(a: S, b: S) -> S {
    let (x, y) = (a.value(), b.value());
    if x * y <= 0.0 {
        S::zero()
    } else if x.abs() <= y.abs() {
        a
    } else {
        b
    }
}

/// Production `cb1 S~ rho nu~` and destruction `cw1 fw rho nu~^2 / d^2`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn sa_terms<S: Scalar>(
    rho: S,
    nut: S,
    mu: f64,
    vorticity: S,
    inv_d2: f64,
    c: &crate::plants::SaConstants,
    cw1: f64,
    k2: f64,
    cw3_6: f64,
) -> (S, S) {
    let chi = nut * rho / mu;
    let chi3 = chi * chi * chi;
    let fv1 = chi3 / (chi3 + c.cv1.powi(3));
    let fv2 = -(chi / (chi * fv1 + 1.0)) + 1.0;
    let omega = vorticity.abs();
    let sbar = nut * fv2 * (inv_d2 / k2);
    let stilde = if sbar.value() >= -c.cv2 * omega.value() {
        omega + sbar
    } else {
        omega + omega * (omega * (c.cv2 * c.cv2) + sbar * c.cv3) / (omega * (c.cv3 - 2.0 * c.cv2) - sbar)
    };
    let prod = stilde * rho * nut * c.cb1;
    if inv_d2 == 0.0 {
        return (prod, S::zero());
    }
    let r = if stilde.value() <= 0.0 {
        S::cst(10.0)
    } else {
        (nut * (inv_d2 / k2) / stilde).min(S::cst(10.0))
    };
    let r6 = r.powi(6);
    let gg = r + (r6 - r) * c.cw2;
    let fw = gg * (S::cst(1.0 + cw3_6) / (gg.powi(6) + cw3_6)).powf(1.0 / 6.0);
    let dest = fw * rho * nut * nut * (cw1 * inv_d2);
    (prod, dest)
}

impl Plant {
    pub(crate) fn geom_center(&self, cell: usize) -> [f64; 2] {
        let (a, b) = self.layout.coords(cell);
        self.geom.center(a, b)
    }
}

/// Production of the turbulence equation per interior cell.
pub fn production_term(plant: &Plant, w: &StateVector) -> Result<Vec<f64>> {
    if plant.kind != PlantKind::NsSa {
        return Err(Error::Config("production requires the turbulence-model plant".into()));
    }
    Ok(NsEval::new(plant, &w.data)?.production())
}

/// Eddy viscosity `rho nu~ fv1` per interior cell.
pub fn eddy_viscosity(plant: &Plant, w: &StateVector) -> Result<Vec<f64>> {
    if plant.kind != PlantKind::NsSa {
        return Err(Error::Config("eddy viscosity requires the turbulence-model plant".into()));
    }
    let eval = NsEval::new(plant, &w.data)?;
    Ok(plant.layout.interior_cells().into_iter().map(|c| eval.mu_t[c]).collect())
}

/// Convective and viscous spectral radius per unit volume, interior cells.
pub(crate) fn spectral_radius(plant: &Plant, w: &[f64]) -> Result<Vec<f64>> {
    let layout = &plant.layout;
    let m = layout.m;
    let cfg = &plant.config;
    let gamma = cfg.gamma;
    let mu = cfg.mu();
    let geom = &plant.geom;
    let cv1_3 = cfg.sa.cv1.powi(3);
    let mut out = Vec::with_capacity(layout.n_interior());
    for cell in layout.interior_cells() {
        let (a, b) = layout.coords(cell);
        let c = &w[cell * m..(cell + 1) * m];
        let rho = c[0];
        let (u, v) = (c[1] / rho, c[2] / rho);
        let p = (gamma - 1.0) * (c[3] - 0.5 * rho * (u * u + v * v));
        if !(rho > 0.0 && p > 0.0) {
            return Err(invalid(plant, cell, "non-positive density or pressure"));
        }
        let snd = (gamma * p / rho).sqrt();
        let mut mut_ = 0.0;
        if m == 5 && c[4] > 0.0 {
            let chi3 = (c[4] / mu).powi(3);
            mut_ = c[4] * chi3 / (chi3 + cv1_3);
        }
        let nu_eff = (mu + mut_) / rho * (gamma / cfg.prandtl).max(4.0 / 3.0);
        let vol = geom.volume(a, b);
        let mut lam = 0.0;
        for s in [geom.i_face(a, b), geom.i_face(a + 1, b), geom.j_face(a, b), geom.j_face(a, b + 1)] {
            let area = s[0].hypot(s[1]);
            lam += 0.5 * ((u * s[0] + v * s[1]).abs() + snd * area) + nu_eff * area * area / vol;
        }
        out.push(lam / vol);
    }
    Ok(out)
}
