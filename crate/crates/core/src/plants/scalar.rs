//! Linear advection-diffusion `a . grad phi - nu lap phi = s`.

use std::f64::consts::PI;

use crate::ad::Scalar;
use crate::mesh::StructuredMesh;
use crate::plants::ns::faces;
use crate::plants::{Plant, ScalarParams};

/// Source making `phi = sin(pi x) sin(pi y)` an exact solution.
pub fn manufactured_source(mesh: &StructuredMesh, p: &ScalarParams) -> Vec<f64> {
    let mut s = Vec::with_capacity(mesh.ni * mesh.nj);
    for i in 0..mesh.ni {
        for j in 0..mesh.nj {
            let [x, y] = mesh.cell_center(i, j);
            let (sx, cx, sy, cy) = ((PI * x).sin(), (PI * x).cos(), (PI * y).sin(), (PI * y).cos());
            s.push(PI * (p.ax * cx * sy + p.ay * sx * cy) + 2.0 * p.nu * PI * PI * sx * sy);
        }
    }
    s
}

pub fn manufactured_solution(x: f64, y: f64) -> f64 {
    (PI * x).sin() * (PI * y).sin()
}

/// Interior residual, one value per interior cell.
pub(crate) fn residual<S: Scalar>(plant: &Plant, w: &[S]) -> Vec<S> {
    let layout = &plant.layout;
    let p = &plant.config.scalar;
    let kappa = plant.config.muscl_kappa;
    let geom = &plant.geom;
    let mut out = vec![S::zero(); layout.n_interior()];
    let idx = |cell: usize| {
        let (a, b) = layout.coords(cell);
        (a - layout.g) * layout.nj + (b - layout.g)
    };
    let grad = cell_gradients(plant, w);
    for f in faces(plant) {
        let (qll, ql, qr, qrr) = (w[f.ll], w[f.l], w[f.r], w[f.rr]);
        let left = ql + ((ql - qll) * (1.0 - kappa) + (qr - ql) * (1.0 + kappa)) * 0.25;
        let right = qr - ((qrr - qr) * (1.0 - kappa) + (qr - ql) * (1.0 + kappa)) * 0.25;
        let an = p.ax * f.s[0] + p.ay * f.s[1];
        let conv = (left + right) * (0.5 * an) - (right - left) * (0.5 * an.abs());

        let (cl, cr) = (plant.geom_center(f.l), plant.geom_center(f.r));
        let d = [cr[0] - cl[0], cr[1] - cl[1]];
        let d2 = d[0] * d[0] + d[1] * d[1];
        let (gl, gr) = (grad[f.l], grad[f.r]);
        let gx = (gl[0] + gr[0]) * 0.5;
        let gy = (gl[1] + gr[1]) * 0.5;
        let corr = (qr - ql - gx * d[0] - gy * d[1]) / d2;
        let dn = (gx + corr * d[0]) * f.s[0] + (gy + corr * d[1]) * f.s[1];
        let flux = conv - dn * p.nu;
        if f.l_interior {
            out[idx(f.l)] += flux;
        }
        if f.r_interior {
            out[idx(f.r)] -= flux;
        }
    }
    let src = plant.source();
    for (k, cell) in layout.interior_cells().into_iter().enumerate() {
        let (a, b) = layout.coords(cell);
        out[k] = out[k] * (1.0 / geom.volume(a, b)) - src[k];
    }
    out
}

fn cell_gradients<S: Scalar>(plant: &Plant, w: &[S]) -> Vec<[S; 2]> {
    let layout = &plant.layout;
    let geom = &plant.geom;
    let (g, ni, nj) = (layout.g, layout.ni, layout.nj);
    let mut grad = vec![[S::zero(); 2]; layout.n_cells()];
    for a in g - 1..=g + ni {
        for b in g - 1..=g + nj {
            if (a == g - 1 || a == g + ni) && (b == g - 1 || b == g + nj) {
                continue;
            }
            let inv_2v = 0.5 / geom.volume(a, b);
            let (qe, qw, qn, qs) = (
                w[layout.cell(a + 1, b)],
                w[layout.cell(a - 1, b)],
                w[layout.cell(a, b + 1)],
                w[layout.cell(a, b - 1)],
            );
            let (se, sw, sn, ss) = (geom.i_face(a + 1, b), geom.i_face(a, b), geom.j_face(a, b + 1), geom.j_face(a, b));
            let c = layout.cell(a, b);
            for d in 0..2 {
                grad[c][d] = (qe * se[d] - qw * sw[d] + qn * sn[d] - qs * ss[d]) * inv_2v;
            }
        }
    }
    grad
}

/// Advective and diffusive spectral radius per unit volume, interior cells.
pub(crate) fn spectral_radius(plant: &Plant) -> Vec<f64> {
    let layout = &plant.layout;
    let geom = &plant.geom;
    let p = &plant.config.scalar;
    let mut out = Vec::with_capacity(layout.n_interior());
    for cell in layout.interior_cells() {
        let (a, b) = layout.coords(cell);
        let vol = geom.volume(a, b);
        let mut lam = 0.0;
        for s in [geom.i_face(a, b), geom.i_face(a + 1, b), geom.j_face(a, b), geom.j_face(a, b + 1)] {
            let area = s[0].hypot(s[1]);
            lam += 0.5 * (p.ax * s[0] + p.ay * s[1]).abs() + p.nu * area * area / vol;
        }
        out.push(lam / vol);
    }
    out
}
