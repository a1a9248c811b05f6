//! Sparse Jacobian assembly by stencil coloring.

use crate::error::{Error, Result};
use crate::layout::Layout;
use crate::linalg::op::DifferentiableOp;
use crate::linalg::sparse::SparseOperator;
use crate::util::{random_vec, seeded};

/// Coupling structure of a cell-centred operator: for every extended cell,
/// the cells whose values its outputs may depend on. All `m` values of a
/// dependency cell couple to all `m` outputs of the row cell.
#[derive(Clone, Debug)]
pub struct StencilPattern {
    pub layout: Layout,
    pub radius: usize,
    deps: Vec<Vec<usize>>,
}

impl StencilPattern {
    /// Interior cells couple to the `(2r+1)^2` box around them; every ghost
    /// cell couples to itself and to the cells listed by `ghost_sources`.
    pub fn new(layout: Layout, radius: usize, ghost_sources: impl Fn(usize) -> Vec<usize>) -> Self {
        let (eni, enj) = (layout.ext_ni() as isize, layout.ext_nj() as isize);
        let r = radius as isize;
        let mut deps = Vec::with_capacity(layout.n_cells());
        for cell in 0..layout.n_cells() {
            let (a, b) = layout.coords(cell);
            let mut d = Vec::new();
            if layout.is_interior(a, b) {
                for da in -r..=r {
                    for db in -r..=r {
                        let (x, y) = (a as isize + da, b as isize + db);
                        if x >= 0 && x < eni && y >= 0 && y < enj {
                            d.push(layout.cell(x as usize, y as usize));
                        }
                    }
                }
            } else {
                d.push(cell);
                d.extend(ghost_sources(cell));
            }
            d.sort_unstable();
            d.dedup();
            deps.push(d);
        }
        StencilPattern { layout, radius, deps }
    }

    /// Box pattern for grids without ghost layers.
    pub fn interior_box(layout: Layout, radius: usize) -> Self {
        Self::new(layout, radius, |_| Vec::new())
    }

    pub fn deps(&self, cell: usize) -> &[usize] {
        &self.deps[cell]
    }

    /// Whether the output `row` may depend on input `col`.
    pub fn contains(&self, row: usize, col: usize) -> bool {
        let m = self.layout.m;
        self.deps[row / m].binary_search(&(col / m)).is_ok()
    }

    fn sparse_zero(&self) -> Result<SparseOperator> {
        let m = self.layout.m;
        let mut rows = Vec::with_capacity(self.layout.len());
        for d in &self.deps {
            let cols: Vec<usize> = d.iter().flat_map(|&c| (0..m).map(move |v| c * m + v)).collect();
            for _ in 0..m {
                rows.push(cols.clone());
            }
        }
        SparseOperator::from_pattern(self.layout.len(), &rows)
    }

    /// Smallest periods `(pi, pj)`, each at least `2r+1`, for which no row
    /// couples to two cells of the same class `(I mod pi, J mod pj)`.
    pub fn coloring(&self) -> Coloring {
        let base = 2 * self.radius + 1;
        let (eni, enj) = (self.layout.ext_ni(), self.layout.ext_nj());
        let cap_i = eni.max(base);
        let cap_j = enj.max(base);
        let mut candidates = Vec::new();
        for pi in base..=cap_i {
            for pj in base..=cap_j {
                candidates.push((pi * pj, pi, pj));
            }
        }
        candidates.sort_unstable();
        for (_, pi, pj) in candidates {
            let c = Coloring {
                pi,
                pj,
                ext_nj: enj,
            };
            if self.deps.iter().all(|d| c.is_injective(d)) {
                return c;
            }
        }
        unreachable!("periods equal to the grid size are always collision free")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Coloring {
    pub pi: usize,
    pub pj: usize,
    ext_nj: usize,
}

impl Coloring {
    pub fn n_classes(&self) -> usize {
        self.pi * self.pj
    }

    pub fn class(&self, cell: usize) -> usize {
        let (a, b) = (cell / self.ext_nj, cell % self.ext_nj);
        (a % self.pi) * self.pj + b % self.pj
    }

    fn is_injective(&self, cells: &[usize]) -> bool {
        let mut seen = vec![false; self.n_classes()];
        for &c in cells {
            let k = self.class(c);
            if seen[k] {
                return false;
            }
            seen[k] = true;
        }
        true
    }
}

/// Assembles the Jacobian of `op` at `w` with one tangent per color group.
/// `color_order` permutes the order in which groups are probed.
pub fn assemble_jacobian_ordered(
    op: &dyn DifferentiableOp,
    w: &[f64],
    pattern: &StencilPattern,
    color_order: Option<&[usize]>,
) -> Result<SparseOperator> {
    let layout = pattern.layout;
    let m = layout.m;
    let n = layout.len();
    if op.input_len() != n || op.output_len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: op.input_len(),
        });
    }
    let coloring = pattern.coloring();
    let n_colors = coloring.n_classes() * m;
    let order: Vec<usize> = match color_order {
        Some(o) => o.to_vec(),
        None => (0..n_colors).collect(),
    };
    let mut dirs = Vec::with_capacity(n_colors);
    for &k in &order {
        let (class, var) = (k / m, k % m);
        let mut d = vec![0.0; n];
        for cell in 0..layout.n_cells() {
            if coloring.class(cell) == class {
                d[cell * m + var] = 1.0;
            }
        }
        dirs.push(d);
    }
    let responses = op.tangents(w, &dirs)?;
    let mut slot = vec![0; n_colors];
    for (pos, &k) in order.iter().enumerate() {
        slot[k] = pos;
    }

    let mut a = pattern.sparse_zero()?;
    for cell in 0..layout.n_cells() {
        for rv in 0..m {
            let row = cell * m + rv;
            for &dc in pattern.deps(cell) {
                let class = coloring.class(dc);
                for cv in 0..m {
                    let t = &responses[slot[class * m + cv]];
                    *a.entry_mut(row, dc * m + cv).unwrap() = t[row];
                }
            }
        }
    }
    if cfg!(debug_assertions) {
        probe_pattern(op, w, &a, 0x5eed)?;
    }
    Ok(a)
}

pub fn assemble_jacobian(op: &dyn DifferentiableOp, w: &[f64], pattern: &StencilPattern) -> Result<SparseOperator> {
    assemble_jacobian_ordered(op, w, pattern, None)
}

/// Compares `A v` with the operator's tangent on three random vectors and
/// fails if they differ by more than `1e-8` relative.
pub fn probe_pattern(op: &dyn DifferentiableOp, w: &[f64], a: &SparseOperator, seed: u64) -> Result<()> {
    let mut rng = seeded(seed);
    let dirs: Vec<Vec<f64>> = (0..3).map(|_| random_vec(&mut rng, a.n())).collect();
    let ts = op.tangents(w, &dirs)?;
    for (d, t) in dirs.iter().zip(&ts) {
        let av = a.matvec(d)?;
        let scale = t.iter().fold(0.0f64, |s, x| s.max(x.abs())).max(f64::MIN_POSITIVE);
        let (row, err) = av
            .iter()
            .zip(t)
            .map(|(p, q)| (p - q).abs())
            .enumerate()
            .fold((0, 0.0), |best, (k, e)| if e > best.1 { (k, e) } else { best });
        if err > 1e-8 * scale {
            return Err(Error::OffPattern {
                row,
                mismatch: err / scale,
            });
        }
    }
    Ok(())
}

/// Dense Jacobian by central differences with step `h * max(1, |w_k|)`.
pub fn dense_fd_jacobian(op: &dyn DifferentiableOp, w: &[f64], h: f64) -> Result<Vec<Vec<f64>>> {
    let n_out = op.output_len();
    let mut cols = Vec::with_capacity(w.len());
    let mut x = w.to_vec();
    for k in 0..w.len() {
        let step = h * w[k].abs().max(1.0);
        x[k] = w[k] + step;
        let fp = op.eval(&x)?;
        x[k] = w[k] - step;
        let fm = op.eval(&x)?;
        x[k] = w[k];
        cols.push(fp.iter().zip(&fm).map(|(p, q)| (p - q) / (2.0 * step)).collect::<Vec<f64>>());
    }
    Ok((0..n_out).map(|r| cols.iter().map(|c| c[r]).collect()).collect())
}
