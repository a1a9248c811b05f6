use std::collections::VecDeque;
use std::io::Write;

use crate::error::{check_len, Error, Result};

/// Square sparse matrix in compressed-row form with an optional LU factorization.
#[derive(Clone, Debug)]
pub struct SparseOperator {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
    lu: Option<BandLu>,
}

impl SparseOperator {
    /// Zero-valued matrix with the given per-row column sets.
    pub fn from_pattern(n: usize, rows: &[Vec<usize>]) -> Result<Self> {
        check_len(n, rows.len())?;
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for row in rows {
            let mut cols = row.clone();
            cols.sort_unstable();
            cols.dedup();
            if let Some(&c) = cols.last() {
                if c >= n {
                    return Err(Error::LengthMismatch { expected: n, got: c + 1 });
                }
            }
            col_idx.extend(cols);
            row_ptr.push(col_idx.len());
        }
        let nnz = col_idx.len();
        Ok(SparseOperator {
            n,
            row_ptr,
            col_idx,
            values: vec![0.0; nnz],
            lu: None,
        })
    }

    /// Builds from `(row, col, value)` entries; duplicates are summed.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut rows = vec![Vec::new(); n];
        for &(r, c, _) in triplets {
            if r >= n || c >= n {
                return Err(Error::LengthMismatch { expected: n, got: r.max(c) + 1 });
            }
            rows[r].push(c);
        }
        let mut a = Self::from_pattern(n, &rows)?;
        for &(r, c, v) in triplets {
            *a.entry_mut(r, c).unwrap() += v;
        }
        Ok(a)
    }

    pub fn from_dense(a: &[Vec<f64>]) -> Result<Self> {
        let n = a.len();
        let mut t = Vec::new();
        for (r, row) in a.iter().enumerate() {
            check_len(n, row.len())?;
            for (c, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    t.push((r, c, v));
                }
            }
        }
        Self::from_triplets(n, &t)
    }

    pub fn identity(n: usize) -> Self {
        let t: Vec<_> = (0..n).map(|k| (k, k, 1.0)).collect();
        Self::from_triplets(n, &t).unwrap()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (s, e) = (self.row_ptr[r], self.row_ptr[r + 1]);
        (&self.col_idx[s..e], &self.values[s..e])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn position(&self, r: usize, c: usize) -> Option<usize> {
        let (s, e) = (self.row_ptr[r], self.row_ptr[r + 1]);
        self.col_idx[s..e].binary_search(&c).ok().map(|k| s + k)
    }

    pub fn contains(&self, r: usize, c: usize) -> bool {
        self.position(r, c).is_some()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.position(r, c).map_or(0.0, |k| self.values[k])
    }

    /// Mutable access to a stored entry. Drops any existing factorization.
    pub fn entry_mut(&mut self, r: usize, c: usize) -> Option<&mut f64> {
        self.lu = None;
        let k = self.position(r, c)?;
        Some(&mut self.values[k])
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.n, x.len())?;
        let mut y = vec![0.0; self.n];
        for (r, yr) in y.iter_mut().enumerate() {
            let (cols, vals) = self.row(r);
            *yr = cols.iter().zip(vals).map(|(&c, v)| v * x[c]).sum();
        }
        Ok(y)
    }

    pub fn matvec_transpose(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.n, x.len())?;
        let mut y = vec![0.0; self.n];
        for (r, xr) in x.iter().enumerate() {
            let (cols, vals) = self.row(r);
            for (&c, v) in cols.iter().zip(vals) {
                y[c] += v * xr;
            }
        }
        Ok(y)
    }

    /// Adds `d[k]` to diagonal entry `k` for every `k` with `d[k] != 0`.
    pub fn add_diagonal(&mut self, d: &[f64]) -> Result<()> {
        check_len(self.n, d.len())?;
        for (k, &dk) in d.iter().enumerate() {
            if dk != 0.0 {
                let e = self
                    .entry_mut(k, k)
                    .ok_or_else(|| Error::Config(format!("diagonal entry {k} missing from pattern")))?;
                *e += dk;
            }
        }
        Ok(())
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut a = vec![vec![0.0; self.n]; self.n];
        for (r, row) in a.iter_mut().enumerate() {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                row[c] = v;
            }
        }
        a
    }

    pub fn is_structurally_symmetric(&self) -> bool {
        (0..self.n).all(|r| self.row(r).0.iter().all(|&c| self.contains(c, r)))
    }

    /// Factorizes in place: reverse Cuthill-McKee ordering, then banded LU
    /// with partial pivoting.
    pub fn factorize(&mut self) -> Result<()> {
        if self.lu.is_none() {
            self.lu = Some(BandLu::new(self)?);
        }
        Ok(())
    }

    pub fn is_factorized(&self) -> bool {
        self.lu.is_some()
    }

    /// Lower and upper bandwidth under the fill-reducing ordering.
    pub fn ordered_bandwidth(&self) -> (usize, usize) {
        let (_, pinv) = rcm_order(self);
        bandwidth(self, &pinv)
    }

    /// Writes `i j value` lines, 0-based, 17 significant digits.
    pub fn write_triplets<W: Write>(&self, mut w: W) -> Result<()> {
        for r in 0..self.n {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                writeln!(w, "{r} {c} {v:.16e}")?;
            }
        }
        Ok(())
    }
}

/// Solves `A x = b`, reusing a stored factorization when present.
pub fn lu_solve(a: &SparseOperator, b: &[f64]) -> Result<Vec<f64>> {
    check_len(a.n, b.len())?;
    match &a.lu {
        Some(lu) => Ok(lu.solve(b, false)),
        None => Ok(BandLu::new(a)?.solve(b, false)),
    }
}

/// Solves `A^T x = b` with the same factorization as [`lu_solve`].
pub fn transpose_solve(a: &SparseOperator, b: &[f64]) -> Result<Vec<f64>> {
    check_len(a.n, b.len())?;
    match &a.lu {
        Some(lu) => Ok(lu.solve(b, true)),
        None => Ok(BandLu::new(a)?.solve(b, true)),
    }
}

/// Reverse Cuthill-McKee ordering of the symmetrized pattern. Returns
/// `(perm, pinv)` with `perm[new] = old` and `pinv[old] = new`.
fn rcm_order(a: &SparseOperator) -> (Vec<usize>, Vec<usize>) {
    let n = a.n;
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for r in 0..n {
        for &c in a.row(r).0 {
            if c != r {
                adj[r].push(c);
                adj[c].push(r);
            }
        }
    }
    for l in adj.iter_mut() {
        l.sort_unstable();
        l.dedup();
    }
    let deg: Vec<usize> = adj.iter().map(|l| l.len()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);

    let bfs_levels = |start: usize, visited: &[bool]| -> (usize, Vec<usize>) {
        // returns eccentricity and the last level
        let mut seen = visited.to_vec();
        let mut level = vec![start];
        seen[start] = true;
        let mut ecc = 0;
        loop {
            let mut next = Vec::new();
            for &u in &level {
                for &v in &adj[u] {
                    if !seen[v] {
                        seen[v] = true;
                        next.push(v);
                    }
                }
            }
            if next.is_empty() {
                return (ecc, level);
            }
            ecc += 1;
            level = next;
        }
    };

    for seed in 0..n {
        if visited[seed] {
            continue;
        }
        // pseudo-peripheral start
        let mut start = seed;
        let (mut ecc, mut last) = bfs_levels(start, &visited);
        for _ in 0..8 {
            let cand = *last
                .iter()
                .min_by_key(|&&v| (deg[v], v))
                .expect("non-empty level");
            let (e2, l2) = bfs_levels(cand, &visited);
            if e2 > ecc {
                start = cand;
                ecc = e2;
                last = l2;
            } else {
                break;
            }
        }
        let mut queue = VecDeque::new();
        visited[start] = true;
        queue.push_back(start);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            let mut nbrs: Vec<usize> = adj[u].iter().copied().filter(|&v| !visited[v]).collect();
            nbrs.sort_by_key(|&v| (deg[v], v));
            for v in nbrs {
                visited[v] = true;
                queue.push_back(v);
            }
        }
    }
    order.reverse();
    let mut pinv = vec![0; n];
    for (new, &old) in order.iter().enumerate() {
        pinv[old] = new;
    }
    (order, pinv)
}

fn bandwidth(a: &SparseOperator, pinv: &[usize]) -> (usize, usize) {
    let (mut kl, mut ku) = (0, 0);
    for r in 0..a.n {
        for &c in a.row(r).0 {
            let (pr, pc) = (pinv[r], pinv[c]);
            if pr > pc {
                kl = kl.max(pr - pc);
            } else {
                ku = ku.max(pc - pr);
            }
        }
    }
    (kl, ku)
}

/// Banded LU with partial pivoting on a symmetrically permuted matrix.
#[derive(Clone, Debug)]
struct BandLu {
    n: usize,
    kl: usize,
    ku: usize,
    ldab: usize,
    ab: Vec<f64>,
    ipiv: Vec<usize>,
    perm: Vec<usize>,
    pinv: Vec<usize>,
}

impl BandLu {
    fn new(a: &SparseOperator) -> Result<Self> {
        let n = a.n;
        let (perm, pinv) = rcm_order(a);
        let (kl, ku) = bandwidth(a, &pinv);
        let kv = kl + ku;
        let ldab = 2 * kl + ku + 1;
        let mut ab = vec![0.0; ldab * n];
        for r in 0..n {
            let (cols, vals) = a.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                let (pr, pc) = (pinv[r], pinv[c]);
                ab[pc * ldab + kv + pr - pc] += v;
            }
        }
        let mut ipiv = vec![0; n];
        let mut ju = 0;
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            let col = j * ldab + kv;
            let mut p = 0;
            let mut best = ab[col].abs();
            for r in 1..=km {
                let v = ab[col + r].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            ipiv[j] = j + p;
            if !(best > 0.0) || !best.is_finite() {
                return Err(Error::Singular { pivot: perm[j] });
            }
            ju = ju.max((j + ku + p).min(n - 1));
            if p != 0 {
                for c in j..=ju {
                    let base = c * ldab + kv;
                    ab.swap(base + j - c, base + j + p - c);
                }
            }
            let pivot = ab[col];
            for r in 1..=km {
                ab[col + r] /= pivot;
            }
            for c in j + 1..=ju {
                let base = c * ldab + kv + j - c;
                let ujc = ab[base];
                if ujc == 0.0 {
                    continue;
                }
                for r in 1..=km {
                    ab[base + r] -= ab[col + r] * ujc;
                }
            }
        }
        Ok(BandLu {
            n,
            kl,
            ku,
            ldab,
            ab,
            ipiv,
            perm,
            pinv,
        })
    }

    fn solve(&self, b: &[f64], transpose: bool) -> Vec<f64> {
        let (n, kl, ldab) = (self.n, self.kl, self.ldab);
        let kv = self.kl + self.ku;
        let mut x = vec![0.0; n];
        for (old, &v) in b.iter().enumerate() {
            x[self.pinv[old]] = v;
        }
        if !transpose {
            for j in 0..n.saturating_sub(1) {
                let km = kl.min(n - 1 - j);
                let l = self.ipiv[j];
                if l != j {
                    x.swap(l, j);
                }
                let xj = x[j];
                if xj != 0.0 {
                    let col = j * ldab + kv;
                    for r in 1..=km {
                        x[j + r] -= self.ab[col + r] * xj;
                    }
                }
            }
            for j in (0..n).rev() {
                let col = j * ldab + kv;
                x[j] /= self.ab[col];
                let xj = x[j];
                if xj != 0.0 {
                    for r in j.saturating_sub(kv)..j {
                        x[r] -= self.ab[col + r - j] * xj;
                    }
                }
            }
        } else {
            for j in 0..n {
                let col = j * ldab + kv;
                let mut s = x[j];
                for r in j.saturating_sub(kv)..j {
                    s -= self.ab[col + r - j] * x[r];
                }
                x[j] = s / self.ab[col];
            }
            for j in (0..n.saturating_sub(1)).rev() {
                let km = kl.min(n - 1 - j);
                let col = j * ldab + kv;
                let mut s = x[j];
                for r in 1..=km {
                    s -= self.ab[col + r] * x[j + r];
                }
                x[j] = s;
                let l = self.ipiv[j];
                if l != j {
                    x.swap(l, j);
                }
            }
        }
        let mut out = vec![0.0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            out[old] = x[new];
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::inner::norm2;
    use crate::util::{random_vec, seeded};
    use rand::Rng;

    fn rel_residual(a: &SparseOperator, x: &[f64], b: &[f64], transpose: bool) -> f64 {
        let ax = if transpose { a.matvec_transpose(x) } else { a.matvec(x) }.unwrap();
        let d: Vec<f64> = ax.iter().zip(b).map(|(p, q)| p - q).collect();
        norm2(&d) / norm2(b)
    }

    #[test]
    fn identity_returns_rhs() {
        let a = SparseOperator::identity(7);
        let b = [1.0, -2.0, 3.5, 0.0, 4.0, 1e-3, 9.0];
        assert_eq!(lu_solve(&a, &b).unwrap(), b.to_vec());
        assert_eq!(transpose_solve(&a, &b).unwrap(), b.to_vec());
    }

    #[test]
    fn hand_solves() {
        let a = SparseOperator::from_dense(&[vec![2.0, 1.0], vec![1.0, 3.0]]).unwrap();
        let x = lu_solve(&a, &[3.0, 4.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 1.0).abs() < 1e-15);
        assert_eq!(x, transpose_solve(&a, &[3.0, 4.0]).unwrap());
        let a = SparseOperator::from_dense(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(transpose_solve(&a, &[1.0, 1.0]).unwrap(), vec![1.0, -1.0]);
    }

    #[test]
    fn pivoting_handles_zero_diagonal() {
        let a = SparseOperator::from_dense(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(lu_solve(&a, &[2.0, 3.0]).unwrap(), vec![3.0, 2.0]);
    }

    #[test]
    fn singular_reports_pivot() {
        let a = SparseOperator::from_dense(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        match lu_solve(&a, &[1.0, 1.0]) {
            Err(Error::Singular { pivot }) => assert!(pivot < 2),
            other => panic!("expected singular, got {other:?}"),
        }
    }

    /// Random SPD matrix on a 12 x 8 grid with a 5-point stencil.
    fn spd_stencil(seed: u64) -> SparseOperator {
        let (ni, nj) = (12, 8);
        let mut rng = seeded(seed);
        let mut t = Vec::new();
        let mut diag = vec![0.0; ni * nj];
        for i in 0..ni {
            for j in 0..nj {
                let k = i * nj + j;
                for (a, b) in [(i + 1, j), (i, j + 1)] {
                    if a < ni && b < nj {
                        let l = a * nj + b;
                        let w = -rng.random_range(0.1..1.0);
                        t.push((k, l, w));
                        t.push((l, k, w));
                        diag[k] -= w;
                        diag[l] -= w;
                    }
                }
            }
        }
        for (k, d) in diag.iter().enumerate() {
            t.push((k, k, d + 0.1));
        }
        SparseOperator::from_triplets(ni * nj, &t).unwrap()
    }

    #[test]
    fn random_spd_stencil_solves() {
        let mut a = spd_stencil(11);
        assert!(a.is_structurally_symmetric());
        let mut rng = seeded(5);
        let b = random_vec(&mut rng, 96);
        a.factorize().unwrap();
        let x = lu_solve(&a, &b).unwrap();
        assert!(rel_residual(&a, &x, &b, false) <= 1e-10);
        let xt = transpose_solve(&a, &b).unwrap();
        assert!(rel_residual(&a, &xt, &b, true) <= 1e-10);
        // symmetric matrix: both paths agree
        for (p, q) in x.iter().zip(&xt) {
            assert!((p - q).abs() <= 1e-12 * p.abs().max(1.0));
        }
        let again = lu_solve(&a, &b).unwrap();
        assert_eq!(x, again);
    }

    #[test]
    fn nonsymmetric_random_band() {
        let n: usize = 60;
        let mut rng = seeded(9);
        let mut t = Vec::new();
        for r in 0..n {
            for c in r.saturating_sub(3)..(r + 4).min(n) {
                t.push((r, c, rng.random_range(-1.0..1.0)));
            }
        }
        let a = SparseOperator::from_triplets(n, &t).unwrap();
        let b = random_vec(&mut rng, n);
        let x = lu_solve(&a, &b).unwrap();
        assert!(rel_residual(&a, &x, &b, false) <= 1e-9);
        let x = transpose_solve(&a, &b).unwrap();
        assert!(rel_residual(&a, &x, &b, true) <= 1e-9);
    }

    #[test]
    fn triplet_export() {
        let a = SparseOperator::from_dense(&[vec![2.0, 0.0], vec![0.5, 3.0]]).unwrap();
        let mut buf = Vec::new();
        a.write_triplets(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "0 0 2.0000000000000000e0");
        assert_eq!(lines.len(), 3);
        let back: Vec<(usize, usize, f64)> = lines
            .iter()
            .map(|l| {
                let p: Vec<&str> = l.split(' ').collect();
                (p[0].parse().unwrap(), p[1].parse().unwrap(), p[2].parse().unwrap())
            })
            .collect();
        assert_eq!(back[1], (1, 0, 0.5));
    }
}
