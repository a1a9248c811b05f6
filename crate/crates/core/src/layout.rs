//! Index arithmetic for cell-centred fields with ghost layers.

/// Extended grid of `(ni+2g) x (nj+2g)` cells with `m` values per cell.
/// Extended cell `(I, J)` has index `I*(nj+2g) + J`; value `v` of that cell
/// sits at `cell*m + v`. Interior cell `(i, j)` is extended cell `(i+g, j+g)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    pub ni: usize,
    pub nj: usize,
    pub g: usize,
    pub m: usize,
}

impl Layout {
    pub fn new(ni: usize, nj: usize, g: usize, m: usize) -> Self {
        Layout { ni, nj, g, m }
    }

    pub fn ext_ni(&self) -> usize {
        self.ni + 2 * self.g
    }

    pub fn ext_nj(&self) -> usize {
        self.nj + 2 * self.g
    }

    pub fn n_cells(&self) -> usize {
        self.ext_ni() * self.ext_nj()
    }

    /// Length of a full state.
    pub fn len(&self) -> usize {
        self.n_cells() * self.m
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_interior(&self) -> usize {
        self.ni * self.nj
    }

    #[inline]
    pub fn cell(&self, a: usize, b: usize) -> usize {
        a * self.ext_nj() + b
    }

    #[inline]
    pub fn idx(&self, a: usize, b: usize, v: usize) -> usize {
        self.cell(a, b) * self.m + v
    }

    /// Extended coordinates of a cell index.
    #[inline]
    pub fn coords(&self, cell: usize) -> (usize, usize) {
        (cell / self.ext_nj(), cell % self.ext_nj())
    }

    #[inline]
    pub fn is_interior(&self, a: usize, b: usize) -> bool {
        a >= self.g && a < self.g + self.ni && b >= self.g && b < self.g + self.nj
    }

    /// Extended cell index of interior cell `(i, j)`.
    #[inline]
    pub fn interior_cell(&self, i: usize, j: usize) -> usize {
        self.cell(i + self.g, j + self.g)
    }

    /// Interior cells in `i`-major order, as extended cell indices.
    pub fn interior_cells(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.n_interior());
        for i in 0..self.ni {
            for j in 0..self.nj {
                out.push(self.interior_cell(i, j));
            }
        }
        out
    }

    /// Same grid with another number of values per cell.
    pub fn with_m(&self, m: usize) -> Self {
        Layout { m, ..*self }
    }
}
