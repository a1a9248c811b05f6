//! Structured 2D meshes with ghost layers.
//!
//! Nodes are indexed `(i, j)` with `0 <= i <= ni`, `0 <= j <= nj`. Cell
//! `(i, j)` is bounded by nodes `(i, j)`, `(i+1, j)`, `(i+1, j+1)`, `(i, j+1)`
//! in counterclockwise order. The i-face `(i, j)` joins nodes `(i, j)` and
//! `(i, j+1)`; its scaled normal points towards increasing `i`. The j-face
//! `(i, j)` joins nodes `(i, j)` and `(i+1, j)` and points towards increasing `j`.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Minimum cells per direction. The ghost mirror needs at least `g` cells.
pub const MIN_CELLS: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct StructuredMesh {
    pub ni: usize,
    pub nj: usize,
    pub g: usize,
    nodes: Vec<Point>,
    volumes: Vec<f64>,
    i_faces: Vec<Point>,
    j_faces: Vec<Point>,
}

fn quad_area(a: Point, b: Point, c: Point, d: Point) -> f64 {
    0.5 * ((c[0] - a[0]) * (d[1] - b[1]) - (d[0] - b[0]) * (c[1] - a[1]))
}

impl StructuredMesh {
    /// Builds a mesh from an `(ni+1) x (nj+1)` node table (index `i*(nj+1)+j`).
    pub fn from_nodes(ni: usize, nj: usize, g: usize, nodes: Vec<Point>) -> Result<Self> {
        if ni < MIN_CELLS || nj < MIN_CELLS {
            return Err(Error::Mesh(format!(
                "cell counts {ni}x{nj} below minimum {MIN_CELLS}"
            )));
        }
        if g > ni || g > nj {
            return Err(Error::Mesh(format!("ghost depth {g} exceeds cell counts")));
        }
        if nodes.len() != (ni + 1) * (nj + 1) {
            return Err(Error::LengthMismatch {
                expected: (ni + 1) * (nj + 1),
                got: nodes.len(),
            });
        }
        if nodes.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(Error::Mesh("non-finite node coordinate".into()));
        }
        let node = |i: usize, j: usize| nodes[i * (nj + 1) + j];
        let mut volumes = Vec::with_capacity(ni * nj);
        for i in 0..ni {
            for j in 0..nj {
                let v = quad_area(node(i, j), node(i + 1, j), node(i + 1, j + 1), node(i, j + 1));
                if !(v > 0.0) {
                    return Err(Error::Mesh(format!(
                        "non-positive volume {v:e} at cell ({i}, {j})"
                    )));
                }
                volumes.push(v);
            }
        }
        let mut i_faces = Vec::with_capacity((ni + 1) * nj);
        for i in 0..=ni {
            for j in 0..nj {
                let (a, b) = (node(i, j), node(i, j + 1));
                i_faces.push([b[1] - a[1], -(b[0] - a[0])]);
            }
        }
        let mut j_faces = Vec::with_capacity(ni * (nj + 1));
        for i in 0..ni {
            for j in 0..=nj {
                let (a, b) = (node(i, j), node(i + 1, j));
                j_faces.push([-(b[1] - a[1]), b[0] - a[0]]);
            }
        }
        Ok(StructuredMesh {
            ni,
            nj,
            g,
            nodes,
            volumes,
            i_faces,
            j_faces,
        })
    }

    /// Uniform spacing in `i`; in `j`, heights grow geometrically with ratio
    /// `stretch_j` away from the `j = 0` edge.
    pub fn build_cartesian(ni: usize, nj: usize, lx: f64, ly: f64, stretch_j: f64) -> Result<Self> {
        if !(lx > 0.0 && ly > 0.0) {
            return Err(Error::Mesh(format!("non-positive extents {lx} x {ly}")));
        }
        if !(stretch_j >= 1.0) {
            return Err(Error::Mesh(format!("stretch ratio {stretch_j} below 1")));
        }
        if ni < MIN_CELLS || nj < MIN_CELLS {
            return Err(Error::Mesh(format!(
                "cell counts {ni}x{nj} below minimum {MIN_CELLS}"
            )));
        }
        let ys = stretched_coords(nj, ly, stretch_j);
        let mut nodes = Vec::with_capacity((ni + 1) * (nj + 1));
        for i in 0..=ni {
            let x = lx * i as f64 / ni as f64;
            for &y in &ys {
                nodes.push([x, y]);
            }
        }
        Self::from_nodes(ni, nj, default_ghost_depth(ni, nj), nodes)
    }

    /// Channel of length 3 and height 1 with a Gaussian bump centred on the
    /// lower wall. Interior nodes are blended linearly between the wall
    /// profile and the flat upper wall.
    pub fn build_bump_channel(ni: usize, nj: usize, bump_height: f64, bump_width: f64) -> Result<Self> {
        if ni < MIN_CELLS || nj < MIN_CELLS {
            return Err(Error::Mesh(format!(
                "cell counts {ni}x{nj} below minimum {MIN_CELLS}"
            )));
        }
        if !(bump_width > 0.0) {
            return Err(Error::Mesh(format!("bump width {bump_width} must be positive")));
        }
        if !(bump_height < CHANNEL_HEIGHT) {
            return Err(Error::Mesh(format!(
                "bump height {bump_height} reaches the channel height"
            )));
        }
        let mut nodes = Vec::with_capacity((ni + 1) * (nj + 1));
        for i in 0..=ni {
            let x = CHANNEL_LENGTH * i as f64 / ni as f64;
            let yb = bump_profile(x, bump_height, bump_width);
            for j in 0..=nj {
                let eta = j as f64 / nj as f64;
                nodes.push([x, yb + (CHANNEL_HEIGHT - yb) * eta]);
            }
        }
        Self::from_nodes(ni, nj, default_ghost_depth(ni, nj), nodes)
    }

    /// Same nodes with a different ghost depth.
    pub fn with_ghost_depth(&self, g: usize) -> Result<Self> {
        if g > self.ni || g > self.nj {
            return Err(Error::Mesh(format!("ghost depth {g} exceeds cell counts")));
        }
        let mut m = self.clone();
        m.g = g;
        Ok(m)
    }

    /// Swaps the roles of `i` and `j` (and of `x` and `y`, which keeps cells
    /// counterclockwise).
    pub fn transposed(&self) -> Self {
        let mut nodes = Vec::with_capacity(self.nodes.len());
        for j in 0..=self.nj {
            for i in 0..=self.ni {
                let p = self.node(i, j);
                nodes.push([p[1], p[0]]);
            }
        }
        Self::from_nodes(self.nj, self.ni, self.g, nodes).expect("transposed mesh stays valid")
    }

    pub fn node(&self, i: usize, j: usize) -> Point {
        self.nodes[i * (self.nj + 1) + j]
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn volume(&self, i: usize, j: usize) -> f64 {
        self.volumes[i * self.nj + j]
    }

    /// Interior volumes, index `i*nj + j`.
    pub fn volumes(&self) -> &[f64] {
        &self.volumes
    }

    pub fn i_face(&self, i: usize, j: usize) -> Point {
        self.i_faces[i * self.nj + j]
    }

    pub fn j_face(&self, i: usize, j: usize) -> Point {
        self.j_faces[i * (self.nj + 1) + j]
    }

    pub fn cell_center(&self, i: usize, j: usize) -> Point {
        let (a, b, c, d) = (
            self.node(i, j),
            self.node(i + 1, j),
            self.node(i + 1, j + 1),
            self.node(i, j + 1),
        );
        [
            0.25 * (a[0] + b[0] + c[0] + d[0]),
            0.25 * (a[1] + b[1] + c[1] + d[1]),
        ]
    }

    pub fn total_volume(&self) -> f64 {
        self.volumes.iter().sum()
    }

    /// Sum of outward scaled normals of a cell and its perimeter.
    pub fn closure_defect(&self, i: usize, j: usize) -> (Point, f64) {
        let faces = [
            (self.i_face(i + 1, j), 1.0),
            (self.i_face(i, j), -1.0),
            (self.j_face(i, j + 1), 1.0),
            (self.j_face(i, j), -1.0),
        ];
        let mut s = [0.0, 0.0];
        let mut perimeter = 0.0;
        for (n, sign) in faces {
            s[0] += sign * n[0];
            s[1] += sign * n[1];
            perimeter += n[0].hypot(n[1]);
        }
        (s, perimeter)
    }

    /// Geometry extended over `g` ghost layers.
    pub fn ghost_geometry(&self) -> GhostGeometry {
        GhostGeometry::new(self)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{} {} {}", self.ni, self.nj, self.g)?;
        for p in &self.nodes {
            writeln!(w, "{:.16e} {:.16e}", p[0], p[1])?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty mesh file".into()))??;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| Error::Parse(format!("bad mesh header `{header}`"))))
            .collect::<Result<_>>()?;
        if dims.len() != 3 {
            return Err(Error::Parse(format!("bad mesh header `{header}`")));
        }
        let mut nodes = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let v: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| Error::Parse(format!("bad node line `{line}`"))))
                .collect::<Result<_>>()?;
            if v.len() != 2 {
                return Err(Error::Parse(format!("bad node line `{line}`")));
            }
            nodes.push([v[0], v[1]]);
        }
        Self::from_nodes(dims[0], dims[1], dims[2], nodes)
    }
}

pub const CHANNEL_LENGTH: f64 = 3.0;
pub const CHANNEL_HEIGHT: f64 = 1.0;

/// Lower-wall height of the bump channel at abscissa `x`.
pub fn bump_profile(x: f64, height: f64, width: f64) -> f64 {
    let s = (x - 0.5 * CHANNEL_LENGTH) / width;
    height * (-s * s).exp()
}

fn default_ghost_depth(ni: usize, nj: usize) -> usize {
    2.min(ni).min(nj)
}

/// Node ordinates `0 = y_0 < ... < y_n = ly` with heights in ratio `s`.
fn stretched_coords(n: usize, ly: f64, s: f64) -> Vec<f64> {
    let mut ys = Vec::with_capacity(n + 1);
    if s == 1.0 {
        for j in 0..=n {
            ys.push(ly * j as f64 / n as f64);
        }
        return ys;
    }
    let h0 = ly * (1.0 - s) / (1.0 - s.powi(n as i32));
    let mut y = 0.0;
    let mut h = h0;
    ys.push(0.0);
    for _ in 1..n {
        y += h;
        ys.push(y);
        h *= s;
    }
    ys.push(ly);
    ys
}

/// Volumes, centres and face metrics over the extended index range
/// `I in 0..ni+2g`, `J in 0..nj+2g`, where interior cell `(i, j)` sits at
/// `(i+g, j+g)`. Ghost nodes are point reflections through the boundary node
/// on the same grid line, applied along `i` first and then along `j`.
#[derive(Clone, Debug)]
pub struct GhostGeometry {
    pub ni: usize,
    pub nj: usize,
    pub g: usize,
    nodes: Vec<Point>,
    volumes: Vec<f64>,
    centers: Vec<Point>,
    i_faces: Vec<Point>,
    j_faces: Vec<Point>,
}

impl GhostGeometry {
    fn new(mesh: &StructuredMesh) -> Self {
        let (ni, nj, g) = (mesh.ni, mesh.nj, mesh.g);
        let (nni, nnj) = (ni + 2 * g + 1, nj + 2 * g + 1);
        let mut nodes = vec![[0.0, 0.0]; nni * nnj];
        let at = |a: usize, b: usize| a * nnj + b;
        for i in 0..=ni {
            for j in 0..=nj {
                nodes[at(i + g, j + g)] = mesh.node(i, j);
            }
        }
        let reflect = |c: Point, p: Point| [2.0 * c[0] - p[0], 2.0 * c[1] - p[1]];
        for jj in g..=g + nj {
            for k in 1..=g {
                nodes[at(g - k, jj)] = reflect(nodes[at(g, jj)], nodes[at(g + k, jj)]);
                nodes[at(g + ni + k, jj)] = reflect(nodes[at(g + ni, jj)], nodes[at(g + ni - k, jj)]);
            }
        }
        for ii in 0..nni {
            for k in 1..=g {
                nodes[at(ii, g - k)] = reflect(nodes[at(ii, g)], nodes[at(ii, g + k)]);
                nodes[at(ii, g + nj + k)] = reflect(nodes[at(ii, g + nj)], nodes[at(ii, g + nj - k)]);
            }
        }
        let (eni, enj) = (ni + 2 * g, nj + 2 * g);
        let mut volumes = Vec::with_capacity(eni * enj);
        let mut centers = Vec::with_capacity(eni * enj);
        for a in 0..eni {
            for b in 0..enj {
                let (p, q, r, s) = (nodes[at(a, b)], nodes[at(a + 1, b)], nodes[at(a + 1, b + 1)], nodes[at(a, b + 1)]);
                volumes.push(quad_area(p, q, r, s));
                centers.push([
                    0.25 * (p[0] + q[0] + r[0] + s[0]),
                    0.25 * (p[1] + q[1] + r[1] + s[1]),
                ]);
            }
        }
        let mut i_faces = Vec::with_capacity((eni + 1) * enj);
        for a in 0..=eni {
            for b in 0..enj {
                let (p, q) = (nodes[at(a, b)], nodes[at(a, b + 1)]);
                i_faces.push([q[1] - p[1], -(q[0] - p[0])]);
            }
        }
        let mut j_faces = Vec::with_capacity(eni * (enj + 1));
        for a in 0..eni {
            for b in 0..=enj {
                let (p, q) = (nodes[at(a, b)], nodes[at(a + 1, b)]);
                j_faces.push([-(q[1] - p[1]), q[0] - p[0]]);
            }
        }
        GhostGeometry {
            ni,
            nj,
            g,
            nodes,
            volumes,
            centers,
            i_faces,
            j_faces,
        }
    }

    pub fn ext_ni(&self) -> usize {
        self.ni + 2 * self.g
    }

    pub fn ext_nj(&self) -> usize {
        self.nj + 2 * self.g
    }

    pub fn node(&self, a: usize, b: usize) -> Point {
        self.nodes[a * (self.ext_nj() + 1) + b]
    }

    pub fn volume(&self, a: usize, b: usize) -> f64 {
        self.volumes[a * self.ext_nj() + b]
    }

    /// Extended volumes, index `I*(nj+2g) + J`.
    pub fn volumes(&self) -> &[f64] {
        &self.volumes
    }

    pub fn center(&self, a: usize, b: usize) -> Point {
        self.centers[a * self.ext_nj() + b]
    }

    /// Scaled normal of the face between cells `(a-1, b)` and `(a, b)`.
    pub fn i_face(&self, a: usize, b: usize) -> Point {
        self.i_faces[a * self.ext_nj() + b]
    }

    /// Scaled normal of the face between cells `(a, b-1)` and `(a, b)`.
    pub fn j_face(&self, a: usize, b: usize) -> Point {
        self.j_faces[a * (self.ext_nj() + 1) + b]
    }
}
