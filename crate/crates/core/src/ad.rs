//! Scalar types for automatic differentiation.
//!
//! Numerical kernels are written once against [`Scalar`] and then run with
//! plain `f64` (evaluation), [`Dual`] (forward mode, several directions per
//! pass) or [`Var`] (reverse mode on a thread-local tape).

use std::cell::{Cell, RefCell};
use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

pub trait Scalar:
    Copy
    + Debug
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign<f64>
{
    fn cst(v: f64) -> Self;
    fn value(&self) -> f64;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn powf(self, p: f64) -> Self;

    fn zero() -> Self {
        Self::cst(0.0)
    }

    fn powi(self, n: i32) -> Self {
        if n < 0 {
            return Self::cst(1.0) / self.powi(-n);
        }
        if n == 0 {
            return Self::cst(1.0);
        }
        let mut r = self;
        for _ in 1..n {
            r = r * self;
        }
        r
    }

    fn abs(self) -> Self {
        if self.value() < 0.0 {
            -self
        } else {
            self
        }
    }

    fn max(self, o: Self) -> Self {
        if self.value() >= o.value() {
            self
        } else {
            o
        }
    }

    fn min(self, o: Self) -> Self {
        if self.value() <= o.value() {
            self
        } else {
            o
        }
    }

    /// Sum of elementwise products.
    fn dot(a: &[Self], b: &[Self]) -> Self {
        let mut s = Self::zero();
        for (x, y) in a.iter().zip(b) {
            s += *x * *y;
        }
        s
    }

    /// Sum of products with constant coefficients.
    fn dot_cst(a: &[Self], c: &[f64]) -> Self {
        let mut s = Self::zero();
        for (x, y) in a.iter().zip(c) {
            s += *x * *y;
        }
        s
    }
}

/// `x * sigmoid(x)`.
pub fn silu<S: Scalar>(x: S) -> S {
    x / ((-x).exp() + 1.0)
}

/// `ln(1 + e^x)`, evaluated without overflow.
pub fn softplus<S: Scalar>(x: S) -> S {
    if x.value() > 0.0 {
        x + ((-x).exp() + 1.0).ln()
    } else {
        (x.exp() + 1.0).ln()
    }
}

impl Scalar for f64 {
    #[inline]
    fn cst(v: f64) -> Self {
        v
    }
    #[inline]
    fn value(&self) -> f64 {
        *self
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn powf(self, p: f64) -> Self {
        f64::powf(self, p)
    }
}

// ---------------------------------------------------------------------------
// Forward mode

/// Value with `L` independent tangent lanes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<const L: usize> {
    pub v: f64,
    pub d: [f64; L],
}

impl<const L: usize> Dual<L> {
    pub fn new(v: f64, d: [f64; L]) -> Self {
        Dual { v, d }
    }

    #[inline]
    fn chain(self, v: f64, dv: f64) -> Self {
        let mut d = self.d;
        for x in d.iter_mut() {
            *x *= dv;
        }
        Dual { v, d }
    }
}

impl<const L: usize> Add for Dual<L> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        let mut d = self.d;
        for k in 0..L {
            d[k] += o.d[k];
        }
        Dual { v: self.v + o.v, d }
    }
}

impl<const L: usize> Sub for Dual<L> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        let mut d = self.d;
        for k in 0..L {
            d[k] -= o.d[k];
        }
        Dual { v: self.v - o.v, d }
    }
}

impl<const L: usize> Mul for Dual<L> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        let mut d = [0.0; L];
        for k in 0..L {
            d[k] = self.d[k] * o.v + self.v * o.d[k];
        }
        Dual { v: self.v * o.v, d }
    }
}

impl<const L: usize> Div for Dual<L> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let inv = 1.0 / o.v;
        let q = self.v * inv;
        let mut d = [0.0; L];
        for k in 0..L {
            d[k] = (self.d[k] - q * o.d[k]) * inv;
        }
        Dual { v: q, d }
    }
}

impl<const L: usize> Neg for Dual<L> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        let mut d = self.d;
        for x in d.iter_mut() {
            *x = -*x;
        }
        Dual { v: -self.v, d }
    }
}

impl<const L: usize> Add<f64> for Dual<L> {
    type Output = Self;
    #[inline]
    fn add(self, c: f64) -> Self {
        Dual { v: self.v + c, d: self.d }
    }
}

impl<const L: usize> Sub<f64> for Dual<L> {
    type Output = Self;
    #[inline]
    fn sub(self, c: f64) -> Self {
        Dual { v: self.v - c, d: self.d }
    }
}

impl<const L: usize> Mul<f64> for Dual<L> {
    type Output = Self;
    #[inline]
    fn mul(self, c: f64) -> Self {
        let mut d = self.d;
        for x in d.iter_mut() {
            *x *= c;
        }
        Dual { v: self.v * c, d }
    }
}

impl<const L: usize> Div<f64> for Dual<L> {
    type Output = Self;
    #[inline]
    fn div(self, c: f64) -> Self {
        let mut d = self.d;
        for x in d.iter_mut() {
            *x /= c;
        }
        Dual { v: self.v / c, d }
    }
}

impl<const L: usize> AddAssign for Dual<L> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<const L: usize> SubAssign for Dual<L> {
    #[inline]
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}

impl<const L: usize> MulAssign<f64> for Dual<L> {
    #[inline]
    fn mul_assign(&mut self, c: f64) {
        *self = *self * c;
    }
}

impl<const L: usize> Scalar for Dual<L> {
    #[inline]
    fn cst(v: f64) -> Self {
        Dual { v, d: [0.0; L] }
    }
    #[inline]
    fn value(&self) -> f64 {
        self.v
    }
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        self.chain(s, 0.5 / s)
    }
    fn exp(self) -> Self {
        let e = self.v.exp();
        self.chain(e, e)
    }
    fn ln(self) -> Self {
        self.chain(self.v.ln(), 1.0 / self.v)
    }
    fn powf(self, p: f64) -> Self {
        self.chain(self.v.powf(p), p * self.v.powf(p - 1.0))
    }
}

// ---------------------------------------------------------------------------
// Reverse mode

const CONST_IDX: u32 = u32::MAX;

/// Tape-recorded scalar. Constants carry no tape index.
#[derive(Clone, Copy, Debug)]
pub struct Var {
    v: f64,
    i: u32,
}

#[derive(Default)]
struct Tape {
    // node k owns edges[starts[k]..starts[k + 1]]
    starts: Vec<u32>,
    edges: Vec<(u32, f64)>,
}

impl Tape {
    fn clear(&mut self) {
        self.starts.clear();
        self.starts.push(0);
        self.edges.clear();
    }

    #[inline]
    fn push(&mut self, parents: &[(u32, f64)]) -> u32 {
        for &(p, d) in parents {
            if p != CONST_IDX {
                self.edges.push((p, d));
            }
        }
        let idx = self.starts.len() - 1;
        self.starts.push(self.edges.len() as u32);
        idx as u32
    }

    fn len(&self) -> usize {
        self.starts.len() - 1
    }
}

thread_local! {
    static TAPE: RefCell<Tape> = RefCell::new(Tape::default());
    static ACTIVE: Cell<bool> = const { Cell::new(false) };
}

impl Var {
    #[inline]
    fn unary(a: Var, v: f64, da: f64) -> Var {
        if a.i == CONST_IDX {
            return Var { v, i: CONST_IDX };
        }
        let i = TAPE.with(|t| t.borrow_mut().push(&[(a.i, da)]));
        Var { v, i }
    }

    #[inline]
    fn binary(a: Var, da: f64, b: Var, db: f64, v: f64) -> Var {
        if a.i == CONST_IDX && b.i == CONST_IDX {
            return Var { v, i: CONST_IDX };
        }
        let i = TAPE.with(|t| t.borrow_mut().push(&[(a.i, da), (b.i, db)]));
        Var { v, i }
    }

    pub fn is_const(&self) -> bool {
        self.i == CONST_IDX
    }
}

impl Add for Var {
    type Output = Var;
    #[inline]
    fn add(self, o: Var) -> Var {
        Var::binary(self, 1.0, o, 1.0, self.v + o.v)
    }
}

impl Sub for Var {
    type Output = Var;
    #[inline]
    fn sub(self, o: Var) -> Var {
        Var::binary(self, 1.0, o, -1.0, self.v - o.v)
    }
}

impl Mul for Var {
    type Output = Var;
    #[inline]
    fn mul(self, o: Var) -> Var {
        Var::binary(self, o.v, o, self.v, self.v * o.v)
    }
}

impl Div for Var {
    type Output = Var;
    #[inline]
    fn div(self, o: Var) -> Var {
        let inv = 1.0 / o.v;
        let q = self.v * inv;
        Var::binary(self, inv, o, -q * inv, q)
    }
}

impl Neg for Var {
    type Output = Var;
    #[inline]
    fn neg(self) -> Var {
        Var::unary(self, -self.v, -1.0)
    }
}

impl Add<f64> for Var {
    type Output = Var;
    #[inline]
    fn add(self, c: f64) -> Var {
        Var::unary(self, self.v + c, 1.0)
    }
}

impl Sub<f64> for Var {
    type Output = Var;
    #[inline]
    fn sub(self, c: f64) -> Var {
        Var::unary(self, self.v - c, 1.0)
    }
}

impl Mul<f64> for Var {
    type Output = Var;
    #[inline]
    fn mul(self, c: f64) -> Var {
        Var::unary(self, self.v * c, c)
    }
}

impl Div<f64> for Var {
    type Output = Var;
    #[inline]
    fn div(self, c: f64) -> Var {
        Var::unary(self, self.v / c, 1.0 / c)
    }
}

impl AddAssign for Var {
    #[inline]
    fn add_assign(&mut self, o: Var) {
        *self = *self + o;
    }
}

impl SubAssign for Var {
    #[inline]
    fn sub_assign(&mut self, o: Var) {
        *self = *self - o;
    }
}

impl MulAssign<f64> for Var {
    #[inline]
    fn mul_assign(&mut self, c: f64) {
        *self = *self * c;
    }
}

impl Scalar for Var {
    #[inline]
    fn cst(v: f64) -> Self {
        Var { v, i: CONST_IDX }
    }
    #[inline]
    fn value(&self) -> f64 {
        self.v
    }
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        Var::unary(self, s, 0.5 / s)
    }
    fn exp(self) -> Self {
        let e = self.v.exp();
        Var::unary(self, e, e)
    }
    fn ln(self) -> Self {
        Var::unary(self, self.v.ln(), 1.0 / self.v)
    }
    fn powf(self, p: f64) -> Self {
        Var::unary(self, self.v.powf(p), p * self.v.powf(p - 1.0))
    }

    fn dot(a: &[Self], b: &[Self]) -> Self {
        let mut v = 0.0;
        let mut edges = Vec::with_capacity(2 * a.len());
        for (x, y) in a.iter().zip(b) {
            v += x.v * y.v;
            edges.push((x.i, y.v));
            edges.push((y.i, x.v));
        }
        if edges.iter().all(|e| e.0 == CONST_IDX) {
            return Var::cst(v);
        }
        let i = TAPE.with(|t| t.borrow_mut().push(&edges));
        Var { v, i }
    }

    fn dot_cst(a: &[Self], c: &[f64]) -> Self {
        let mut v = 0.0;
        let mut edges = Vec::with_capacity(a.len());
        for (x, y) in a.iter().zip(c) {
            v += x.v * y;
            edges.push((x.i, *y));
        }
        if edges.iter().all(|e| e.0 == CONST_IDX) {
            return Var::cst(v);
        }
        let i = TAPE.with(|t| t.borrow_mut().push(&edges));
        Var { v, i }
    }
}

struct ActiveGuard;

impl Drop for ActiveGuard {
    fn drop(&mut self) {
        ACTIVE.with(|a| a.set(false));
        TAPE.with(|t| t.borrow_mut().clear());
    }
}

/// Records `f` on a fresh tape with `inputs` as leaves and pulls `seed` back
/// through it. Returns the output values and the input cotangents.
///
/// Panics when called while another recording is active on this thread.
pub fn vjp<E>(
    inputs: &[f64],
    seed: &[f64],
    f: impl FnOnce(&[Var]) -> std::result::Result<Vec<Var>, E>,
) -> std::result::Result<(Vec<f64>, Vec<f64>), E> {
    let was_active = ACTIVE.with(|a| a.replace(true));
    assert!(!was_active, "nested reverse-mode recordings are not supported");
    let _guard = ActiveGuard;
    TAPE.with(|t| t.borrow_mut().clear());

    let leaves: Vec<Var> = TAPE.with(|t| {
        let mut t = t.borrow_mut();
        inputs
            .iter()
            .map(|&v| Var { v, i: t.push(&[]) })
            .collect()
    });
    let outputs = f(&leaves)?;
    assert_eq!(outputs.len(), seed.len(), "seed length must match output count");
    let values: Vec<f64> = outputs.iter().map(|o| o.v).collect();

    let grads = TAPE.with(|t| {
        let t = t.borrow();
        let mut adj = vec![0.0; t.len()];
        for (o, s) in outputs.iter().zip(seed) {
            if o.i != CONST_IDX {
                adj[o.i as usize] += *s;
            }
        }
        for k in (inputs.len()..t.len()).rev() {
            let a = adj[k];
            if a == 0.0 {
                continue;
            }
            let (s, e) = (t.starts[k] as usize, t.starts[k + 1] as usize);
            for &(p, d) in &t.edges[s..e] {
                adj[p as usize] += a * d;
            }
        }
        adj.truncate(inputs.len());
        adj
    });
    Ok((values, grads))
}

/// Runs `f` with `L`-lane duals seeded by `dirs` (at most `L` directions) and
/// returns the output values and one output tangent per direction.
pub fn jvp<const L: usize, E>(
    x: &[f64],
    dirs: &[&[f64]],
    f: impl FnOnce(&[Dual<L>]) -> std::result::Result<Vec<Dual<L>>, E>,
) -> std::result::Result<(Vec<f64>, Vec<Vec<f64>>), E> {
    assert!(dirs.len() <= L);
    let xs: Vec<Dual<L>> = x
        .iter()
        .enumerate()
        .map(|(k, &v)| {
            let mut d = [0.0; L];
            for (l, dir) in dirs.iter().enumerate() {
                d[l] = dir[k];
            }
            Dual { v, d }
        })
        .collect();
    let ys = f(&xs)?;
    let values = ys.iter().map(|y| y.v).collect();
    let tangents = (0..dirs.len())
        .map(|l| ys.iter().map(|y| y.d[l]).collect())
        .collect();
    Ok((values, tangents))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poly<S: Scalar>(x: &[S]) -> Result<Vec<S>, ()> {
        let a = x[0] * x[1] + x[0].exp() / x[1];
        let b = (x[0] * x[0] + 1.0).sqrt().ln() - x[1].powf(1.5);
        Ok(vec![a, b, S::dot(x, x)])
    }

    #[test]
    fn forward_and_reverse_agree() {
        let x = [0.3, 1.7];
        let (_, t) = jvp::<2, ()>(&x, &[&[1.0, 0.0], &[0.0, 1.0]], poly).unwrap();
        for (o, row) in [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]].iter().enumerate() {
            let (_, g) = vjp(&x, row, poly).unwrap();
            assert!((g[0] - t[0][o]).abs() < 1e-14);
            assert!((g[1] - t[1][o]).abs() < 1e-14);
        }
    }

    #[test]
    fn reverse_matches_closed_form() {
        let (v, g) = vjp(&[2.0, 3.0], &[1.0], |x| Ok::<_, ()>(vec![x[0] * x[1] / (x[0] + 1.0)]))
            .unwrap();
        assert!((v[0] - 2.0).abs() < 1e-15);
        // d/dx0 = x1 / (x0 + 1)^2, d/dx1 = x0 / (x0 + 1)
        assert!((g[0] - 3.0 / 9.0).abs() < 1e-15);
        assert!((g[1] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn activations_at_zero() {
        assert_eq!(softplus(0.0), std::f64::consts::LN_2);
        assert_eq!(silu(0.0), 0.0);
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
        let (_, g) = vjp(&[0.0], &[1.0], |x| Ok::<_, ()>(vec![softplus(x[0])])).unwrap();
        assert!((g[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn constants_stay_off_tape() {
        let (_, g) = vjp(&[1.0], &[1.0], |x| {
            let c = Var::cst(2.0) * Var::cst(3.0);
            assert!(c.is_const());
            Ok::<_, ()>(vec![x[0] * c])
        })
        .unwrap();
        assert_eq!(g[0], 6.0);
    }
}
