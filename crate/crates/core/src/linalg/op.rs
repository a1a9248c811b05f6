use crate::ad::{jvp, vjp, Dual, Scalar};
use crate::error::{check_len, Result};
use crate::linalg::inner::{dot, norm2};

/// Lanes carried by one forward-mode pass.
pub const LANES: usize = 8;

/// Evaluation, Jacobian-vector product and vector-Jacobian product of a map
/// `R^n -> R^m`.
pub trait DifferentiableOp {
    fn input_len(&self) -> usize;
    fn output_len(&self) -> usize;
    fn eval(&self, x: &[f64]) -> Result<Vec<f64>>;
    fn tangent(&self, x: &[f64], dx: &[f64]) -> Result<Vec<f64>>;
    fn adjoint(&self, x: &[f64], ybar: &[f64]) -> Result<Vec<f64>>;

    /// Several tangents at the same point.
    fn tangents(&self, x: &[f64], dirs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        dirs.iter().map(|d| self.tangent(x, d)).collect()
    }
}

/// A map written once over any [`Scalar`].
pub trait Kernel {
    fn input_len(&self) -> usize;
    fn output_len(&self) -> usize;
    fn apply<S: Scalar>(&self, x: &[S]) -> Result<Vec<S>>;
}

/// Differentiable operator derived from a [`Kernel`] by forward and reverse AD.
pub struct AdOp<K>(pub K);

impl<K: Kernel> DifferentiableOp for AdOp<K> {
    fn input_len(&self) -> usize {
        self.0.input_len()
    }

    fn output_len(&self) -> usize {
        self.0.output_len()
    }

    fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.input_len(), x.len())?;
        self.0.apply(x)
    }

    fn tangent(&self, x: &[f64], dx: &[f64]) -> Result<Vec<f64>> {
        check_len(self.input_len(), x.len())?;
        check_len(self.input_len(), dx.len())?;
        let (_, mut t) = jvp::<1, _>(x, &[dx], |xs: &[Dual<1>]| self.0.apply(xs))?;
        Ok(t.pop().unwrap())
    }

    fn adjoint(&self, x: &[f64], ybar: &[f64]) -> Result<Vec<f64>> {
        check_len(self.input_len(), x.len())?;
        check_len(self.output_len(), ybar.len())?;
        let (_, g) = vjp(x, ybar, |xs| self.0.apply(xs))?;
        Ok(g)
    }

    fn tangents(&self, x: &[f64], dirs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        check_len(self.input_len(), x.len())?;
        let mut out = Vec::with_capacity(dirs.len());
        for chunk in dirs.chunks(LANES) {
            for d in chunk {
                check_len(self.input_len(), d.len())?;
            }
            let refs: Vec<&[f64]> = chunk.iter().map(|d| d.as_slice()).collect();
            let (_, t) = jvp::<LANES, _>(x, &refs, |xs: &[Dual<LANES>]| self.0.apply(xs))?;
            out.extend(t);
        }
        Ok(out)
    }
}

/// Relative mismatch `|<Jv, u> - <v, J^T u>| / max(|<Jv, u>|, |<v, J^T u>|)`.
pub fn dot_test(op: &dyn DifferentiableOp, x: &[f64], v: &[f64], u: &[f64]) -> Result<f64> {
    let jv = op.tangent(x, v)?;
    let jtu = op.adjoint(x, u)?;
    let a = dot(&jv, u);
    let b = dot(v, &jtu);
    let scale = a.abs().max(b.abs());
    Ok(if scale == 0.0 { 0.0 } else { (a - b).abs() / scale })
}

/// Relative defect of `J(a v1 + b v2) = a J v1 + b J v2`.
pub fn linearity_defect(
    op: &dyn DifferentiableOp,
    x: &[f64],
    v1: &[f64],
    v2: &[f64],
    a: f64,
    b: f64,
) -> Result<f64> {
    let comb: Vec<f64> = v1.iter().zip(v2).map(|(p, q)| a * p + b * q).collect();
    let lhs = op.tangent(x, &comb)?;
    let t1 = op.tangent(x, v1)?;
    let t2 = op.tangent(x, v2)?;
    let rhs: Vec<f64> = t1.iter().zip(&t2).map(|(p, q)| a * p + b * q).collect();
    let diff: Vec<f64> = lhs.iter().zip(&rhs).map(|(p, q)| p - q).collect();
    let scale = norm2(&lhs).max(norm2(&rhs));
    Ok(if scale == 0.0 { 0.0 } else { norm2(&diff) / scale })
}
