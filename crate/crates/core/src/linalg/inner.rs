use crate::error::{check_len, Error, Result};

/// Diagonal inner product `<a, b> = sum a_k w_k b_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct InnerProduct {
    weights: Vec<f64>,
}

impl InnerProduct {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        for (index, &value) in weights.iter().enumerate() {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::NonPositiveWeight { index, value });
            }
        }
        Ok(InnerProduct { weights })
    }

    pub fn identity(n: usize) -> Self {
        InnerProduct {
            weights: vec![1.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Same weights multiplied by `c > 0`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.weights.iter().map(|w| w * c).collect())
    }

    pub fn norm(&self, w: &[f64]) -> Result<f64> {
        Ok(inner(w, w, self)?.sqrt())
    }
}

pub fn inner(w1: &[f64], w2: &[f64], ip: &InnerProduct) -> Result<f64> {
    check_len(ip.len(), w1.len())?;
    check_len(ip.len(), w2.len())?;
    Ok(w1
        .iter()
        .zip(w2)
        .zip(&ip.weights)
        .map(|((a, b), w)| a * w * b)
        .sum())
}

/// Diagonal Cholesky factor `N = sqrt(M)` and its inverse.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagFactor {
    pub n: Vec<f64>,
    pub n_inv: Vec<f64>,
}

pub fn cholesky_diag(ip: &InnerProduct) -> DiagFactor {
    let n: Vec<f64> = ip.weights.iter().map(|w| w.sqrt()).collect();
    let n_inv = n.iter().map(|x| 1.0 / x).collect();
    DiagFactor { n, n_inv }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::StructuredMesh;

    #[test]
    fn examples() {
        let ip = InnerProduct::identity(5);
        assert_eq!(inner(&[1.0; 5], &[1.0; 5], &ip).unwrap(), 5.0);
        let ip = InnerProduct::new(vec![3.0, 7.0]).unwrap();
        assert_eq!(inner(&[1.0, 0.0], &[0.0, 1.0], &ip).unwrap(), 0.0);
        let m = StructuredMesh::build_cartesian(2, 2, 1.0, 1.0, 1.0).unwrap();
        let ip = InnerProduct::new(m.volumes().to_vec()).unwrap();
        assert!((inner(&[1.0; 4], &[1.0; 4], &ip).unwrap() - 1.0).abs() < 1e-15);
        assert!(inner(&[1.0; 3], &[1.0; 4], &ip).is_err());
    }

    #[test]
    fn cholesky_examples() {
        let f = cholesky_diag(&InnerProduct::identity(3));
        assert_eq!(f.n, vec![1.0; 3]);
        let f = cholesky_diag(&InnerProduct::new(vec![4.0, 9.0]).unwrap());
        assert_eq!(f.n, vec![2.0, 3.0]);
        assert_eq!(f.n_inv, vec![0.5, 1.0 / 3.0]);
        let m = StructuredMesh::build_cartesian(4, 4, 1.0, 1.0, 1.2).unwrap();
        let f = cholesky_diag(&InnerProduct::new(m.volumes().to_vec()).unwrap());
        for (n, v) in f.n.iter().zip(m.volumes()) {
            assert!((n * n - v).abs() <= 1e-15 * v.max(1.0));
        }
        assert!(InnerProduct::new(vec![1.0, 0.0]).is_err());
        assert!(InnerProduct::new(vec![-1.0]).is_err());
    }
}
