use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Full affine map `x -> M x + t`, flattened as the row-major matrix followed by the
/// translation (6 values in 2D, 12 in 3D).
#[derive(Clone, Debug, PartialEq)]
pub struct AffineTransform {
    dim: usize,
    params: Vec<f64>,
}

impl AffineTransform {
    pub fn param_count(dim: usize) -> usize {
        dim * (dim + 1)
    }

    pub fn identity(dim: usize) -> Self {
        let mut params = vec![0.0; Self::param_count(dim)];
        for d in 0..dim {
            params[d * dim + d] = 1.0;
        }
        Self { dim, params }
    }

    pub fn from_params(dim: usize, params: Vec<f64>) -> Result<Self> {
        if !(2..=3).contains(&dim) || params.len() != Self::param_count(dim) {
            return Err(Error::Argument(format!(
                "a {dim}D affine transform takes {} parameters, got {}",
                Self::param_count(dim),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Argument("affine parameters must be finite".into()));
        }
        Ok(Self { dim, params })
    }

    pub fn from_parts(matrix: &DMatrix<f64>, translation: &[f64]) -> Result<Self> {
        let dim = translation.len();
        let mut params = Vec::with_capacity(Self::param_count(dim));
        for r in 0..dim {
            for c in 0..dim {
                params.push(matrix[(r, c)]);
            }
        }
        params.extend_from_slice(translation);
        Self::from_params(dim, params)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.params[..self.dim * self.dim])
    }

    pub fn translation(&self) -> &[f64] {
        &self.params[self.dim * self.dim..]
    }

    pub fn determinant(&self) -> f64 {
        self.matrix().determinant()
    }

    pub fn apply_point(&self, p: &[f64]) -> Vec<f64> {
        let d = self.dim;
        (0..d)
            .map(|r| (0..d).map(|c| self.params[r * d + c] * p[c]).sum::<f64>() + self.params[d * d + r])
            .collect()
    }

    /// Applies the map to a flat list of points.
    pub fn apply(&self, flat: &[f64]) -> Vec<f64> {
        flat.chunks(self.dim).flat_map(|p| self.apply_point(p)).collect()
    }

    pub fn inverse(&self) -> Result<Self> {
        let m = self.matrix();
        if m.determinant().abs() <= 1e-8 {
            return Err(Error::Fit(format!(
                "affine matrix is singular (determinant {:.3e})",
                m.determinant()
            )));
        }
        let inv = m.try_inverse().ok_or_else(|| Error::Fit("affine matrix is not invertible".into()))?;
        let t = DVector::from_column_slice(self.translation());
        let ti = -(&inv * t);
        Self::from_parts(&inv, ti.as_slice())
    }

    /// `self ∘ inner`: first `inner`, then `self`.
    pub fn compose(&self, inner: &AffineTransform) -> Self {
        let m = self.matrix() * inner.matrix();
        let t = self.apply_point(inner.translation());
        Self::from_parts(&m, &t).expect("composition of finite maps is finite")
    }
}
