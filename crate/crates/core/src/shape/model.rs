use nalgebra::{DMatrix, DVector};

use super::align::generalized_procrustes;
use crate::error::{Error, Result};
use crate::grid::LandmarkSet;

/// Point distribution model: aligned mean shape plus orthonormal modes with variances.
///
/// Shapes are flattened point-major (`x0, y0, x1, y1, ...`). The mean lives in the
/// aligned frame: centered on the origin and scaled to unit Frobenius norm.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeModel {
    dim: usize,
    mean: Vec<f64>,
    modes: DMatrix<f64>,
    variances: Vec<f64>,
}

impl ShapeModel {
    pub fn new(dim: usize, mean: Vec<f64>, modes: DMatrix<f64>, variances: Vec<f64>) -> Result<Self> {
        if dim == 0 || mean.len() % dim != 0 || modes.nrows() != mean.len() || modes.ncols() != variances.len() {
            return Err(Error::Argument("shape model parts disagree in size".into()));
        }
        if variances.iter().any(|&v| !(v >= 0.0)) || variances.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::Argument("mode variances must be non-negative and non-increasing".into()));
        }
        Ok(Self { dim, mean, modes, variances })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn landmark_count(&self) -> usize {
        self.mean.len() / self.dim
    }

    pub fn mode_count(&self) -> usize {
        self.variances.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn modes(&self) -> &DMatrix<f64> {
        &self.modes
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    /// `mean + modes * b`, flat.
    pub fn expand(&self, b: &[f64]) -> Vec<f64> {
        let v = DVector::from_column_slice(b);
        let d = &self.modes * v;
        self.mean.iter().zip(d.iter()).map(|(m, x)| m + x).collect()
    }
}

/// Aligns the library by generalized Procrustes and keeps its `k` leading principal modes.
pub fn build_ssm(library: &[LandmarkSet], k: usize) -> Result<ShapeModel> {
    if library.len() < 2 {
        return Err(Error::Argument(format!("a shape model needs at least 2 shapes, got {}", library.len())));
    }
    let dim = library[0].dim();
    let count = library[0].len();
    for (i, s) in library.iter().enumerate() {
        if s.dim() != dim || s.len() != count {
            return Err(Error::Argument(format!("shape {i} differs in landmark count or dimension")));
        }
        if !s.all_available() {
            return Err(Error::Argument(format!("shape {i} has unavailable landmarks")));
        }
    }
    let n = library.len();
    let size = dim * count;
    if k > size.min(n - 1) {
        return Err(Error::Argument(format!(
            "k = {k} exceeds min(dim * landmarks, shapes - 1) = {}",
            size.min(n - 1)
        )));
    }
    let aligned = generalized_procrustes(library)?;
    let mut mean = vec![0.0; size];
    for s in &aligned {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v / n as f64;
        }
    }
    // Columns are centered aligned shapes; their left singular vectors are the modes.
    let data = DMatrix::from_fn(size, n, |r, c| aligned[c][r] - mean[r]);
    let svd = data.svd(true, false);
    let u = svd.u.ok_or_else(|| Error::Fit("singular value decomposition failed".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut modes = DMatrix::zeros(size, k);
    let mut variances = Vec::with_capacity(k);
    for (col, &i) in order.iter().take(k).enumerate() {
        let mut v = u.column(i).into_owned();
        // Sign convention: the largest-magnitude entry is positive.
        let (imax, _) = v.iter().enumerate().fold((0, 0.0f64), |acc, (j, x)| if x.abs() > acc.1 { (j, x.abs()) } else { acc });
        if v[imax] < 0.0 {
            v = -v;
        }
        modes.set_column(col, &v);
        let s = svd.singular_values[i];
        variances.push(s * s / (n - 1) as f64);
    }
    ShapeModel::new(dim, mean, modes, variances)
}
