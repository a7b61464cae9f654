use nalgebra::DMatrix;

use super::{AffineTransform, ShapeModel};
use crate::error::{Error, Result};
use crate::grid::LandmarkSet;

#[derive(Clone, Debug, PartialEq)]
pub struct FitConfig {
    /// Limit each mode weight to three standard deviations.
    pub clamp: bool,
    pub max_iterations: usize,
    /// Stop once the residual changes by less than this between iterations.
    pub tolerance: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { clamp: false, max_iterations: 100, tolerance: 1e-8 }
    }
}

impl FitConfig {
    pub fn clamped() -> Self {
        Self { clamp: true, ..Self::default() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    pub a: AffineTransform,
    pub b: Vec<f64>,
    /// Root-mean-square point distance over the available landmarks.
    pub residual: f64,
    pub iterations: usize,
    /// Residual after every iteration, starting with the initial affine-only solve.
    pub history: Vec<f64>,
}

/// Relative singular-value floor below which a least-squares system counts as rank deficient.
const RANK_TOLERANCE: f64 = 1e-10;

fn solve_lstsq(m: &DMatrix<f64>, rhs: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let rank = svd.singular_values.iter().filter(|&&s| s > RANK_TOLERANCE * smax.max(1e-300)).count();
    if rank < m.ncols() {
        return Err(Error::Fit(format!("{what} is rank deficient (rank {rank} of {})", m.ncols())));
    }
    svd.solve(rhs, 0.0).map_err(|e| Error::Fit(e.to_string()))
}

struct Problem<'a> {
    model: &'a ShapeModel,
    target: &'a LandmarkSet,
    rows: Vec<usize>,
}

impl Problem<'_> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    /// RMS distance over available landmarks between the target and `T_a(mean + P b)`.
    fn residual(&self, a: &AffineTransform, b: &[f64]) -> f64 {
        let shape = self.model.expand(b);
        let d = self.dim();
        let sum: f64 = self
            .rows
            .iter()
            .map(|&j| {
                let p = a.apply_point(&shape[j * d..(j + 1) * d]);
                p.iter().zip(self.target.point(j)).map(|(u, v)| (u - v) * (u - v)).sum::<f64>()
            })
            .sum();
        (sum / self.rows.len() as f64).sqrt()
    }

    /// Exact affine minimizer for fixed mode weights.
    fn solve_affine(&self, b: &[f64]) -> Result<AffineTransform> {
        let d = self.dim();
        let shape = self.model.expand(b);
        let design = DMatrix::from_fn(self.rows.len(), d + 1, |r, c| {
            if c < d { shape[self.rows[r] * d + c] } else { 1.0 }
        });
        let rhs = DMatrix::from_fn(self.rows.len(), d, |r, c| self.target.point(self.rows[r])[c]);
        let sol = solve_lstsq(&design, &rhs, "affine system over the available landmarks")?;
        // sol is (d+1) x d: column c holds the row c of the matrix followed by the translation entry.
        let matrix = DMatrix::from_fn(d, d, |r, c| sol[(c, r)]);
        let t: Vec<f64> = (0..d).map(|r| sol[(d, r)]).collect();
        AffineTransform::from_parts(&matrix, &t)
    }

    /// Mode weights from the masked normal equations in the model frame: the target is
    /// mapped back through the inverse affine and projected onto the available mode rows.
    fn solve_modes_model_frame(&self, a: &AffineTransform) -> Result<Vec<f64>> {
        let k = self.model.mode_count();
        let d = self.dim();
        let inv = a.inverse()?;
        let p = self.model.modes();
        let mean = self.model.mean();
        let n = self.rows.len() * d;
        let ps = DMatrix::from_fn(n, k, |r, c| p[(self.rows[r / d] * d + r % d, c)]);
        let mut resid = DMatrix::zeros(n, 1);
        for (i, &j) in self.rows.iter().enumerate() {
            let x = inv.apply_point(self.target.point(j));
            for c in 0..d {
                resid[(i * d + c, 0)] = x[c] - mean[j * d + c];
            }
        }
        let b = solve_lstsq(&ps, &resid, "mode system over the available landmarks")?;
        Ok(b.column(0).iter().copied().collect())
    }

    /// Mode weights minimizing the image-frame residual exactly for a fixed affine.
    fn solve_modes_image_frame(&self, a: &AffineTransform) -> Result<Vec<f64>> {
        let k = self.model.mode_count();
        let d = self.dim();
        let m = a.matrix();
        let p = self.model.modes();
        let mean = self.model.mean();
        let n = self.rows.len() * d;
        let mut design = DMatrix::zeros(n, k);
        let mut rhs = DMatrix::zeros(n, 1);
        for (i, &j) in self.rows.iter().enumerate() {
            let mapped_mean = a.apply_point(&mean[j * d..(j + 1) * d]);
            let x = self.target.point(j);
            for r in 0..d {
                rhs[(i * d + r, 0)] = x[r] - mapped_mean[r];
                for c in 0..k {
                    design[(i * d + r, c)] = (0..d).map(|e| m[(r, e)] * p[(j * d + e, c)]).sum::<f64>();
                }
            }
        }
        let b = solve_lstsq(&design, &rhs, "mode system over the available landmarks")?;
        Ok(b.column(0).iter().copied().collect())
    }

    fn clamp(&self, b: &mut [f64]) {
        for (x, v) in b.iter_mut().zip(self.model.variances()) {
            let lim = 3.0 * v.sqrt();
            *x = x.clamp(-lim, lim);
        }
    }
}

/// Fits `T_a(mean + P b)` to the available landmarks by alternating exact solves for the
/// affine map and the mode weights. The masked residual never increases between iterations.
pub fn fit(model: &ShapeModel, landmarks: &LandmarkSet, config: &FitConfig) -> Result<FitResult> {
    let d = model.dim();
    if landmarks.dim() != d || landmarks.len() != model.landmark_count() {
        return Err(Error::Argument(format!(
            "model expects {} landmarks in {d}D, got {} in {}D",
            model.landmark_count(),
            landmarks.len(),
            landmarks.dim()
        )));
    }
    let rows = landmarks.available_indices();
    if rows.len() < d + 1 {
        return Err(Error::Fit(format!(
            "{} available landmarks cannot determine a {d}D affine map (need {})",
            rows.len(),
            d + 1
        )));
    }
    let problem = Problem { model, target: landmarks, rows };
    let k = model.mode_count();
    let mut b = vec![0.0; k];
    let mut a = problem.solve_affine(&b)?;
    let mut residual = problem.residual(&a, &b);
    let mut history = vec![residual];
    let mut iterations = 0;
    while iterations < config.max_iterations && k > 0 {
        iterations += 1;
        let mut candidates = Vec::with_capacity(2);
        if let Ok(bm) = problem.solve_modes_model_frame(&a) {
            candidates.push(bm);
        }
        candidates.push(problem.solve_modes_image_frame(&a)?);
        // Keep the first candidate that does not increase the residual, else the current weights.
        let mut next_b = b.clone();
        for mut cand in candidates {
            if config.clamp {
                problem.clamp(&mut cand);
            }
            if problem.residual(&a, &cand) <= residual {
                next_b = cand;
                break;
            }
        }
        b = next_b;
        let next_a = problem.solve_affine(&b)?;
        if problem.residual(&next_a, &b) <= problem.residual(&a, &b) {
            a = next_a;
        }
        let next = problem.residual(&a, &b);
        history.push(next);
        let change = (residual - next).abs();
        residual = next;
        if change < config.tolerance {
            break;
        }
    }
    if a.determinant().abs() <= 1e-8 {
        return Err(Error::Fit("fitted affine map is singular".into()));
    }
    Ok(FitResult { a, b, residual, iterations, history })
}

/// `T_a(mean + P b)` as a complete landmark set.
pub fn synthesize(model: &ShapeModel, a: &AffineTransform, b: &[f64]) -> Result<LandmarkSet> {
    if b.len() != model.mode_count() {
        return Err(Error::Argument(format!("expected {} mode weights, got {}", model.mode_count(), b.len())));
    }
    if a.dim() != model.dim() {
        return Err(Error::Argument("affine map and model differ in dimension".into()));
    }
    LandmarkSet::complete(model.dim(), a.apply(&model.expand(b)))
}

/// Exact least-squares solution of the affine system for fixed weights, exposed for callers
/// that need only the pose.
pub fn fit_affine(model: &ShapeModel, landmarks: &LandmarkSet, b: &[f64]) -> Result<AffineTransform> {
    let problem = Problem { model, target: landmarks, rows: landmarks.available_indices() };
    problem.solve_affine(b)
}
