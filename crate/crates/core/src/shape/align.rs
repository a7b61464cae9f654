use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grid::LandmarkSet;

const MAX_ROUNDS: usize = 50;
const MEAN_TOLERANCE: f64 = 1e-7;

fn as_matrix(flat: &[f64], dim: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(flat.len() / dim, dim, flat)
}

/// Centers a flat shape and scales it to unit Frobenius norm.
pub fn normalize(flat: &[f64], dim: usize) -> Result<Vec<f64>> {
    let n = flat.len() / dim;
    let mut out = flat.to_vec();
    for d in 0..dim {
        let c = flat.iter().skip(d).step_by(dim).sum::<f64>() / n as f64;
        for v in out.iter_mut().skip(d).step_by(dim) {
            *v -= c;
        }
    }
    let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 1e-12) {
        return Err(Error::Argument("shape has all landmarks at one point".into()));
    }
    out.iter_mut().for_each(|v| *v /= norm);
    Ok(out)
}

/// Proper rotation that best maps centered `src` onto centered `dst` (no reflection).
pub fn optimal_rotation(src: &[f64], dst: &[f64], dim: usize) -> DMatrix<f64> {
    let h = as_matrix(src, dim).transpose() * as_matrix(dst, dim);
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v requested"));
    let mut d = DMatrix::<f64>::identity(dim, dim);
    if (vt.transpose() * u.transpose()).determinant() < 0.0 {
        d[(dim - 1, dim - 1)] = -1.0;
    }
    // Rotation applied to row-vector points: p' = p * R.
    u * d * vt
}

fn rotate(flat: &[f64], r: &DMatrix<f64>, dim: usize) -> Vec<f64> {
    let m = as_matrix(flat, dim) * r;
    let mut out = Vec::with_capacity(flat.len());
    for i in 0..m.nrows() {
        for d in 0..dim {
            out.push(m[(i, d)]);
        }
    }
    out
}

/// Generalized Procrustes alignment of complete shapes with similarity transforms.
///
/// Every shape is centered and scaled to unit norm, then rotated onto an evolving mean
/// whose orientation is pinned to the first shape.
pub fn generalized_procrustes(library: &[LandmarkSet]) -> Result<Vec<Vec<f64>>> {
    let dim = library[0].dim();
    let mut shapes = library.iter().map(|s| normalize(s.coords(), dim)).collect::<Result<Vec<_>>>()?;
    let reference = shapes[0].clone();
    let mut mean = reference.clone();
    for _ in 0..MAX_ROUNDS {
        for s in shapes.iter_mut() {
            let r = optimal_rotation(s, &mean, dim);
            *s = rotate(s, &r, dim);
        }
        let mut next = vec![0.0; mean.len()];
        for s in &shapes {
            for (m, v) in next.iter_mut().zip(s) {
                *m += v;
            }
        }
        let mut next = normalize(&next, dim)?;
        let r = optimal_rotation(&next, &reference, dim);
        next = rotate(&next, &r, dim);
        let change = next.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        mean = next;
        if change < MEAN_TOLERANCE {
            break;
        }
    }
    for s in shapes.iter_mut() {
        let r = optimal_rotation(s, &mean, dim);
        *s = rotate(s, &r, dim);
    }
    Ok(shapes)
}
