//! Dense reference solvers for the shape model: Gaussian elimination, cyclic Jacobi
//! eigendecomposition, and a damped Gauss-Newton joint fit over `(a, b)`.

/// Solves `m x = rhs` by Gaussian elimination with partial pivoting.
pub fn dense_solve(mut m: Vec<Vec<f64>>, mut rhs: Vec<f64>) -> Option<Vec<f64>> {
    let n = rhs.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))?;
        if m[piv][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, piv);
        rhs.swap(col, piv);
        for r in col + 1..n {
            let f = m[r][col] / m[col][col];
            if f != 0.0 {
                for c in col..n {
                    m[r][c] -= f * m[col][c];
                }
                rhs[r] -= f * rhs[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| m[r][c] * x[c]).sum();
        x[r] = (rhs[r] - s) / m[r][r];
    }
    Some(x)
}

/// Least squares via the explicit normal equations `JᵀJ x = Jᵀ r`.
pub fn dense_lstsq(rows: &[Vec<f64>], rhs: &[f64]) -> Option<Vec<f64>> {
    let n = rows.first()?.len();
    let mut ata = vec![vec![0.0; n]; n];
    let mut atb = vec![0.0; n];
    for (row, &y) in rows.iter().zip(rhs) {
        for i in 0..n {
            atb[i] += row[i] * y;
            for j in 0..n {
                ata[i][j] += row[i] * row[j];
            }
        }
    }
    dense_solve(ata, atb)
}

/// Eigenvalues (descending) and unit eigenvectors of a symmetric matrix by cyclic Jacobi sweeps.
pub fn jacobi_eigen(sym: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = sym.len();
    let mut a = sym.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vkp, vkq) = (row[p], row[q]);
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j][j].total_cmp(&a[i][i]));
    let values = order.iter().map(|&i| a[i][i]).collect();
    let vectors = order.iter().map(|&i| (0..n).map(|k| v[k][i]).collect()).collect();
    (values, vectors)
}

/// Point-major reconstruction `M (mean + Σ b_c mode_c) + t` with `a` laid out as the
/// row-major matrix followed by the translation.
pub fn reconstruct(dim: usize, mean: &[f64], modes: &[Vec<f64>], a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = mean.len() / dim;
    let mut out = Vec::with_capacity(mean.len());
    for j in 0..n {
        let y: Vec<f64> = (0..dim)
            .map(|e| mean[j * dim + e] + modes.iter().zip(b).map(|(m, w)| m[j * dim + e] * w).sum::<f64>())
            .collect();
        for r in 0..dim {
            out.push((0..dim).map(|e| a[r * dim + e] * y[e]).sum::<f64>() + a[dim * dim + r]);
        }
    }
    out
}

/// Joint damped Gauss-Newton over all affine and mode parameters at once, on the rows
/// flagged in `mask`. Returns `(a, b, rms residual over masked points)`.
pub fn joint_fit(
    dim: usize,
    mean: &[f64],
    modes: &[Vec<f64>],
    target: &[f64],
    mask: &[bool],
) -> (Vec<f64>, Vec<f64>, f64) {
    let k = modes.len();
    let na = dim * (dim + 1);
    let mut a = vec![0.0; na];
    for d in 0..dim {
        a[d * dim + d] = 1.0;
    }
    let mut b = vec![0.0; k];
    let rms = |a: &[f64], b: &[f64]| -> f64 {
        let x = reconstruct(dim, mean, modes, a, b);
        let mut s = 0.0;
        let mut n = 0;
        for (j, &m) in mask.iter().enumerate() {
            if m {
                n += 1;
                for d in 0..dim {
                    s += (x[j * dim + d] - target[j * dim + d]).powi(2);
                }
            }
        }
        (s / n as f64).sqrt()
    };
    let mut lambda = 1e-3;
    let mut cur = rms(&a, &b);
    for _ in 0..500 {
        let x = reconstruct(dim, mean, modes, &a, &b);
        let mut rows = Vec::new();
        let mut rhs = Vec::new();
        for (j, &m) in mask.iter().enumerate() {
            if !m {
                continue;
            }
            let y: Vec<f64> = (0..dim)
                .map(|e| mean[j * dim + e] + modes.iter().zip(&b).map(|(md, w)| md[j * dim + e] * w).sum::<f64>())
                .collect();
            for r in 0..dim {
                let mut row = vec![0.0; na + k];
                for e in 0..dim {
                    row[r * dim + e] = y[e];
                }
                row[dim * dim + r] = 1.0;
                for c in 0..k {
                    row[na + c] = (0..dim).map(|e| a[r * dim + e] * modes[c][j * dim + e]).sum();
                }
                rows.push(row);
                rhs.push(target[j * dim + r] - x[j * dim + r]);
            }
        }
        let n = na + k;
        let mut jtj = vec![vec![0.0; n]; n];
        let mut jtr = vec![0.0; n];
        for (row, &y) in rows.iter().zip(&rhs) {
            for i in 0..n {
                jtr[i] += row[i] * y;
                for j in 0..n {
                    jtj[i][j] += row[i] * row[j];
                }
            }
        }
        let mut improved = false;
        for _ in 0..30 {
            let mut damped = jtj.clone();
            for i in 0..n {
                damped[i][i] += lambda * (1.0 + jtj[i][i]);
            }
            let Some(step) = dense_solve(damped, jtr.clone()) else {
                lambda *= 10.0;
                continue;
            };
            let na_: Vec<f64> = a.iter().zip(&step[..na]).map(|(p, s)| p + s).collect();
            let nb: Vec<f64> = b.iter().zip(&step[na..]).map(|(p, s)| p + s).collect();
            let next = rms(&na_, &nb);
            if next < cur {
                a = na_;
                b = nb;
                improved = cur - next > 1e-15 * (1.0 + cur);
                cur = next;
                lambda = (lambda * 0.3).max(1e-12);
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    (a, b, cur)
}
