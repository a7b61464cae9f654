//! Exact squared Euclidean distance transform by lower envelopes of parabolas, one axis at a
//! time, with per-axis spacing.

/// Squared distance of every pixel to the nearest seed, in physical units.
pub(crate) fn squared_distance(extents: [usize; 2], spacing: [f64; 2], seeds: &[[usize; 2]]) -> Vec<f64> {
    let [h, w] = extents;
    let mut grid = vec![f64::INFINITY; h * w];
    for s in seeds {
        grid[s[0] * w + s[1]] = 0.0;
    }
    let mut line = Vec::new();
    let mut out = Vec::new();
    for c in 0..w {
        line.clear();
        line.extend((0..h).map(|r| grid[r * w + c]));
        envelope(&line, spacing[0] * spacing[0], &mut out);
        for r in 0..h {
            grid[r * w + c] = out[r];
        }
    }
    for r in 0..h {
        line.clear();
        line.extend_from_slice(&grid[r * w..(r + 1) * w]);
        envelope(&line, spacing[1] * spacing[1], &mut out);
        grid[r * w..(r + 1) * w].copy_from_slice(&out);
    }
    grid
}

/// `out[q] = min_p f[p] + s2 (q - p)^2`.
fn envelope(f: &[f64], s2: f64, out: &mut Vec<f64>) {
    let n = f.len();
    out.clear();
    out.resize(n, f64::INFINITY);
    let finite: Vec<usize> = (0..n).filter(|&i| f[i].is_finite()).collect();
    if finite.is_empty() {
        return;
    }
    // Parabola apexes on the envelope; z[i] is where parabola v[i] starts to be lowest.
    let cross = |p: usize, q: usize| {
        let (pf, qf) = (p as f64, q as f64);
        ((f[q] + s2 * qf * qf) - (f[p] + s2 * pf * pf)) / (2.0 * s2 * (qf - pf))
    };
    let mut v = vec![finite[0]];
    let mut z = vec![f64::NEG_INFINITY];
    for &q in &finite[1..] {
        loop {
            let s = cross(*v.last().expect("never emptied"), q);
            if s <= *z.last().expect("never emptied") {
                v.pop();
                z.pop();
            } else {
                v.push(q);
                z.push(s);
                break;
            }
        }
    }
    z.push(f64::INFINITY);
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = f[v[k]] + s2 * d * d;
    }
}
