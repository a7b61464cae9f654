//! All-pairs boundary distances and per-pixel polygon membership.

/// Pixels of `label` (row-major `labels` over `extents`) touching another label or the grid
/// edge through a 4-neighbour.
pub fn boundary_pixels(extents: [usize; 2], labels: &[u8], label: u8) -> Vec<[usize; 2]> {
    let [h, w] = extents;
    let mut out = Vec::new();
    for r in 0..h {
        for c in 0..w {
            if labels[r * w + c] != label {
                continue;
            }
            let up = r == 0 || labels[(r - 1) * w + c] != label;
            let down = r + 1 == h || labels[(r + 1) * w + c] != label;
            let left = c == 0 || labels[r * w + c - 1] != label;
            let right = c + 1 == w || labels[r * w + c + 1] != label;
            if up || down || left || right {
                out.push([r, c]);
            }
        }
    }
    out
}

/// Nearest-neighbour distances from every point of `from` to `to`, by exhaustive search.
pub fn directed_distances(from: &[[usize; 2]], to: &[[usize; 2]], spacing: [f64; 2]) -> Vec<f64> {
    from.iter()
        .map(|p| {
            to.iter()
                .map(|q| {
                    let dr = (p[0] as f64 - q[0] as f64) * spacing[0];
                    let dc = (p[1] as f64 - q[1] as f64) * spacing[1];
                    (dr * dr + dc * dc).sqrt()
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// Symmetric Hausdorff distance and mean of the directed mean distances.
pub fn hausdorff_and_asd(
    extents: [usize; 2],
    a: &[u8],
    b: &[u8],
    label: u8,
    spacing: [f64; 2],
) -> (f64, f64) {
    let ba = boundary_pixels(extents, a, label);
    let bb = boundary_pixels(extents, b, label);
    let ab = directed_distances(&ba, &bb, spacing);
    let ba_d = directed_distances(&bb, &ba, spacing);
    let max = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    (max(&ab).max(max(&ba_d)), 0.5 * (mean(&ab) + mean(&ba_d)))
}

/// Even-odd membership of a point by counting crossings of a ray toward increasing column.
pub fn inside_polygon(poly: &[[f64; 2]], p: [f64; 2]) -> bool {
    let n = poly.len();
    let mut inside = false;
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        if (a[0] <= p[0]) != (b[0] <= p[0]) {
            let col = a[1] + (p[0] - a[0]) / (b[0] - a[0]) * (b[1] - a[1]);
            if p[1] < col {
                inside = !inside;
            }
        }
    }
    inside
}
