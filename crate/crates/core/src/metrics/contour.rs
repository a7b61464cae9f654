//! Polylines: iso-contours of binary grids, Catmull-Rom splines, scan-line filling and
//! simplicity checks. Points are `[row, col]`.

use std::collections::BTreeMap;

/// Contour vertex on the edge between an inside and an outside pixel center.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContourVertex {
    pub point: [f64; 2],
    /// The inside pixel.
    pub inside: [usize; 2],
}

/// Edge between pixel centers: `(r, c, 0)` joins `(r, c)`-`(r, c+1)`, `(r, c, 1)` joins
/// `(r, c)`-`(r+1, c)`.
type EdgeKey = (i64, i64, u8);

/// Closed boundary loops of `inside` (row-major over `extents`), traced through edge
/// midpoints. Diagonal-only contacts are treated as separate regions.
pub fn iso_contours(extents: [usize; 2], inside: &[bool]) -> Vec<Vec<ContourVertex>> {
    let [h, w] = extents;
    let at = |r: i64, c: i64| r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w && inside[r as usize * w + c as usize];
    let mut links: BTreeMap<EdgeKey, Vec<EdgeKey>> = BTreeMap::new();
    let mut link = |a: EdgeKey, b: EdgeKey| {
        links.entry(a).or_default().push(b);
        links.entry(b).or_default().push(a);
    };
    for r in -1..h as i64 {
        for c in -1..w as i64 {
            let (tl, tr, bl, br) = (at(r, c), at(r, c + 1), at(r + 1, c), at(r + 1, c + 1));
            let top = (r, c, 0);
            let bottom = (r + 1, c, 0);
            let left = (r, c, 1);
            let right = (r, c + 1, 1);
            let mut crossing = Vec::with_capacity(4);
            if tl != tr {
                crossing.push(top);
            }
            if tr != br {
                crossing.push(right);
            }
            if br != bl {
                crossing.push(bottom);
            }
            if bl != tl {
                crossing.push(left);
            }
            match crossing.len() {
                2 => link(crossing[0], crossing[1]),
                4 if tl => {
                    link(top, left);
                    link(bottom, right);
                }
                4 => {
                    link(top, right);
                    link(bottom, left);
                }
                _ => {}
            }
        }
    }
    let vertex = |k: EdgeKey| {
        let (r, c, o) = k;
        let (r2, c2) = if o == 0 { (r, c + 1) } else { (r + 1, c) };
        let inner = if at(r, c) { (r, c) } else { (r2, c2) };
        ContourVertex {
            point: [(r + r2) as f64 / 2.0, (c + c2) as f64 / 2.0],
            inside: [inner.0 as usize, inner.1 as usize],
        }
    };
    let mut seen: BTreeMap<EdgeKey, bool> = links.keys().map(|&k| (k, false)).collect();
    let mut loops = Vec::new();
    for &start in links.keys() {
        if seen[&start] {
            continue;
        }
        let mut path = vec![vertex(start)];
        seen.insert(start, true);
        let (mut prev, mut cur) = (start, links[&start][0]);
        while cur != start {
            path.push(vertex(cur));
            seen.insert(cur, true);
            let next = links[&cur].iter().copied().find(|&n| n != prev).unwrap_or(prev);
            prev = cur;
            cur = next;
        }
        loops.push(path);
    }
    loops
}

fn bezier(p0: [f64; 2], p1: [f64; 2], p2: [f64; 2], p3: [f64; 2], t: f64) -> [f64; 2] {
    let u = 1.0 - t;
    let (a, b, c, d) = (u * u * u, 3.0 * u * u * t, 3.0 * u * t * t, t * t * t);
    [a * p0[0] + b * p1[0] + c * p2[0] + d * p3[0], a * p0[1] + b * p1[1] + c * p2[1] + d * p3[1]]
}

/// Cubic Bézier pieces through consecutive points with Catmull-Rom control points, sampled
/// `per_segment` times per piece. A closed curve returns to the first point without repeating
/// it; an open curve ends on the last point.
pub fn catmull_rom(points: &[[f64; 2]], closed: bool, per_segment: usize) -> Vec<[f64; 2]> {
    let n = points.len();
    if n < 2 {
        return points.to_vec();
    }
    let get = |i: isize| -> [f64; 2] {
        if closed {
            points[i.rem_euclid(n as isize) as usize]
        } else {
            points[i.clamp(0, n as isize - 1) as usize]
        }
    };
    let pieces = if closed { n } else { n - 1 };
    let per = per_segment.max(1);
    let mut out = Vec::with_capacity(pieces * per + 1);
    for i in 0..pieces as isize {
        let (p0, p1, p2, p3) = (get(i - 1), get(i), get(i + 1), get(i + 2));
        let c1 = [p1[0] + (p2[0] - p0[0]) / 6.0, p1[1] + (p2[1] - p0[1]) / 6.0];
        let c2 = [p2[0] - (p3[0] - p1[0]) / 6.0, p2[1] - (p3[1] - p1[1]) / 6.0];
        for s in 0..per {
            out.push(bezier(p1, c1, c2, p2, s as f64 / per as f64));
        }
    }
    if !closed {
        out.push(points[n - 1]);
    }
    out
}

/// Signed shoelace area of a closed polygon.
pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    (0..n).map(|i| {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        a[0] * b[1] - b[0] * a[1]
    })
    .sum::<f64>()
        / 2.0
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn on_segment(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> bool {
    p[0] >= a[0].min(b[0]) - 1e-12 && p[0] <= a[0].max(b[0]) + 1e-12 && p[1] >= a[1].min(b[1]) - 1e-12 && p[1] <= a[1].max(b[1]) + 1e-12
}

fn segments_meet(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let eps = 1e-12;
    let (d1, d2, d3, d4) = (orient(c, d, a), orient(c, d, b), orient(a, b, c), orient(a, b, d));
    if ((d1 > eps && d2 < -eps) || (d1 < -eps && d2 > eps)) && ((d3 > eps && d4 < -eps) || (d3 < -eps && d4 > eps)) {
        return true;
    }
    (d1.abs() <= eps && on_segment(c, d, a))
        || (d2.abs() <= eps && on_segment(c, d, b))
        || (d3.abs() <= eps && on_segment(a, b, c))
        || (d4.abs() <= eps && on_segment(a, b, d))
}

/// Whether two non-adjacent edges of the closed polygon touch or cross.
pub fn self_intersects(poly: &[[f64; 2]]) -> bool {
    let n = poly.len();
    if n < 4 {
        return false;
    }
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        for j in i + 2..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            let (c, d) = (poly[j], poly[(j + 1) % n]);
            if segments_meet(a, b, c, d) {
                return true;
            }
        }
    }
    false
}

/// Pixel centers inside the closed polygon under the even-odd rule, row-major.
pub fn scanline_fill(poly: &[[f64; 2]], extents: [usize; 2]) -> Vec<bool> {
    let [h, w] = extents;
    let mut out = vec![false; h * w];
    let n = poly.len();
    let mut xs = Vec::new();
    for r in 0..h {
        let y = r as f64;
        xs.clear();
        for i in 0..n {
            let (p, q) = (poly[i], poly[(i + 1) % n]);
            if (p[0] <= y && y < q[0]) || (q[0] <= y && y < p[0]) {
                xs.push(p[1] + (y - p[0]) * (q[1] - p[1]) / (q[0] - p[0]));
            }
        }
        xs.sort_by(f64::total_cmp);
        for pair in xs.chunks_exact(2) {
            let lo = pair[0].ceil().max(0.0);
            let hi = pair[1].ceil().min(w as f64);
            let mut c = lo;
            while c < hi {
                out[r * w + c as usize] = true;
                c += 1.0;
            }
        }
    }
    out
}
