//! Conversion between a short-axis cardiac label mask and its 33 landmarks: RV insertion
//! points A and B, LV center C, eight endo/epi ray pairs, and 14 RV free-wall points.

use super::contour::{catmull_rom, iso_contours, polygon_area, scanline_fill, self_intersects};
use super::{labels, LabelMask};
use crate::error::{Error, Result};
use crate::grid::phantom::rotate;
use crate::grid::LandmarkSet;

pub const CARDIAC_LANDMARKS: usize = 33;
const RAYS: usize = 8;
const FREE_WALL: usize = 14;
const SAMPLES_PER_PIECE: usize = 16;

fn sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

fn norm(v: [f64; 2]) -> f64 {
    v[0].hypot(v[1])
}

fn unit(v: [f64; 2]) -> [f64; 2] {
    let n = norm(v);
    [v[0] / n, v[1] / n]
}

/// Number of 4-connected components of `label`.
fn components(mask: &LabelMask, label: u8) -> usize {
    let [h, w] = mask.extents();
    let mut seen = vec![false; h * w];
    let mut count = 0;
    let mut stack = Vec::new();
    for start in 0..h * w {
        if seen[start] || mask.data()[start] != label {
            continue;
        }
        count += 1;
        seen[start] = true;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (r, c) = ((i / w) as i64, (i % w) as i64);
            for (dr, dc) in [(-1, 0), (1, 0), (0, -1), (0, 1)] {
                if mask.get_signed(r + dr, c + dc) == Some(label) {
                    let j = (r + dr) as usize * w + (c + dc) as usize;
                    if !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
    }
    count
}

/// Centers of 2x2 pixel windows holding RV, Myo and background, grouped into clusters and
/// averaged.
fn junction_clusters(mask: &LabelMask) -> Vec<[f64; 2]> {
    let [h, w] = mask.extents();
    let mut points = Vec::new();
    for r in 0..h.saturating_sub(1) {
        for c in 0..w.saturating_sub(1) {
            let win = [mask.get(r, c), mask.get(r, c + 1), mask.get(r + 1, c), mask.get(r + 1, c + 1)];
            if [labels::RV, labels::MYO, labels::BACKGROUND].iter().all(|l| win.contains(l)) {
                points.push([r as f64 + 0.5, c as f64 + 0.5]);
            }
        }
    }
    // Single-linkage grouping of neighbouring windows.
    let mut group = vec![usize::MAX; points.len()];
    let mut groups = 0;
    for i in 0..points.len() {
        if group[i] != usize::MAX {
            continue;
        }
        group[i] = groups;
        let mut stack = vec![i];
        while let Some(k) = stack.pop() {
            for j in 0..points.len() {
                if group[j] == usize::MAX && norm(sub(points[j], points[k])) <= 1.5 {
                    group[j] = groups;
                    stack.push(j);
                }
            }
        }
        groups += 1;
    }
    (0..groups)
        .map(|g| {
            let members: Vec<[f64; 2]> = points.iter().zip(&group).filter(|(_, &k)| k == g).map(|(p, _)| *p).collect();
            let n = members.len() as f64;
            [members.iter().map(|p| p[0]).sum::<f64>() / n, members.iter().map(|p| p[1]).sum::<f64>() / n]
        })
        .collect()
}

/// Bilinear interpolation of the indicator `member(label)` at a sub-pixel position.
fn indicator(mask: &LabelMask, member: impl Fn(u8) -> bool, p: [f64; 2]) -> f64 {
    let (r0, c0) = (p[0].floor(), p[1].floor());
    let (fr, fc) = (p[0] - r0, p[1] - c0);
    let v = |r: f64, c: f64| mask.get_signed(r as i64, c as i64).map_or(0.0, |l| if member(l) { 1.0 } else { 0.0 });
    (1.0 - fr) * ((1.0 - fc) * v(r0, c0) + fc * v(r0, c0 + 1.0)) + fr * ((1.0 - fc) * v(r0 + 1.0, c0) + fc * v(r0 + 1.0, c0 + 1.0))
}

/// First point along the ray from `origin` where the indicator drops below one half.
fn ray_exit(mask: &LabelMask, member: impl Fn(u8) -> bool + Copy, origin: [f64; 2], dir: [f64; 2]) -> Option<[f64; 2]> {
    let at = |t: f64| [origin[0] + t * dir[0], origin[1] + t * dir[1]];
    let limit = (mask.extents()[0] + mask.extents()[1]) as f64;
    let step = 0.25;
    let mut lo = 0.0;
    let mut t = step;
    while t <= limit {
        if indicator(mask, member, at(t)) < 0.5 {
            let mut hi = t;
            for _ in 0..40 {
                let mid = 0.5 * (lo + hi);
                if indicator(mask, member, at(mid)) < 0.5 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Some(at(0.5 * (lo + hi)));
        }
        lo = t;
        t += step;
    }
    None
}

fn transform_error(msg: impl Into<String>) -> Error {
    Error::Transform(msg.into())
}

/// Extracts the 33 cardiac landmarks from a label mask.
///
/// The mask must have the RV touching the myocardium, a single RV region, and an RV outer
/// wall long enough for 14 distinct points; a violation is reported by name.
pub fn seg_to_landmarks(mask: &LabelMask) -> Result<LandmarkSet> {
    for (label, what) in [(labels::LV, "LV blood pool"), (labels::MYO, "myocardium"), (labels::RV, "RV")] {
        if mask.count(label) == 0 {
            return Err(transform_error(format!("mask has no {what}")));
        }
    }
    let parts = components(mask, labels::RV);
    if parts != 1 {
        return Err(transform_error(format!("RV is not a single connected region ({parts} components)")));
    }
    let mut junctions = junction_clusters(mask);
    if junctions.len() < 2 {
        return Err(transform_error(format!(
            "space between myocardium and RV: expected two RV insertion points, found {}",
            junctions.len()
        )));
    }
    if junctions.len() > 2 {
        let mut best = (0, 1, 0.0);
        for i in 0..junctions.len() {
            for j in i + 1..junctions.len() {
                let d = norm(sub(junctions[i], junctions[j]));
                if d > best.2 {
                    best = (i, j, d);
                }
            }
        }
        junctions = vec![junctions[best.0], junctions[best.1]];
    }
    junctions.sort_by(|p, q| p[0].total_cmp(&q[0]).then(p[1].total_cmp(&q[1])));
    let (a, b) = (junctions[0], junctions[1]);

    let [h, w] = mask.extents();
    let lv: Vec<[f64; 2]> =
        (0..h * w).filter(|&i| mask.data()[i] == labels::LV).map(|i| [(i / w) as f64, (i % w) as f64]).collect();
    let c = [lv.iter().map(|p| p[0]).sum::<f64>() / lv.len() as f64, lv.iter().map(|p| p[1]).sum::<f64>() / lv.len() as f64];
    let is_lv = |l: u8| l == labels::LV;
    let is_heart_wall = |l: u8| l == labels::LV || l == labels::MYO;
    if indicator(mask, is_lv, c) < 0.5 {
        return Err(transform_error("LV centroid lies outside the LV blood pool"));
    }

    let mut pts: Vec<[f64; 2]> = vec![a, b, c];
    let start = unit([unit(sub(a, c))[0] + unit(sub(b, c))[0], unit(sub(a, c))[1] + unit(sub(b, c))[1]]);
    for k in 0..RAYS {
        let dir = rotate(start, k as f64 * std::f64::consts::FRAC_PI_4);
        let endo = ray_exit(mask, is_lv, c, dir).ok_or_else(|| transform_error("LV blood pool is not enclosed"))?;
        let epi = ray_exit(mask, is_heart_wall, c, dir).ok_or_else(|| transform_error("myocardium is not enclosed"))?;
        pts.push(endo);
        pts.push(epi);
    }

    // Outer outline of the heart; the stretch from A to B along the RV is the free wall.
    let inside: Vec<bool> = mask.data().iter().map(|&l| l != labels::BACKGROUND).collect();
    let outline = iso_contours([h, w], &inside)
        .into_iter()
        .max_by_key(|l| l.len())
        .ok_or_else(|| transform_error("mask has no outline"))?;
    let n = outline.len();
    let nearest = |p: [f64; 2]| {
        (0..n).min_by(|&i, &j| norm(sub(outline[i].point, p)).total_cmp(&norm(sub(outline[j].point, p)))).expect("non-empty")
    };
    let (ia, ib) = (nearest(a), nearest(b));
    let forward: Vec<usize> = (0..=(ib + n - ia) % n).map(|k| (ia + k) % n).collect();
    let backward: Vec<usize> = (0..=(ia + n - ib) % n).map(|k| (ia + n - k) % n).collect();
    let rv_share = |arc: &[usize]| {
        arc.iter().filter(|&&i| mask.get(outline[i].inside[0], outline[i].inside[1]) == labels::RV).count() as f64
            / arc.len() as f64
    };
    let arc = if rv_share(&forward) >= rv_share(&backward) { forward } else { backward };
    let path: Vec<[f64; 2]> = std::iter::once(a)
        .chain(arc.iter().map(|&i| outline[i].point))
        .chain(std::iter::once(b))
        .collect();
    let mut cum = vec![0.0];
    for win in path.windows(2) {
        cum.push(cum.last().unwrap() + norm(sub(win[1], win[0])));
    }
    let total = *cum.last().unwrap();
    if total < (FREE_WALL + 1) as f64 {
        return Err(transform_error(format!(
            "RV is too small for {FREE_WALL} distinct free-wall points (outer wall {total:.1} px)"
        )));
    }
    let mut seg = 0;
    for i in 0..FREE_WALL {
        let s = total * (i + 1) as f64 / (FREE_WALL + 1) as f64;
        while cum[seg + 1] < s {
            seg += 1;
        }
        let t = (s - cum[seg]) / (cum[seg + 1] - cum[seg]).max(1e-12);
        let (p, q) = (path[seg], path[seg + 1]);
        pts.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
    }
    LandmarkSet::complete(2, pts.concat())
}

fn closed_contour(points: &[[f64; 2]], what: &str) -> Result<Vec<[f64; 2]>> {
    let poly = catmull_rom(points, true, SAMPLES_PER_PIECE);
    check_contour(&poly, what)?;
    Ok(poly)
}

fn check_contour(poly: &[[f64; 2]], what: &str) -> Result<()> {
    if polygon_area(poly).abs() < 1.0 {
        return Err(transform_error(format!("{what} contour is degenerate")));
    }
    if self_intersects(poly) {
        return Err(transform_error(format!("{what} contour intersects itself")));
    }
    Ok(())
}

/// Draws the label mask described by 33 cardiac landmarks. LV and epicardial contours are
/// closed splines through the ray points; the RV contour runs from A along the free wall to
/// B and closes through C. Overlaps resolve as LV over Myo over RV.
pub fn landmarks_to_seg(landmarks: &LandmarkSet, extents: [usize; 2], spacing: [f64; 2]) -> Result<LabelMask> {
    if landmarks.dim() != 2 || landmarks.len() != CARDIAC_LANDMARKS {
        return Err(transform_error(format!("expected {CARDIAC_LANDMARKS} 2D landmarks, got {}", landmarks.len())));
    }
    let p = |j: usize| [landmarks.point(j)[0], landmarks.point(j)[1]];
    for j in 0..CARDIAC_LANDMARKS {
        let q = p(j);
        if !(q[0] >= -0.5 && q[1] >= -0.5 && q[0] <= extents[0] as f64 - 0.5 && q[1] <= extents[1] as f64 - 0.5) {
            return Err(transform_error(format!("landmark {j} at {q:?} lies outside the {extents:?} grid")));
        }
    }
    let endo: Vec<[f64; 2]> = (0..RAYS).map(|k| p(3 + 2 * k)).collect();
    let epi: Vec<[f64; 2]> = (0..RAYS).map(|k| p(4 + 2 * k)).collect();
    let endo = closed_contour(&endo, "LV endocardial")?;
    let epi = closed_contour(&epi, "LV epicardial")?;
    let mut wall = vec![p(0)];
    wall.extend((0..FREE_WALL).map(|i| p(3 + 2 * RAYS + i)));
    wall.push(p(1));
    let mut rv = catmull_rom(&wall, false, SAMPLES_PER_PIECE);
    rv.push(p(2));
    check_contour(&rv, "RV")?;

    let (fill_lv, fill_epi, fill_rv) = (scanline_fill(&endo, extents), scanline_fill(&epi, extents), scanline_fill(&rv, extents));
    let data = (0..extents[0] * extents[1])
        .map(|i| {
            if fill_lv[i] {
                labels::LV
            } else if fill_epi[i] {
                labels::MYO
            } else if fill_rv[i] {
                labels::RV
            } else {
                labels::BACKGROUND
            }
        })
        .collect();
    LabelMask::new(extents, spacing, data)
}
