//! Landmark and segmentation metrics, and the cardiac landmark/segmentation transforms.

mod cardiac;
mod contour;
mod edt;

pub use cardiac::{landmarks_to_seg, seg_to_landmarks, CARDIAC_LANDMARKS};
pub use contour::{catmull_rom, iso_contours, polygon_area, scanline_fill, self_intersects, ContourVertex};

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::grid::{GridImage, LandmarkSet};

pub mod labels {
    pub const BACKGROUND: u8 = 0;
    pub const RV: u8 = 1;
    pub const LV: u8 = 2;
    pub const MYO: u8 = 3;

    pub const ALL: [u8; 4] = [BACKGROUND, RV, LV, MYO];

    pub fn name(label: u8) -> &'static str {
        match label {
            BACKGROUND => "background",
            RV => "RV",
            LV => "LV",
            MYO => "Myo",
            _ => "unknown",
        }
    }
}

/// 2D label grid, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelMask {
    extents: [usize; 2],
    spacing: [f64; 2],
    data: Vec<u8>,
}

impl LabelMask {
    pub fn new(extents: [usize; 2], spacing: [f64; 2], data: Vec<u8>) -> Result<Self> {
        if extents[0] == 0 || extents[1] == 0 || data.len() != extents[0] * extents[1] {
            return Err(Error::Argument(format!("{} labels do not fill a {extents:?} grid", data.len())));
        }
        if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Argument(format!("spacing must be positive, got {spacing:?}")));
        }
        if let Some(bad) = data.iter().find(|&&l| !labels::ALL.contains(&l)) {
            return Err(Error::Argument(format!("label {bad} is not one of {:?}", labels::ALL)));
        }
        Ok(Self { extents, spacing, data })
    }

    pub fn extents(&self) -> [usize; 2] {
        self.extents
    }

    pub fn spacing(&self) -> [f64; 2] {
        self.spacing
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> u8 {
        self.data[r * self.extents[1] + c]
    }

    /// Label at a signed position; `None` outside the grid.
    pub fn get_signed(&self, r: i64, c: i64) -> Option<u8> {
        if r < 0 || c < 0 || r as usize >= self.extents[0] || c as usize >= self.extents[1] {
            None
        } else {
            Some(self.get(r as usize, c as usize))
        }
    }

    pub fn count(&self, label: u8) -> usize {
        self.data.iter().filter(|&&l| l == label).count()
    }

    /// Pixels of `label` with a 4-neighbour of another label or outside the grid.
    pub fn boundary(&self, label: u8) -> Vec<[usize; 2]> {
        let [h, w] = self.extents;
        let mut out = Vec::new();
        for r in 0..h {
            for c in 0..w {
                if self.get(r, c) != label {
                    continue;
                }
                let (ri, ci) = (r as i64, c as i64);
                let edge = [(-1, 0), (1, 0), (0, -1), (0, 1)]
                    .iter()
                    .any(|(dr, dc)| self.get_signed(ri + dr, ci + dc) != Some(label));
                if edge {
                    out.push([r, c]);
                }
            }
        }
        out
    }

    /// Image container holding the labels as values.
    pub fn to_image(&self) -> GridImage {
        GridImage::new(self.extents.to_vec(), self.spacing().to_vec(), self.data.iter().map(|&l| l as f32).collect())
            .expect("mask extents are valid image extents")
    }

    pub fn from_image(image: &GridImage) -> Result<Self> {
        if image.dim() != 2 {
            return Err(Error::Argument("label masks are 2D".into()));
        }
        let data = image
            .data()
            .iter()
            .map(|&v| {
                if v.fract() == 0.0 && (0.0..=3.0).contains(&v) {
                    Ok(v as u8)
                } else {
                    Err(Error::Argument(format!("value {v} is not a label")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let e = image.extents();
        let s = image.spacing();
        Self::new([e[0], e[1]], [s[0], s[1]], data)
    }
}

/// Mean physical distance between predicted and true landmarks over `eval_indices`.
pub fn ade(pred: &LandmarkSet, truth: &LandmarkSet, eval_indices: &[usize], spacing: &[f64]) -> Result<f64> {
    if eval_indices.is_empty() {
        return Err(Error::Usage("average distance error needs at least one landmark index".into()));
    }
    if pred.dim() != truth.dim() || pred.len() != truth.len() || spacing.len() != pred.dim() {
        return Err(Error::Usage("prediction, truth and spacing disagree in shape".into()));
    }
    let mut sum = 0.0;
    for &j in eval_indices {
        if j >= pred.len() {
            return Err(Error::Usage(format!("landmark index {j} out of range")));
        }
        let sq: f64 =
            pred.point(j).iter().zip(truth.point(j)).zip(spacing).map(|((p, t), s)| ((p - t) * s).powi(2)).sum();
        sum += sq.sqrt();
    }
    Ok(sum / eval_indices.len() as f64)
}

fn same_grid(a: &LabelMask, b: &LabelMask) -> Result<()> {
    if a.extents != b.extents {
        return Err(Error::Usage(format!("mask extents differ: {:?} vs {:?}", a.extents, b.extents)));
    }
    Ok(())
}

/// Overlap `2|A ∩ B| / (|A| + |B|)` of one label; 1 when both are empty.
pub fn dice(a: &LabelMask, b: &LabelMask, label: u8) -> Result<f64> {
    same_grid(a, b)?;
    let (mut na, mut nb, mut both) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.data.iter().zip(&b.data) {
        let (ia, ib) = (x == label, y == label);
        na += ia as usize;
        nb += ib as usize;
        both += (ia && ib) as usize;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (na + nb) as f64)
}

/// Physical distances from every boundary pixel of `from` to the nearest boundary pixel of `to`.
fn directed(from: &[[usize; 2]], to: &[[usize; 2]], extents: [usize; 2], spacing: [f64; 2]) -> Vec<f64> {
    let field = edt::squared_distance(extents, spacing, to);
    from.iter().map(|p| field[p[0] * extents[1] + p[1]].sqrt()).collect()
}

fn boundaries(a: &LabelMask, b: &LabelMask, label: u8) -> Result<(Vec<[usize; 2]>, Vec<[usize; 2]>)> {
    same_grid(a, b)?;
    let (ba, bb) = (a.boundary(label), b.boundary(label));
    for (which, set) in [("first", &ba), ("second", &bb)] {
        if set.is_empty() {
            return Err(Error::Metric(format!("{} region is empty in the {which} mask", labels::name(label))));
        }
    }
    Ok((ba, bb))
}

/// Symmetric Hausdorff distance between the boundaries of one label.
pub fn hausdorff(a: &LabelMask, b: &LabelMask, label: u8) -> Result<f64> {
    let (ba, bb) = boundaries(a, b, label)?;
    let s = a.spacing();
    let max = |v: Vec<f64>| v.into_iter().fold(0.0, f64::max);
    Ok(max(directed(&ba, &bb, a.extents, s)).max(max(directed(&bb, &ba, a.extents, s))))
}

/// Average symmetric surface distance: the mean of the two directed mean boundary distances.
pub fn asd(a: &LabelMask, b: &LabelMask, label: u8) -> Result<f64> {
    let (ba, bb) = boundaries(a, b, label)?;
    let s = a.spacing();
    let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    Ok(0.5 * (mean(directed(&ba, &bb, a.extents, s)) + mean(directed(&bb, &ba, a.extents, s))))
}

/// One line of a segmentation report.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub case: String,
    pub label: String,
    pub dice: f64,
    pub asd_mm: f64,
    pub hd_mm: f64,
    pub ade_mm: f64,
}

pub fn metric_rows_csv(rows: &[MetricRow]) -> String {
    let mut out = String::from("case,label,dice,asd_mm,hd_mm,ade_mm\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{},{}", r.case, r.label, r.dice, r.asd_mm, r.hd_mm, r.ade_mm);
    }
    out
}

/// Dice, ASD and HD for RV, LV and Myo, each row carrying the case's landmark error.
/// Distances are NaN for a label missing from either mask.
pub fn segmentation_rows(case: &str, pred: &LabelMask, truth: &LabelMask, ade_mm: f64) -> Result<Vec<MetricRow>> {
    let mut rows = Vec::with_capacity(3);
    for label in [labels::RV, labels::LV, labels::MYO] {
        let d = dice(pred, truth, label)?;
        let (asd_mm, hd_mm) = match (asd(pred, truth, label), hausdorff(pred, truth, label)) {
            (Ok(x), Ok(y)) => (x, y),
            (Err(Error::Metric(_)), _) | (_, Err(Error::Metric(_))) => (f64::NAN, f64::NAN),
            (Err(e), _) | (_, Err(e)) => return Err(e),
        };
        rows.push(MetricRow { case: case.to_string(), label: labels::name(label).to_string(), dice: d, asd_mm, hd_mm, ade_mm });
    }
    Ok(rows)
}
