use rand::Rng;

use super::{GridImage, LandmarkSet};
use crate::error::{Error, Result};

/// Rows kept along axis 0 when `mp` percent of `height` is removed.
pub fn retained_rows(height: usize, mp: f64) -> usize {
    ((1.0 - mp / 100.0) * height as f64 - 1e-9).ceil().max(0.0) as usize
}

/// Keeps `len` rows from `start` and demotes landmarks that fall outside the kept band
/// or within `margin` voxels of an edge that was actually cut.
pub fn crop_window(
    image: &GridImage,
    landmarks: &LandmarkSet,
    start: usize,
    len: usize,
    margin: f64,
) -> Result<(GridImage, LandmarkSet)> {
    let cropped = image.crop_axis0(start, len)?;
    let height = image.extents()[0];
    let top = cropped.fov_origin()[0] as f64 - 0.5;
    let bottom = top + len as f64;
    let lo = if start > 0 { top + margin } else { top };
    let hi = if start + len < height { bottom - margin } else { bottom };
    let (box_lo, box_hi) = cropped.fov_box();
    let mut out = landmarks.clone();
    for j in 0..out.len() {
        let p = out.point(j);
        let row_ok = p[0] >= lo && p[0] < hi;
        let rest_ok = (1..p.len()).all(|d| p[d] >= box_lo[d] && p[d] < box_hi[d]);
        if !(row_ok && rest_ok) {
            out.set_available(j, false);
        }
    }
    Ok((cropped, out))
}

/// Removes `mp` percent of the rows: the kept band of `ceil((1 - mp/100) H)` rows sits at a
/// uniformly random offset, so the removed rows may come from the top, the bottom, or both.
pub fn crop_missing<R: Rng + ?Sized>(
    image: &GridImage,
    landmarks: &LandmarkSet,
    mp: f64,
    margin: f64,
    rng: &mut R,
) -> Result<(GridImage, LandmarkSet)> {
    if !(0.0..100.0).contains(&mp) {
        return Err(Error::Argument(format!("missing proportion must lie in [0, 100), got {mp}")));
    }
    if !image.is_complete() {
        return Err(Error::Argument("only complete images can be cropped".into()));
    }
    let height = image.extents()[0];
    let len = retained_rows(height, mp);
    if len == 0 {
        return Err(Error::Argument(format!("missing proportion {mp}% leaves no rows of {height}")));
    }
    let start = rng.random_range(0..=height - len);
    crop_window(image, landmarks, start, len, margin)
}
