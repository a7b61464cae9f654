use super::GridImage;
use crate::nn::Tensor;

/// Cached downsampled copies of one image, one per scale factor.
#[derive(Clone, Debug)]
pub struct Pyramid {
    factors: Vec<usize>,
    levels: Vec<GridImage>,
    origin: Vec<usize>,
}

impl Pyramid {
    pub fn new(image: &GridImage, factors: &[usize]) -> Self {
        let levels = factors.iter().map(|&f| image.downsample(f)).collect();
        Self { factors: factors.to_vec(), levels, origin: image.fov_origin().to_vec() }
    }

    pub fn factors(&self) -> &[usize] {
        &self.factors
    }

    pub fn level(&self, i: usize) -> &GridImage {
        &self.levels[i]
    }

    /// `side^dim` patch around a parent-frame point, sampled from level `level`.
    pub fn patch_into(&self, center: &[f64], side: usize, level: usize, out: &mut [f32]) {
        sample_patch(&self.levels[level], &self.origin, self.factors[level], center, side, out)
    }

    pub fn patch(&self, center: &[f64], side: usize, level: usize) -> Vec<f32> {
        let mut out = vec![0f32; side.pow(center.len() as u32)];
        self.patch_into(center, side, level, &mut out);
        out
    }
}

/// Level-grid voxel holding a parent-frame point: round to the nearest level-0 voxel,
/// move into the local frame, then integer-divide by the factor.
pub fn level_voxel(center: &[f64], origin: &[usize], factor: usize) -> Vec<i64> {
    center
        .iter()
        .zip(origin)
        .map(|(&c, &o)| (c.round() as i64 - o as i64).div_euclid(factor as i64))
        .collect()
}

fn sample_patch(level: &GridImage, origin: &[usize], factor: usize, center: &[f64], side: usize, out: &mut [f32]) {
    let dim = level.dim();
    let c = level_voxel(center, origin, factor);
    let half = (side / 2) as i64;
    let ext = level.extents();
    let data = level.data();
    match dim {
        2 => {
            let (h, w) = (ext[0] as i64, ext[1] as i64);
            for r in 0..side as i64 {
                let y = c[0] - half + r;
                let row = &mut out[(r as usize) * side..(r as usize + 1) * side];
                if y < 0 || y >= h {
                    row.fill(0.0);
                    continue;
                }
                for (k, v) in row.iter_mut().enumerate() {
                    let x = c[1] - half + k as i64;
                    *v = if x < 0 || x >= w { 0.0 } else { data[(y * w + x) as usize] };
                }
            }
        }
        _ => {
            let (d0, d1, d2) = (ext[0] as i64, ext[1] as i64, ext[2] as i64);
            let mut i = 0;
            for a in 0..side as i64 {
                let z = c[0] - half + a;
                for b in 0..side as i64 {
                    let y = c[1] - half + b;
                    for k in 0..side as i64 {
                        let x = c[2] - half + k;
                        out[i] = if z < 0 || z >= d0 || y < 0 || y >= d1 || x < 0 || x >= d2 {
                            0.0
                        } else {
                            data[((z * d1 + y) * d2 + x) as usize]
                        };
                        i += 1;
                    }
                }
            }
        }
    }
}

/// One-off patch extraction: downsamples by `factor` and samples a `side^dim` patch
/// centered on the parent-frame point; samples outside the grid are 0.
pub fn extract_patch(image: &GridImage, center: &[f64], side: usize, factor: usize) -> Tensor {
    let level = image.downsample(factor);
    let dim = image.dim();
    let mut out = vec![0f32; side.pow(dim as u32)];
    sample_patch(&level, image.fov_origin(), factor, center, side, &mut out);
    Tensor::new(vec![side; dim], out).expect("patch extents are positive")
}
