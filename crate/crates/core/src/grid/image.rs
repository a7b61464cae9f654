use crate::error::{Error, Result};

/// Dense 2D or 3D intensity grid positioned inside a parent (complete) frame.
///
/// Axis 0 is the superior-inferior axis; cropping always acts along it.
#[derive(Clone, Debug, PartialEq)]
pub struct GridImage {
    extents: Vec<usize>,
    spacing: Vec<f64>,
    fov_origin: Vec<usize>,
    parent_extents: Vec<usize>,
    data: Vec<f32>,
}

pub(crate) fn strides(extents: &[usize]) -> Vec<usize> {
    let mut s = vec![1; extents.len()];
    for i in (0..extents.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * extents[i + 1];
    }
    s
}

impl GridImage {
    /// A complete image: its field of view is the whole parent frame.
    pub fn new(extents: Vec<usize>, spacing: Vec<f64>, data: Vec<f32>) -> Result<Self> {
        let parent = extents.clone();
        let origin = vec![0; extents.len()];
        Self::with_fov(extents, spacing, origin, parent, data)
    }

    pub fn with_fov(
        extents: Vec<usize>,
        spacing: Vec<f64>,
        fov_origin: Vec<usize>,
        parent_extents: Vec<usize>,
        data: Vec<f32>,
    ) -> Result<Self> {
        let dim = extents.len();
        if !(2..=3).contains(&dim) {
            return Err(Error::Argument(format!("images are 2D or 3D, got {dim} axes")));
        }
        if spacing.len() != dim || fov_origin.len() != dim || parent_extents.len() != dim {
            return Err(Error::Argument("per-axis vectors disagree on dimension".into()));
        }
        if extents.contains(&0) {
            return Err(Error::Argument(format!("extents must be >= 1, got {extents:?}")));
        }
        if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::Argument(format!("spacing must be positive, got {spacing:?}")));
        }
        for d in 0..dim {
            if fov_origin[d] + extents[d] > parent_extents[d] {
                return Err(Error::Argument("field of view exceeds the parent frame".into()));
            }
        }
        if data.len() != extents.iter().product::<usize>() {
            return Err(Error::Argument("intensity count does not match extents".into()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("intensities must be finite".into()));
        }
        Ok(Self { extents, spacing, fov_origin, parent_extents, data })
    }

    pub fn filled(extents: Vec<usize>, value: f32) -> Result<Self> {
        let n = extents.iter().product();
        let dim = extents.len();
        Self::new(extents, vec![1.0; dim], vec![value; n])
    }

    pub fn dim(&self) -> usize {
        self.extents.len()
    }

    pub fn extents(&self) -> &[usize] {
        &self.extents
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn fov_origin(&self) -> &[usize] {
        &self.fov_origin
    }

    pub fn parent_extents(&self) -> &[usize] {
        &self.parent_extents
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn is_complete(&self) -> bool {
        self.fov_origin.iter().all(|&o| o == 0) && self.extents == self.parent_extents
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn index(&self, local: &[usize]) -> usize {
        let s = strides(&self.extents);
        local.iter().zip(&s).map(|(i, s)| i * s).sum()
    }

    pub fn get(&self, local: &[usize]) -> f32 {
        self.data[self.index(local)]
    }

    /// Parent-frame voxel coordinate of a local voxel.
    pub fn to_parent(&self, local: &[usize]) -> Vec<usize> {
        local.iter().zip(&self.fov_origin).map(|(l, o)| l + o).collect()
    }

    /// Whether an integer parent-frame position lies on a voxel of this field of view.
    pub fn contains_voxel(&self, parent: &[i64]) -> bool {
        parent.iter().enumerate().all(|(d, &p)| {
            let lo = self.fov_origin[d] as i64;
            p >= lo && p < lo + self.extents[d] as i64
        })
    }

    /// Whether an integer position lies inside the parent frame.
    pub fn in_parent(&self, parent: &[i64]) -> bool {
        parent.iter().zip(&self.parent_extents).all(|(&p, &e)| p >= 0 && p < e as i64)
    }

    /// Continuous box covered by the field of view, voxel edges included.
    pub fn fov_box(&self) -> (Vec<f64>, Vec<f64>) {
        let lo = self.fov_origin.iter().map(|&o| o as f64 - 0.5).collect();
        let hi = self
            .fov_origin
            .iter()
            .zip(&self.extents)
            .map(|(&o, &e)| (o + e) as f64 - 0.5)
            .collect();
        (lo, hi)
    }

    /// Box-mean downsampling by an integer factor; trailing partial blocks average what they hold.
    pub fn downsample(&self, factor: usize) -> GridImage {
        assert!(factor >= 1, "downsample factor must be >= 1");
        if factor == 1 {
            return self.clone();
        }
        let out_ext: Vec<usize> = self.extents.iter().map(|&e| e.div_ceil(factor)).collect();
        let n: usize = out_ext.iter().product();
        let mut sum = vec![0f64; n];
        let mut count = vec![0u32; n];
        let ostr = strides(&out_ext);
        let dim = self.dim();
        let mut idx = vec![0usize; dim];
        for (flat, &v) in self.data.iter().enumerate() {
            let mut rem = flat;
            for d in (0..dim).rev() {
                idx[d] = rem % self.extents[d];
                rem /= self.extents[d];
            }
            let o: usize = (0..dim).map(|d| (idx[d] / factor) * ostr[d]).sum();
            sum[o] += v as f64;
            count[o] += 1;
        }
        let data = sum.iter().zip(&count).map(|(s, &c)| (s / c as f64) as f32).collect();
        GridImage {
            extents: out_ext,
            spacing: self.spacing.iter().map(|s| s * factor as f64).collect(),
            fov_origin: self.fov_origin.iter().map(|o| o / factor).collect(),
            parent_extents: self.parent_extents.iter().map(|e| e.div_ceil(factor)).collect(),
            data,
        }
    }

    /// Rows `[start, start + len)` along axis 0, keeping parent-frame bookkeeping exact.
    pub fn crop_axis0(&self, start: usize, len: usize) -> Result<GridImage> {
        if len == 0 || start + len > self.extents[0] {
            return Err(Error::Argument(format!(
                "crop [{start}, {}) outside {} rows",
                start + len,
                self.extents[0]
            )));
        }
        let row: usize = self.extents[1..].iter().product();
        let data = self.data[start * row..(start + len) * row].to_vec();
        let mut extents = self.extents.clone();
        extents[0] = len;
        let mut origin = self.fov_origin.clone();
        origin[0] += start;
        GridImage::with_fov(extents, self.spacing.clone(), origin, self.parent_extents.clone(), data)
    }
}
