use crate::error::{Error, Result};

/// Ordered landmark coordinates (parent-frame voxel units) with per-index availability.
#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkSet {
    dim: usize,
    coords: Vec<f64>,
    available: Vec<bool>,
}

impl LandmarkSet {
    pub fn new(dim: usize, coords: Vec<f64>, available: Vec<bool>) -> Result<Self> {
        if dim == 0 || coords.len() != dim * available.len() {
            return Err(Error::Argument(format!(
                "{} coordinates cannot form {} points of dimension {dim}",
                coords.len(),
                available.len()
            )));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::Argument("landmark coordinates must be finite".into()));
        }
        Ok(Self { dim, coords, available })
    }

    /// Every landmark available.
    pub fn complete(dim: usize, coords: Vec<f64>) -> Result<Self> {
        let n = if dim == 0 { 0 } else { coords.len() / dim };
        Self::new(dim, coords, vec![true; n])
    }

    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        let dim = points.first().map(Vec::len).unwrap_or(0);
        if points.iter().any(|p| p.len() != dim) {
            return Err(Error::Argument("points of mixed dimension".into()));
        }
        Self::complete(dim, points.concat())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.available.len()
    }

    pub fn is_empty(&self) -> bool {
        self.available.is_empty()
    }

    pub fn point(&self, j: usize) -> &[f64] {
        &self.coords[j * self.dim..(j + 1) * self.dim]
    }

    pub fn set_point(&mut self, j: usize, p: &[f64]) {
        self.coords[j * self.dim..(j + 1) * self.dim].copy_from_slice(p);
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn is_available(&self, j: usize) -> bool {
        self.available[j]
    }

    pub fn set_available(&mut self, j: usize, v: bool) {
        self.available[j] = v;
    }

    pub fn availability(&self) -> &[bool] {
        &self.available
    }

    pub fn available_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&j| self.available[j]).collect()
    }

    pub fn all_available(&self) -> bool {
        self.available.iter().all(|&a| a)
    }

    /// Same coordinates, every landmark marked available.
    pub fn completed(&self) -> Self {
        Self { dim: self.dim, coords: self.coords.clone(), available: vec![true; self.len()] }
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks(self.dim)
    }

    pub fn centroid(&self) -> Vec<f64> {
        let n = self.len().max(1) as f64;
        (0..self.dim)
            .map(|d| self.points().map(|p| p[d]).sum::<f64>() / n)
            .collect()
    }

    /// Largest pairwise distance between landmarks.
    pub fn diameter(&self) -> f64 {
        let mut best = 0.0f64;
        for i in 0..self.len() {
            for j in i + 1..self.len() {
                best = best.max(distance(self.point(i), self.point(j)));
            }
        }
        best
    }
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
