use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{synthesize, AffineTransform, ShapeModel};
use crate::error::{Error, Result};
use crate::grid::LandmarkSet;

/// Bounds of the uniform perturbation applied to the identity affine map.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct AffineJitter {
    /// Largest absolute change of each matrix entry.
    pub matrix: f64,
    /// Largest absolute change of each translation entry.
    pub translation: f64,
}

impl AffineJitter {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.matrix >= 0.0 && self.matrix < 0.5) || !(self.translation >= 0.0 && self.translation.is_finite()) {
            return Err(Error::Argument(format!(
                "jitter bounds must satisfy 0 <= matrix < 0.5 and a finite non-negative translation, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShapeSample {
    pub shape: LandmarkSet,
    pub a: AffineTransform,
    pub b: Vec<f64>,
}

/// Draws `b_i ~ N(0, variance_i)` and an affine map near the identity, returning the
/// synthesized shape with its generating parameters.
pub fn sample<R: Rng + ?Sized>(model: &ShapeModel, rng: &mut R, jitter: &AffineJitter) -> Result<ShapeSample> {
    jitter.validate()?;
    let b: Vec<f64> = model
        .variances()
        .iter()
        .map(|v| {
            let z: f64 = StandardNormal.sample(rng);
            z * v.sqrt()
        })
        .collect();
    let d = model.dim();
    let mut params = AffineTransform::identity(d).params().to_vec();
    for (i, p) in params.iter_mut().enumerate() {
        let bound = if i < d * d { jitter.matrix } else { jitter.translation };
        if bound > 0.0 {
            *p += rng.random_range(-bound..=bound);
        }
    }
    let a = AffineTransform::from_params(d, params)?;
    let shape = synthesize(model, &a, &b)?;
    Ok(ShapeSample { shape, a, b })
}
