use crate::error::{Error, Result};
use crate::grid::{distance, LandmarkSet};
use crate::shape::{fit, synthesize, FitConfig, ShapeModel};

use super::DeepSsmNet;

/// Anything that maps a complete landmark set to its shape-model reconstruction.
pub trait ShapeRegressor {
    fn reconstruct(&self, landmarks: &LandmarkSet) -> Result<LandmarkSet>;
}

impl ShapeRegressor for DeepSsmNet {
    fn reconstruct(&self, landmarks: &LandmarkSet) -> Result<LandmarkSet> {
        self.plausible_reconstruction(landmarks)
    }
}

/// Least-squares fit of the shape model, usable in place of the learned regressor.
#[derive(Clone, Debug)]
pub struct ClosedFormFit {
    pub model: ShapeModel,
    pub config: FitConfig,
}

impl ShapeRegressor for ClosedFormFit {
    fn reconstruct(&self, landmarks: &LandmarkSet) -> Result<LandmarkSet> {
        let r = fit(&self.model, landmarks, &self.config)?;
        synthesize(&self.model, &r.a, &r.b)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegularizerConfig {
    /// Residual (voxels) above which a landmark is a correction candidate.
    pub tau: f64,
    pub max_subiterations: usize,
    /// Cap on navigation/correction rounds at detection time.
    pub max_iterations: usize,
}

impl RegularizerConfig {
    pub fn new(tau: f64) -> Self {
        Self { tau, max_subiterations: 5, max_iterations: 5 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("correction threshold must be positive, got {}", self.tau)));
        }
        if self.max_subiterations == 0 || self.max_iterations == 0 {
            return Err(Error::Config("iteration caps must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Subiteration {
    /// Candidate indices at loop entry.
    pub candidates: Vec<usize>,
    pub accepted: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Regularized {
    pub landmarks: LandmarkSet,
    pub subiterations: Vec<Subiteration>,
}

/// Replaces landmarks that sit far from the reconstruction of the whole set by their
/// reconstructed position, keeping a replacement only when it lowers that landmark's
/// residual under a fresh reconstruction.
pub fn regularize(regressor: &dyn ShapeRegressor, landmarks: &LandmarkSet, config: &RegularizerConfig) -> Result<Regularized> {
    config.validate()?;
    if !landmarks.all_available() {
        return Err(Error::Argument("correction needs a prediction for every landmark".into()));
    }
    let mut x = landmarks.clone();
    let mut subiterations = Vec::new();
    // A degenerate set (collinear points, say) has no model fit; it is returned as it stands.
    let attempt = |set: &LandmarkSet| match regressor.reconstruct(set) {
        Ok(r) => Ok(Some(r)),
        Err(Error::Fit(_)) => Ok(None),
        Err(e) => Err(e),
    };
    for _ in 0..config.max_subiterations {
        let Some(rec) = attempt(&x)? else { break };
        let residual: Vec<f64> = (0..x.len()).map(|j| distance(x.point(j), rec.point(j))).collect();
        let candidates: Vec<usize> = (0..x.len()).filter(|&j| residual[j] > config.tau).collect();
        if candidates.is_empty() {
            break;
        }
        let mut alt = x.clone();
        for &j in &candidates {
            alt.set_point(j, rec.point(j));
        }
        let Some(rec_alt) = attempt(&alt)? else { break };
        let mut accepted = Vec::new();
        for &j in &candidates {
            let r = distance(alt.point(j), rec_alt.point(j));
            if r < residual[j] {
                x.set_point(j, alt.point(j));
                accepted.push(j);
            }
        }
        let stalled = accepted.is_empty();
        subiterations.push(Subiteration { candidates, accepted });
        if stalled {
            break;
        }
    }
    Ok(Regularized { landmarks: x, subiterations })
}
