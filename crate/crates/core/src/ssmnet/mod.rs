//! Learned shape regressor: predicts pose and mode weights of the shape model from landmark
//! coordinates, and corrects implausible landmarks of a prediction.

mod library;
mod net;
mod regularize;

pub use library::{Provenance, ShapeLibrary};
pub use net::{DeepSsmNet, PretrainSchedule, Prediction};
pub use regularize::{regularize, ClosedFormFit, Regularized, RegularizerConfig, ShapeRegressor, Subiteration};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::grid::LandmarkSet;
use crate::maq::ShapeHooks;
use crate::nn::OptimConfig;

/// Settings of the unsupervised updates made while the navigation network trains.
#[derive(Clone, Debug, PartialEq)]
pub struct JointSchedule {
    /// Gradient steps per library refresh.
    pub updates: usize,
    pub batch_size: usize,
    pub optim: OptimConfig,
}

impl Default for JointSchedule {
    fn default() -> Self {
        Self { updates: 20, batch_size: 32, optim: OptimConfig::adam(1e-4) }
    }
}

/// Adds navigation predictions to the library and takes reconstruction-loss steps on
/// batches drawn from it.
pub struct JointTraining {
    pub net: DeepSsmNet,
    pub library: ShapeLibrary,
    pub schedule: JointSchedule,
    rng: ChaCha8Rng,
}

impl JointTraining {
    pub fn new(net: DeepSsmNet, library: ShapeLibrary, schedule: JointSchedule, seed: u64) -> Self {
        Self { net, library, schedule, rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl ShapeHooks for JointTraining {
    fn refresh(&mut self, predictions: Vec<LandmarkSet>) -> Result<Option<f64>> {
        for p in predictions {
            self.library.push(p, Provenance::MaqPrediction)?;
        }
        if self.library.is_empty() || self.schedule.updates == 0 {
            return Ok(None);
        }
        let mut total = 0.0;
        for _ in 0..self.schedule.updates {
            let batch = self.library.sample_batch(self.schedule.batch_size.max(1), &mut self.rng);
            let (loss, grads) = self.net.joint_update(&batch)?;
            self.net.apply(&grads, &self.schedule.optim)?;
            total += loss / batch.len() as f64;
        }
        Ok(Some(total / self.schedule.updates as f64))
    }
}
