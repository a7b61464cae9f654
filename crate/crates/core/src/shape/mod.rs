mod affine;
mod align;
mod fit;
pub mod io;
mod model;
mod sample;

pub use affine::AffineTransform;
pub use align::{generalized_procrustes, normalize, optimal_rotation};
pub use fit::{fit, fit_affine, synthesize, FitConfig, FitResult};
pub use model::{build_ssm, ShapeModel};
pub use sample::{sample, AffineJitter, ShapeSample};
