mod crop;
mod image;
pub mod io;
mod landmarks;
mod patch;
pub mod phantom;
mod scenario;

pub use crop::{crop_missing, crop_window, retained_rows};
pub use image::GridImage;
pub use landmarks::{distance, LandmarkSet};
pub use patch::{extract_patch, level_voxel, Pyramid};
pub use phantom::{generate_many, generate_phantom, CardiacGeometry, PhantomFamily, PhantomSpec};
pub use scenario::{make_scenario, Case, Dataset, ScenarioOptions, ScenarioSplit, ScenarioTag};
