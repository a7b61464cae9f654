//! Multi-agent deep Q-learning with a shared network, replay memory and a frozen target copy.

mod memory;
mod qnet;
mod train;

pub use memory::{ReplayMemory, Transition};
pub use qnet::{argmax, select_action, QNetShape, QNetwork};
pub use train::{train, LogRow, ShapeHooks, TrainSchedule, TrainingLog};
