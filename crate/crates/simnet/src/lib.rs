//! Residual convolutional network that scores a fingerprint matrix for
//! relatedness to a target model, with exact gradients, adversarial training
//! and checkpointing.

pub mod arch;
pub mod checkpoint;
pub mod error;
pub mod layers;
pub mod net;
pub mod train;
pub mod verify;

pub use arch::Architecture;
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest};
pub use error::{Error, Result};
pub use layers::Mode;
pub use net::{smoothed_bce, SimNetParams};
pub use train::{train, EpochStats, TrainConfig};
pub use verify::{verify, Verdict};
