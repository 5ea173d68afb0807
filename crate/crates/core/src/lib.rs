pub mod arch;
pub mod augment;
pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod image;
pub mod metrics;
pub mod tensor;
pub mod train;

pub use arch::{ModelKind, Network, NetworkSpec};
pub use checkpoint::Checkpoint;
pub use error::{CheckpointError, Error, Result};
pub use image::Image;
pub use metrics::{InstanceLabelMap, ThresholdSweep};
pub use tensor::{ParamStore, Tensor};
