pub mod dataio;
pub mod gradcam;
pub mod imageproc;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod train;

pub use tensor::{Tensor, TensorError};
