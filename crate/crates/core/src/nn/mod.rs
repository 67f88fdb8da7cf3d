//! Small tensor and network engine behind the Q-network.

pub mod adam;
pub mod checkpoint;
pub mod conv;
pub mod gradcheck;
pub mod qnet;
pub mod tensor;

pub use adam::Adam;
pub use checkpoint::Checkpoint;
pub use conv::{Conv2d, ConvTranspose2d};
pub use qnet::{argmax, QNetwork};
pub use tensor::{Scalar, Tensor};
