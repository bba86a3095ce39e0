//! Spatiotemporal valence/arousal regression from face video.
//!
//! Two model families are provided: a cascade that runs a 2D convolutional
//! trunk on every frame and feeds the feature sequence to an LSTM, and an
//! inflated 3D network whose kernels are grown from a pre-trained 2D trunk.
//! Around them sit the clip windowing pipeline, the prediction repair chain,
//! CCC/PCC/MAE/MAPE evaluation, a synthetic annotated video generator and
//! bit-exact on-disk formats.

pub mod clips;
pub mod cli;
pub mod datagen;
pub mod error;
pub mod gradcheck;
pub mod inflation;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod postprocess;
pub mod rng;
pub mod storage;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use rng::RngStream;
pub use tensor::{Scalar, Tensor};
