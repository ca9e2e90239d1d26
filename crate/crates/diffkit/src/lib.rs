//! Small sequential neural-network toolkit: dense, strided conv, transposed conv,
//! batchnorm, ReLU and tanh layers with hand-written backward passes, Adam, and
//! finite-difference gradient checking.

pub mod adam;
pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod layer;
pub mod network;
pub mod params;
pub mod rng;
pub mod scalar;
pub mod tensor;

pub use adam::Adam;
pub use error::{DiffError, Result};
pub use layer::LayerSpec;
pub use network::{Cache, Mode, Network, BN_EPS, BN_MOMENTUM};
pub use params::{accumulate, Gradients, Param, ParameterSet};
pub use rng::{derive_seed, fill_gaussian, sample_gaussian, seeded_rng};
pub use scalar::Scalar;
pub use tensor::Tensor;
