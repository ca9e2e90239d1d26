pub mod baseline;
pub mod blob;
pub mod dataset;
pub mod error;
pub mod fem;
pub mod filter;
pub mod frame;
pub mod geometry;
pub mod hash;
pub mod metrics;
pub mod phantom;
pub mod picture;
pub mod pipeline;
pub mod regressor;
pub mod sensitivity;
pub mod skyline;
pub mod verify;
pub mod vae;
pub mod workbench;

pub use error::{EitError, Result};
