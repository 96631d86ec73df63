//! Camera-conditioned 2D keypoint diffusion, multi-view lifting and 3D
//! human/object reconstruction.

pub mod camgeo;
pub mod camsim;
pub mod config;
pub mod diffusion;
pub mod error;
pub mod io;
pub mod metrics;
pub mod motion;
pub mod pipeline;
pub mod recon;
pub mod sds;

pub use error::{Error, Result};
