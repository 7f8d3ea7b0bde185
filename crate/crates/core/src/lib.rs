pub mod error;
pub mod grid;
pub mod io;
pub mod kernels;
pub mod locmodel;
pub mod packets;
pub mod pdp;
pub mod reference;
pub mod sampling;
pub mod soliton;
pub mod special;

pub use error::{Error, Result};
pub use grid::{Grid, WaveFunction, C64};
pub use kernels::{LocalizationRate, ModelParams, MomentumDistribution};
