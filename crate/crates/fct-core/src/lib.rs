//! Fourier complex transformer: half-spectrum features, Logmax-normalized
//! complex self-attention, hierarchical blocks, tape autodiff, a toy training
//! loop and an analytic/measured complexity model.

pub mod attention;
pub mod autodiff;
pub mod bench;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod model;
pub mod rng;
pub mod spectral;
pub mod tensor;
pub mod train;

pub use error::{FctError, Result};
pub use tensor::{ComplexTensor, RealTensor};
