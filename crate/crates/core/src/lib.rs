//! Design of constant-modulus compressive-sensing measurement matrices.
//!
//! A constant-modulus matrix `A = exp(iΦ)/√m` is learned so that the
//! images `A h̃` of normalized channels are distributed like points drawn
//! uniformly from the unit sphere of `C^m`, measured by a kernel MMD. The
//! crate also provides the baselines it is compared against (random
//! constant-modulus matrices and a Monte-Carlo LBCS search), orthogonal
//! matching pursuit for channel recovery, and an evaluation harness that
//! sweeps SNR and writes CSV results.
//!
//! Module map:
//!
//! * [`numeric`]: phase parameterization, stacking maps, random draws
//! * [`channels`]: channel models, dictionaries, normalizations
//! * [`mmd`]: kernels, biased MMD², analytic phase gradient
//! * [`learner`]: Adam training loop, early stopping, random search
//! * [`recovery`]: orthogonal matching pursuit
//! * [`lbcs`]: row-energy subsampling and its Monte-Carlo search
//! * [`harness`]: evaluation protocol, RIP diagnostics, experiments

pub mod channels;
pub mod error;
pub mod harness;
pub mod lbcs;
pub mod learner;
pub mod matrix_file;
pub mod mmd;
pub mod numeric;
pub mod recovery;
pub mod rng;

pub use channels::{ChannelModel, ChannelModelSpec, ChannelSet, Dictionary, Normalization};
pub use error::{Error, Result};
pub use mmd::KernelSpec;
pub use num_complex::Complex64;
pub use numeric::{ComplexMatrix, PhaseMatrix};
pub use rng::SeededRng;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
