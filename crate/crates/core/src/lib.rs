//! Numerical core of driftscope.
//!
//! Everything in this crate is pure computation over in-memory values:
//! a small reverse-mode autodiff tape with the convolution primitives needed
//! by the models, an autoregressive masked-convolution density model with
//! exact per-patch log-likelihoods, a small U-Net style segmenter, the
//! one-dimensional Wasserstein distance on empirical distributions and the
//! per-layer domain shift metric built on it, synthetic data and shift
//! generators, and the correlation statistics used to relate shift scores to
//! task performance.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, the experiment
//! pipeline and the command line live in the `driftscope` crate.
#![no_std]

extern crate alloc;
#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod checkpoint;
pub mod density;
pub mod dsm;
pub mod empirical;
pub mod error;
mod gemm;
pub mod optim;
pub mod patch;
pub mod rng;
pub mod segment;
pub mod shift;
pub mod stats;
pub mod synth;
pub mod tape;
pub mod tensor;

pub use empirical::{wasserstein1, EmpiricalDistribution};
pub use error::{Error, Result};
pub use patch::{ImagePatch, MaskPatch};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
