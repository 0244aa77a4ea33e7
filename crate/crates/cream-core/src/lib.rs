//! Condensed real-time monocular depth prediction on the CPU.
//!
//! The crate is organised around a small dense-tensor kernel library
//! ([`tensor`]), a declarative encoder-decoder network builder ([`net`]),
//! the depth/tensor losses and evaluation metrics ([`objectives`]), the
//! Adam-based training regimes ([`trainer`]), a procedural RGB-D dataset
//! generator ([`scenegen`]) and the evaluation / FPS / trajectory tooling
//! ([`evalbench`]).
//!
//! All kernels are deterministic for a fixed binary: parallel execution
//! partitions work so that every output element is produced by exactly one
//! task with a fixed accumulation order, so results are bit-identical to the
//! sequential reference mode ([`runtime::set_threads`] with one thread).

pub mod evalbench;
pub mod net;
pub mod objectives;
pub mod rng;
pub mod runtime;
pub mod scenegen;
pub mod tensor;
pub mod trainer;

pub use tensor::{Dims4, Tensor4};
