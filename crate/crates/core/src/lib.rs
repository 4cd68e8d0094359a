//! Graph expressivity laboratory.
//!
//! The crate bundles four pieces that are usually scattered across projects:
//!
//! * [`graph`]: dense order-2 graph tensors, the permutation action, random
//!   generators, the correlated-noise model and masked batching.
//! * [`wl`]: vertex color refinement and the k-WL / k-FWL hierarchy with
//!   canonical invariant and equivariant signatures.
//! * [`tensor`] and [`gnn`]: a small reverse-mode autodiff engine and the
//!   message-passing, linear-equivariant and folklore layer families built
//!   on top of it.
//! * [`separation`] and [`qap`]: an empirical oracle comparing the
//!   separating power of WL tests and random GNNs, and the siamese
//!   graph-alignment benchmark.
//!
//! Data-parallel loops go through [`par`], which uses rayon when the
//! `parallel` feature is on and falls back to plain iteration otherwise.

pub mod error;
pub mod gnn;
pub mod gradsuite;
pub mod graph;
pub mod par;
pub mod qap;
pub mod rng;
pub mod separation;
pub mod tensor;
pub mod wl;

pub use error::{Error, Result};
pub use graph::{GraphTensor, MaskedBatch, Permutation};
pub use rng::RngSeed;
