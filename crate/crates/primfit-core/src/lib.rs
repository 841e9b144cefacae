//! Differentiable primitive decomposition of 3D point clouds.
//!
//! The pipeline: a shared-MLP point embedder maps a point cloud to
//! unit-norm per-point embeddings, differentiable mean-shift clusters them,
//! ellipsoids (or cuboids) are fitted to each soft cluster in closed form
//! via a 3×3 SVD with an analytic stabilized backward pass, and
//! reconstruction / intersection / similarity / cross-entropy losses drive
//! semi-supervised training. Everything runs on a reverse-mode gradient
//! tape with a closed op set so every gradient path can be checked against
//! finite differences.
//!
//! The crate is `no_std` (with `alloc`); file formats, checkpoints and the
//! CLI live in the companion `primfit` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;
#[cfg(feature = "std")]
extern crate std;

pub mod cloud;
pub mod embedder;
pub mod error;
pub mod fit;
pub mod gradcheck;

pub mod graph;
pub mod losses;

pub mod mat3;
pub mod meanshift;
pub mod metrics;
pub mod pipeline;

pub mod rng;
pub mod sample;
pub mod sdf;
pub mod svd3;
pub mod synth;
pub mod train;

pub mod tensor;


pub use error::CoreError;
pub use graph::{Gradients, Graph, Precision, Var};
pub use tensor::Tensor;
