//! Joint continuous/discrete flow matching for small 3D molecular graphs.
//!
//! The crate is organized around a small dense-tensor autodiff core
//! ([`numkit`]), a molecular graph data model with a procedural toy dataset
//! ([`molgraph`]), the prior-to-data coupling ([`coupling`]), conditional
//! probability paths ([`paths`]), an SE(3)-equivariant denoiser ([`gvpnet`]),
//! training and sampling machinery ([`engine`]), and an evaluation suite
//! ([`evalkit`]). The `molgen` binary in [`cli`] wires these together.

pub mod cli;
pub mod coupling;
pub mod engine;
pub mod evalkit;
pub mod gvpnet;
pub mod molgraph;
pub mod numkit;
pub mod paths;
pub mod rng;
