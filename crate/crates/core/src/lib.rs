//! Latent-space molecular graph generation.
//!
//! Molecules are encoded into per-atom latent point clouds by small graph
//! autoencoders; Gaussian diffusion, heat dissipation or flow matching then
//! learn to generate new clouds, which are decoded back into molecular graphs
//! and scored for validity, uniqueness and novelty.

pub mod chem;
pub mod codec;
pub mod diffcore;
pub mod flows;
pub mod gnn;
pub mod harness;
