//! Subspace elastodynamics: full-space implicit Euler simulation of rods,
//! shells and solids, PCA-initialized autoencoders, and latent integrators
//! trained by minimizing the full-space incremental potential.

pub mod energy;
pub mod geometry;
pub mod latent;
pub mod neural;
pub mod rollout;
pub mod scenario;
pub mod seqio;
pub mod solver;
