//! Salinity imputation from sparse drifter trajectories.
//!
//! The pipeline rasterizes drifter records onto a spatiotemporal grid,
//! normalizes each channel, and trains a conditional generator against a
//! diffusion-perturbed discriminator. Classical baselines, a tidal
//! covariate fitter and an evaluation harness share the same data types.

pub mod baselines;
pub mod dan;
pub mod evalharness;
pub mod gdc;
pub mod nn;
pub mod par;
pub mod revin;
pub mod scheduler;
pub mod tensorize;
pub mod tide;

pub use par::Exec;
