//! Differentiable Monte-Carlo volumetric path tracing with path recycling.
//!
//! Light paths are traced from the source, scored at every scattering or
//! reflection event by local estimation towards each detector, and stored
//! with their per-voxel segment lengths. Stored paths are re-weighted under
//! new parameters instead of being re-traced, which makes repeated forward
//! and gradient evaluations cheap inside an optimization loop.

pub mod accum;
pub mod cli;
pub mod geometry;
pub mod gradient;
pub mod image;
pub mod inverse;
pub mod oracles;
pub mod parallel;
pub mod pathstore;
pub mod scene;
pub mod transport;
