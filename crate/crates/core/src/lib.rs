//! Differentiable tri-plane radiance fields, primitive-aware volume rendering,
//! a toy monocular 3D detector, and expectation-over-transformation texture
//! attacks, evaluated on a procedurally generated driving-scene benchmark.
//!
//! The crate is organized around eight subsystems:
//!
//! * [`autodiff`] — tape-based reverse-mode differentiation over dense buffers
//! * [`geom`] — pinhole camera, rays, oriented 3D boxes, pose sampling
//! * [`asset`] — procedural vehicle with semantic parts, analytic raycaster,
//!   and the synthetic scene dataset
//! * [`field`] — the disentangled tri-plane conditional radiance field
//! * [`render`] — primitive-aware sampling, quadrature rendering, compositing
//! * [`detector`] — trainable grid detector plus center-distance AP metrics
//! * [`attack`] — EOT texture optimization, patch banks, adversarial training
//! * [`harness`] — experiment configuration, evaluation, ablations, reports

pub mod autodiff;
pub mod geom;
pub mod asset;
pub mod field;
pub mod render;
pub mod detector;
pub mod attack;
pub mod harness;
pub mod io;
pub mod real;
pub mod rng;

pub use real::Real;
pub use rng::SplitRng;
