//! Head digital-twin navigation toolkit.
//!
//! - [`radiance`] learns an implicit radiance field from posed images and
//!   renders it by volume integration.
//! - [`mesh`] turns the learned density into a triangle mesh.
//! - [`pnp`] recovers head pose from landmark correspondences.
//! - [`registration`] aligns fiducials and tracks a marked tool.
//! - [`simulate`] generates synthetic ground truth and runs the whole
//!   pipeline end to end.

pub mod geometry;
pub mod pnp;
pub mod io;
pub mod radiance;
pub mod mesh;
pub mod registration;
pub mod metrics;
pub mod simulate;
pub mod cli;
