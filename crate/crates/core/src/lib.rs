//! Ray tracing and optical-design optimization for prescription-embedded AR
//! displays.
//!
//! The crate is organized bottom-up:
//!
//! * [`surfaces`]: sag, normals and ray intersection for every surface type.
//! * [`materials`]: dispersion of homogeneous media and the gradient-index
//!   crystalline lens.
//! * [`tracer`]: sequential propagation with refraction, reflection, TIR and
//!   GRIN integration.
//! * [`eye`]: the prescription-driven schematic eye.
//! * [`designer`]: prescription-lens design, the folded AR display path and
//!   its damped least-squares optimizer.
//! * [`analysis`]: spot diagrams, geometric MTF, FOV, eye box, varifocal
//!   mapping and trade-space sweeps.
//!
//! Data-parallel loops (ray bundles, merit fan-out, Jacobian columns, sweeps)
//! run on rayon when the `parallel` feature is enabled and fall back to plain
//! iterators otherwise. Results are collected by index either way, so the
//! output never depends on scheduling.

pub mod analysis;
pub mod designer;
pub mod error;
pub mod eye;
pub mod materials;
pub mod par;
pub mod report;
pub mod surfaces;
pub mod tracer;

pub use error::{OpticsError, Result};

/// Column vector used for points and directions, in millimetres.
pub type Vec3 = nalgebra::Vector3<f64>;
