//! Perfectly matched layers for time-harmonic acoustic scattering in
//! waveguides whose ends approach a straight cylinder.
//!
//! The PML is built by deforming the metric of the waveguide end: the axial
//! coordinate is replaced by `x + λ·s_r(x)` inside the metric coefficients,
//! which yields a complex symmetric tensor field. The crate assembles the
//! truncated problem with first-order finite elements, provides a modal
//! Green's-function oracle for the straight cylinder, computes the essential
//! spectrum curves of the deformed operator, and runs the studies that
//! measure stability, decay inside the layer and exponential convergence in
//! the truncation length.
//!
//! Module map:
//!
//! * [`cross_section`] – Neumann eigenpairs of the cross-section and axial wavenumbers.
//! * [`geometry`] – metric presets evaluated at complex axial coordinates.
//! * [`pml`] – scaling profile and deformed metric coefficients.
//! * [`assembly`] – tensor-product mesh, Q1 assembly, load vectors, discrete norms.
//! * [`sparse`] – complex sparse storage, banded direct solves, small dense eigensolves.
//! * [`reference`] – modal Green's-function solutions and mode amplitude extraction.
//! * [`report`] – CSV tables with fixed-precision numbers.
//! * [`spectrum`] – essential spectrum curves and distances.
//! * [`harness`] – end-to-end studies producing [`harness::StudyReport`]s.
//! * [`cli`] – configuration parsing and study dispatch.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod assembly;
pub mod cli;
pub mod cross_section;
pub mod error;
pub mod exec;
pub mod geometry;
pub mod harness;
pub mod pml;
pub mod quadrature;
pub mod reference;
pub mod report;
pub mod sparse;
pub mod spectrum;

pub use error::{PmlError, Result};
pub use exec::Exec;

pub use num_complex::Complex64;
