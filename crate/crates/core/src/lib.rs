//! Discrete laboratory for Yamabe-type flows on graph-discretized manifolds.
//!
//! Backgrounds are weighted graphs ([`geometry`], [`cr`]); conformal factors
//! evolve under the normalized or unnormalized flow ([`flow`]); first
//! eigenvalues are tracked with [`spectral`]; [`verify`] turns curvature,
//! eigenvalue and diameter estimates into pass/fail checks over traces.

pub mod cli;
pub mod config;
pub mod cr;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod graph;
pub mod spectral;
pub mod svg;
pub mod trace_io;
pub mod verify;

pub use error::{Error, Result};
