//! Provenance-aware containerized workflows.
//!
//! Workflow components (input data, applications, outputs) are each packed
//! into a single-file partitioned image ([`image::BoxImage`]). The
//! [`runtime`] connects images through bindings and executes applications
//! in a sandbox, and [`provenance`] assembles a record trail for every
//! output and stores it as a metadata partition of that output image.

pub mod bench;
pub mod error;
pub mod image;
pub mod packager;
pub mod provenance;
pub mod runtime;
pub mod scenarios;
pub mod standin;
pub mod timestamp;

pub use error::{Error, Result};
