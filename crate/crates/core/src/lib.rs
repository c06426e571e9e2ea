//! Misalignment classification for registered point-cloud pairs.
//!
//! The crate covers rigid-motion algebra and error binning ([`geometry`]),
//! visibility and neighborhood preprocessing ([`preprocess`]), per-point entropy and
//! transport features ([`features`]), losses and classifiers ([`models`]), evaluation
//! metrics ([`metrics`]) and a synthetic-data harness ([`harness`]).

pub mod error;
pub mod features;
pub mod geometry;
pub mod harness;
pub mod hull;
pub mod io;
pub mod metrics;
pub mod models;
pub mod preprocess;
pub mod spatial;

pub use error::{Error, Result};
pub use geometry::{Point3, PointCloud, RegisteredPair, RigidTransform, Scheme};
