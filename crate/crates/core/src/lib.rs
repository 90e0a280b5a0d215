//! Core of the spectrum footprint repository.
//!
//! Sweeps from heterogeneous low-cost monitors are parsed ([`ingest`]) onto one
//! canonical content-addressed record ([`model::SweepRecord`]), summarized into
//! occupancy and white-space reports ([`analysis`]), and replicated between
//! regional repositories and a central authority ([`sync`]). The [`sim`] module
//! drives replicas through a seeded lossy network for testing convergence.

pub mod analysis;
pub mod geo;
pub mod ingest;
pub mod model;
pub mod sim;
pub mod sync;

pub use model::{
    ChannelPlan, DeviceKind, FrequencySpan, GeoPoint, LwwStamp, Polygon, RecordId, SweepRecord,
};
