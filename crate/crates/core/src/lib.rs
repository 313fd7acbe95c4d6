//! Tensor-aware energy accounting for deep-learning program executions.
//!
//! The crate aligns durable, device-tagged tensor events with per-device
//! power samples and attributes the energy to qualified tensor names. On top
//! of the raw tensor energy footprint it builds summarized footprints,
//! hierarchical energy distribution diagrams, power footprints and
//! cross-run similarity metrics.
//!
//! Module map:
//!
//! - [`model`]: timestamps, devices, qualified tensor names, events, power samples.
//! - [`accountant`]: the flattening reference and the sweep-line accountant.
//! - [`footprint`]: summarization, diagrams, power footprints, top-k views.
//! - [`similarity`]: PCC, MED, sampling-precision curves, stability matrices.
//! - [`io`]: readers and writers for every on-disk format.
//! - [`synth`]: seeded synthetic traces with known footprints.
//! - [`cli`]: the `tenergy` command-line front end.

pub mod accountant;
pub mod cli;
pub mod footprint;
pub mod io;
pub mod model;
pub mod similarity;
pub mod synth;

pub use accountant::{AccountingDiagnostics, AccountingOptions, Footprint, TickFootprint};
pub use footprint::{Edd, EddNode, NodeKind, Stpf, Summarizer};
pub use model::{
    DeviceId, DeviceKind, DevicePowerTrace, Duration, EventTrace, PowerSample, Qtn, TensorEvent,
    Timestamp,
};
pub use similarity::{ComparisonResult, Metric, SimilarityMatrix};
