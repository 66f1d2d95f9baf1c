//! Heralded single-pixel imaging simulator.
//!
//! Simulates classical (non-time-gated) and heralded single-pixel imaging of a
//! binary aperture under thermal background noise and controllable signal loss,
//! at the statistics level (compound CLT-normal + Poisson detection model) and
//! at the timestamp level (photon time-tag streams with coincidence counting).
//!
//! The crate is organized around the measurement chain:
//!
//! - [`pattern`]: Hadamard-derived binary illumination basis, complementary
//!   pattern pairs, significance ordering, compressive subsets, and
//!   target/pattern overlaps.
//! - [`photon`]: per-pattern detected counts for the classical single-detector
//!   scheme and the heralded coincidence scheme, in deterministic expectation
//!   mode or sampled mode.
//! - [`timetag`]: event-level oracle — channel-tagged photon timestamp streams,
//!   cross-correlation histograms, peak finding and windowed coincidence counts.
//! - [`reconstruct`]: second-order correlation image estimator and the
//!   mean/fluctuation decomposition.
//! - [`metrics`]: region-based SNR and the correlation-induced enhancement
//!   factor (CEF).
//! - [`scenario`]: config-driven sweeps over noise level and target
//!   transmittance, with deterministic seeding, persistence and resumability.
//! - [`report`]: aggregation of sweep outputs into median/IQR summary tables.

pub mod error;
pub mod kv;
pub mod metrics;
pub mod pattern;
pub mod photon;
pub mod reconstruct;
pub mod report;
pub mod scenario;
pub mod seed;
pub mod timetag;

pub use error::Error;
pub use metrics::{MetricsReport, RegionSpec, SnrStats};
pub use pattern::{Ordering, PatternSet, TargetProfile};
pub use photon::{CountRecord, Mode, OpticalConfig, Scheme};
pub use reconstruct::ImageResult;
pub use scenario::{Scenario, SweepAxis};
pub use timetag::{Channel, CorrelationHistogram, StreamParams, TagStream};

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
