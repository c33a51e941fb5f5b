//! Language-based depression and anxiety assessment over geo- and
//! time-tagged message corpora.
//!
//! The pipeline runs `ingest -> tokenize -> scoring -> aggregate`, producing
//! post-stratified region-by-time series. Around it sit the statistical
//! tools used to vet those series: split-half reliability and ICC
//! ([`reliability`]), lexicon domain adaptation ([`adapt`]), fixed-effects
//! validity, external correlations and event studies ([`analysis`]), and
//! seeded synthetic data with planted ground truth ([`synth`]).

pub mod adapt;
pub mod aggregate;
pub mod analysis;
pub mod cell;
pub mod error;
pub mod formats;
pub mod ingest;
pub mod mapping;
pub mod pipeline;
pub mod reliability;
pub mod scoring;
pub mod seed;
pub mod stats;
pub mod synth;
pub mod tokenize;

pub use cell::{RegionCode, RegionLevel, TimeCell, TimeUnit};
pub use error::{Error, Result};
