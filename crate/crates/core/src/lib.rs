//! Automatic fluency scoring of read speech.
//!
//! The pipeline runs in five stages:
//!
//! 1. [`audio`] loads PCM WAV files, downmixes them to mono and resamples them
//!    to the 16 kHz analysis rate.
//! 2. [`fbds`] segments the short-time log-energy trajectory into sub-phonemic
//!    units with a forward and a backward divergence change detector.
//! 3. [`clustering`] labels the segments as speech or silence, merges silences
//!    into silent breaks and groups speech segments into pseudo-syllables.
//! 4. [`features`] turns a clustering into temporal fluency predictors.
//! 5. [`models`] fits multiple linear regression, support vector regression and
//!    random forest regression to reference ratings under leave-one-speaker-out
//!    validation, with [`stats`] providing the reliability and evaluation
//!    statistics.
//!
//! The [`pipeline`] and [`server`] modules back the `fluency` command-line tool.

pub mod audio;
pub mod clustering;
pub mod config;
pub mod features;
pub mod fbds;
pub mod io;
pub mod models;
pub mod pipeline;
pub mod plot;
pub mod server;
pub mod stats;
pub mod synth;

pub use audio::AudioBuffer;
pub use clustering::{ClusterParams, ClusterResult};
pub use fbds::{FbdsParams, Segment};
pub use features::{compute_features, FluencyFeatures, StimulusScript};

/// Sample rate every recording is converted to before analysis.
pub const ANALYSIS_RATE: u32 = 16_000;
