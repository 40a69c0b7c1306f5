//! Low-light video enhancement by unrolled plug-and-play ADMM.
//!
//! The observation model is `y = a x + n` with a per-pixel gain `a`. The
//! solver splits the estimate into a spatial copy `u` (handled by [`intra`]:
//! histogram matching, quality-ranked gamma retargeting and non-local means)
//! and a temporal copy `v` (handled by [`inter`]: optical flow alignment of a
//! five-frame window, trimmed-mean fusion and gated detail). [`quality`]
//! supplies the no-reference scorer that ranks retargeting candidates and
//! [`metrics`] the evaluation suite.

pub mod config;
pub mod degrade;
pub mod error;
pub mod frame;
pub mod frameio;
pub mod inter;
pub mod intra;
pub mod metrics;
pub mod pipeline;
pub mod quality;
pub mod selftest;
pub mod solver;
pub mod synth;

pub use config::{Overrides, RunConfig};
pub use degrade::{degrade_frame, degrade_sequence, DegradeParams, Gain, SeedPolicy};
pub use error::{Error, Result};
pub use frame::Frame;
pub use frameio::{read_sequence, window_at, write_sequence, FrameWindow, Sequence, SequenceFormat};
pub use inter::{FlowConfig, FlowField, InterConfig, MaskMap};
pub use intra::{CandidateParams, IlluminationProfile, IntraConfig};
pub use metrics::MetricReport;
pub use quality::{NssFeatures, QualityModel, QualityScorer};
pub use solver::{SolverState, StageConfig};
