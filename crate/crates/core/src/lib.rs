//! Core analytics for recognising information operations from open-source
//! publication streams.
//!
//! The crate is organised around the analyst workflow:
//!
//! * [`kb`] holds the weighted goal hierarchy that decomposes the main goal of
//!   a suspected operation into sub-goals and leaf projects.
//! * [`ingest`] turns exported publication counts into dense daily series.
//! * [`wavelet`] computes Morlet and Mexican-hat scalograms of those series.
//! * [`detect`] finds information throw-ins in a pair of scalograms.
//! * [`scoring`] aggregates project implementation degrees into goal
//!   achievement per period and derives the forecast and verdict.
//! * [`review`] maps accepted detections onto knowledge-base annotations.
//! * [`export`] and [`workspace`] read and write the on-disk artifacts shared
//!   by the CLI and the HTTP service.

pub mod calendar;
pub mod detect;
pub mod export;
pub mod fixtures;
pub mod ingest;
pub mod kb;
pub mod review;
pub mod scoring;
pub mod wavelet;
pub mod workspace;

pub use calendar::DateRange;
pub use detect::{detect_throwins, Detection, DetectionConfig};
pub use ingest::{load_manifest, load_series, FillPolicy, QueryManifest, TimeSeries};
pub use kb::{load_kb, save_kb, validate_kb, KnowledgeBase, NodeId};
pub use scoring::{AchievementReport, EvaluationPeriod, Verdict};
pub use wavelet::{cwt, default_scales, MotherWavelet, ScaleLadder, Spectrogram, WaveletKind};
pub use workspace::Workspace;
