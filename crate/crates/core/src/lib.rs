//! Unified no-reference quality assessment for audio, image, video, and
//! audio-visual content: three feature-extraction branches, rank-based
//! losses, a multi-database three-step training strategy, and an SRCC/PLCC
//! evaluation harness.

pub mod audio;
pub mod autograd;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod motion;
pub mod objectives;
pub mod params;
pub mod report;
pub mod schedule;
pub mod spatial;
pub mod train;

pub use error::{QaError, Result};
