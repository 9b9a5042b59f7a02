//! Desk-scale laboratory for joint polarization reconfiguration and beam
//! alignment in point-to-point PR-MIMO links.
//!
//! The crate simulates depolarized channels, runs an alternating ping-pong
//! pilot protocol between a transmitter and receiver that each hold a single
//! RF chain, and trains sequence policies (transformer, GRU, non-adaptive
//! DNN) end-to-end through the unrolled protocol to design polarization
//! angles and beamforming vectors from pilot observations alone. A
//! perfect-CSI pipeline (alternating polarization optimization plus SVD
//! beamformers) provides the reference upper bound, and interpretation tools
//! expose attention scores, array responses, and head-ablation curves.

pub mod autodiff;
pub mod channel;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod interpret;
pub mod linalg;
pub mod oracles;
pub mod policy;
pub mod polarization;
pub mod protocol;
pub mod rng;
pub mod training;

pub use channel::{ChannelConfig, DepolarizedChannel, PathParams};
pub use error::{Error, Result};
pub use protocol::{EpisodeRecord, ProtocolConfig, StageParams};
pub use polarization::{Beamformer, PolarizationConfig, PolarizationMatrix};

