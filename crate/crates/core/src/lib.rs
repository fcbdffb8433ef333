//! Distributed observer-based control of multi-channel linear systems.
//!
//! Every channel runs a local observer that mixes its own measurement with
//! neighbor estimates; a single channel additionally carries a dynamic
//! controller that assigns the error spectrum.

pub mod delay;
pub mod error;
pub mod errorsys;
pub mod io;
pub mod linalg;
pub mod model;
pub mod scenario;
pub mod setpoint;
pub mod sim;
pub mod synth;
pub mod treegain;

pub use error::{Error, Result, Stage};
pub use linalg::{Mat, C64};
pub use model::{MultiChannelSystem, NeighborGraph};
pub use synth::{synthesize, CompensatorMode, ObserverGains, SpectrumSpec, SynthConfig, Synthesis, SynthesisReport};
