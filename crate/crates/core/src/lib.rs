//! Crash-mechanism toolkit: noise generators, phase-transition simulators,
//! LPPL calibration, rolling early-warning signals and the pre-crash versus
//! normal-time trend study.

pub mod corpus;
pub mod error;
pub mod ews;
pub mod io;
pub mod lppl;
mod nelder_mead;
pub mod noise;
pub mod rng;
pub mod series;
pub mod sim;
pub mod stats;
pub mod study;

pub use error::{Error, Result};
pub use ews::{EwsSeries, Signal, WindowConfig};
pub use lppl::{HazardParams, LpplFit, LpplParams, SearchConfig};
pub use noise::{HurstSchedule, NoiseKind, NoisePath, Ramp, StableSchedule};
pub use rng::Seed;
pub use series::PriceSeries;
pub use sim::{CptParams, DptParams, MuSchedule, MultiParams, SimPath, SptParams};
pub use study::{CrashEvent, StudyConfig, TrendReport};

/// Version string written into run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
