//! Localization of a reconfigurable intelligent surface (RIS) in the near
//! field from bi-static SISO-OFDM observations.
//!
//! The crate is organized bottom-up:
//!
//! - [`geometry`]: rotations, element placement, delays, anchor angles and
//!   the TOA ellipse.
//! - [`signal`]: the observation model (gain, delay steering, near-field and
//!   far-field RIS responses, phase profiles, noise).
//! - [`crb`]: Fisher information, the η→ζ Jacobian and the TEB/PEB/OEB bounds.
//! - [`estimator`]: TOA, spatial-frequency and ellipse line searches followed
//!   by quasi-Newton refinement of the ML cost.
//! - [`montecarlo`]: seeded trial campaigns, parameter sweeps and bound
//!   contours.
//! - [`config`] and [`cli`]: JSON configuration and the `ris-locate` tool.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod crb;
pub mod error;
pub mod estimator;
pub mod geometry;
pub mod montecarlo;
pub mod optimize;
pub mod signal;

pub use crb::{CrbReport, EtaParams};
pub use error::{Result, RisError};

pub use geometry::{EllipseParam, RisPose, Vec2};

pub use estimator::{RisEstimate, SearchSettings, ToaEstimate};
pub use montecarlo::{ContourGrid, SweepRow, TrialOptions, TrialStats};
pub use signal::{ChannelGain, Observation, PhaseProfiles, SystemConfig};
