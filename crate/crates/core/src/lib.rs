//! Regression discontinuity analysis under local randomization.
//!
//! Window-based Fisherian and large-sample inference, data-driven window
//! selection, fuzzy designs, multiple cutoffs, multiple scores, a minimal
//! local polynomial engine and falsification checks.

pub mod error;
pub mod falsify;
pub mod fuzzy;
pub mod io;
pub mod largesample;
pub mod localpoly;
pub mod multicutoff;
pub mod multiscore;
pub mod randinf;
pub mod sample;
pub mod simdgp;
pub mod stats;
pub mod winselect;

pub use error::{Error, Result};
pub use randinf::{FisherConfig, FisherResult, Kernel, Mechanism, MechanismSpec, RandInfConfig};
pub use sample::{Cutoff, RdSample, Window, WindowData};
pub use stats::{Sidedness, StatKind, StatSpec, VarianceKind};
