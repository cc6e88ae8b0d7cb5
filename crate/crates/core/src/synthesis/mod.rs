//! Controller timing synthesis: matrix-inequality families certifying the
//! switching event-trigger, plus parameter search over (h, eps).
//!
//! [`thm1`] covers the delay-free loop (waiting time plus continuous
//! monitoring, and the periodic-check variant), [`thm2`] the loop with
//! network delays and L2 disturbance attenuation, [`search`] the bisection
//! and sweep drivers that turn feasibility queries into maximal waiting
//! times.

pub mod search;
pub mod thm1;
pub mod thm2;

pub use search::{
    build_polytopic, max_h, sweep_eps, MaxHResult, SearchOptions, SweepResult, SweepRow,
};
pub use thm1::{build_remark1, build_thm1, Thm1Params};
pub use thm2::{build_delay_partitioned_periodic, build_thm2, Thm2Params};

use crate::lmi::LmiError;
use crate::plant::PlantError;

#[derive(Debug, thiserror::Error)]
pub enum SynthesisError {
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Lmi(#[from] LmiError),
    #[error("search: {0}")]
    Search(String),
}

fn require(cond: bool, msg: &str) -> Result<(), SynthesisError> {
    if cond {
        Ok(())
    } else {
        Err(SynthesisError::Param(msg.to_string()))
    }
}

fn finite_nonneg(v: f64, name: &str) -> Result<(), SynthesisError> {
    require(v.is_finite() && v >= 0.0, &format!("{name} must be finite and >= 0"))
}

fn finite_pos(v: f64, name: &str) -> Result<(), SynthesisError> {
    require(v.is_finite() && v > 0.0, &format!("{name} must be finite and > 0"))
}
