//! Ambulance dispatching and base reassignment.
//!
//! The crate is organised bottom-up: [`geo`] and [`model`] describe the
//! world, [`simulator`] runs it forward in time under a dispatch
//! [`heuristics`] policy and a [`reassign`] base rule, [`scenario`] samples
//! demand and drives rollout decisions, and [`batch_opt`] solves the static
//! problem of serving a queue of calls exactly.

pub mod batch_opt;
pub mod geo;
pub mod heuristics;
pub mod model;
pub mod reassign;
pub mod scenario;
pub mod simulator;
pub mod stats;
pub mod synthetic;

use thiserror::Error;

use crate::geo::{GeoError, Time};
use crate::model::{AmbId, AmbTypeId, CallId, CallTypeId};

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error("negative duration {0} ms")]
    NegativeDuration(Time),
    #[error("ambulance type {amb_type} may not serve call type {call_type}")]
    Incompatible { amb_type: AmbTypeId, call_type: CallTypeId },
    #[error("call {0} has no compatible ambulance")]
    NoCompatibleAmbulance(CallId),
    #[error("ambulance {amb} is busy at t={now} ms and the policy does not forecast")]
    BusyDispatch { amb: AmbId, now: Time },
    #[error("call {0} is not waiting in the queue")]
    UnknownCall(CallId),
    #[error("invalid decision: {0}")]
    InvalidDecision(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("simulation stalled with {0} calls still queued")]
    Stalled(usize),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
