//! Dispatch policies.
//!
//! All policies break cost ties by preferring the least advanced ambulance
//! type and then the lowest ambulance id, so that advanced crews are kept
//! free whenever a basic one does equally well.

mod greedy;
mod nm;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use greedy::{ghp1_on_event, ghp2_on_event, Ghp1, Ghp2};
pub use nm::{nm_allocate, Nm, NmAssignment, NmPlan};

use crate::geo::Time;
use crate::model::{response_time_if_assigned, AmbId, Call, Cost, Instance};
use crate::simulator::{Decision, Env, Event, Policy, Step, WorldState};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Candidate {
    pub amb: AmbId,
    pub response: Time,
    pub cost: Cost,
    pub available: bool,
    pub rank: u32,
}

/// Every ambulance that may serve `call`, with its response time and cost
/// if sent at `now`. `only_available` drops busy ones.
pub fn candidates(
    inst: &Instance,
    state: &WorldState,
    call: &Call,
    now: Time,
    only_available: bool,
) -> Vec<Candidate> {
    state
        .fleet
        .iter()
        .filter(|a| inst.can_serve(a.id, call))
        .filter(|a| !only_available || !a.is_busy(now))
        .map(|a| {
            let response = response_time_if_assigned(a, call, now, &inst.geo);
            Candidate {
                amb: a.id,
                response,
                cost: inst.cost(a.amb_type, call.call_type, response).expect("compatible"),
                available: !a.is_busy(now),
                rank: inst.rank(a.id),
            }
        })
        .collect()
}

/// Minimum cost and the ambulances achieving it, least advanced first.
pub fn best_set(cands: &[Candidate]) -> Option<(Cost, Vec<Candidate>)> {
    let min = cands.iter().map(|c| c.cost).min_by(f64::total_cmp)?;
    let mut best: Vec<Candidate> = cands.iter().filter(|c| c.cost == min).copied().collect();
    best.sort_by_key(|c| (c.rank, c.amb));
    Some((min, best))
}

/// Closest available compatible ambulance, else enqueue.
pub fn ca_select(env: Env<'_>, state: &WorldState, call: &Call, now: Time) -> Decision {
    let inst = env.inst;
    state
        .available(now)
        .filter(|a| inst.can_serve(a.id, call))
        .min_by_key(|a| (a.arrival_delay(call.loc, now, &inst.geo), a.id))
        .map_or(Decision::Enqueue { call: call.id }, |a| Decision::dispatch(inst, a.id, call))
}

/// Cheapest ambulance over the whole fleet, busy ones included.
pub fn bm_select(env: Env<'_>, state: &WorldState, call: &Call, now: Time) -> Result<Decision> {
    let cands = candidates(env.inst, state, call, now, false);
    let (_, best) = best_set(&cands).ok_or(Error::NoCompatibleAmbulance(call.id))?;
    Ok(Decision::dispatch(env.inst, best[0].amb, call))
}

/// Closest-available dispatch; a freed ambulance serves waiting calls in
/// arrival order.
#[derive(Debug, Default)]
pub struct Ca;

impl Policy for Ca {
    fn name(&self) -> &'static str {
        "ca"
    }

    fn on_event(&mut self, event: Event, step: &mut Step<'_>) -> Result<()> {
        let ids: Vec<_> = match event {
            Event::Call(id) => vec![id],
            Event::Completion(_) => step.state().queue.iter().map(|c| c.id).collect(),
        };
        for id in ids {
            let call = step.state().queued(id).ok_or(Error::UnknownCall(id))?.clone();
            let d = ca_select(step.env, step.state(), &call, step.now);
            if matches!(event, Event::Completion(_)) && matches!(d, Decision::Enqueue { .. }) {
                continue;
            }
            step.apply(d)?;
        }
        Ok(())
    }
}

/// Best-myopic: each call goes to the cheapest ambulance, forecasting when
/// busy ones become free.
#[derive(Debug, Default)]
pub struct Bm;

impl Policy for Bm {
    fn name(&self) -> &'static str {
        "bm"
    }

    fn forecasts_busy(&self) -> bool {
        true
    }

    fn on_event(&mut self, _event: Event, step: &mut Step<'_>) -> Result<()> {
        // Every arrival is assigned immediately, so the queue only ever holds
        // the call that triggered this event.
        let ids: Vec<_> = step.state().queue.iter().map(|c| c.id).collect();
        for id in ids {
            let call = step.state().queued(id).ok_or(Error::UnknownCall(id))?.clone();
            let d = bm_select(step.env, step.state(), &call, step.now)?;
            step.apply(d)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Ca,
    Bm,
    Nm,
    Ghp1,
    Ghcap1,
    Ghp2,
    Ghcap2,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 7] = [
        PolicyKind::Ca,
        PolicyKind::Bm,
        PolicyKind::Nm,
        PolicyKind::Ghp1,
        PolicyKind::Ghcap1,
        PolicyKind::Ghp2,
        PolicyKind::Ghcap2,
    ];

    pub fn label(self) -> &'static str {
        match self {
            PolicyKind::Ca => "ca",
            PolicyKind::Bm => "bm",
            PolicyKind::Nm => "nm",
            PolicyKind::Ghp1 => "ghp1",
            PolicyKind::Ghcap1 => "ghcap1",
            PolicyKind::Ghp2 => "ghp2",
            PolicyKind::Ghcap2 => "ghcap2",
        }
    }

    pub fn build(self) -> Box<dyn Policy> {
        match self {
            PolicyKind::Ca => Box::new(Ca),
            PolicyKind::Bm => Box::new(Bm),
            PolicyKind::Nm => Box::new(Nm::default()),
            PolicyKind::Ghp1 => Box::new(Ghp1 { available_only: false }),
            PolicyKind::Ghcap1 => Box::new(Ghp1 { available_only: true }),
            PolicyKind::Ghp2 => Box::new(Ghp2 { available_only: false }),
            PolicyKind::Ghcap2 => Box::new(Ghp2 { available_only: true }),
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|p| p.label() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown policy '{s}'")))
    }
}
