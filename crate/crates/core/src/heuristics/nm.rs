//! Non-myopic allocation over a known call sequence.
//!
//! Calls are taken in arrival order. When every cheapest ambulance for a
//! call is busy, each of them is checked against later calls arriving
//! before it frees up; if a later call would suffer more from losing it,
//! the ambulance is reserved for that call instead and the current call is
//! retried. Reservations are final.

use std::collections::VecDeque;

use super::{best_set, candidates};
use crate::geo::Time;
use crate::model::{AmbId, AmbulanceState, Call, CallId, CallRecord, Cost};
use crate::simulator::{plan_service, Decision, Env, Event, Policy, Step, WorldState};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct NmAssignment {
    pub call: CallId,
    pub ambulance: AmbId,
    /// Made on behalf of a later call while an earlier one was handled.
    pub reserved: bool,
    /// Instant the ambulance is committed, never before the call arrives.
    pub at: Time,
}

#[derive(Clone, Debug)]
pub struct NmPlan {
    /// In the order the allocations were made.
    pub assignments: Vec<NmAssignment>,
    /// Forecast records, valid when the run returns ambulances to the same
    /// bases the planner assumed.
    pub records: Vec<CallRecord>,
    pub fleet: Vec<AmbulanceState>,
}

impl NmPlan {
    /// Per ambulance, the calls it serves in service order.
    pub fn jobs(&self, fleet_size: usize) -> Vec<VecDeque<CallId>> {
        let mut jobs = vec![VecDeque::new(); fleet_size];
        for a in &self.assignments {
            jobs[a.ambulance].push_back(a.call);
        }
        jobs
    }
}

struct Planner<'a> {
    env: Env<'a>,
    t0: Time,
    fleet: Vec<AmbulanceState>,
    out: NmPlan,
}

impl Planner<'_> {
    fn event_time(&self, c: &Call) -> Time {
        c.time.max(self.t0)
    }

    fn best(&self, call: &Call) -> Result<(Cost, Vec<AmbId>)> {
        let now = self.event_time(call);
        let probe = WorldState {
            clock: now,
            fleet: self.fleet.clone(),
            queue: Vec::new(),
            hospital_load: Vec::new(),
        };
        let cands = candidates(self.env.inst, &probe, call, now, false);
        let (min, best) = best_set(&cands).ok_or(Error::NoCompatibleAmbulance(call.id))?;
        Ok((min, best.into_iter().map(|c| c.amb).collect()))
    }

    fn assign(&mut self, call: &Call, amb: AmbId, reserved: bool) -> Result<()> {
        let at = self.event_time(call);
        let (h, cb) = self.env.inst.default_facilities(call);
        let plan = plan_service(self.env, &self.fleet[amb], call, at, h, cb)?;
        self.fleet[amb] = plan.state;
        self.out.records.push(plan.record);
        self.out.assignments.push(NmAssignment { call: call.id, ambulance: amb, reserved, at });
        Ok(())
    }
}

/// Allocate every call in `calls` starting from `initial`. Calls arriving
/// before `initial.clock` are treated as waiting at that instant.
pub fn nm_allocate(env: Env<'_>, calls: &[Call], initial: &WorldState) -> Result<NmPlan> {
    let mut order: Vec<usize> = (0..calls.len()).collect();
    let t0 = initial.clock;
    order.sort_by_key(|&i| calls[i].time.max(t0));
    let mut p = Planner {
        env,
        t0,
        fleet: initial.fleet.clone(),
        out: NmPlan { assignments: Vec::new(), records: Vec::new(), fleet: Vec::new() },
    };
    let mut done = vec![false; calls.len()];

    for pos in 0..order.len() {
        let i = order[pos];
        if done[i] {
            continue;
        }
        let call = &calls[i];
        let now = p.event_time(call);
        'retry: loop {
            let (cost_i, best_i) = p.best(call)?;
            if let Some(&j) = best_i.iter().find(|&&j| !p.fleet[j].is_busy(now)) {
                p.assign(call, j, false)?;
                break 'retry;
            }
            for &j in &best_i {
                let free_at = p.fleet[j].free_time;
                let mut contenders: Vec<(usize, Cost)> = Vec::new();
                for &k in &order[pos + 1..] {
                    if calls[k].time > free_at {
                        break;
                    }
                    if done[k] {
                        continue;
                    }
                    let (cost_k, best_k) = p.best(&calls[k])?;
                    if best_k.contains(&j) {
                        contenders.push((k, cost_k));
                    }
                }
                if contenders.iter().all(|&(_, c)| c <= cost_i) {
                    p.assign(call, j, false)?;
                    break 'retry;
                }
                let (k0, _) = contenders
                    .iter()
                    .copied()
                    .reduce(|a, b| if b.1 > a.1 { b } else { a })
                    .expect("non-empty when some contender costs more");
                p.assign(&calls[k0], j, true)?;
                done[k0] = true;
            }
        }
        done[i] = true;
    }
    p.out.fleet = p.fleet;
    Ok(p.out)
}

/// Executes an allocation plan computed once over all calls of the run.
/// Each ambulance serves its calls in plan order; a call is dispatched as
/// soon as it has arrived and every earlier job of its ambulance has been.
#[derive(Debug, Default)]
pub struct Nm {
    jobs: Option<Vec<VecDeque<CallId>>>,
}

impl Policy for Nm {
    fn name(&self) -> &'static str {
        "nm"
    }

    fn forecasts_busy(&self) -> bool {
        true
    }

    fn on_event(&mut self, _event: Event, step: &mut Step<'_>) -> Result<()> {
        if self.jobs.is_none() {
            let mut start = step.state().clone();
            start.queue.clear();
            start.clock = step.now;
            let plan = nm_allocate(step.env, step.known_calls, &start)?;
            self.jobs = Some(plan.jobs(start.fleet.len()));
        }
        let jobs = self.jobs.as_mut().expect("planned above");
        for (amb, q) in jobs.iter_mut().enumerate() {
            while let Some(&id) = q.front() {
                let Some(call) = step.state().queued(id) else { break };
                let d = Decision::dispatch(step.env.inst, amb, call);
                step.apply(d)?;
                q.pop_front();
            }
        }
        Ok(())
    }
}
