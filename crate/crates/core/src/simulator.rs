//! Discrete-event engine: call arrivals and service completions drive a
//! dispatch [`Policy`]; decisions update vehicle state vectors and emit trips
//! and call records.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::geo::{Location, Time};
use crate::model::{
    AmbId, AmbulanceState, BaseId, Call, CallId, CallRecord, CleaningId, HospitalId, Instance,
    Trip, TripKind,
};
use crate::reassign::BaseRule;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Decision {
    Dispatch {
        ambulance: AmbId,
        call: CallId,
        hospital: Option<HospitalId>,
        cleaning: Option<CleaningId>,
    },
    Enqueue {
        call: CallId,
    },
    ToBase {
        ambulance: AmbId,
        base: BaseId,
    },
}

impl Decision {
    pub fn ambulance(&self) -> Option<AmbId> {
        match *self {
            Decision::Dispatch { ambulance, .. } | Decision::ToBase { ambulance, .. } => {
                Some(ambulance)
            }
            Decision::Enqueue { .. } => None,
        }
    }

    /// Dispatch with the default hospital and cleaning base for the call.
    pub fn dispatch(inst: &Instance, ambulance: AmbId, call: &Call) -> Decision {
        let (hospital, cleaning) = inst.default_facilities(call);
        Decision::Dispatch { ambulance, call: call.id, hospital, cleaning }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Event {
    Call(CallId),
    Completion(AmbId),
}

/// Static context shared by the engine and the policies.
#[derive(Clone, Copy)]
pub struct Env<'a> {
    pub inst: &'a Instance,
    pub rule: &'a BaseRule,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub clock: Time,
    pub fleet: Vec<AmbulanceState>,
    /// Calls received and not yet assigned, in arrival order.
    pub queue: Vec<Call>,
    /// Patients delivered per hospital on top of the initial occupancy.
    pub hospital_load: Vec<u32>,
}

impl WorldState {
    pub fn initial(inst: &Instance, t0: Time) -> Self {
        Self {
            clock: t0,
            fleet: inst.fleet.iter().map(|a| AmbulanceState::at_base(inst, a, t0)).collect(),
            queue: Vec::new(),
            hospital_load: vec![0; inst.hospitals.len()],
        }
    }

    pub fn queued(&self, id: CallId) -> Option<&Call> {
        self.queue.iter().find(|c| c.id == id)
    }

    pub fn available(&self, now: Time) -> impl Iterator<Item = &AmbulanceState> {
        self.fleet.iter().filter(move |a| !a.is_busy(now))
    }
}

/// What one call does to one ambulance.
#[derive(Clone, Debug)]
pub struct ServicePlan {
    pub state: AmbulanceState,
    pub trips: Vec<Trip>,
    pub record: CallRecord,
}

/// Legs, timings and the resulting state vector when `amb` is sent to
/// `call` at `now`. Does not touch any shared state.
pub fn plan_service(
    env: Env<'_>,
    amb: &AmbulanceState,
    call: &Call,
    now: Time,
    hospital: Option<HospitalId>,
    cleaning: Option<CleaningId>,
) -> Result<ServicePlan> {
    let inst = env.inst;
    let geo = &inst.geo;
    if !inst.can_serve(amb.id, call) {
        return Err(Error::Incompatible { amb_type: amb.amb_type, call_type: call.call_type });
    }
    if now < call.time {
        return Err(Error::InvalidDecision(format!(
            "call {} dispatched at {now} before it arrives at {}",
            call.id, call.time
        )));
    }
    if hospital.is_some() != call.needs_hospital() || cleaning.is_some() != call.needs_cleaning() {
        return Err(Error::InvalidDecision(format!(
            "call {}: facilities do not match its hospital/cleaning needs",
            call.id
        )));
    }
    if let Some(h) = hospital {
        if inst.hospitals.get(h).is_none_or(|h| !h.admits(call.call_type)) {
            return Err(Error::InvalidDecision(format!("hospital {h} cannot take call {}", call.id)));
        }
    }
    if cleaning.is_some_and(|c| c >= inst.cleaning_bases.len()) {
        return Err(Error::InvalidDecision("unknown cleaning base".into()));
    }

    let mut trips = Vec::with_capacity(6);
    let mut leg = |kind, from: Location, to: Location, t: Time, dur: Time| {
        trips.push(Trip {
            ambulance: amb.id,
            kind,
            origin: from,
            destination: to,
            depart: t,
            arrive: t + dur,
        });
        t + dur
    };
    let (dep, from) = amb.departure(now, geo);
    let on_scene_at = leg(TripKind::ToScene, from, call.loc, dep, geo.travel(from, call.loc));
    let mut t = leg(TripKind::OnScene, call.loc, call.loc, on_scene_at, call.on_scene);
    let mut here = call.loc;
    let mut to_hospital = None;
    if let (Some(h), Some(stay)) = (hospital, call.hospital) {
        let hl = inst.hospitals[h].loc;
        let arrive = leg(TripKind::ToHospital, here, hl, t, geo.travel(here, hl));
        to_hospital = Some(arrive - on_scene_at);
        t = leg(TripKind::AtHospital, hl, hl, arrive, stay);
        here = hl;
    }
    if let (Some(c), Some(dur)) = (cleaning, call.cleaning) {
        let cl = inst.cleaning_bases[c].loc;
        let arrive = leg(TripKind::ToCleaning, here, cl, t, geo.travel(here, cl));
        t = leg(TripKind::AtCleaning, cl, cl, arrive, dur);
        here = cl;
    }

    let base = env.rule.provisional(inst, amb.id, here);
    let base_loc = inst.bases[base].loc;
    let state = AmbulanceState {
        free_loc: here,
        free_time: t,
        base_loc,
        base_time: t + geo.travel(here, base_loc),
        base,
        pending: true,
        ..amb.clone()
    };
    let theta = inst.theta(call.call_type);
    let wait = on_scene_at - call.time;
    let record = CallRecord {
        call: call.id,
        call_type: call.call_type,
        ambulance: amb.id,
        arrival: call.time,
        dispatched_at: now,
        waiting_on_scene: wait,
        penalized_wait: crate::model::penalize(theta, wait),
        waiting_to_hospital: to_hospital,
        penalized_hospital_wait: to_hospital.map(|w| crate::model::penalize(theta, w)),
        allocation_cost: inst
            .cost(amb.amb_type, call.call_type, wait)
            .expect("compatibility checked above"),
        hospital,
        cleaning,
    };
    Ok(ServicePlan { state, trips, record })
}

#[derive(Clone, Debug)]
pub struct Applied {
    pub decision: Decision,
    pub trips: Vec<Trip>,
    pub record: Option<CallRecord>,
}

/// Apply one decision at `now`. Dispatching a busy ambulance is only
/// accepted when `allow_busy` is set (forecasting policies).
pub fn apply_decision(
    state: &mut WorldState,
    env: Env<'_>,
    decision: &Decision,
    now: Time,
    allow_busy: bool,
) -> Result<Applied> {
    let inst = env.inst;
    match *decision {
        Decision::Dispatch { ambulance, call, hospital, cleaning } => {
            let amb = state
                .fleet
                .get(ambulance)
                .ok_or_else(|| Error::InvalidDecision(format!("unknown ambulance {ambulance}")))?;
            if amb.is_busy(now) && !allow_busy {
                return Err(Error::BusyDispatch { amb: ambulance, now });
            }
            let pos = state
                .queue
                .iter()
                .position(|c| c.id == call)
                .ok_or(Error::UnknownCall(call))?;
            let plan = plan_service(env, amb, &state.queue[pos], now, hospital, cleaning)?;
            state.queue.remove(pos);
            state.fleet[ambulance] = plan.state;
            if let Some(h) = hospital {
                state.hospital_load[h] += 1;
            }
            Ok(Applied { decision: decision.clone(), trips: plan.trips, record: Some(plan.record) })
        }
        Decision::Enqueue { call } => {
            if state.queued(call).is_none() {
                return Err(Error::UnknownCall(call));
            }
            Ok(Applied { decision: decision.clone(), trips: Vec::new(), record: None })
        }
        Decision::ToBase { ambulance, base } => {
            let Some(amb) = state.fleet.get_mut(ambulance) else {
                return Err(Error::InvalidDecision(format!("unknown ambulance {ambulance}")));
            };
            if amb.is_busy(now) {
                return Err(Error::BusyDispatch { amb: ambulance, now });
            }
            let Some(b) = inst.bases.get(base) else {
                return Err(Error::InvalidDecision(format!("unknown base {base}")));
            };
            let (_, from) = amb.departure(now, &inst.geo);
            let arrive = now + inst.geo.travel(from, b.loc);
            amb.free_loc = from;
            amb.free_time = now;
            amb.base = base;
            amb.base_loc = b.loc;
            amb.base_time = arrive;
            amb.pending = false;
            let trip = Trip {
                ambulance,
                kind: TripKind::ToBase,
                origin: from,
                destination: b.loc,
                depart: now,
                arrive,
            };
            Ok(Applied { decision: decision.clone(), trips: vec![trip], record: None })
        }
    }
}

/// A policy's view of one event: read the state, apply decisions.
pub struct Step<'a> {
    pub env: Env<'a>,
    pub now: Time,
    /// Every call the engine will ever see in this run, in event order.
    /// Only offline planners may look ahead in it.
    pub known_calls: &'a [Call],
    state: &'a mut WorldState,
    allow_busy: bool,
    applied: Vec<Applied>,
}

impl<'a> Step<'a> {
    pub fn new(
        env: Env<'a>,
        state: &'a mut WorldState,
        now: Time,
        known_calls: &'a [Call],
        allow_busy: bool,
    ) -> Self {
        Self { env, now, known_calls, state, allow_busy, applied: Vec::new() }
    }

    pub fn state(&self) -> &WorldState {
        self.state
    }

    pub fn apply(&mut self, d: Decision) -> Result<&Applied> {
        let a = apply_decision(self.state, self.env, &d, self.now, self.allow_busy)?;
        self.applied.push(a);
        Ok(self.applied.last().expect("just pushed"))
    }

    pub fn applied(&self) -> &[Applied] {
        &self.applied
    }

    pub fn into_applied(self) -> Vec<Applied> {
        self.applied
    }
}

pub trait Policy: Send {
    fn name(&self) -> &'static str;

    /// Whether the policy may commit busy ambulances to new calls.
    fn forecasts_busy(&self) -> bool {
        false
    }

    /// React to `event`. On a completion, an ambulance the policy leaves
    /// untouched is sent to a base by the engine's base rule.
    fn on_event(&mut self, event: Event, step: &mut Step<'_>) -> Result<()>;
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Calls after this instant are rejected. The run itself continues past
    /// it until every call is served.
    pub horizon: Option<Time>,
    pub record_trips: bool,
}

#[derive(Clone, Debug)]
pub struct SimOutput {
    pub records: Vec<CallRecord>,
    /// Grouped by ambulance, each group in time order.
    pub trips: Vec<Trip>,
    pub decisions: Vec<(Time, Decision)>,
    pub final_state: WorldState,
}

impl SimOutput {
    pub fn total_cost(&self) -> f64 {
        self.records.iter().map(|r| r.allocation_cost).sum()
    }
}

struct TripLog {
    per_amb: Vec<Vec<Trip>>,
    cursor: Vec<(Time, Location)>,
}

impl TripLog {
    fn new(state: &WorldState, env: Env<'_>) -> Self {
        let t0 = state.clock;
        let mut per_amb = vec![Vec::new(); state.fleet.len()];
        let mut cursor = Vec::with_capacity(state.fleet.len());
        for a in &state.fleet {
            if a.is_busy(t0) {
                cursor.push((a.free_time, a.free_loc));
            } else if !a.is_at_base(t0) {
                let from = env.inst.geo.interpolate(a.free_loc, a.base_loc, a.free_time, t0);
                per_amb[a.id].push(Trip {
                    ambulance: a.id,
                    kind: TripKind::ToBase,
                    origin: from,
                    destination: a.base_loc,
                    depart: t0,
                    arrive: a.base_time,
                });
                cursor.push((t0, from));
            } else {
                cursor.push((t0, a.base_loc));
            }
        }
        Self { per_amb, cursor }
    }

    fn append(&mut self, trips: &[Trip]) {
        let Some(first) = trips.first() else { return };
        let a = first.ambulance;
        let log = &mut self.per_amb[a];
        match log.last_mut() {
            // Interrupted on the way back to base.
            Some(last) if last.arrive > first.depart => {
                debug_assert_eq!(last.kind, TripKind::ToBase);
                last.arrive = first.depart;
                last.destination = first.origin;
            }
            Some(last) if last.arrive < first.depart => {
                let at = last.destination;
                let from = last.arrive;
                log.push(idle(a, at, from, first.depart));
            }
            None if self.cursor[a].0 < first.depart => {
                let (from, at) = self.cursor[a];
                log.push(idle(a, at, from, first.depart));
            }
            _ => {}
        }
        log.extend_from_slice(trips);
    }
}

fn idle(ambulance: AmbId, at: Location, from: Time, to: Time) -> Trip {
    Trip { ambulance, kind: TripKind::AtBase, origin: at, destination: at, depart: from, arrive: to }
}

/// Run the event loop from `initial` until every call is served.
///
/// Calls already in `initial.queue` are replayed as arrivals at the start
/// clock (their waits still count from their own arrival time); `calls`
/// are future arrivals.
pub fn run(
    env: Env<'_>,
    initial: WorldState,
    calls: &[Call],
    policy: &mut dyn Policy,
    opts: &RunOptions,
) -> Result<SimOutput> {
    let mut state = initial;
    let start = state.clock;
    let mut arrivals: Vec<Call> = std::mem::take(&mut state.queue);
    arrivals.extend(calls.iter().cloned());
    for c in &arrivals {
        env.inst.check_call(c)?;
        if opts.horizon.is_some_and(|h| c.time > h) {
            return Err(Error::Config(format!("call {} arrives after the horizon", c.id)));
        }
    }
    arrivals.sort_by_key(|c| c.time.max(start));
    let mut log = opts.record_trips.then(|| TripLog::new(&state, env));
    let allow_busy = policy.forecasts_busy();
    let mut records = Vec::with_capacity(arrivals.len());
    let mut decisions = Vec::new();
    let mut next_call = 0;

    loop {
        let completion = state
            .fleet
            .iter()
            .filter(|a| a.pending)
            .min_by_key(|a| (a.free_time, a.id))
            .map(|a| (a.free_time, a.id));
        let arrival = arrivals.get(next_call).map(|c| c.time.max(start));
        let (now, event) = match (arrival, completion) {
            (Some(ta), Some((tc, _))) if ta <= tc => (ta, Event::Call(arrivals[next_call].id)),
            (Some(ta), None) => (ta, Event::Call(arrivals[next_call].id)),
            (_, Some((tc, a))) => (tc, Event::Completion(a)),
            (None, None) => break,
        };
        state.clock = now;
        match event {
            Event::Call(_) => {
                state.queue.push(arrivals[next_call].clone());
                next_call += 1;
            }
            Event::Completion(a) => state.fleet[a].pending = false,
        }
        let mut step = Step::new(env, &mut state, now, &arrivals, allow_busy);
        policy.on_event(event, &mut step)?;
        if let Event::Completion(a) = event {
            let touched = step.applied().iter().any(|x| x.decision.ambulance() == Some(a));
            if !touched {
                let base = env.rule.choose(env.inst, step.state(), a, now);
                step.apply(Decision::ToBase { ambulance: a, base })?;
            }
        }
        for a in step.into_applied() {
            if let Some(log) = log.as_mut() {
                log.append(&a.trips);
            }
            records.extend(a.record);
            decisions.push((now, a.decision));
        }
    }
    if !state.queue.is_empty() {
        return Err(Error::Stalled(state.queue.len()));
    }
    let trips = log.map(|l| l.per_amb.into_iter().flatten().collect()).unwrap_or_default();
    Ok(SimOutput { records, trips, decisions, final_state: state })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Smallest sample value whose empirical CDF reaches 0.9.
    pub q90: f64,
    pub max: f64,
}

pub fn summarize(values: &[f64]) -> Result<Summary> {
    if values.is_empty() {
        return Err(Error::Config("cannot summarize an empty sample".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let k = (0.9 * n as f64).ceil() as usize;
    Ok(Summary {
        mean: v.iter().sum::<f64>() / n as f64,
        q90: v[k.clamp(1, n) - 1],
        max: v[n - 1],
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Response times in seconds.
    pub response: Summary,
    pub cost: Summary,
    pub calls: usize,
}

pub fn metrics(records: &[CallRecord]) -> Result<Metrics> {
    let rt: Vec<f64> = records.iter().map(|r| crate::geo::to_secs(r.waiting_on_scene)).collect();
    let cost: Vec<f64> = records.iter().map(|r| r.allocation_cost).collect();
    Ok(Metrics { response: summarize(&rt)?, cost: summarize(&cost)?, calls: records.len() })
}

pub fn write_trips_jsonl(trips: &[Trip], mut w: impl Write) -> std::io::Result<()> {
    for t in trips {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Check that every ambulance's trips chain without gaps or jumps.
pub fn check_trip_chain(trips: &[Trip]) -> std::result::Result<(), String> {
    for w in trips.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if a.ambulance != b.ambulance {
            continue;
        }
        if a.arrive != b.depart || a.destination != b.origin {
            return Err(format!("ambulance {}: gap between {:?} and {:?}", a.ambulance, a, b));
        }
    }
    for t in trips {
        if t.arrive < t.depart {
            return Err(format!("trip runs backwards: {t:?}"));
        }
    }
    Ok(())
}
