//! Demand calibration, scenario sampling and rollout decisions.

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geo::{secs, serde_secs, Location, Time};
use crate::heuristics::PolicyKind;
use crate::model::{AmbId, Call, CallId, CallTypeId};
use crate::reassign::{BaseRule, IntensityTable};
use crate::simulator::{apply_decision, run, Decision, Env, Event, Policy, RunOptions, Step, WorldState};
use crate::{Error, Result};

/// Regular grid over a bounding box. Cells are half-open on their upper
/// edges except along the outer boundary, which belongs to the last cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
    pub nx: usize,
    pub ny: usize,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.x_max > self.x_min && self.y_max > self.y_min && self.nx > 0 && self.ny > 0) {
            return Err(Error::Config("grid needs a non-empty box and at least one cell".into()));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.nx * self.ny
    }

    fn axis(v: f64, lo: f64, hi: f64, n: usize) -> Option<usize> {
        if !(lo..=hi).contains(&v) {
            return None;
        }
        let i = ((v - lo) / (hi - lo) * n as f64).floor() as usize;
        Some(i.min(n - 1))
    }

    pub fn cell_of(&self, l: Location) -> Option<usize> {
        let ix = Self::axis(l.x, self.x_min, self.x_max, self.nx)?;
        let iy = Self::axis(l.y, self.y_min, self.y_max, self.ny)?;
        Some(iy * self.nx + ix)
    }

    /// `(x0, y0, x1, y1)` of a cell.
    pub fn bounds(&self, cell: usize) -> (f64, f64, f64, f64) {
        let (ix, iy) = (cell % self.nx, cell / self.nx);
        let dx = (self.x_max - self.x_min) / self.nx as f64;
        let dy = (self.y_max - self.y_min) / self.ny as f64;
        let x0 = self.x_min + ix as f64 * dx;
        let y0 = self.y_min + iy as f64 * dy;
        (x0, y0, x0 + dx, y0 + dy)
    }

    pub fn centroid(&self, cell: usize) -> Location {
        let (x0, y0, x1, y1) = self.bounds(cell);
        Location::new((x0 + x1) / 2.0, (y0 + y1) / 2.0)
    }
}

/// One historical call, for calibration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryEvent {
    #[serde(with = "serde_secs")]
    pub time: Time,
    pub loc: Location,
    pub call_type: CallTypeId,
}

/// Mean calls per window occurrence: counts divided by the number of
/// periods in `[span.0, span.1)`. Events outside the grid are ignored.
pub fn estimate_intensities(
    history: &[HistoryEvent],
    grid: &GridSpec,
    types: usize,
    window_len: Time,
    windows: usize,
    span: (Time, Time),
) -> Result<IntensityTable> {
    grid.validate()?;
    let mut table = IntensityTable::zeros(grid.cells(), windows, types, window_len);
    table.validate()?;
    let periods = (span.1 - span.0) as f64 / table.period() as f64;
    if periods <= 0.0 {
        return Err(Error::Config("calibration span must be positive".into()));
    }
    for e in history {
        if e.call_type >= types {
            return Err(Error::Config(format!("history call type {} out of range", e.call_type)));
        }
        let Some(cell) = grid.cell_of(e.loc) else { continue };
        let w = (e.time.rem_euclid(table.period()) / window_len) as usize;
        *table.rate_mut(cell, w, e.call_type) += 1.0;
    }
    for r in &mut table.rates {
        *r /= periods;
    }
    Ok(table)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case", deny_unknown_fields)]
pub enum DurationDist {
    Constant { secs: f64 },
    Uniform { lo: f64, hi: f64 },
    Exponential { mean: f64 },
}

impl DurationDist {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Time {
        let s = match *self {
            DurationDist::Constant { secs } => secs,
            DurationDist::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            DurationDist::Exponential { mean } => -mean * (1.0 - rng.random::<f64>()).ln(),
        };
        secs(s.max(0.0))
    }
}

/// How long calls of one type keep an ambulance busy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceProfile {
    pub on_scene: DurationDist,
    pub hospital_prob: f64,
    pub at_hospital: DurationDist,
    pub cleaning_prob: f64,
    pub cleaning: DurationDist,
}

impl ServiceProfile {
    pub fn constant(on_scene: f64, hospital: Option<f64>, cleaning: Option<f64>) -> Self {
        Self {
            on_scene: DurationDist::Constant { secs: on_scene },
            hospital_prob: if hospital.is_some() { 1.0 } else { 0.0 },
            at_hospital: DurationDist::Constant { secs: hospital.unwrap_or(0.0) },
            cleaning_prob: if cleaning.is_some() { 1.0 } else { 0.0 },
            cleaning: DurationDist::Constant { secs: cleaning.unwrap_or(0.0) },
        }
    }
}

/// Everything needed to sample future calls.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CallModel {
    pub grid: GridSpec,
    pub table: IntensityTable,
    pub profiles: Vec<ServiceProfile>,
}

impl CallModel {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.table.validate()?;
        if self.table.cells != self.grid.cells() || self.profiles.len() != self.table.types {
            return Err(Error::Config("call model grid, table and profiles disagree".into()));
        }
        Ok(())
    }
}

/// Calls arriving in `(t0, t_end]`, chronological, ids from `first_id`.
pub fn sample_scenario<R: Rng + ?Sized>(
    model: &CallModel,
    t0: Time,
    t_end: Time,
    rng: &mut R,
    first_id: CallId,
) -> Vec<Call> {
    let table = &model.table;
    let mut calls = Vec::new();
    for (win, lo, hi) in table.occurrences(t0 + 1, t_end + 1) {
        let frac = (hi - lo) as f64 / table.window_len as f64;
        for cell in 0..table.cells {
            let (x0, y0, x1, y1) = model.grid.bounds(cell);
            for ty in 0..table.types {
                let mean = table.rate(cell, win, ty) * frac;
                if mean <= 0.0 {
                    continue;
                }
                let n = Poisson::new(mean).expect("positive finite mean").sample(rng) as usize;
                let prof = &model.profiles[ty];
                for _ in 0..n {
                    let time = rng.random_range(lo..hi);
                    let loc = Location::new(
                        x0 + (x1 - x0) * rng.random::<f64>(),
                        y0 + (y1 - y0) * rng.random::<f64>(),
                    );
                    let on_scene = prof.on_scene.sample(rng);
                    let hospital = (rng.random::<f64>() < prof.hospital_prob)
                        .then(|| prof.at_hospital.sample(rng));
                    let cleaning = (rng.random::<f64>() < prof.cleaning_prob)
                        .then(|| prof.cleaning.sample(rng));
                    calls.push(Call {
                        id: 0,
                        time,
                        loc,
                        call_type: ty,
                        on_scene,
                        hospital,
                        cleaning,
                        restricted_to: None,
                    });
                }
            }
        }
    }
    calls.sort_by_key(|c| c.time);
    for (i, c) in calls.iter_mut().enumerate() {
        c.id = first_id + i;
    }
    calls
}

/// Per-replication generator: ChaCha8 seeded with `seed`, stream `stream`.
pub fn replication_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Candidate first-stage decisions, in the order used to break ties:
/// dispatches first (by ambulance, then hospital), then the waiting option.
pub fn enumerate_first_stage(
    env: Env<'_>,
    state: &WorldState,
    event: Event,
    now: Time,
    all_hospitals: bool,
) -> Result<Vec<Decision>> {
    let inst = env.inst;
    let options_for = |amb: AmbId, call: &Call| -> Vec<Decision> {
        let hospitals: Vec<Option<usize>> = if !call.needs_hospital() {
            vec![None]
        } else if all_hospitals {
            inst.hospitals.iter().filter(|h| h.admits(call.call_type)).map(|h| Some(h.id)).collect()
        } else {
            vec![inst.closest_hospital(call)]
        };
        hospitals
            .into_iter()
            .map(|h| {
                let cleaning = call
                    .needs_cleaning()
                    .then(|| inst.closest_cleaning(h.map_or(call.loc, |h| inst.hospitals[h].loc)))
                    .flatten();
                Decision::Dispatch { ambulance: amb, call: call.id, hospital: h, cleaning }
            })
            .collect()
    };
    let mut out = Vec::new();
    match event {
        Event::Call(id) => {
            let call = state.queued(id).ok_or(Error::UnknownCall(id))?;
            for a in state.available(now).filter(|a| inst.can_serve(a.id, call)) {
                out.extend(options_for(a.id, call));
            }
            out.push(Decision::Enqueue { call: id });
        }
        Event::Completion(j) => {
            for c in state.queue.iter().filter(|c| inst.can_serve(j, c)) {
                out.extend(options_for(j, c));
            }
            out.extend((0..inst.bases.len()).map(|b| Decision::ToBase { ambulance: j, base: b }));
        }
    }
    Ok(out)
}

/// Calls waiting at the start of the second stage, once the first-stage
/// decision has been applied (giving `after`).
///
/// A waiting call is only ever picked up when some crew finishes a job, so
/// each one is limited to the crews still busy in `after`. That covers a
/// new call put on hold (busy crews at decision time) and a crew sent to
/// base (which is no longer busy). `None` when some waiting call is left
/// with nobody allowed to serve it.
pub fn augment_scenario(after: &WorldState, now: Time) -> Option<Vec<Call>> {
    let busy: BTreeSet<AmbId> = after.fleet.iter().filter(|a| a.is_busy(now)).map(|a| a.id).collect();
    let mut queue = after.queue.clone();
    for c in &mut queue {
        let allowed: BTreeSet<AmbId> = match &c.restricted_to {
            Some(s) => s.intersection(&busy).copied().collect(),
            None => busy.clone(),
        };
        if allowed.is_empty() {
            return None;
        }
        c.restricted_to = Some(allowed);
    }
    Some(queue)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RolloutConfig {
    pub scenarios: usize,
    #[serde(rename = "horizon_s", with = "serde_secs")]
    pub horizon: Time,
    pub base_policy: PolicyKind,
    #[serde(default)]
    pub all_hospitals: bool,
    #[serde(default)]
    pub seed: u64,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            scenarios: 25,
            horizon: 2 * 3_600_000,
            base_policy: PolicyKind::Bm,
            all_hospitals: false,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RolloutChoice {
    pub decision: Decision,
    pub options: Vec<Decision>,
    /// First-stage cost plus mean second-stage cost, `None` if infeasible.
    pub scores: Vec<Option<f64>>,
}

/// Pick the first-stage decision minimising immediate cost plus the mean
/// cost of finishing each sampled scenario with the base policy.
pub fn rollout_decide(
    env: Env<'_>,
    state: &WorldState,
    event: Event,
    cfg: &RolloutConfig,
    scenarios: &[Vec<Call>],
) -> Result<RolloutChoice> {
    let now = state.clock;
    let options = enumerate_first_stage(env, state, event, now, cfg.all_hospitals)?;
    if options.len() == 1 {
        return Ok(RolloutChoice { decision: options[0].clone(), scores: vec![None], options });
    }
    let closest = BaseRule::Closest;
    let stage2 = Env { inst: env.inst, rule: &closest };
    let prepared: Vec<Option<(f64, WorldState)>> = options
        .iter()
        .map(|x0| {
            let mut after = state.clone();
            let applied = apply_decision(&mut after, env, x0, now, false).ok()?;
            let queue = augment_scenario(&after, now)?;
            after.queue = queue;
            let f = applied.record.map_or(0.0, |r| r.allocation_cost);
            Some((f, after))
        })
        .collect();

    let jobs: Vec<(usize, usize)> = (0..options.len())
        .filter(|&i| prepared[i].is_some())
        .flat_map(|i| (0..scenarios.len()).map(move |s| (i, s)))
        .collect();
    let opts = RunOptions { horizon: Some(now + cfg.horizon), record_trips: false };
    let costs: Vec<Option<f64>> = jobs
        .par_iter()
        .map(|&(i, s)| {
            let (_, start) = prepared[i].as_ref().expect("filtered");
            let mut h = cfg.base_policy.build();
            run(stage2, start.clone(), &scenarios[s], h.as_mut(), &opts).ok().map(|o| o.total_cost())
        })
        .collect();

    let mut scores: Vec<Option<f64>> = vec![None; options.len()];
    for (i, p) in prepared.iter().enumerate() {
        let Some((f, _)) = p else { continue };
        let mut total = 0.0;
        let mut ok = true;
        for (k, &(oi, _)) in jobs.iter().enumerate() {
            if oi != i {
                continue;
            }
            match costs[k] {
                Some(c) => total += c,
                None => ok = false,
            }
        }
        if ok {
            let n = scenarios.len().max(1) as f64;
            scores[i] = Some(f + total / n);
        }
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.iter().enumerate() {
        if let Some(s) = *s {
            if best.is_none_or(|(_, b)| s < b) {
                best = Some((i, s));
            }
        }
    }
    let (mut i, low) = best.ok_or_else(|| Error::InvalidDecision("no feasible first-stage decision".into()))?;
    // Among tied options, send a freed crew where the engine's base rule would.
    if let Event::Completion(j) = event {
        let base = env.rule.choose(env.inst, state, j, now);
        let preferred = options.iter().position(|d| *d == Decision::ToBase { ambulance: j, base });
        if let Some(p) = preferred {
            if scores[p].is_some_and(|s| s <= low + 1e-9 * low.abs().max(1.0)) {
                i = p;
            }
        }
    }
    Ok(RolloutChoice { decision: options[i].clone(), options, scores })
}

/// Call ids used by sampled second-stage calls start here, far above any
/// real call id.
pub const SCENARIO_ID_BASE: CallId = 1 << 40;

/// Online rollout: at every event, sample future demand and evaluate each
/// feasible decision by simulating the base policy on it.
pub struct Rollout {
    pub cfg: RolloutConfig,
    pub model: Arc<CallModel>,
    rng: ChaCha8Rng,
    /// Wall-clock time of each non-trivial decision.
    pub timings: Vec<Duration>,
}

impl Rollout {
    pub fn new(cfg: RolloutConfig, model: Arc<CallModel>) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Self { cfg, model, rng, timings: Vec::new() }
    }

    pub fn sample(&mut self, now: Time) -> Vec<Vec<Call>> {
        (0..self.cfg.scenarios)
            .map(|_| {
                sample_scenario(&self.model, now, now + self.cfg.horizon, &mut self.rng, SCENARIO_ID_BASE)
            })
            .collect()
    }
}

impl Policy for Rollout {
    fn name(&self) -> &'static str {
        "rollout"
    }

    fn on_event(&mut self, event: Event, step: &mut Step<'_>) -> Result<()> {
        let started = Instant::now();
        let now = step.now;
        let options = enumerate_first_stage(step.env, step.state(), event, now, self.cfg.all_hospitals)?;
        let decision = if options.len() == 1 {
            options[0].clone()
        } else {
            let scenarios = self.sample(now);
            let choice = rollout_decide(step.env, step.state(), event, &self.cfg, &scenarios)?;
            self.timings.push(started.elapsed());
            choice.decision
        };
        step.apply(decision)?;
        Ok(())
    }
}
