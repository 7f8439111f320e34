//! Queue-draining greedy policies. Both run over the whole queue at every
//! event; a call whose best ambulance is busy is deferred to a later event.

use std::cmp::Ordering;

use super::{best_set, candidates};
use crate::model::{response_time_if_assigned, AmbId, Call, Cost};
use crate::simulator::{Decision, Env, Event, Policy, Step, WorldState};
use crate::Result;

/// Serves queued calls in decreasing order of penalized wait. With
/// `available_only` the best ambulance is sought among free ones only.
#[derive(Debug)]
pub struct Ghp1 {
    pub available_only: bool,
}

impl Policy for Ghp1 {
    fn name(&self) -> &'static str {
        if self.available_only {
            "ghcap1"
        } else {
            "ghp1"
        }
    }

    fn on_event(&mut self, _event: Event, step: &mut Step<'_>) -> Result<()> {
        let now = step.now;
        let inst = step.env.inst;
        let mut order: Vec<(Cost, Call)> = step
            .state()
            .queue
            .iter()
            .map(|c| (crate::model::penalize(inst.theta(c.call_type), now - c.time), c.clone()))
            .collect();
        order.sort_by(|a, b| {
            b.0.total_cmp(&a.0).then(a.1.time.cmp(&b.1.time)).then(a.1.id.cmp(&b.1.id))
        });
        for (_, call) in order {
            let cands = candidates(inst, step.state(), &call, now, self.available_only);
            let Some((_, best)) = best_set(&cands) else { continue };
            if let Some(c) = best.iter().find(|c| c.available) {
                step.apply(Decision::dispatch(inst, c.amb, &call))?;
            }
        }
        Ok(())
    }
}

/// Serves first the queued call whose cheapest option is most expensive.
#[derive(Debug)]
pub struct Ghp2 {
    pub available_only: bool,
}

struct Row {
    call: Call,
    cost: Vec<Option<Cost>>,
    min: Option<Cost>,
    best: Vec<AmbId>,
}

impl Row {
    fn refresh(&mut self, rank: &[u32]) {
        self.min = self.cost.iter().flatten().copied().min_by(f64::total_cmp);
        self.best = match self.min {
            Some(m) => {
                let mut v: Vec<AmbId> =
                    (0..self.cost.len()).filter(|&j| self.cost[j] == Some(m)).collect();
                v.sort_by_key(|&j| (rank[j], j));
                v
            }
            None => Vec::new(),
        };
    }
}

impl Policy for Ghp2 {
    fn name(&self) -> &'static str {
        if self.available_only {
            "ghcap2"
        } else {
            "ghp2"
        }
    }

    fn on_event(&mut self, _event: Event, step: &mut Step<'_>) -> Result<()> {
        let now = step.now;
        let inst = step.env.inst;
        let m = step.state().fleet.len();
        let rank: Vec<u32> = (0..m).map(|j| inst.rank(j)).collect();
        let mut rows: Vec<Row> = step
            .state()
            .queue
            .iter()
            .map(|call| {
                let mut cost = vec![None; m];
                for c in candidates(inst, step.state(), call, now, self.available_only) {
                    cost[c.amb] = Some(c.cost);
                }
                let mut r = Row { call: call.clone(), cost, min: None, best: Vec::new() };
                r.refresh(&rank);
                r
            })
            .collect();

        while !rows.is_empty() {
            let free: Vec<bool> = step.state().fleet.iter().map(|a| !a.is_busy(now)).collect();
            let has_free = |r: &Row| r.best.iter().any(|&j| free[j]);
            let pick = (0..rows.len())
                .max_by(|&x, &y| {
                    let (a, b) = (&rows[x], &rows[y]);
                    cmp_min(a.min, b.min)
                        .then(has_free(a).cmp(&has_free(b)))
                        .then(b.call.id.cmp(&a.call.id))
                })
                .expect("non-empty");
            let row = rows.swap_remove(pick);
            let Some(&j) = row.best.iter().find(|&&j| free[j]) else { continue };
            step.apply(Decision::dispatch(inst, j, &row.call))?;
            // Only calls that counted on `j` need their minimum refreshed:
            // its cost rose for everyone else, so their minimum is unchanged.
            let amb = &step.state().fleet[j];
            for r in rows.iter_mut().filter(|r| r.best.contains(&j)) {
                r.cost[j] = if self.available_only {
                    None
                } else {
                    let t = response_time_if_assigned(amb, &r.call, now, &inst.geo);
                    inst.cost(amb.amb_type, r.call.call_type, t)
                };
                r.refresh(&rank);
            }
        }
        Ok(())
    }
}

/// `None` (no candidate at all) sorts below every cost.
fn cmp_min(a: Option<Cost>, b: Option<Cost>) -> Ordering {
    match (a, b) {
        (Some(x), Some(y)) => x.total_cmp(&y),
        (a, b) => a.is_some().cmp(&b.is_some()),
    }
}

fn run_on_clone(
    env: Env<'_>,
    state: &WorldState,
    event: Event,
    policy: &mut dyn Policy,
) -> Result<Vec<Decision>> {
    let mut scratch = state.clone();
    let now = state.clock;
    let mut step = Step::new(env, &mut scratch, now, &[], policy.forecasts_busy());
    policy.on_event(event, &mut step)?;
    Ok(step.into_applied().into_iter().map(|a| a.decision).collect())
}

/// Decisions GHP1 (or GHCAP1) takes for `event` at `state.clock`, without
/// modifying `state`.
pub fn ghp1_on_event(
    env: Env<'_>,
    state: &WorldState,
    event: Event,
    available_only: bool,
) -> Result<Vec<Decision>> {
    run_on_clone(env, state, event, &mut Ghp1 { available_only })
}

pub fn ghp2_on_event(
    env: Env<'_>,
    state: &WorldState,
    event: Event,
    available_only: bool,
) -> Result<Vec<Decision>> {
    run_on_clone(env, state, event, &mut Ghp2 { available_only })
}
