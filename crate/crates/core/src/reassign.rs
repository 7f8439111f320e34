//! Where an ambulance goes after finishing service.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::geo::{GeoMode, Location, Time};
use crate::model::{AmbId, BaseId, CallTypeId, Instance};
use crate::simulator::WorldState;
use crate::{Error, Result};

pub const DEFAULT_DELTA: Time = 5_400_000;
pub const DEFAULT_ALPHA: f64 = 0.9;

/// Expected call counts per (cell, time window, call type), repeating with
/// a period of `windows * window_len`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntensityTable {
    pub cells: usize,
    pub windows: usize,
    pub types: usize,
    pub window_len: Time,
    /// Row-major `[cell][window][type]`; each value is the mean number of
    /// calls in one occurrence of the window.
    pub rates: Vec<f64>,
}

impl IntensityTable {
    pub fn zeros(cells: usize, windows: usize, types: usize, window_len: Time) -> Self {
        Self { cells, windows, types, window_len, rates: vec![0.0; cells * windows * types] }
    }

    pub fn period(&self) -> Time {
        self.window_len * self.windows as Time
    }

    fn idx(&self, cell: usize, window: usize, ty: CallTypeId) -> usize {
        (cell * self.windows + window) * self.types + ty
    }

    pub fn rate(&self, cell: usize, window: usize, ty: CallTypeId) -> f64 {
        self.rates[self.idx(cell, window, ty)]
    }

    pub fn rate_mut(&mut self, cell: usize, window: usize, ty: CallTypeId) -> &mut f64 {
        let i = self.idx(cell, window, ty);
        &mut self.rates[i]
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_len <= 0 || self.windows == 0 {
            return Err(Error::Config("intensity table needs positive windows".into()));
        }
        if self.rates.len() != self.cells * self.windows * self.types {
            return Err(Error::Config("intensity table has the wrong number of rates".into()));
        }
        if self.rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::Config("intensity rates must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// Sum cells into groups, e.g. grid cells into base catchments.
    pub fn aggregate(&self, group_of: &[usize], groups: usize) -> IntensityTable {
        let mut out = IntensityTable::zeros(groups, self.windows, self.types, self.window_len);
        for (cell, &g) in group_of.iter().enumerate() {
            for w in 0..self.windows {
                for ty in 0..self.types {
                    *out.rate_mut(g, w, ty) += self.rate(cell, w, ty);
                }
            }
        }
        out
    }

    /// Window occurrences intersecting `[from, to)`, clipped to it, as
    /// `(window index, start, end)`.
    pub fn occurrences(&self, from: Time, to: Time) -> Vec<(usize, Time, Time)> {
        let w = self.window_len;
        let mut out = Vec::new();
        let mut k = from.div_euclid(w);
        while k * w < to {
            let lo = from.max(k * w);
            let hi = to.min((k + 1) * w);
            if hi > lo {
                out.push(((k.rem_euclid(self.windows as Time)) as usize, lo, hi));
            }
            k += 1;
        }
        out
    }

    /// Expected number of calls of type `ty` in `cell` during `[from, to)`,
    /// prorating partially covered windows.
    pub fn mean_count_over_window(&self, cell: usize, ty: CallTypeId, from: Time, to: Time) -> f64 {
        self.occurrences(from, to)
            .into_iter()
            .map(|(win, lo, hi)| self.rate(cell, win, ty) * (hi - lo) as f64 / self.window_len as f64)
            .sum()
    }
}

/// Smallest `q` with `P(Poisson(mean) <= q) >= alpha`, by summing the pmf.
pub fn poisson_quantile(mean: f64, alpha: f64) -> Result<u64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("quantile level {alpha} outside (0, 1)")));
    }
    if !(mean.is_finite() && mean >= 0.0) {
        return Err(Error::Config(format!("Poisson mean {mean} invalid")));
    }
    if mean == 0.0 {
        return Ok(0);
    }
    // pmf in log space so large means do not underflow e^-mean.
    let ln_mean = mean.ln();
    let mut ln_p = -mean;
    let mut cdf = ln_p.exp();
    let mut q = 0u64;
    while cdf < alpha {
        q += 1;
        ln_p += ln_mean - (q as f64).ln();
        cdf += ln_p.exp();
        if q > 10 * (mean.ceil() as u64 + 100) {
            break;
        }
    }
    Ok(q)
}

/// A burst of `count` calls of one type in one catchment, spread over
/// `[start, end)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Burst {
    pub base: BaseId,
    pub call_type: CallTypeId,
    pub start: Time,
    pub end: Time,
    pub count: u64,
}

/// How many calls a base catchment should be ready for.
#[derive(Clone, Debug)]
pub enum Demand {
    /// Poisson quantile of the forecast mean count, from a per-base table.
    Quantile { table: Arc<IntensityTable>, alpha: f64 },
    /// Largest number of calls that can fall in the window: every burst it
    /// overlaps counts in full.
    MaxCalls { bursts: Arc<Vec<Burst>> },
}

impl Demand {
    pub fn calls(&self, base: BaseId, ty: CallTypeId, from: Time, to: Time) -> u64 {
        match self {
            Demand::Quantile { table, alpha } => {
                let mean = table.mean_count_over_window(base, ty, from, to);
                poisson_quantile(mean, *alpha).expect("alpha validated at construction")
            }
            Demand::MaxCalls { bursts } => bursts
                .iter()
                .filter(|b| b.base == base && b.call_type == ty && b.start < to && from < b.end)
                .map(|b| b.count)
                .sum(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Bbr {
    pub delta: Time,
    pub demand: Demand,
}

impl Bbr {
    pub fn new(delta: Time, demand: Demand) -> Result<Self> {
        if delta <= 0 {
            return Err(Error::Config("BBR window must be positive".into()));
        }
        if let Demand::Quantile { table, alpha } = &demand {
            poisson_quantile(0.0, *alpha)?;
            table.validate()?;
        }
        Ok(Self { delta, demand })
    }
}

#[derive(Clone, Debug, Default)]
pub enum BaseRule {
    /// Always return to the home base.
    Home,
    /// Nearest base by travel time.
    #[default]
    Closest,
    /// Base with the largest forecast deficit of ambulances.
    Best(Bbr),
}

impl BaseRule {
    pub fn label(&self) -> &'static str {
        match self {
            BaseRule::Home => "hbr",
            BaseRule::Closest => "cbr",
            BaseRule::Best(_) => "bbr",
        }
    }

    /// Base assumed when a dispatch is planned, before the real decision
    /// is taken at service completion. BBR has no forecast of its own and
    /// falls back to the closest base.
    pub fn provisional(&self, inst: &Instance, amb: AmbId, from: Location) -> BaseId {
        match self {
            BaseRule::Home => inst.fleet[amb].base,
            BaseRule::Closest | BaseRule::Best(_) => inst.closest_base(from),
        }
    }

    /// Base for ambulance `amb`, free at `now`.
    pub fn choose(&self, inst: &Instance, state: &WorldState, amb: AmbId, now: Time) -> BaseId {
        let (_, here) = state.fleet[amb].departure(now, &inst.geo);
        match self {
            BaseRule::Home => inst.fleet[amb].base,
            BaseRule::Closest => inst.closest_base(here),
            BaseRule::Best(bbr) => best_base(inst, state, amb, here, now, bbr),
        }
    }
}

/// Ambulances other than `amb`, able to serve `ty`, expected at `base` no
/// later than `by`: parked there, or heading there after service.
pub fn ambulances_forecast_at(
    inst: &Instance,
    state: &WorldState,
    amb: AmbId,
    ty: CallTypeId,
    base: BaseId,
    by: Time,
) -> u64 {
    state
        .fleet
        .iter()
        .filter(|k| {
            k.id != amb
                && k.base == base
                && k.base_time <= by
                && inst.quality.get(k.amb_type, ty).is_some()
        })
        .count() as u64
}

pub fn best_base(
    inst: &Instance,
    state: &WorldState,
    amb: AmbId,
    here: Location,
    now: Time,
    bbr: &Bbr,
) -> BaseId {
    let arrival: Vec<Time> = inst.bases.iter().map(|b| now + inst.geo.travel(here, b.loc)).collect();
    let mut global: Option<(i64, BaseId)> = None;
    for ty in inst.servable_types(state.fleet[amb].amb_type) {
        let mut level: Option<(i64, BaseId)> = None;
        for (b, &t) in arrival.iter().enumerate() {
            let q = bbr.demand.calls(b, ty, t, t + bbr.delta) as i64;
            let a = ambulances_forecast_at(inst, state, amb, ty, b, t) as i64;
            let d = q - a;
            if level.is_none_or(|(best, _)| d > best) {
                level = Some((d, b));
            }
        }
        let (d, b) = level.expect("at least one base");
        if d > 0 {
            return b;
        }
        if global.is_none_or(|(best, _)| d > best) {
            global = Some((d, b));
        }
    }
    // An ambulance type serving nothing never reaches here after validation;
    // fall back to the nearest base anyway.
    global.map_or_else(|| inst.closest_base(here), |(_, b)| b)
}

/// Nearest site (by travel time, lowest index on ties) for each point.
pub fn voronoi_assign(points: &[Location], sites: &[Location], geo: &GeoMode) -> Vec<usize> {
    points
        .iter()
        .map(|p| {
            let mut best = (Time::MAX, 0);
            for (i, s) in sites.iter().enumerate() {
                let t = geo.travel(*p, *s);
                if t < best.0 {
                    best = (t, i);
                }
            }
            best.1
        })
        .collect()
}
