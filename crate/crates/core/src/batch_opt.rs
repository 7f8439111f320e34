//! Exact allocation of a queue of waiting calls to ambulances.
//!
//! Times are `f64` seconds with unrounded travel times so that the linear
//! model handed to an external solver and the branch-and-bound search agree
//! to floating-point precision.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::geo::{serde_secs, to_secs, GeoMode, Location, Time};
use crate::model::{AmbulanceState, Call, CallId, CleaningId, HospitalId, Instance};
use crate::{Error, Result};

/// Number of priority classes, each with its own completion time variable.
pub const CLASSES: usize = 3;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// A class pays for its worst call, each call measured from its own
    /// arrival.
    #[default]
    PerCall,
    /// A class pays for its last completion measured from the earliest
    /// arrival in the class.
    ClassEarliest,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchCall {
    pub call: Call,
    /// Facilities used by the simplified model; closest ones when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hospital: Option<HospitalId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cleaning: Option<CleaningId>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchInstance {
    pub instance: Instance,
    #[serde(rename = "t0_s", with = "serde_secs")]
    pub t0: Time,
    /// Fleet state at `t0`. Every ambulance idles at its home base when
    /// absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fleet: Option<Vec<AmbulanceState>>,
    pub calls: Vec<BatchCall>,
    /// Priority class (0 is the most urgent) of each call type.
    pub class_of_type: Vec<usize>,
    pub class_theta: [f64; CLASSES],
    #[serde(default)]
    pub objective: Objective,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub big_m: Option<f64>,
}

/// One way of serving a call once the ambulance is on scene.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ServiceOption {
    pub hospital: Option<HospitalId>,
    pub cleaning: Option<CleaningId>,
    /// From scene arrival until the ambulance may leave `end`.
    pub delta: f64,
    pub end: Location,
    /// From scene arrival until the patient reaches hospital; zero when
    /// nobody is transported.
    pub tau: f64,
}

/// A batch instance resolved into plain numbers.
#[derive(Clone, Debug)]
pub struct Problem {
    pub geo: GeoMode,
    /// Facilities are decision variables; otherwise each call has exactly
    /// one option.
    pub full: bool,
    pub calls: Vec<Call>,
    pub class: Vec<usize>,
    /// Subtracted from a call's completion before it enters its class.
    pub offset: Vec<f64>,
    pub options: Vec<Vec<ServiceOption>>,
    /// Per ambulance, the earliest time and place it can start driving.
    pub ready: Vec<(f64, Location)>,
    pub compatible: Vec<Vec<usize>>,
    pub theta: [f64; CLASSES],
    pub class_const: [f64; CLASSES],
    /// Beds left per hospital, `None` when unlimited.
    pub capacity: Vec<Option<u32>>,
    pub big_m: f64,
}

impl BatchInstance {
    pub fn problem(&self, full: bool) -> Result<Problem> {
        let inst = &self.instance;
        inst.validate()?;
        if self.class_of_type.len() != inst.call_types.len() {
            return Err(Error::Config(format!(
                "class_of_type has {} entries for {} call types",
                self.class_of_type.len(),
                inst.call_types.len()
            )));
        }
        if let Some(c) = self.class_of_type.iter().find(|&&c| c >= CLASSES) {
            return Err(Error::Config(format!("class {c} out of range")));
        }
        if self.class_theta.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::Config("class weights must be finite and non-negative".into()));
        }
        let geo = inst.geo;
        let t0 = to_secs(self.t0);

        let fleet: Vec<AmbulanceState> = match &self.fleet {
            Some(f) => {
                if f.len() != inst.fleet.len() || f.iter().enumerate().any(|(k, a)| a.id != k) {
                    return Err(Error::Config("fleet states must list every ambulance in id order".into()));
                }
                f.clone()
            }
            None => inst.fleet.iter().map(|s| AmbulanceState::at_base(inst, s, self.t0)).collect(),
        };
        let ready: Vec<(f64, Location)> = fleet
            .iter()
            .map(|a| {
                if self.t0 < a.free_time {
                    (to_secs(a.free_time), a.free_loc)
                } else if a.base_time <= self.t0 {
                    (t0, a.base_loc)
                } else {
                    (t0, geo.interpolate(a.free_loc, a.base_loc, a.free_time, self.t0))
                }
            })
            .collect();

        let travel = |a: Location, b: Location| geo.dist(a, b) * 3600.0 / geo.speed_kmh();
        let capacity: Vec<Option<u32>> =
            inst.hospitals.iter().map(|h| h.capacity.map(|c| c.saturating_sub(h.occupancy))).collect();

        let mut seen = std::collections::HashSet::new();
        let mut calls = Vec::new();
        let mut options = Vec::new();
        let mut compatible = Vec::new();
        for bc in &self.calls {
            let call = &bc.call;
            inst.check_call(call)?;
            if !seen.insert(call.id) {
                return Err(Error::Config(format!("duplicate call id {}", call.id)));
            }
            if call.time > self.t0 {
                return Err(Error::Config(format!("call {} arrives after t0", call.id)));
            }
            let comp = inst.compatible_ambulances(call);
            if comp.is_empty() {
                return Err(Error::NoCompatibleAmbulance(call.id));
            }
            let opts = service_options(inst, bc, full, &travel)?;
            calls.push(call.clone());
            options.push(opts);
            compatible.push(comp);
        }

        check_capacity(&calls, &options, &capacity, full)?;

        let class: Vec<usize> = calls.iter().map(|c| self.class_of_type[c.call_type]).collect();
        let mut class_const = [0.0; CLASSES];
        let offset: Vec<f64> = match self.objective {
            Objective::PerCall => calls.iter().map(|c| to_secs(c.time)).collect(),
            Objective::ClassEarliest => {
                for (c, k) in class_const.iter_mut().enumerate() {
                    let earliest = calls
                        .iter()
                        .zip(&class)
                        .filter(|(_, &cl)| cl == c)
                        .map(|(call, _)| to_secs(call.time))
                        .min_by(f64::total_cmp);
                    if let Some(e) = earliest {
                        *k = -self.class_theta[c] * e;
                    }
                }
                vec![0.0; calls.len()]
            }
        };

        let big_m = match self.big_m {
            Some(m) if m.is_finite() && m > 0.0 => m,
            Some(m) => return Err(Error::Config(format!("big-M must be positive, got {m}"))),
            None => default_big_m(&ready, &calls, &options, inst, &travel),
        };

        Ok(Problem {
            geo,
            full,
            calls,
            class,
            offset,
            options,
            ready,
            compatible,
            theta: self.class_theta,
            class_const,
            capacity,
            big_m,
        })
    }
}

fn service_options(
    inst: &Instance,
    bc: &BatchCall,
    full: bool,
    travel: &impl Fn(Location, Location) -> f64,
) -> Result<Vec<ServiceOption>> {
    let call = &bc.call;
    let id = call.id;
    if let Some(h) = bc.hospital {
        if !call.needs_hospital() || h >= inst.hospitals.len() || !inst.hospitals[h].admits(call.call_type) {
            return Err(Error::Config(format!("call {id}: hospital {h} cannot be used")));
        }
    }
    if let Some(c) = bc.cleaning {
        if !call.needs_cleaning() || c >= inst.cleaning_bases.len() {
            return Err(Error::Config(format!("call {id}: cleaning base {c} cannot be used")));
        }
    }
    let hospitals: Vec<Option<HospitalId>> = if !call.needs_hospital() {
        vec![None]
    } else if full {
        inst.hospitals.iter().filter(|h| h.admits(call.call_type)).map(|h| Some(h.id)).collect()
    } else {
        vec![bc.hospital.or_else(|| inst.closest_hospital(call))]
    };
    if hospitals.is_empty() || hospitals.contains(&None) && call.needs_hospital() {
        return Err(Error::Config(format!("call {id}: no hospital admits its type")));
    }
    let mut out = Vec::new();
    for h in hospitals {
        let h_loc = h.map(|h| inst.hospitals[h].loc);
        let cleanings: Vec<Option<CleaningId>> = if !call.needs_cleaning() {
            vec![None]
        } else if full {
            inst.cleaning_bases.iter().map(|c| Some(c.id)).collect()
        } else {
            vec![bc.cleaning.or_else(|| inst.closest_cleaning(h_loc.unwrap_or(call.loc)))]
        };
        if cleanings.is_empty() || cleanings.contains(&None) && call.needs_cleaning() {
            return Err(Error::Config(format!("call {id}: no cleaning base available")));
        }
        for cb in cleanings {
            let mut delta = to_secs(call.on_scene);
            let mut end = call.loc;
            let mut tau = 0.0;
            if let Some(hl) = h_loc {
                delta += travel(end, hl);
                tau = delta;
                delta += to_secs(call.hospital.unwrap_or(0));
                end = hl;
            }
            if let Some(cb) = cb {
                let cl = inst.cleaning_bases[cb].loc;
                delta += travel(end, cl) + to_secs(call.cleaning.unwrap_or(0));
                end = cl;
            }
            out.push(ServiceOption { hospital: h, cleaning: cb, delta, end, tau });
        }
    }
    Ok(out)
}

fn check_capacity(
    calls: &[Call],
    options: &[Vec<ServiceOption>],
    capacity: &[Option<u32>],
    full: bool,
) -> Result<()> {
    if full {
        let needing = calls.iter().filter(|c| c.needs_hospital()).count() as u64;
        let room: Option<u64> = capacity.iter().try_fold(0u64, |acc, c| c.map(|c| acc + c as u64));
        if room.is_some_and(|r| needing > r) {
            return Err(Error::Infeasible(format!("{needing} patients but {} free beds", room.unwrap_or(0))));
        }
        for (c, opts) in calls.iter().zip(options) {
            if opts.iter().all(|o| o.hospital.is_some_and(|h| capacity[h] == Some(0))) {
                return Err(Error::Infeasible(format!("call {}: every admitting hospital is full", c.id)));
            }
        }
    } else {
        let mut load = vec![0u32; capacity.len()];
        for opts in options {
            if let Some(h) = opts[0].hospital {
                load[h] += 1;
            }
        }
        for (h, (&l, cap)) in load.iter().zip(capacity).enumerate() {
            if cap.is_some_and(|c| l > c) {
                return Err(Error::Infeasible(format!("hospital {h} receives {l} patients beyond its free beds")));
            }
        }
    }
    Ok(())
}

/// Latest ready time, plus every service at its longest, plus one maximal
/// trip per call and one more. No feasible schedule ends later.
fn default_big_m(
    ready: &[(f64, Location)],
    calls: &[Call],
    options: &[Vec<ServiceOption>],
    inst: &Instance,
    travel: &impl Fn(Location, Location) -> f64,
) -> f64 {
    let mut points: Vec<Location> = ready.iter().map(|r| r.1).collect();
    points.extend(calls.iter().map(|c| c.loc));
    points.extend(inst.hospitals.iter().map(|h| h.loc));
    points.extend(inst.cleaning_bases.iter().map(|c| c.loc));
    let mut max_travel: f64 = 0.0;
    for &a in &points {
        for &b in &points {
            max_travel = max_travel.max(travel(a, b));
        }
    }
    let latest = ready.iter().map(|r| r.0).fold(0.0, f64::max);
    let services: f64 = options.iter().map(|o| o.iter().map(|o| o.delta).fold(0.0, f64::max)).sum();
    latest + services + (calls.len() as f64 + 1.0) * max_travel + 1.0
}

impl Problem {
    pub fn travel(&self, a: Location, b: Location) -> f64 {
        self.geo.dist(a, b) * 3600.0 / self.geo.speed_kmh()
    }

    /// Scene arrival times along route `route` of ambulance `k`, given as
    /// (call index, option index) pairs.
    pub fn schedule(&self, k: usize, route: &[(usize, usize)]) -> Vec<f64> {
        let (mut t, mut at) = self.ready[k];
        route
            .iter()
            .map(|&(i, o)| {
                t += self.travel(at, self.calls[i].loc);
                let arrival = t;
                let opt = &self.options[i][o];
                t += opt.delta;
                at = opt.end;
                arrival
            })
            .collect()
    }

    fn score(&self, i: usize, o: usize, arrival: f64) -> f64 {
        arrival + self.options[i][o].tau - self.offset[i]
    }

    fn class_max(&self, routes: &[Vec<(usize, usize)>]) -> [f64; CLASSES] {
        let mut m = [0.0f64; CLASSES];
        for (k, r) in routes.iter().enumerate() {
            for (&(i, o), t) in r.iter().zip(self.schedule(k, r)) {
                let c = self.class[i];
                m[c] = m[c].max(self.score(i, o, t));
            }
        }
        m
    }

    fn weigh(&self, m: &[f64; CLASSES]) -> f64 {
        (0..CLASSES).map(|c| self.theta[c] * m[c] + self.class_const[c]).sum()
    }

    /// Lower bound on a call's score: its best ambulance drives straight
    /// to it.
    fn call_bound(&self, i: usize) -> f64 {
        let tau = self.options[i].iter().map(|o| o.tau).fold(f64::INFINITY, f64::min);
        self.compatible[i]
            .iter()
            .map(|&k| self.ready[k].0 + self.travel(self.ready[k].1, self.calls[i].loc))
            .fold(f64::INFINITY, f64::min)
            + tau
            - self.offset[i]
    }

    /// Builds a solution from per-ambulance routes of (call, option) pairs.
    pub fn solution(&self, routes: &[Vec<(usize, usize)>], optimal: bool, nodes: u64) -> BatchSolution {
        let class_max = self.class_max(routes);
        let routes_out = routes
            .iter()
            .enumerate()
            .map(|(k, r)| {
                r.iter()
                    .zip(self.schedule(k, r))
                    .map(|(&(i, o), arrival)| Visit {
                        index: i,
                        option: o,
                        call: self.calls[i].id,
                        hospital: self.options[i][o].hospital,
                        cleaning: self.options[i][o].cleaning,
                        arrival,
                    })
                    .collect()
            })
            .collect();
        BatchSolution { routes: routes_out, class_max, objective: self.weigh(&class_max), optimal, nodes }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Visit {
    /// Position of the call in the batch.
    pub index: usize,
    pub option: usize,
    pub call: CallId,
    pub hospital: Option<HospitalId>,
    pub cleaning: Option<CleaningId>,
    #[serde(rename = "arrival_s")]
    pub arrival: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchSolution {
    /// Per ambulance, its calls in service order.
    pub routes: Vec<Vec<Visit>>,
    #[serde(rename = "class_max_s")]
    pub class_max: [f64; CLASSES],
    pub objective: f64,
    /// False when the node budget ran out before optimality was proven.
    pub optimal: bool,
    pub nodes: u64,
}

impl BatchSolution {
    fn pairs(&self) -> Vec<Vec<(usize, usize)>> {
        self.routes.iter().map(|r| r.iter().map(|v| (v.index, v.option)).collect()).collect()
    }

    /// Checks that every call is served once by a compatible ambulance
    /// within hospital capacity, and that times and objective are those the
    /// routes imply.
    pub fn verify(&self, p: &Problem) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidDecision(m));
        if self.routes.len() != p.ready.len() {
            return bad("one route per ambulance expected".into());
        }
        let mut served = vec![0; p.calls.len()];
        let mut beds = vec![0u32; p.capacity.len()];
        for (k, r) in self.routes.iter().enumerate() {
            for v in r {
                if v.index >= p.calls.len() || v.option >= p.options[v.index].len() {
                    return bad(format!("unknown stop {v:?}"));
                }
                if !p.compatible[v.index].contains(&k) {
                    return bad(format!("ambulance {k} cannot serve call {}", v.call));
                }
                served[v.index] += 1;
                if let Some(h) = p.options[v.index][v.option].hospital {
                    beds[h] += 1;
                }
            }
        }
        if let Some(i) = served.iter().position(|&s| s != 1) {
            return bad(format!("call {} served {} times", p.calls[i].id, served[i]));
        }
        if let Some(h) = (0..beds.len()).find(|&h| p.capacity[h].is_some_and(|c| beds[h] > c)) {
            return bad(format!("hospital {h} over capacity"));
        }
        let again = p.solution(&self.pairs(), self.optimal, self.nodes);
        if again.routes != self.routes || again.objective != self.objective {
            return bad("times or objective differ from the routes".into());
        }
        Ok(())
    }

    /// Variable values of `model` realising this solution.
    pub fn values(&self, p: &Problem, model: &LinearModel) -> Vec<f64> {
        let mut v = vec![0.0; model.vars.len()];
        let mut set = |name: String, val: f64| {
            if let Some(ix) = model.var(&name) {
                v[ix] = val;
            }
        };
        for (k, r) in self.routes.iter().enumerate() {
            if let (Some(f), Some(l)) = (r.first(), r.last()) {
                set(format!("x_{}_{k}", f.index), 1.0);
                set(format!("z_{}_{k}", l.index), 1.0);
            }
            for w in r.windows(2) {
                set(format!("s_{}_{}_{k}", w[0].index, w[1].index), 1.0);
            }
            for s in r {
                set(format!("t_{}", s.index), s.arrival);
                if let Some(y) = y_name(p, s.index, s.option) {
                    set(y, 1.0);
                }
            }
        }
        for c in 0..CLASSES {
            set(format!("M_{}", c + 1), self.class_max[c]);
        }
        set(ONE.into(), 1.0);
        v
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SolveOptions {
    pub node_limit: u64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { node_limit: 20_000_000 }
    }
}

struct Search<'a> {
    p: &'a Problem,
    order: Vec<usize>,
    /// Per depth, the largest call bound of each class among calls not yet
    /// placed.
    suffix: Vec<[f64; CLASSES]>,
    routes: Vec<Vec<(usize, usize)>>,
    beds: Vec<u32>,
    best: Option<(f64, Vec<Vec<(usize, usize)>>)>,
    nodes: u64,
    limit: u64,
    exhausted: bool,
}

impl Search<'_> {
    fn bound(&self, depth: usize) -> f64 {
        let mut m = self.p.class_max(&self.routes);
        for (c, mc) in m.iter_mut().enumerate() {
            *mc = mc.max(self.suffix[depth][c]);
        }
        self.p.weigh(&m)
    }

    fn beaten(&self, bound: f64) -> bool {
        self.best.as_ref().is_some_and(|(v, _)| bound >= v - 1e-9 * v.abs().max(1.0))
    }

    fn dfs(&mut self, depth: usize) {
        if self.nodes >= self.limit {
            self.exhausted = true;
            return;
        }
        self.nodes += 1;
        let p = self.p;
        if depth == self.order.len() {
            let value = self.bound(depth);
            if !self.beaten(value) {
                self.best = Some((value, self.routes.clone()));
            }
            return;
        }
        let i = self.order[depth];
        let mut children = Vec::new();
        for &k in &p.compatible[i] {
            for pos in 0..=self.routes[k].len() {
                for (o, opt) in p.options[i].iter().enumerate() {
                    if let Some(h) = opt.hospital {
                        if p.capacity[h].is_some_and(|c| self.beds[h] >= c) {
                            continue;
                        }
                    }
                    self.routes[k].insert(pos, (i, o));
                    let b = self.bound(depth + 1);
                    self.routes[k].remove(pos);
                    children.push((b, k, pos, o));
                }
            }
        }
        children.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (b, k, pos, o) in children {
            if self.beaten(b) {
                break;
            }
            let h = p.options[i][o].hospital;
            self.routes[k].insert(pos, (i, o));
            if let Some(h) = h {
                self.beds[h] += 1;
            }
            self.dfs(depth + 1);
            self.routes[k].remove(pos);
            if let Some(h) = h {
                self.beds[h] -= 1;
            }
            if self.exhausted {
                return;
            }
        }
    }
}

/// Branch-and-bound over call-to-ambulance insertions. Calls with the
/// fewest compatible ambulances are placed first; each is tried at every
/// position of every compatible route with every service option.
pub fn solve_exact(p: &Problem, opts: SolveOptions) -> Result<BatchSolution> {
    let n = p.calls.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (p.compatible[i].len(), i));
    let mut suffix = vec![[0.0f64; CLASSES]; n + 1];
    for d in (0..n).rev() {
        let i = order[d];
        suffix[d] = suffix[d + 1];
        let c = p.class[i];
        suffix[d][c] = suffix[d][c].max(p.call_bound(i));
    }
    let mut s = Search {
        p,
        order,
        suffix,
        routes: vec![Vec::new(); p.ready.len()],
        beds: vec![0; p.capacity.len()],
        best: None,
        nodes: 0,
        limit: opts.node_limit.max(1),
        exhausted: false,
    };
    s.dfs(0);
    let (_, routes) = s.best.ok_or_else(|| {
        Error::Infeasible(if s.exhausted {
            "node budget exhausted before any complete allocation".into()
        } else {
            "no allocation respects hospital capacities".into()
        })
    })?;
    Ok(p.solution(&routes, !s.exhausted, s.nodes))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarKind {
    Binary,
    Continuous,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Var {
    pub name: String,
    pub kind: VarKind,
    pub lower: f64,
    pub upper: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Constraint {
    pub name: String,
    pub terms: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

/// A mixed-integer linear program, minimised.
#[derive(Clone, Debug, Default)]
pub struct LinearModel {
    pub vars: Vec<Var>,
    pub constraints: Vec<Constraint>,
    pub objective: Vec<(usize, f64)>,
    index: HashMap<String, usize>,
}

/// Variable fixed to 1 that carries the objective constant.
const ONE: &str = "one";

impl LinearModel {
    fn add_var(&mut self, name: String, kind: VarKind, lower: f64, upper: Option<f64>) -> usize {
        let ix = self.vars.len();
        self.index.insert(name.clone(), ix);
        self.vars.push(Var { name, kind, lower, upper });
        ix
    }

    fn add(&mut self, name: String, terms: Vec<(usize, f64)>, sense: Sense, rhs: f64) {
        self.constraints.push(Constraint { name, terms, sense, rhs });
    }

    pub fn var(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn count(&self, kind: VarKind) -> usize {
        self.vars.iter().filter(|v| v.kind == kind).count()
    }

    pub fn constraint(&self, name: &str) -> Option<&Constraint> {
        self.constraints.iter().find(|c| c.name == name)
    }

    pub fn objective_value(&self, values: &[f64]) -> f64 {
        self.objective.iter().map(|&(v, c)| c * values[v]).sum()
    }

    /// Largest violation of any bound, integrality requirement or
    /// constraint; zero when `values` is feasible.
    pub fn max_violation(&self, values: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (v, &x) in self.vars.iter().zip(values) {
            worst = worst.max(v.lower - x);
            if let Some(u) = v.upper {
                worst = worst.max(x - u);
            }
            if v.kind == VarKind::Binary {
                worst = worst.max((x - x.round()).abs()).max(x - 1.0);
            }
        }
        for c in &self.constraints {
            let lhs: f64 = c.terms.iter().map(|&(v, a)| a * values[v]).sum();
            let gap = match c.sense {
                Sense::Le => lhs - c.rhs,
                Sense::Ge => c.rhs - lhs,
                Sense::Eq => (lhs - c.rhs).abs(),
            };
            worst = worst.max(gap);
        }
        worst
    }

    /// CPLEX LP text.
    pub fn to_lp(&self) -> String {
        let mut out = String::from("\\ ambulance queue allocation\nMinimize\n obj:");
        write_terms(&mut out, self, &self.objective);
        out.push_str("\nSubject To\n");
        for c in &self.constraints {
            let _ = write!(out, " {}:", c.name);
            write_terms(&mut out, self, &c.terms);
            let op = match c.sense {
                Sense::Le => "<=",
                Sense::Ge => ">=",
                Sense::Eq => "=",
            };
            let _ = writeln!(out, " {op} {}", c.rhs);
        }
        out.push_str("Bounds\n");
        for v in self.vars.iter().filter(|v| v.kind == VarKind::Continuous) {
            match v.upper {
                Some(u) if u == v.lower => {
                    let _ = writeln!(out, " {} = {u}", v.name);
                }
                Some(u) => {
                    let _ = writeln!(out, " {} <= {} <= {u}", v.lower, v.name);
                }
                None => {
                    let _ = writeln!(out, " {} >= {}", v.name, v.lower);
                }
            }
        }
        let bins: Vec<&str> =
            self.vars.iter().filter(|v| v.kind == VarKind::Binary).map(|v| v.name.as_str()).collect();
        if !bins.is_empty() {
            out.push_str("Binaries\n");
            for chunk in bins.chunks(8) {
                let _ = writeln!(out, " {}", chunk.join(" "));
            }
        }
        out.push_str("End\n");
        out
    }
}

fn write_terms(out: &mut String, m: &LinearModel, terms: &[(usize, f64)]) {
    if terms.is_empty() {
        out.push_str(" 0");
        return;
    }
    for (n, &(v, c)) in terms.iter().enumerate() {
        if n > 0 && n % 8 == 0 {
            out.push_str("\n  ");
        }
        let sign = if c < 0.0 { "-" } else { "+" };
        let name = &m.vars[v].name;
        let a = c.abs();
        let lead = if n == 0 && sign == "+" { String::new() } else { format!(" {sign}") };
        if a == 1.0 {
            let _ = write!(out, "{lead} {name}");
        } else {
            let _ = write!(out, "{lead} {a} {name}");
        }
    }
}

/// Name of the facility-choice variable for option `o` of call `i`, if
/// the call has one.
fn y_name(p: &Problem, i: usize, o: usize) -> Option<String> {
    if !p.full {
        return None;
    }
    let opt = &p.options[i][o];
    match (opt.hospital, opt.cleaning) {
        (Some(h), Some(c)) => Some(format!("y_{i}_{h}_{c}")),
        (Some(h), None) => Some(format!("yh_{i}_{h}")),
        (None, Some(c)) => Some(format!("yc_{i}_{c}")),
        (None, None) => None,
    }
}

/// Model with facility choice as decision variables.
pub fn build_full_model(b: &BatchInstance) -> Result<(Problem, LinearModel)> {
    let p = b.problem(true)?;
    let m = build_model(&p);
    Ok((p, m))
}

/// Model with facilities fixed in advance, so each call keeps the
/// ambulance for a known duration and ends at a known place.
pub fn build_simplified_model(b: &BatchInstance) -> Result<(Problem, LinearModel)> {
    let p = b.problem(false)?;
    let m = build_model(&p);
    Ok((p, m))
}

pub fn build_model(p: &Problem) -> LinearModel {
    use Sense::*;
    use VarKind::*;
    let n = p.calls.len();
    let na = p.ready.len();
    let big = p.big_m;
    let mut m = LinearModel::default();

    let mut x = vec![vec![None; na]; n];
    let mut z = vec![vec![None; na]; n];
    for i in 0..n {
        for &k in &p.compatible[i] {
            x[i][k] = Some(m.add_var(format!("x_{i}_{k}"), Binary, 0.0, Some(1.0)));
            z[i][k] = Some(m.add_var(format!("z_{i}_{k}"), Binary, 0.0, Some(1.0)));
        }
    }
    let mut s: HashMap<(usize, usize, usize), usize> = HashMap::new();
    let mut succ: Vec<Vec<Vec<(usize, usize)>>> = vec![vec![Vec::new(); n]; n];
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i) {
            for &k in p.compatible[i].iter().filter(|k| p.compatible[j].contains(k)) {
                let v = m.add_var(format!("s_{i}_{j}_{k}"), Binary, 0.0, Some(1.0));
                s.insert((i, j, k), v);
                succ[i][j].push((k, v));
            }
        }
    }
    let y: Vec<Vec<Option<usize>>> = (0..n)
        .map(|i| {
            (0..p.options[i].len())
                .map(|o| y_name(p, i, o).map(|name| m.add_var(name, Binary, 0.0, Some(1.0))))
                .collect()
        })
        .collect();
    let t: Vec<usize> = (0..n).map(|i| m.add_var(format!("t_{i}"), Continuous, 0.0, None)).collect();
    let mc: Vec<usize> = (0..CLASSES).map(|c| m.add_var(format!("M_{}", c + 1), Continuous, 0.0, None)).collect();

    m.objective = (0..CLASSES).map(|c| (mc[c], p.theta[c])).collect();
    let constant: f64 = p.class_const.iter().sum();
    if constant != 0.0 {
        let one = m.add_var(ONE.into(), Continuous, 1.0, Some(1.0));
        m.objective.push((one, constant));
    }

    for k in 0..na {
        let terms: Vec<(usize, f64)> = (0..n).filter_map(|i| x[i][k]).map(|v| (v, 1.0)).collect();
        if !terms.is_empty() {
            m.add(format!("first_{k}"), terms, Le, 1.0);
        }
    }
    for i in 0..n {
        let mut terms: Vec<(usize, f64)> = x[i].iter().flatten().map(|&v| (v, 1.0)).collect();
        terms.extend((0..n).flat_map(|j| succ[j][i].iter().map(|&(_, v)| (v, 1.0))));
        m.add(format!("serve_{i}"), terms, Eq, 1.0);
    }
    for i in 0..n {
        for &k in &p.compatible[i] {
            let mut terms = vec![(x[i][k].unwrap(), 1.0), (z[i][k].unwrap(), -1.0)];
            for j in 0..n {
                if let Some(&v) = s.get(&(j, i, k)) {
                    terms.push((v, 1.0));
                }
                if let Some(&v) = s.get(&(i, j, k)) {
                    terms.push((v, -1.0));
                }
            }
            m.add(format!("flow_{i}_{k}"), terms, Eq, 0.0);
        }
    }
    for i in 0..n {
        let terms: Vec<(usize, f64)> = y[i].iter().flatten().map(|&v| (v, 1.0)).collect();
        if !terms.is_empty() {
            m.add(format!("facility_{i}"), terms, Eq, 1.0);
        }
    }
    if p.full {
        for (h, cap) in p.capacity.iter().enumerate() {
            let Some(cap) = *cap else { continue };
            let terms: Vec<(usize, f64)> = (0..n)
                .flat_map(|i| {
                    p.options[i]
                        .iter()
                        .zip(&y[i])
                        .filter(move |(o, _)| o.hospital == Some(h))
                        .filter_map(|(_, v)| v.map(|v| (v, 1.0)))
                })
                .collect();
            if !terms.is_empty() {
                m.add(format!("capacity_{h}"), terms, Le, cap as f64);
            }
        }
    }
    for i in 0..n {
        for &k in &p.compatible[i] {
            let (ready, at) = p.ready[k];
            let rhs = big - ready - p.travel(at, p.calls[i].loc);
            m.add(format!("start_{i}_{k}"), vec![(x[i][k].unwrap(), big), (t[i], -1.0)], Le, rhs);
        }
    }
    for i in 0..n {
        let on_scene = to_secs(p.calls[i].on_scene);
        for j in 0..n {
            if succ[i][j].is_empty() {
                continue;
            }
            let mut terms = vec![(t[i], 1.0), (t[j], -1.0)];
            terms.extend(succ[i][j].iter().map(|&(_, v)| (v, big)));
            let mut rhs = big - on_scene;
            for (o, opt) in p.options[i].iter().enumerate() {
                let legs = opt.delta - on_scene + p.travel(opt.end, p.calls[j].loc);
                match y[i][o] {
                    Some(v) => terms.push((v, legs)),
                    None => rhs -= legs,
                }
            }
            m.add(format!("succ_{i}_{j}"), terms, Le, rhs);
        }
    }
    for i in 0..n {
        let call = &p.calls[i];
        let mut terms = vec![(mc[p.class[i]], 1.0), (t[i], -1.0)];
        let mut rhs = -p.offset[i];
        if call.needs_hospital() {
            rhs += to_secs(call.on_scene);
            for (o, opt) in p.options[i].iter().enumerate() {
                let leg = opt.tau - to_secs(call.on_scene);
                match y[i][o] {
                    Some(v) => terms.push((v, -leg)),
                    None => rhs += leg,
                }
            }
        }
        m.add(format!("class_{i}"), terms, Ge, rhs);
    }
    m
}
