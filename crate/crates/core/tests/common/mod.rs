//! Test-only oracles and generators shared by the integration suites.
#![allow(dead_code)]

use std::collections::HashMap;

use ambopt_core::batch_opt::{BatchCall, BatchInstance, Objective};
use ambopt_core::geo::{GeoMode, Location};
use ambopt_core::model::{
    AmbulanceSpec, AmbulanceType, Base, Call, CallType, CleaningBase, Hospital, Instance, QualityMatrix,
};
use ambopt_core::heuristics::{Bm, PolicyKind};
use ambopt_core::model::{response_time_if_assigned, TripKind};
use ambopt_core::reassign::BaseRule;
use ambopt_core::simulator::{check_trip_chain, run, Decision, Env, Event, Policy, RunOptions, SimOutput, Step, WorldState};
use rand::Rng;

const KMH: f64 = 60.0;

fn travel(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1) * 3600.0 / KMH
}

#[derive(Clone, Debug)]
pub struct Opt {
    pub delta: f64,
    pub end: (f64, f64),
    pub tau: f64,
}

#[derive(Clone, Debug)]
pub struct RawCall {
    pub t_c: f64,
    pub loc: (f64, f64),
    pub class: usize,
    pub compat: Vec<usize>,
    pub options: Vec<Opt>,
}

/// A batch recomputed from raw instance data, for planar 60 km/h instances
/// whose ambulances idle at their bases.
#[derive(Clone, Debug)]
pub struct Raw {
    pub t0: f64,
    pub ready: Vec<(f64, f64)>,
    pub calls: Vec<RawCall>,
    pub theta: [f64; 3],
}

pub fn raw(b: &BatchInstance, full: bool) -> Raw {
    assert!(b.fleet.is_none() && b.objective == Objective::PerCall);
    let inst = &b.instance;
    let xy = |l: Location| (l.x, l.y);
    let t0 = b.t0 as f64 / 1000.0;
    let ready = inst.fleet.iter().map(|s| xy(inst.bases[s.base].loc)).collect();
    let calls = b
        .calls
        .iter()
        .map(|bc| {
            let c = &bc.call;
            let loc = xy(c.loc);
            let compat = inst
                .fleet
                .iter()
                .filter(|s| inst.quality.0[s.amb_type][c.call_type].is_some())
                .map(|s| s.id)
                .collect();
            let nearest = |pts: Vec<(usize, (f64, f64))>, from: (f64, f64)| {
                pts.into_iter()
                    .min_by(|a, b| travel(from, a.1).total_cmp(&travel(from, b.1)))
                    .map(|p| p.0)
                    .unwrap()
            };
            let hs: Vec<(usize, (f64, f64))> = inst.hospitals.iter().map(|h| (h.id, xy(h.loc))).collect();
            let cbs: Vec<(usize, (f64, f64))> = inst.cleaning_bases.iter().map(|c| (c.id, xy(c.loc))).collect();
            let h_choices: Vec<Option<usize>> = match c.hospital {
                None => vec![None],
                Some(_) if full => hs.iter().map(|h| Some(h.0)).collect(),
                Some(_) => vec![Some(bc.hospital.unwrap_or_else(|| nearest(hs.clone(), loc)))],
            };
            let scene = c.on_scene as f64 / 1000.0;
            let mut options = Vec::new();
            for h in h_choices {
                let hloc = h.map(|h| hs[h].1);
                let cb_choices: Vec<Option<usize>> = match c.cleaning {
                    None => vec![None],
                    Some(_) if full => cbs.iter().map(|c| Some(c.0)).collect(),
                    Some(_) => vec![Some(bc.cleaning.unwrap_or_else(|| nearest(cbs.clone(), hloc.unwrap_or(loc))))],
                };
                for cb in cb_choices {
                    let mut delta = scene;
                    let mut end = loc;
                    let mut tau = 0.0;
                    if let Some(hl) = hloc {
                        delta += travel(end, hl);
                        tau = delta;
                        delta += c.hospital.unwrap() as f64 / 1000.0;
                        end = hl;
                    }
                    if let Some(cb) = cb {
                        delta += travel(end, cbs[cb].1) + c.cleaning.unwrap() as f64 / 1000.0;
                        end = cbs[cb].1;
                    }
                    options.push(Opt { delta, end, tau });
                }
            }
            RawCall { t_c: c.time as f64 / 1000.0, loc, class: b.class_of_type[c.call_type], compat, options }
        })
        .collect();
    Raw { t0, ready, calls, theta: b.class_theta }
}

fn route_scores(r: &Raw, k: usize, route: &[(usize, usize)], m: &mut [f64; 3]) {
    let mut t = r.t0;
    let mut at = r.ready[k];
    for &(i, o) in route {
        let c = &r.calls[i];
        t += travel(at, c.loc);
        let opt = &c.options[o];
        m[c.class] = m[c.class].max(t + opt.tau - c.t_c);
        t += opt.delta;
        at = opt.end;
    }
}

fn permutations(items: &mut Vec<(usize, usize)>, k: usize, f: &mut impl FnMut(&[(usize, usize)])) {
    if k == items.len() {
        f(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permutations(items, k + 1, f);
        items.swap(k, i);
    }
}

/// Minimum objective over every (ambulance, option) per call and every
/// service order per ambulance.
pub fn brute_force(r: &Raw) -> f64 {
    let na = r.ready.len();
    let mut best = f64::INFINITY;
    let mut choice = vec![(0usize, 0usize); r.calls.len()];
    fn assign(r: &Raw, i: usize, choice: &mut Vec<(usize, usize)>, na: usize, best: &mut f64) {
        if i == r.calls.len() {
            let mut routes: Vec<Vec<(usize, usize)>> = vec![Vec::new(); na];
            for (c, &(k, o)) in choice.iter().enumerate() {
                routes[k].push((c, o));
            }
            let mut fronts: Vec<Vec<[f64; 3]>> = Vec::new();
            for (k, route) in routes.iter_mut().enumerate() {
                let mut all = Vec::new();
                permutations(route, 0, &mut |p| {
                    let mut m = [0.0; 3];
                    route_scores(r, k, p, &mut m);
                    all.push(m);
                });
                fronts.push(all);
            }
            let mut acc = vec![[0.0f64; 3]];
            for f in fronts {
                let mut next = Vec::with_capacity(acc.len() * f.len());
                for a in &acc {
                    for b in &f {
                        next.push([a[0].max(b[0]), a[1].max(b[1]), a[2].max(b[2])]);
                    }
                }
                acc = next;
            }
            for m in acc {
                let v: f64 = (0..3).map(|c| r.theta[c] * m[c]).sum();
                if v < *best {
                    *best = v;
                }
            }
            return;
        }
        for &k in &r.calls[i].compat {
            for o in 0..r.calls[i].options.len() {
                choice[i] = (k, o);
                assign(r, i + 1, choice, na, best);
            }
        }
    }
    assign(r, 0, &mut choice, na, &mut best);
    best
}

fn dominated(a: &[f64; 4], b: &[f64; 4]) -> bool {
    (0..4).all(|i| b[i] <= a[i])
}

fn push_pareto(front: &mut Vec<[f64; 4]>, x: [f64; 4]) {
    if front.iter().any(|f| dominated(&x, f)) {
        return;
    }
    front.retain(|f| !dominated(f, &x));
    front.push(x);
}

/// Exact optimum by dynamic programming: per ambulance, Pareto fronts of
/// (free time, class maxima) over served subsets; then subsets are split
/// among ambulances.
pub fn pareto_dp(r: &Raw) -> f64 {
    let n = r.calls.len();
    let full = (1usize << n) - 1;
    let mut per_amb: Vec<HashMap<usize, Vec<[f64; 3]>>> = Vec::new();
    for k in 0..r.ready.len() {
        // (mask, last call, option) -> front of [free time, m0, m1, m2]
        let mut states: HashMap<(usize, usize, usize), Vec<[f64; 4]>> = HashMap::new();
        let mut by_mask: HashMap<usize, Vec<[f64; 3]>> = HashMap::new();
        by_mask.insert(0, vec![[0.0; 3]]);
        let extend = |t: f64, at: (f64, f64), m: [f64; 3], j: usize, o: usize| {
            let c = &r.calls[j];
            let arrival = t + travel(at, c.loc);
            let opt = &c.options[o];
            let mut m2 = m;
            m2[c.class] = m2[c.class].max(arrival + opt.tau - c.t_c);
            [arrival + opt.delta, m2[0], m2[1], m2[2]]
        };
        for j in (0..n).filter(|&j| r.calls[j].compat.contains(&k)) {
            for o in 0..r.calls[j].options.len() {
                let x = extend(r.t0, r.ready[k], [0.0; 3], j, o);
                push_pareto(states.entry((1 << j, j, o)).or_default(), x);
            }
        }
        let mut masks: Vec<usize> = (1..=full).collect();
        masks.sort_by_key(|m| m.count_ones());
        for mask in masks {
            for last in 0..n {
                for lo in 0..r.calls[last].options.len() {
                    let Some(front) = states.get(&(mask, last, lo)).cloned() else { continue };
                    let end = r.calls[last].options[lo].end;
                    for f in &front {
                        let e = by_mask.entry(mask).or_default();
                        let m = [f[1], f[2], f[3]];
                        if !e.iter().any(|x| (0..3).all(|i| x[i] <= m[i])) {
                            e.retain(|x| !(0..3).all(|i| m[i] <= x[i]));
                            e.push(m);
                        }
                        for j in (0..n).filter(|&j| mask & (1 << j) == 0 && r.calls[j].compat.contains(&k)) {
                            for o in 0..r.calls[j].options.len() {
                                let x = extend(f[0], end, m, j, o);
                                push_pareto(states.entry((mask | 1 << j, j, o)).or_default(), x);
                            }
                        }
                    }
                }
            }
        }
        per_amb.push(by_mask);
    }
    let merge = |front: &mut Vec<[f64; 3]>, m: [f64; 3]| {
        if front.iter().any(|x| (0..3).all(|i| x[i] <= m[i])) {
            return;
        }
        front.retain(|x| !(0..3).all(|i| m[i] <= x[i]));
        front.push(m);
    };
    let mut g: HashMap<usize, Vec<[f64; 3]>> = per_amb[0].clone();
    for amb in &per_amb[1..] {
        let mut next: HashMap<usize, Vec<[f64; 3]>> = HashMap::new();
        for (&s, fs) in &g {
            for (&t, ft) in amb {
                if s & t != 0 {
                    continue;
                }
                let e = next.entry(s | t).or_default();
                for a in fs {
                    for b in ft {
                        merge(e, [a[0].max(b[0]), a[1].max(b[1]), a[2].max(b[2])]);
                    }
                }
            }
        }
        g = next;
    }
    g[&full]
        .iter()
        .map(|m| (0..3).map(|c| r.theta[c] * m[c]).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
}

/// Planar 60 km/h batch on a 10 km square with `n` calls, all waiting at
/// t0, and `na` ambulances of up to three types.
pub fn random_batch<R: Rng>(rng: &mut R, n: usize, na: usize) -> BatchInstance {
    let pt = |rng: &mut R| Location::new(rng.random_range(0.0..10.0), rng.random_range(0.0..10.0));
    let any = Some(0.0);
    let instance = Instance {
        geo: GeoMode::planar(60.0).unwrap(),
        call_types: (0..3).map(|id| CallType { id, theta: 1.0, label: String::new() }).collect(),
        ambulance_types: (0..3).map(|id| AmbulanceType { id, rank: id as u32, label: String::new() }).collect(),
        quality: QualityMatrix(vec![vec![None, None, any], vec![None, any, any], vec![any, any, any]]),
        bases: (0..na).map(|id| Base { id, loc: pt(rng) }).collect(),
        hospitals: (0..2)
            .map(|id| Hospital { id, loc: pt(rng), capacity: None, occupancy: 0, admits: None })
            .collect(),
        cleaning_bases: vec![CleaningBase { id: 0, loc: pt(rng) }],
        // The first ambulance is advanced so every call can be served.
        fleet: (0..na)
            .map(|id| AmbulanceSpec { id, amb_type: if id == 0 { 2 } else { rng.random_range(0..3) }, base: id })
            .collect(),
    };
    let t0 = 3_600_000;
    let calls = (0..n)
        .map(|id| {
            let minutes = |rng: &mut R| rng.random_range(1..20) as i64 * 60_000;
            BatchCall {
                call: Call {
                    id,
                    time: rng.random_range(0..=t0),
                    loc: pt(rng),
                    call_type: rng.random_range(0..3),
                    on_scene: minutes(rng),
                    hospital: rng.random_bool(0.6).then(|| minutes(rng)),
                    cleaning: rng.random_bool(0.4).then(|| minutes(rng)),
                    restricted_to: None,
                },
                hospital: None,
                cleaning: None,
            }
        })
        .collect();
    BatchInstance {
        instance,
        t0,
        fleet: None,
        calls,
        class_of_type: vec![0, 1, 2],
        class_theta: [4.0, 2.0, 1.0],
        objective: Objective::PerCall,
        big_m: None,
    }
}

/// Optimum of the ten-call batch, computed once with [`pareto_dp`] and
/// frozen. An external MILP solver stopped at its time limit with the
/// same incumbent.
pub const TEN_CALL_OPTIMUM: f64 = 215535.9762295774;

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

/// Two crew types over four priorities on a 20 km square: ALS (type 0,
/// rank 1) serves everything, BLS (type 1, rank 0) is barred from
/// priority 1 when `strict`. One ambulance per base.
pub fn random_instance<R: Rng>(rng: &mut R, na: usize, strict: bool) -> Instance {
    let pt = |rng: &mut R| Location::new(rng.random_range(0.0..20.0), rng.random_range(0.0..20.0));
    let bls_p1 = if strict { None } else { Some(6000.0) };
    Instance {
        geo: GeoMode::planar(60.0).unwrap(),
        call_types: [4.0, 1.0, 4.0, 1.0]
            .iter()
            .enumerate()
            .map(|(id, &theta)| CallType { id, theta, label: String::new() })
            .collect(),
        ambulance_types: vec![
            AmbulanceType { id: 0, rank: 1, label: "ALS".into() },
            AmbulanceType { id: 1, rank: 0, label: "BLS".into() },
        ],
        quality: QualityMatrix(vec![
            vec![Some(0.0), Some(0.0), Some(1500.0), Some(1500.0)],
            vec![bls_p1, Some(6000.0), Some(0.0), Some(0.0)],
        ]),
        bases: (0..na).map(|id| Base { id, loc: pt(rng) }).collect(),
        hospitals: (0..2)
            .map(|id| Hospital { id, loc: pt(rng), capacity: None, occupancy: 0, admits: None })
            .collect(),
        cleaning_bases: vec![CleaningBase { id: 0, loc: pt(rng) }],
        fleet: (0..na)
            .map(|id| AmbulanceSpec { id, amb_type: if id == 0 { 0 } else { rng.random_range(0..2) }, base: id })
            .collect(),
    }
}

/// `n` calls over `[0, span_s]` seconds, chronological, located in the
/// 20 km square.
pub fn random_calls<R: Rng>(rng: &mut R, n: usize, span_s: i64) -> Vec<Call> {
    let minutes = |rng: &mut R| rng.random_range(1..30) as i64 * 60_000;
    let mut calls: Vec<Call> = (0..n)
        .map(|_| Call {
            id: 0,
            time: rng.random_range(0..=span_s * 1000),
            loc: Location::new(rng.random_range(0.0..20.0), rng.random_range(0.0..20.0)),
            call_type: rng.random_range(0..4),
            on_scene: minutes(rng),
            hospital: rng.random_bool(0.5).then(|| minutes(rng)),
            cleaning: rng.random_bool(0.3).then(|| minutes(rng)),
            restricted_to: None,
        })
        .collect();
    calls.sort_by_key(|c| c.time);
    for (id, c) in calls.iter_mut().enumerate() {
        c.id = id;
    }
    calls
}

/// Calls so far apart that every ambulance is back at its base before the
/// next one: gaps of at least six hours, while a full service in the
/// 20 km square (three legs under 29 min, three stays under 30 min)
/// stays below four hours.
pub fn sparse_calls<R: Rng>(rng: &mut R, n: usize) -> Vec<Call> {
    let mut calls = random_calls(rng, n, 0);
    let mut t = 0;
    for c in &mut calls {
        t += rng.random_range(6 * 3600..8 * 3600) * 1000;
        c.time = t;
    }
    calls
}

/// Idle crews at their home bases at `t`.
pub fn idle_fleet(inst: &Instance, t: i64) -> Vec<ambopt_core::model::AmbulanceState> {
    inst.fleet.iter().map(|s| ambopt_core::model::AmbulanceState::at_base(inst, s, t)).collect()
}

/// Wraps BM and checks each of its choices against every compatible crew.
pub struct CheckedBm {
    pub decisions: usize,
}

impl Policy for CheckedBm {
    fn name(&self) -> &'static str {
        "checked-bm"
    }

    fn forecasts_busy(&self) -> bool {
        true
    }

    fn on_event(&mut self, event: Event, step: &mut Step<'_>) -> ambopt_core::Result<()> {
        let before = step.state().clone();
        let inst = step.env.inst;
        let now = step.now;
        Bm.on_event(event, step)?;
        for a in step.applied() {
            let Decision::Dispatch { ambulance: chosen, call: id, .. } = a.decision else { continue };
            let c = before.queued(id).unwrap();
            let cost = |k: usize| {
                let t = response_time_if_assigned(&before.fleet[k], c, now, &inst.geo);
                inst.cost_allocation(inst.fleet[k].amb_type, c.call_type, t).unwrap()
            };
            let mine = cost(chosen);
            for k in inst.compatible_ambulances(c) {
                let other = cost(k);
                assert!(other >= mine, "ambulance {k} costs {other} < {mine}");
                if other == mine {
                    assert!(inst.rank(k) >= inst.rank(chosen));
                }
            }
            self.decisions += 1;
        }
        Ok(())
    }
}

pub fn sparse_instance<R: rand::Rng>(rng: &mut R, na: usize) -> Instance {
    let mut inst = random_instance(rng, na, true);
    // Quality penalties off, so the cheapest crew is the nearest one.
    for row in &mut inst.quality.0 {
        for m in row.iter_mut().flatten() {
            *m = 0.0;
        }
    }
    inst
}

/// Crews return to their own, distinct, bases so that no two are ever
/// equally close to a call.
pub fn assignments(inst: &Instance, calls: &[Call], kind: PolicyKind) -> Vec<(usize, usize)> {
    let env = Env { inst, rule: &BaseRule::Home };
    let mut p = kind.build();
    let out = run(env, WorldState::initial(inst, 0), calls, p.as_mut(), &RunOptions::default()).unwrap();
    let mut v: Vec<(usize, usize)> = out.records.iter().map(|r| (r.call, r.ambulance)).collect();
    v.sort_unstable();
    v
}

/// Checks shared by the conservation property and the acceptance suite.
pub fn check_run(inst: &Instance, calls: &[Call], out: &SimOutput) {
    let mut served: Vec<usize> = out.records.iter().map(|r| r.call).collect();
    served.sort_unstable();
    assert_eq!(served, (0..calls.len()).collect::<Vec<_>>());
    check_trip_chain(&out.trips).unwrap();
    for r in &out.records {
        let c = &calls[r.call];
        assert!(r.waiting_on_scene >= 0);
        let theta = inst.call_types[c.call_type].theta;
        assert_eq!(r.penalized_wait, theta * r.waiting_on_scene as f64 / 1000.0);
        let m = inst.quality.0[inst.fleet[r.ambulance].amb_type][c.call_type].unwrap();
        assert!((r.allocation_cost - (r.penalized_wait + m)).abs() <= 1e-9 * r.allocation_cost.max(1.0));
    }
    let scenes = out.trips.iter().filter(|t| t.kind == TripKind::ToScene).count();
    assert_eq!(scenes, calls.len());
}
