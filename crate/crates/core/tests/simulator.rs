mod common;

use ambopt_core::geo::{GeoMode, Location};
use ambopt_core::heuristics::{Ca, PolicyKind};
use ambopt_core::model::{trip_sequence, Call, TripKind};
use ambopt_core::reassign::BaseRule;
use ambopt_core::scenario::replication_rng;
use ambopt_core::simulator::{
    apply_decision, check_trip_chain, plan_service, run, summarize, write_trips_jsonl, Decision, Env, Event,
    Policy, RunOptions, SimOutput, Step, WorldState,
};
use ambopt_core::synthetic::als_bls_instance;
use ambopt_core::Error;
use common::{check_run, random_calls, random_instance};
use proptest::prelude::*;

fn with_trips() -> RunOptions {
    RunOptions { horizon: None, record_trips: true }
}

fn simulate(inst: &ambopt_core::model::Instance, calls: &[Call], kind: PolicyKind, rule: &BaseRule) -> SimOutput {
    let env = Env { inst, rule };
    let mut p = kind.build();
    run(env, WorldState::initial(inst, 0), calls, p.as_mut(), &with_trips()).unwrap()
}

fn call_at(id: usize, t_s: i64, x: f64, y: f64, call_type: usize) -> Call {
    Call {
        id,
        time: t_s * 1000,
        loc: Location::new(x, y),
        call_type,
        on_scene: 600_000,
        hospital: None,
        cleaning: None,
        restricted_to: None,
    }
}

#[test]
fn empty_call_list_moves_nothing() {
    let inst = als_bls_instance();
    let out = simulate(&inst, &[], PolicyKind::Bm, &BaseRule::Closest);
    assert!(out.records.is_empty() && out.trips.is_empty() && out.decisions.is_empty());
    assert_eq!(out.final_state.fleet, WorldState::initial(&inst, 0).fleet);
    assert!(summarize(&[]).is_err());
}

#[test]
fn single_call_unit_speed() {
    let mut inst = als_bls_instance();
    inst.geo = GeoMode::unit_per_second();
    inst = inst.with_fleet_size(1);
    // Base 0 is at (5, 5); the call is 12 units east of it.
    let c = call_at(0, 100, 17.0, 5.0, 0);
    let out = simulate(&inst, &[c], PolicyKind::Ca, &BaseRule::Home);
    let r = &out.records[0];
    assert_eq!(r.waiting_on_scene, 12_000);
    assert_eq!(r.penalized_wait, 4.0 * 12.0);
    let kinds: Vec<TripKind> = out.trips.iter().map(|t| t.kind).collect();
    assert_eq!(kinds, vec![TripKind::AtBase, TripKind::ToScene, TripKind::OnScene, TripKind::ToBase]);
    check_trip_chain(&out.trips).unwrap();
}

#[test]
fn free_state_after_c4_and_c2() {
    let inst = als_bls_instance();
    let rule = BaseRule::Closest;
    let env = Env { inst: &inst, rule: &rule };
    let amb = WorldState::initial(&inst, 0).fleet[0].clone();
    // 3 km east of base 0: 180 s away at 60 km/h.
    let c4 = call_at(0, 0, 8.0, 5.0, 0);
    let p = plan_service(env, &amb, &c4, 0, None, None).unwrap();
    assert_eq!((p.state.free_loc, p.state.free_time), (c4.loc, 180_000 + 600_000));
    // Transport to hospital 0 at (10, 10): another 5.385 km from (8, 5).
    let mut c2 = c4.clone();
    c2.hospital = Some(900_000);
    let p = plan_service(env, &amb, &c2, 0, Some(0), None).unwrap();
    let leg = inst.geo.travel(c2.loc, inst.hospitals[0].loc);
    assert_eq!(leg, (29f64.sqrt() * 60_000.0).round() as i64);
    assert_eq!(p.state.free_loc, inst.hospitals[0].loc);
    assert_eq!(p.state.free_time, 180_000 + 600_000 + leg + 900_000);
    assert_eq!(p.record.waiting_to_hospital, Some(600_000 + leg));
    // Facilities must match the call's needs.
    assert!(plan_service(env, &amb, &c2, 0, None, None).is_err());
}

#[test]
fn trip_kinds_follow_the_service_class() {
    let inst = als_bls_instance();
    let rule = BaseRule::Closest;
    let env = Env { inst: &inst, rule: &rule };
    let amb = WorldState::initial(&inst, 0).fleet[0].clone();
    for (h, cl) in [(None, None), (Some(60_000), None), (None, Some(60_000)), (Some(60_000), Some(60_000))] {
        let mut c = call_at(0, 0, 8.0, 5.0, 0);
        c.hospital = h;
        c.cleaning = cl;
        let (hh, cb) = inst.default_facilities(&c);
        let p = plan_service(env, &amb, &c, 0, hh, cb).unwrap();
        let mut kinds: Vec<TripKind> = p.trips.iter().map(|t| t.kind).collect();
        kinds.push(TripKind::ToBase);
        assert_eq!(kinds, trip_sequence(c.class()));
        check_trip_chain(&p.trips).unwrap();
    }
}

#[test]
fn to_base_at_that_base_is_instant() {
    let inst = als_bls_instance();
    let rule = BaseRule::Closest;
    let env = Env { inst: &inst, rule: &rule };
    let mut s = WorldState::initial(&inst, 1_000);
    let a = apply_decision(&mut s, env, &Decision::ToBase { ambulance: 2, base: 2 }, 1_000, false).unwrap();
    assert_eq!(a.trips.len(), 1);
    assert_eq!((a.trips[0].depart, a.trips[0].arrive), (1_000, 1_000));
    assert_eq!(s.fleet[2], WorldState::initial(&inst, 1_000).fleet[2]);
}

#[test]
fn busy_dispatch_needs_a_forecasting_policy() {
    let inst = als_bls_instance();
    let rule = BaseRule::Closest;
    let env = Env { inst: &inst, rule: &rule };
    let mut s = WorldState::initial(&inst, 0);
    s.fleet[0].free_time = 50_000;
    s.queue.push(call_at(7, 0, 5.0, 6.0, 0));
    let d = Decision::dispatch(&inst, 0, &s.queue[0]);
    assert!(matches!(apply_decision(&mut s.clone(), env, &d, 0, false), Err(Error::BusyDispatch { amb: 0, .. })));
    let a = apply_decision(&mut s, env, &d, 0, true).unwrap();
    // Leaves when freed, 1 km from the call.
    assert_eq!(a.trips[0].depart, 50_000);
    assert_eq!(a.record.unwrap().waiting_on_scene, 110_000);
}

/// Logs events and otherwise behaves like CA.
struct Logger(Vec<(i64, Event)>);

impl Policy for Logger {
    fn name(&self) -> &'static str {
        "logger"
    }

    fn on_event(&mut self, event: Event, step: &mut Step<'_>) -> ambopt_core::Result<()> {
        self.0.push((step.now, event));
        Ca.on_event(event, step)
    }
}

#[test]
fn call_wins_a_tie_with_a_completion() {
    let inst = als_bls_instance().with_fleet_size(2);
    let rule = BaseRule::Closest;
    let env = Env { inst: &inst, rule: &rule };
    let first = call_at(0, 0, 5.0, 5.0, 0);
    let mut c2 = call_at(1, 0, 15.0, 5.0, 0);
    // Ambulance 0 reaches the first call at once and is freed at 600 s.
    c2.time = 600_000;
    let mut log = Logger(Vec::new());
    run(env, WorldState::initial(&inst, 0), &[first, c2], &mut log, &RunOptions::default()).unwrap();
    let at_600: Vec<Event> = log.0.iter().filter(|(t, _)| *t == 600_000).map(|e| e.1).collect();
    assert_eq!(at_600, vec![Event::Call(1), Event::Completion(0)]);
}

#[test]
fn only_busy_ambulances_gives_their_completion() {
    let inst = als_bls_instance().with_fleet_size(2);
    let rule = BaseRule::Closest;
    let env = Env { inst: &inst, rule: &rule };
    let mut s = WorldState::initial(&inst, 0);
    for (a, t) in [(0, 70_000), (1, 40_000)] {
        s.fleet[a].free_time = t;
        s.fleet[a].base_time = t;
        s.fleet[a].pending = true;
    }
    let mut log = Logger(Vec::new());
    run(env, s, &[], &mut log, &RunOptions::default()).unwrap();
    assert_eq!(log.0, vec![(40_000, Event::Completion(1)), (70_000, Event::Completion(0))]);
}

#[test]
fn calls_past_the_horizon_are_rejected() {
    let inst = als_bls_instance();
    let rule = BaseRule::Closest;
    let env = Env { inst: &inst, rule: &rule };
    let opts = RunOptions { horizon: Some(10_000), record_trips: false };
    let r = run(env, WorldState::initial(&inst, 0), &[call_at(0, 11, 5.0, 5.0, 0)], &mut Ca, &opts);
    assert!(matches!(r, Err(Error::Config(_))));
}

#[test]
fn summary_examples() {
    let v: Vec<f64> = (1..=10).map(f64::from).collect();
    let s = summarize(&v).unwrap();
    assert_eq!((s.mean, s.q90, s.max), (5.5, 9.0, 10.0));
    let s = summarize(&[7.0]).unwrap();
    assert_eq!((s.mean, s.q90, s.max), (7.0, 7.0, 7.0));
    let s = summarize(&[3.0; 5]).unwrap();
    assert_eq!((s.mean, s.q90, s.max), (3.0, 3.0, 3.0));
}

#[test]
fn trips_export_one_json_object_per_line() {
    let inst = als_bls_instance();
    let calls = random_calls(&mut replication_rng(2, 0), 5, 3600);
    let out = simulate(&inst, &calls, PolicyKind::Ghp1, &BaseRule::Closest);
    let mut buf = Vec::new();
    write_trips_jsonl(&out.trips, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), out.trips.len());
    let v: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    for key in ["ambulance", "kind", "origin", "destination", "depart_s", "arrive_s"] {
        assert!(v.get(key).is_some(), "{key}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn every_call_served_once_with_chained_trips(seed in any::<u64>(), na in 1usize..6, n in 0usize..25, p in 0usize..7, rule in 0usize..2) {
        let mut rng = replication_rng(seed, 0);
        let inst = random_instance(&mut rng, na, false);
        let calls = random_calls(&mut rng, n, 4 * 3600);
        let rule = [BaseRule::Home, BaseRule::Closest][rule].clone();
        let out = simulate(&inst, &calls, PolicyKind::ALL[p], &rule);
        check_run(&inst, &calls, &out);
        // Same inputs, same trip log.
        let again = simulate(&inst, &calls, PolicyKind::ALL[p], &rule);
        prop_assert_eq!(out.trips, again.trips);
        prop_assert_eq!(out.records, again.records);
    }
}
