//! Built-in instances: the two-type cost table, the ten-call queue, the
//! south/north burst pattern and a congested synthetic city.

use std::sync::Arc;

use rand::Rng;

use crate::batch_opt::{BatchCall, BatchInstance, Objective};
use crate::geo::{secs, GeoMode, Location, Time};
use crate::model::{
    AmbulanceSpec, AmbulanceType, Base, Call, CallType, CleaningBase, Hospital, Instance, QualityMatrix,
};
use crate::reassign::{Bbr, BaseRule, Burst, Demand, IntensityTable};
use crate::scenario::{CallModel, DurationDist, GridSpec, ServiceProfile};
use crate::Result;

const HOUR: Time = 3_600_000;

fn geo60() -> GeoMode {
    GeoMode::planar(60.0).expect("positive speed")
}

fn bases(points: &[(f64, f64)]) -> Vec<Base> {
    points.iter().enumerate().map(|(id, &(x, y))| Base { id, loc: Location::new(x, y) }).collect()
}

fn hospitals(points: &[(f64, f64)]) -> Vec<Hospital> {
    points
        .iter()
        .enumerate()
        .map(|(id, &(x, y))| Hospital { id, loc: Location::new(x, y), capacity: None, occupancy: 0, admits: None })
        .collect()
}

fn cleaning(points: &[(f64, f64)]) -> Vec<CleaningBase> {
    points.iter().enumerate().map(|(id, &(x, y))| CleaningBase { id, loc: Location::new(x, y) }).collect()
}

fn call_types(thetas: &[f64]) -> Vec<CallType> {
    thetas
        .iter()
        .enumerate()
        .map(|(id, &theta)| CallType { id, theta, label: format!("priority {}", id + 1) })
        .collect()
}

/// ALS (type 0) and BLS (type 1) crews over four priorities with weights
/// 4, 1, 4, 1. ALS crews are over-qualified for priorities 3 and 4; BLS
/// crews are under-qualified for 1 and 2.
pub fn als_bls_instance() -> Instance {
    Instance {
        geo: geo60(),
        call_types: call_types(&[4.0, 1.0, 4.0, 1.0]),
        ambulance_types: vec![
            AmbulanceType { id: 0, rank: 1, label: "ALS".into() },
            AmbulanceType { id: 1, rank: 0, label: "BLS".into() },
        ],
        quality: QualityMatrix(vec![
            vec![Some(0.0), Some(0.0), Some(1500.0), Some(1500.0)],
            vec![Some(6000.0), Some(6000.0), Some(0.0), Some(0.0)],
        ]),
        bases: bases(&[(5.0, 5.0), (15.0, 5.0), (5.0, 15.0), (15.0, 15.0)]),
        hospitals: hospitals(&[(10.0, 10.0), (2.0, 18.0)]),
        cleaning_bases: cleaning(&[(10.0, 2.0)]),
        fleet: vec![
            AmbulanceSpec { id: 0, amb_type: 0, base: 0 },
            AmbulanceSpec { id: 1, amb_type: 1, base: 1 },
            AmbulanceSpec { id: 2, amb_type: 0, base: 2 },
            AmbulanceSpec { id: 3, amb_type: 1, base: 3 },
        ],
    }
}

/// Ten calls `(t_c s, x, y, hospital, cleaning base, type, cleaning needed)`.
pub const TEN_CALLS: [(i64, f64, f64, usize, usize, usize, bool); 10] = [
    (4615, 2.573950, 7.204272, 0, 1, 0, false),
    (4615, 9.051706, 6.459336, 1, 1, 1, true),
    (6928, 0.323052, 5.631636, 0, 0, 2, false),
    (7041, 9.300417, 1.637796, 1, 0, 2, true),
    (12867, 9.872602, 6.497998, 1, 1, 0, true),
    (15814, 4.214452, 8.023232, 0, 1, 1, true),
    (16806, 1.127195, 9.637274, 0, 1, 2, false),
    (17782, 9.940016, 4.055296, 1, 0, 1, true),
    (20818, 1.196135, 4.216586, 0, 0, 2, true),
    (34823, 0.076350, 1.954592, 0, 0, 2, true),
];

/// Class weights used with [`ten_call_batch`].
pub const TEN_CALL_THETA: [f64; 3] = [4.0, 2.0, 1.0];

/// The ten-call queue on a 10 km square: all calls are waiting when the
/// last one arrives. Ambulance types: 0 basic, 1 intermediate, 2
/// advanced; call type 0 is the most urgent.
pub fn ten_call_batch() -> BatchInstance {
    let any = Some(0.0);
    let instance = Instance {
        geo: geo60(),
        call_types: TEN_CALL_THETA
            .iter()
            .enumerate()
            .map(|(id, &theta)| CallType { id, theta, label: ["high", "intermediate", "basic"][id].into() })
            .collect(),
        ambulance_types: vec![
            AmbulanceType { id: 0, rank: 0, label: "basic".into() },
            AmbulanceType { id: 1, rank: 1, label: "intermediate".into() },
            AmbulanceType { id: 2, rank: 2, label: "advanced".into() },
        ],
        quality: QualityMatrix(vec![vec![None, None, any], vec![None, any, any], vec![any, any, any]]),
        bases: bases(&[(0.0, 0.0), (0.0, 10.0), (10.0, 0.0), (10.0, 10.0)]),
        hospitals: hospitals(&[(0.0, 5.0), (5.0, 10.0)]),
        cleaning_bases: cleaning(&[(5.0, 0.0), (10.0, 5.0)]),
        fleet: vec![
            AmbulanceSpec { id: 0, amb_type: 2, base: 0 },
            AmbulanceSpec { id: 1, amb_type: 2, base: 3 },
            AmbulanceSpec { id: 2, amb_type: 1, base: 1 },
            AmbulanceSpec { id: 3, amb_type: 0, base: 2 },
        ],
    };
    let calls = TEN_CALLS
        .iter()
        .enumerate()
        .map(|(id, &(t, x, y, h, cb, ty, clean))| BatchCall {
            call: Call {
                id,
                time: secs(t as f64),
                loc: Location::new(x, y),
                call_type: ty,
                on_scene: secs(300.0),
                hospital: Some(secs(300.0)),
                cleaning: clean.then(|| secs(300.0)),
                restricted_to: None,
            },
            hospital: Some(h),
            cleaning: clean.then_some(cb),
        })
        .collect();
    BatchInstance {
        instance,
        t0: secs(34823.0),
        fleet: None,
        calls,
        class_of_type: vec![0, 1, 2],
        class_theta: TEN_CALL_THETA,
        objective: Objective::PerCall,
        big_m: None,
    }
}

/// Four single-ambulance bases 20 km apart in a diamond. Bursts of calls
/// hit the south catchment first, then the north one.
#[derive(Clone, Debug)]
pub struct BurstSetup {
    pub instance: Instance,
    pub bursts: Vec<Burst>,
    /// Time on scene of every call.
    pub on_scene: Time,
    /// Half-width of the square around a base where its burst calls fall.
    pub spread_km: f64,
}

pub const NORTH: usize = 0;
pub const SOUTH: usize = 1;
pub const WEST: usize = 2;
pub const EAST: usize = 3;

impl BurstSetup {
    pub fn new() -> Self {
        let instance = Instance {
            geo: geo60(),
            call_types: call_types(&[1.0]),
            ambulance_types: vec![AmbulanceType { id: 0, rank: 0, label: "standard".into() }],
            quality: QualityMatrix(vec![vec![Some(0.0)]]),
            bases: bases(&[(0.0, 10.0), (0.0, -10.0), (-10.0, 0.0), (10.0, 0.0)]),
            hospitals: hospitals(&[(0.0, 0.0)]),
            cleaning_bases: Vec::new(),
            fleet: (0..4).map(|id| AmbulanceSpec { id, amb_type: 0, base: id }).collect(),
        };
        let burst = |base, h: i64| Burst { base, call_type: 0, start: h * HOUR, end: (h + 2) * HOUR, count: 4 };
        let bursts = vec![
            burst(SOUTH, 0),
            burst(SOUTH, 5),
            burst(SOUTH, 10),
            burst(NORTH, 15),
            burst(NORTH, 20),
            burst(NORTH, 25),
        ];
        Self { instance, bursts, on_scene: 45 * 60_000, spread_km: 1.0 }
    }

    /// One realisation: each burst's calls at uniform times in its window
    /// and uniform places near its base.
    pub fn calls<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Call> {
        let mut calls = Vec::new();
        for b in &self.bursts {
            let c = self.instance.bases[b.base].loc;
            for _ in 0..b.count {
                let s = self.spread_km;
                calls.push(Call {
                    id: 0,
                    time: rng.random_range(b.start..b.end),
                    loc: Location::new(c.x + rng.random_range(-s..s), c.y + rng.random_range(-s..s)),
                    call_type: b.call_type,
                    on_scene: self.on_scene,
                    hospital: None,
                    cleaning: None,
                    restricted_to: None,
                });
            }
        }
        calls.sort_by_key(|c| c.time);
        for (id, c) in calls.iter_mut().enumerate() {
            c.id = id;
        }
        calls
    }

    /// Base rule that sizes demand by the bursts overlapping the next
    /// `delta`.
    pub fn bbr(&self, delta: Time) -> Result<BaseRule> {
        Ok(BaseRule::Best(Bbr::new(delta, Demand::MaxCalls { bursts: Arc::new(self.bursts.clone()) })?))
    }
}

impl Default for BurstSetup {
    fn default() -> Self {
        Self::new()
    }
}

/// Look-ahead used with [`BurstSetup`]; long enough to see the next burst
/// from the end of the previous one.
pub const BURST_DELTA: Time = 5 * HOUR;

/// A 30 km square city with ten bases, four hospitals and two cleaning
/// bases, served by ALS and BLS crews over the four priorities of
/// [`als_bls_instance`]. The fleet lists 30 ambulances, a third of them
/// ALS, spread round-robin over the bases.
pub fn city_instance() -> Instance {
    let mut inst = als_bls_instance();
    inst.bases = bases(&[
        (5.0, 5.0),
        (15.0, 5.0),
        (25.0, 5.0),
        (5.0, 15.0),
        (15.0, 15.0),
        (25.0, 15.0),
        (5.0, 25.0),
        (15.0, 25.0),
        (25.0, 25.0),
        (10.0, 20.0),
    ]);
    inst.hospitals = hospitals(&[(8.0, 8.0), (22.0, 8.0), (8.0, 22.0), (22.0, 22.0)]);
    inst.cleaning_bases = cleaning(&[(15.0, 10.0), (15.0, 20.0)]);
    inst.fleet = (0..30)
        .map(|id| AmbulanceSpec { id, amb_type: if id % 3 == 0 { 0 } else { 1 }, base: id % 10 })
        .collect();
    inst
}

/// Share of calls per priority in the city.
pub const CITY_TYPE_MIX: [f64; 4] = [0.15, 0.35, 0.15, 0.35];

/// Hourly call volume relative to the daily mean.
const CITY_PROFILE: [f64; 24] = [
    0.6, 0.5, 0.5, 0.5, 0.6, 0.7, 0.9, 1.1, 1.2, 1.2, 1.2, 1.2, 1.2, 1.2, 1.2, 1.2, 1.2, 1.2, 1.2, 1.1,
    1.0, 0.9, 0.8, 0.7,
];

/// Uniform-in-space demand over the city with a daily profile; the mean
/// volume is `calls_per_hour`.
pub fn city_call_model(calls_per_hour: f64) -> CallModel {
    let grid = GridSpec { x_min: 0.0, y_min: 0.0, x_max: 30.0, y_max: 30.0, nx: 6, ny: 6 };
    let cells = grid.cells();
    let mut table = IntensityTable::zeros(cells, 24, 4, HOUR);
    let norm: f64 = CITY_PROFILE.iter().sum::<f64>() / 24.0;
    for cell in 0..cells {
        for (w, p) in CITY_PROFILE.iter().enumerate() {
            for (ty, mix) in CITY_TYPE_MIX.iter().enumerate() {
                *table.rate_mut(cell, w, ty) = calls_per_hour * p / norm * mix / cells as f64;
            }
        }
    }
    let minutes = |lo: f64, hi: f64| DurationDist::Uniform { lo: lo * 60.0, hi: hi * 60.0 };
    let profile = |hospital_prob, cleaning_prob| ServiceProfile {
        on_scene: minutes(10.0, 20.0),
        hospital_prob,
        at_hospital: minutes(10.0, 20.0),
        cleaning_prob,
        cleaning: minutes(15.0, 25.0),
    };
    CallModel {
        grid,
        table,
        profiles: vec![profile(0.9, 0.3), profile(0.7, 0.2), profile(0.5, 0.1), profile(0.3, 0.05)],
    }
}
