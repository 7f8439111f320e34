//! Calls, ambulances, facilities and the allocation cost model.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::geo::{serde_opt_secs, serde_secs, GeoMode, Location, Time};
use crate::Error;

pub type CallTypeId = usize;
pub type AmbTypeId = usize;
pub type AmbId = usize;
pub type CallId = usize;
pub type BaseId = usize;
pub type HospitalId = usize;
pub type CleaningId = usize;

/// Allocation costs are expressed in (penalized) seconds.
pub type Cost = f64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CallType {
    pub id: CallTypeId,
    /// Penalization coefficient applied to waiting times.
    pub theta: f64,
    #[serde(default)]
    pub label: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmbulanceType {
    pub id: AmbTypeId,
    /// Lower rank is less advanced.
    pub rank: u32,
    #[serde(default)]
    pub label: String,
}

/// `M[a][c]` in seconds; `None` means type `a` must never serve type `c`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QualityMatrix(pub Vec<Vec<Option<f64>>>);

impl QualityMatrix {
    pub fn get(&self, a: AmbTypeId, c: CallTypeId) -> Option<f64> {
        self.0.get(a).and_then(|row| row.get(c)).copied().flatten()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Call {
    pub id: CallId,
    #[serde(rename = "time_s", with = "serde_secs")]
    pub time: Time,
    pub loc: Location,
    pub call_type: CallTypeId,
    #[serde(rename = "on_scene_s", with = "serde_secs")]
    pub on_scene: Time,
    /// Time spent at hospital; `None` when no transport is needed.
    #[serde(rename = "hospital_s", with = "serde_opt_secs", default)]
    pub hospital: Option<Time>,
    /// Cleaning duration; `None` when the ambulance needs no cleaning.
    #[serde(rename = "cleaning_s", with = "serde_opt_secs", default)]
    pub cleaning: Option<Time>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub restricted_to: Option<BTreeSet<AmbId>>,
}

impl Call {
    pub fn needs_hospital(&self) -> bool {
        self.hospital.is_some()
    }

    pub fn needs_cleaning(&self) -> bool {
        self.cleaning.is_some()
    }

    pub fn class(&self) -> ServiceClass {
        match (self.needs_hospital(), self.needs_cleaning()) {
            (true, true) => ServiceClass::C1,
            (true, false) => ServiceClass::C2,
            (false, true) => ServiceClass::C3,
            (false, false) => ServiceClass::C4,
        }
    }

    pub fn allows(&self, amb: AmbId) -> bool {
        self.restricted_to.as_ref().is_none_or(|s| s.contains(&amb))
    }
}

/// Service classes by (hospital, cleaning) need.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ServiceClass {
    C1,
    C2,
    C3,
    C4,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TripKind {
    ToScene,
    OnScene,
    ToHospital,
    AtHospital,
    ToCleaning,
    AtCleaning,
    ToBase,
    AtBase,
}

/// Legs an ambulance drives for one call, ending with the return to base.
pub fn trip_sequence(class: ServiceClass) -> Vec<TripKind> {
    use TripKind::*;
    let mut v = vec![ToScene, OnScene];
    if matches!(class, ServiceClass::C1 | ServiceClass::C2) {
        v.extend([ToHospital, AtHospital]);
    }
    if matches!(class, ServiceClass::C1 | ServiceClass::C3) {
        v.extend([ToCleaning, AtCleaning]);
    }
    v.push(ToBase);
    v
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trip {
    pub ambulance: AmbId,
    pub kind: TripKind,
    pub origin: Location,
    pub destination: Location,
    #[serde(rename = "depart_s", with = "serde_secs")]
    pub depart: Time,
    #[serde(rename = "arrive_s", with = "serde_secs")]
    pub arrive: Time,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub call: CallId,
    pub call_type: CallTypeId,
    pub ambulance: AmbId,
    pub arrival: Time,
    pub dispatched_at: Time,
    /// Call arrival to ambulance arrival on scene.
    pub waiting_on_scene: Time,
    pub penalized_wait: Cost,
    /// Ambulance arrival on scene to arrival at hospital.
    pub waiting_to_hospital: Option<Time>,
    pub penalized_hospital_wait: Option<Cost>,
    pub allocation_cost: Cost,
    pub hospital: Option<HospitalId>,
    pub cleaning: Option<CleaningId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Base {
    pub id: BaseId,
    pub loc: Location,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hospital {
    pub id: HospitalId,
    pub loc: Location,
    /// `None` is unlimited.
    #[serde(default)]
    pub capacity: Option<u32>,
    #[serde(default)]
    pub occupancy: u32,
    /// Call types admitted; `None` admits all.
    #[serde(default)]
    pub admits: Option<BTreeSet<CallTypeId>>,
}

impl Hospital {
    pub fn admits(&self, c: CallTypeId) -> bool {
        self.admits.as_ref().is_none_or(|s| s.contains(&c))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CleaningBase {
    pub id: CleaningId,
    pub loc: Location,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmbulanceSpec {
    pub id: AmbId,
    pub amb_type: AmbTypeId,
    /// Home base, also the starting position.
    pub base: BaseId,
}

/// Static description of a dispatch problem: geography, types, costs,
/// facilities and fleet.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Instance {
    pub geo: GeoMode,
    pub call_types: Vec<CallType>,
    pub ambulance_types: Vec<AmbulanceType>,
    pub quality: QualityMatrix,
    pub bases: Vec<Base>,
    pub hospitals: Vec<Hospital>,
    #[serde(default)]
    pub cleaning_bases: Vec<CleaningBase>,
    pub fleet: Vec<AmbulanceSpec>,
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl Instance {
    pub fn validate(&self) -> Result<(), Error> {
        for (i, c) in self.call_types.iter().enumerate() {
            if c.id != i {
                return Err(invalid(format!("call type at position {i} has id {}", c.id)));
            }
            if !(c.theta.is_finite() && c.theta > 0.0) {
                return Err(invalid(format!("call type {i}: theta must be positive")));
            }
        }
        for (i, a) in self.ambulance_types.iter().enumerate() {
            if a.id != i {
                return Err(invalid(format!("ambulance type at position {i} has id {}", a.id)));
            }
        }
        if self.quality.0.len() != self.ambulance_types.len()
            || self.quality.0.iter().any(|r| r.len() != self.call_types.len())
        {
            return Err(invalid("quality matrix must be ambulance_types x call_types"));
        }
        if self.quality.0.iter().flatten().flatten().any(|m| !m.is_finite()) {
            return Err(invalid("quality entries must be finite numbers or null"));
        }
        if self.bases.is_empty() {
            return Err(invalid("at least one base is required"));
        }
        let locs = self
            .bases
            .iter()
            .map(|b| (b.id, b.loc))
            .chain(self.hospitals.iter().map(|h| (h.id, h.loc)))
            .chain(self.cleaning_bases.iter().map(|c| (c.id, c.loc)));
        for (_, l) in locs {
            self.geo.check(l)?;
        }
        let ids_ok = self.bases.iter().enumerate().all(|(i, b)| b.id == i)
            && self.hospitals.iter().enumerate().all(|(i, h)| h.id == i)
            && self.cleaning_bases.iter().enumerate().all(|(i, c)| c.id == i);
        if !ids_ok {
            return Err(invalid("facility ids must equal their list position"));
        }
        for (i, a) in self.fleet.iter().enumerate() {
            if a.id != i {
                return Err(invalid(format!("ambulance at position {i} has id {}", a.id)));
            }
            if a.amb_type >= self.ambulance_types.len() || a.base >= self.bases.len() {
                return Err(invalid(format!("ambulance {i}: unknown type or base")));
            }
        }
        Ok(())
    }

    pub fn theta(&self, c: CallTypeId) -> f64 {
        self.call_types[c].theta
    }

    pub fn penalization(&self, t: Time, c: CallTypeId) -> Result<Cost, Error> {
        if t < 0 {
            return Err(Error::NegativeDuration(t));
        }
        Ok(penalize(self.theta(c), t))
    }

    /// `theta_c * t + M[a][c]`, or an error for a forbidden pair.
    pub fn cost_allocation(&self, a: AmbTypeId, c: CallTypeId, t: Time) -> Result<Cost, Error> {
        let m = self
            .quality
            .get(a, c)
            .ok_or(Error::Incompatible { amb_type: a, call_type: c })?;
        if t < 0 {
            return Err(Error::NegativeDuration(t));
        }
        Ok(allocation(self.theta(c), t, m))
    }

    /// Unchecked cost; `None` for a forbidden pair.
    pub fn cost(&self, a: AmbTypeId, c: CallTypeId, t: Time) -> Option<Cost> {
        self.quality.get(a, c).map(|m| allocation(self.theta(c), t, m))
    }

    pub fn rank(&self, amb: AmbId) -> u32 {
        self.ambulance_types[self.fleet[amb].amb_type].rank
    }

    pub fn can_serve(&self, amb: AmbId, call: &Call) -> bool {
        self.quality.get(self.fleet[amb].amb_type, call.call_type).is_some() && call.allows(amb)
    }

    pub fn compatible_ambulances(&self, call: &Call) -> Vec<AmbId> {
        (0..self.fleet.len()).filter(|&a| self.can_serve(a, call)).collect()
    }

    /// Call types an ambulance type may serve, most urgent first.
    pub fn servable_types(&self, a: AmbTypeId) -> Vec<CallTypeId> {
        let mut v: Vec<_> = (0..self.call_types.len())
            .filter(|&c| self.quality.get(a, c).is_some())
            .collect();
        v.sort_by(|&x, &y| self.theta(y).total_cmp(&self.theta(x)).then(x.cmp(&y)));
        v
    }

    pub fn closest_base(&self, from: Location) -> BaseId {
        argmin_by_travel(&self.geo, from, self.bases.iter().map(|b| b.loc))
            .expect("validated instance has a base")
    }

    pub fn closest_hospital(&self, call: &Call) -> Option<HospitalId> {
        let ok: Vec<_> = self.hospitals.iter().filter(|h| h.admits(call.call_type)).collect();
        argmin_by_travel(&self.geo, call.loc, ok.iter().map(|h| h.loc)).map(|i| ok[i].id)
    }

    pub fn closest_cleaning(&self, from: Location) -> Option<CleaningId> {
        argmin_by_travel(&self.geo, from, self.cleaning_bases.iter().map(|c| c.loc))
    }

    /// Hospital closest to the scene, and cleaning base closest to wherever
    /// the patient was left (hospital, or scene when no transport).
    pub fn default_facilities(&self, call: &Call) -> (Option<HospitalId>, Option<CleaningId>) {
        let h = if call.needs_hospital() {
            self.closest_hospital(call)
        } else {
            None
        };
        let cb = if call.needs_cleaning() {
            let from = h.map_or(call.loc, |h| self.hospitals[h].loc);
            self.closest_cleaning(from)
        } else {
            None
        };
        (h, cb)
    }

    /// Same instance with `n` ambulances, cycling through the fleet list so
    /// that smaller fleets are prefixes of larger ones.
    pub fn with_fleet_size(&self, n: usize) -> Instance {
        let mut out = self.clone();
        out.fleet = (0..n)
            .map(|i| {
                let t = &self.fleet[i % self.fleet.len()];
                AmbulanceSpec { id: i, amb_type: t.amb_type, base: t.base }
            })
            .collect();
        out
    }

    pub fn check_call(&self, call: &Call) -> Result<(), Error> {
        self.geo.check(call.loc)?;
        if call.call_type >= self.call_types.len() {
            return Err(invalid(format!("call {}: unknown call type", call.id)));
        }
        if call.on_scene < 0 || call.hospital.unwrap_or(0) < 0 || call.cleaning.unwrap_or(0) < 0 {
            return Err(Error::NegativeDuration(call.on_scene.min(call.hospital.unwrap_or(0))));
        }
        if call.needs_hospital() && self.closest_hospital(call).is_none() {
            return Err(invalid(format!("call {}: no hospital admits its type", call.id)));
        }
        if call.needs_cleaning() && self.cleaning_bases.is_empty() {
            return Err(invalid(format!("call {}: needs cleaning but no cleaning base", call.id)));
        }
        if self.compatible_ambulances(call).is_empty() {
            return Err(Error::NoCompatibleAmbulance(call.id));
        }
        Ok(())
    }
}

pub fn penalize(theta: f64, t: Time) -> Cost {
    theta * t as f64 / 1000.0
}

/// Computed on a single numerator so that equal integer inputs give
/// bit-identical costs.
pub fn allocation(theta: f64, t: Time, m: f64) -> Cost {
    (theta * t as f64 + m * 1000.0) / 1000.0
}

fn argmin_by_travel(
    geo: &GeoMode,
    from: Location,
    to: impl Iterator<Item = Location>,
) -> Option<usize> {
    let mut best: Option<(Time, usize)> = None;
    for (i, l) in to.enumerate() {
        let t = geo.travel(from, l);
        if best.is_none_or(|(bt, _)| t < bt) {
            best = Some((t, i));
        }
    }
    best.map(|(_, i)| i)
}

/// Dynamic vehicle state: where and when it is next free (`free_*`), and
/// where and when it will be back at a base (`base_*`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmbulanceState {
    pub id: AmbId,
    pub amb_type: AmbTypeId,
    pub free_loc: Location,
    #[serde(rename = "free_time_s", with = "serde_secs")]
    pub free_time: Time,
    pub base_loc: Location,
    #[serde(rename = "base_time_s", with = "serde_secs")]
    pub base_time: Time,
    pub base: BaseId,
    /// Service completion at `free_time` not yet processed by the engine.
    #[serde(default, skip_serializing)]
    pub pending: bool,
}

impl AmbulanceState {
    pub fn at_base(inst: &Instance, spec: &AmbulanceSpec, t: Time) -> Self {
        let loc = inst.bases[spec.base].loc;
        Self {
            id: spec.id,
            amb_type: spec.amb_type,
            free_loc: loc,
            free_time: t,
            base_loc: loc,
            base_time: t,
            base: spec.base,
            pending: false,
        }
    }

    pub fn is_busy(&self, now: Time) -> bool {
        now < self.free_time
    }

    pub fn is_at_base(&self, now: Time) -> bool {
        self.base_time <= now
    }

    /// When and where the ambulance could start driving to a new call
    /// decided at `now`.
    pub fn departure(&self, now: Time, geo: &GeoMode) -> (Time, Location) {
        if now < self.free_time {
            (self.free_time, self.free_loc)
        } else if self.base_time <= now {
            (now, self.base_loc)
        } else {
            (now, geo.interpolate(self.free_loc, self.base_loc, self.free_time, now))
        }
    }

    /// Time from `now` until arrival at `to`.
    pub fn arrival_delay(&self, to: Location, now: Time, geo: &GeoMode) -> Time {
        let (dep, from) = self.departure(now, geo);
        dep - now + geo.travel(from, to)
    }
}

/// Call arrival to ambulance arrival on scene, if `amb` is sent at `now`.
pub fn response_time_if_assigned(amb: &AmbulanceState, call: &Call, now: Time, geo: &GeoMode) -> Time {
    (now - call.time) + amb.arrival_delay(call.loc, now, geo)
}
