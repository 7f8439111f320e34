//! Locations, distances and straight-line travel.
//!
//! Time is kept as integer milliseconds everywhere in the crate ([`Time`]).
//! Travel times are rounded to the millisecond so that cost ties compare
//! exactly.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Simulation clock and durations, in milliseconds.
pub type Time = i64;

pub const MS_PER_SECOND: Time = 1000;

/// Mean Earth radius used by the haversine distance, in km.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

pub fn secs(s: f64) -> Time {
    (s * MS_PER_SECOND as f64).round() as Time
}

pub fn to_secs(t: Time) -> f64 {
    t as f64 / MS_PER_SECOND as f64
}

#[derive(Debug, Error, PartialEq)]
pub enum GeoError {
    #[error("latitude {0} outside [-90, 90]")]
    Latitude(f64),
    #[error("speed must be positive and finite, got {0} km/h")]
    Speed(f64),
    #[error("position requested at t={t} before departure t0={t0}")]
    BeforeDeparture { t0: Time, t: Time },
}

/// A point. In geodesic mode `x` is longitude and `y` latitude, in degrees.
/// In planar mode both are kilometres.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub x: f64,
    pub y: f64,
}

impl Location {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Planar,
    Geodesic,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GeoModeRepr", into = "GeoModeRepr")]
pub struct GeoMode {
    metric: Metric,
    speed_kmh: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GeoModeRepr {
    metric: Metric,
    speed_kmh: f64,
}

impl TryFrom<GeoModeRepr> for GeoMode {
    type Error = GeoError;
    fn try_from(r: GeoModeRepr) -> Result<Self, GeoError> {
        GeoMode::new(r.metric, r.speed_kmh)
    }
}

impl From<GeoMode> for GeoModeRepr {
    fn from(m: GeoMode) -> Self {
        GeoModeRepr {
            metric: m.metric,
            speed_kmh: m.speed_kmh,
        }
    }
}

impl GeoMode {
    pub fn new(metric: Metric, speed_kmh: f64) -> Result<Self, GeoError> {
        if !(speed_kmh.is_finite() && speed_kmh > 0.0) {
            return Err(GeoError::Speed(speed_kmh));
        }
        Ok(Self { metric, speed_kmh })
    }

    pub fn planar(speed_kmh: f64) -> Result<Self, GeoError> {
        Self::new(Metric::Planar, speed_kmh)
    }

    pub fn geodesic(speed_kmh: f64) -> Result<Self, GeoError> {
        Self::new(Metric::Geodesic, speed_kmh)
    }

    /// Planar mode where one coordinate unit is covered per second.
    pub fn unit_per_second() -> Self {
        Self {
            metric: Metric::Planar,
            speed_kmh: 3600.0,
        }
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn speed_kmh(&self) -> f64 {
        self.speed_kmh
    }

    /// Distance in km. Callers must have validated the locations.
    pub fn dist(&self, a: Location, b: Location) -> f64 {
        match self.metric {
            Metric::Planar => (a.x - b.x).hypot(a.y - b.y),
            Metric::Geodesic => haversine(a, b),
        }
    }

    /// Travel time in ms, rounded to the nearest millisecond.
    pub fn travel(&self, a: Location, b: Location) -> Time {
        (self.dist(a, b) * 3_600_000.0 / self.speed_kmh).round() as Time
    }

    pub fn check(&self, l: Location) -> Result<(), GeoError> {
        if self.metric == Metric::Geodesic && !(-90.0..=90.0).contains(&l.y) {
            return Err(GeoError::Latitude(l.y));
        }
        Ok(())
    }
}

fn haversine(a: Location, b: Location) -> f64 {
    let (la1, la2) = (a.y.to_radians(), b.y.to_radians());
    let dlat = la2 - la1;
    let dlon = (b.x - a.x).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + la1.cos() * la2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

pub fn distance(a: Location, b: Location, mode: &GeoMode) -> Result<f64, GeoError> {
    mode.check(a)?;
    mode.check(b)?;
    Ok(mode.dist(a, b))
}

/// Straight-line travel time. Departure time does not affect speed; it is
/// accepted so that time-dependent speeds can be slotted in later.
pub fn travel_time(a: Location, b: Location, _t0: Time, mode: &GeoMode) -> Result<Time, GeoError> {
    mode.check(a)?;
    mode.check(b)?;
    Ok(mode.travel(a, b))
}

/// Where a vehicle that left `a` at `t0` towards `b` is at time `t`.
pub fn position_between(
    a: Location,
    b: Location,
    t0: Time,
    t: Time,
    mode: &GeoMode,
) -> Result<Location, GeoError> {
    if t < t0 {
        return Err(GeoError::BeforeDeparture { t0, t });
    }
    mode.check(a)?;
    mode.check(b)?;
    Ok(mode.interpolate(a, b, t0, t))
}

impl GeoMode {
    /// Unchecked variant of [`position_between`]; requires `t >= t0`.
    pub fn interpolate(&self, a: Location, b: Location, t0: Time, t: Time) -> Location {
        let tt = self.travel(a, b);
        if tt == 0 || t - t0 >= tt {
            return b;
        }
        let s = (t - t0) as f64 / tt as f64;
        match self.metric {
            Metric::Planar => Location::new(a.x + s * (b.x - a.x), a.y + s * (b.y - a.y)),
            Metric::Geodesic => slerp(a, b, s),
        }
    }
}

fn to_unit(l: Location) -> [f64; 3] {
    let (lat, lon) = (l.y.to_radians(), l.x.to_radians());
    [lat.cos() * lon.cos(), lat.cos() * lon.sin(), lat.sin()]
}

fn slerp(a: Location, b: Location, s: f64) -> Location {
    let (u, v) = (to_unit(a), to_unit(b));
    let dot = (u[0] * v[0] + u[1] * v[1] + u[2] * v[2]).clamp(-1.0, 1.0);
    let omega = dot.acos();
    if omega < 1e-12 {
        return a;
    }
    let (wa, wb) = (
        ((1.0 - s) * omega).sin() / omega.sin(),
        (s * omega).sin() / omega.sin(),
    );
    let p = [
        wa * u[0] + wb * v[0],
        wa * u[1] + wb * v[1],
        wa * u[2] + wb * v[2],
    ];
    let lat = p[2].clamp(-1.0, 1.0).asin().to_degrees();
    let lon = p[1].atan2(p[0]).to_degrees();
    Location::new(lon, lat)
}


/// Serde adapter: [`Time`] fields appear in files as (fractional) seconds.
pub mod serde_secs {
    use super::{secs, to_secs, Time};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &Time, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(to_secs(*t))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Time, D::Error> {
        let v = f64::deserialize(d)?;
        if !v.is_finite() {
            return Err(serde::de::Error::custom("time must be finite"));
        }
        Ok(secs(v))
    }
}

pub mod serde_opt_secs {
    use super::{secs, to_secs, Time};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &Option<Time>, s: S) -> Result<S::Ok, S::Error> {
        match t {
            Some(t) => s.serialize_some(&to_secs(*t)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Time>, D::Error> {
        match Option::<f64>::deserialize(d)? {
            Some(v) if v.is_finite() => Ok(Some(secs(v))),
            Some(_) => Err(serde::de::Error::custom("time must be finite")),
            None => Ok(None),
        }
    }
}
