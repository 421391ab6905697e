//! World snapshot: connected vehicles (CAVs), roadside units, non-connected
//! targets (NCTs) and the twin domain that the macro base station covers.
//!
//! A [`Scenario`] is an immutable value. Operations that evolve the world
//! return a new snapshot.

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::PricingConfig;
use crate::process::ProcessParams;

macro_rules! entity_id {
    ($(#[$meta:meta])* $name:ident, $label:literal) => {
        $(#[$meta])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub u32);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($label, "{}"), self.0)
            }
        }

        impl From<$name> for u64 {
            fn from(id: $name) -> u64 {
                id.0 as u64
            }
        }
    };
}

entity_id!(
    /// Connected automatic vehicle.
    CavId,
    "cav"
);
entity_id!(
    /// Roadside unit.
    RsuId,
    "rsu"
);
entity_id!(
    /// Non-connected target.
    NctId,
    "nct"
);

/// Planar position or velocity in meters (or m/s), origin at the MBS.
pub type Point = [f64; 2];

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CavState {
    pub id: CavId,
    pub position: Point,
    /// Degrees, counter-clockwise from east.
    pub heading: f64,
    pub speed: f64,
    pub security_radius: f64,
    /// Height of this vehicle's local compute grid.
    pub local_compute_units: u32,
    /// Set once the vehicle has been clamped to the twin-domain boundary.
    #[serde(default, skip_serializing_if = "is_false")]
    pub at_boundary: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RsuState {
    pub id: RsuId,
    pub position: Point,
    /// Height of the edge compute grid hosted by this unit.
    pub edge_compute_units: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NctState {
    pub id: NctId,
    pub position: Point,
    pub velocity: Point,
    /// Abstract information units carried by this target.
    pub info_value: f64,
    #[serde(default, skip_serializing_if = "is_false")]
    pub at_boundary: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub cavs: Vec<CavState>,
    pub rsus: Vec<RsuState>,
    pub ncts: Vec<NctState>,
    pub twin_domain_radius: f64,
    pub time_horizon: usize,
    pub angle_sectors: usize,
    pub subcarriers: usize,
    pub rng_seed: u64,
    #[serde(default)]
    pub process: ProcessParams,
    #[serde(default)]
    pub pricing: PricingConfig,
}

/// Parses and validates a scenario document.
pub fn load_scenario(config_text: &str) -> Result<Scenario> {
    let de = &mut serde_json::Deserializer::from_str(config_text);
    let scenario: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        Error::Parse {
            field: if field == "." { "<root>".into() } else { field },
            message: e.into_inner().to_string(),
        }
    })?;
    scenario.validate()?;
    Ok(scenario)
}

impl Scenario {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Validation(msg));
        if !(self.twin_domain_radius.is_finite() && self.twin_domain_radius > 0.0) {
            return bad("twin_domain_radius must be positive".into());
        }
        if self.time_horizon == 0 || self.angle_sectors == 0 || self.subcarriers == 0 {
            return bad("time_horizon, angle_sectors and subcarriers must be >= 1".into());
        }
        unique(self.cavs.iter().map(|c| c.id), "cav")?;
        unique(self.rsus.iter().map(|r| r.id), "rsu")?;
        unique(self.ncts.iter().map(|n| n.id), "nct")?;

        let inside = |p: &Point| norm(*p) <= self.twin_domain_radius * (1.0 + 1e-12);
        let max_local = self.cavs.iter().map(|c| c.local_compute_units).max().unwrap_or(0);
        for c in &self.cavs {
            if !inside(&c.position) {
                return bad(format!("{} lies outside the twin domain", c.id));
            }
            if !(c.security_radius > 0.0) {
                return bad(format!("{} security_radius must be positive", c.id));
            }
            if !(c.speed.is_finite() && c.speed >= 0.0 && c.heading.is_finite()) {
                return bad(format!("{} has invalid kinematics", c.id));
            }
        }
        for r in &self.rsus {
            if !inside(&r.position) {
                return bad(format!("{} lies outside the twin domain", r.id));
            }
            if r.edge_compute_units < max_local {
                return bad(format!(
                    "{} edge compute {} is below local compute {max_local}",
                    r.id, r.edge_compute_units
                ));
            }
        }
        for n in &self.ncts {
            if !inside(&n.position) {
                return bad(format!("{} lies outside the twin domain", n.id));
            }
            if !(n.info_value.is_finite() && n.info_value >= 0.0) {
                return bad(format!("{} info_value must be >= 0", n.id));
            }
            if !(n.velocity[0].is_finite() && n.velocity[1].is_finite()) {
                return bad(format!("{} velocity must be finite", n.id));
            }
        }
        self.process.validate()?;
        self.pricing.validate()?;
        Ok(())
    }

    pub fn cav(&self, id: CavId) -> Result<&CavState> {
        self.cavs.iter().find(|c| c.id == id).ok_or_else(|| Error::lookup("cav", id))
    }

    pub fn rsu(&self, id: RsuId) -> Result<&RsuState> {
        self.rsus.iter().find(|r| r.id == id).ok_or_else(|| Error::lookup("rsu", id))
    }

    pub fn nct(&self, id: NctId) -> Result<&NctState> {
        self.ncts.iter().find(|n| n.id == id).ok_or_else(|| Error::lookup("nct", id))
    }

    /// Advances every entity by `dt` seconds of straight-line motion.
    pub fn step_mobility(&self, dt: f64) -> Scenario {
        let mut next = self.clone();
        if dt == 0.0 {
            return next;
        }
        let radius = self.twin_domain_radius;
        for c in &mut next.cavs {
            let (p, clamped) = advance(c.position, cav_velocity(c), dt, radius);
            c.position = p;
            c.at_boundary |= clamped;
        }
        for n in &mut next.ncts {
            let (p, clamped) = advance(n.position, n.velocity, dt, radius);
            n.position = p;
            n.at_boundary |= clamped;
        }
        next
    }

    /// NCTs inside the closed security ball of a vehicle.
    pub fn visible_targets(&self, cav_id: CavId) -> Result<BTreeSet<NctId>> {
        let cav = self.cav(cav_id)?;
        Ok(self
            .ncts
            .iter()
            .filter(|n| distance(cav.position, n.position) <= cav.security_radius)
            .map(|n| n.id)
            .collect())
    }

    pub fn bearing_sector(&self, cav_id: CavId, nct_id: NctId) -> Result<usize> {
        let cav = self.cav(cav_id)?;
        let nct = self.nct(nct_id)?;
        let bearing = bearing_deg(cav.position, nct.position)?;
        Ok(sector_of(bearing, self.angle_sectors))
    }

    /// Position of a vehicle `dt` seconds after this snapshot.
    pub fn cav_position_after(&self, cav_id: CavId, dt: f64) -> Result<Point> {
        let c = self.cav(cav_id)?;
        Ok(advance(c.position, cav_velocity(c), dt, self.twin_domain_radius).0)
    }

    pub fn nct_position_after(&self, nct_id: NctId, dt: f64) -> Result<Point> {
        let n = self.nct(nct_id)?;
        Ok(advance(n.position, n.velocity, dt, self.twin_domain_radius).0)
    }

    pub fn info_value(&self, nct_id: NctId) -> Result<f64> {
        Ok(self.nct(nct_id)?.info_value)
    }
}

fn unique<T: Eq + std::hash::Hash + fmt::Display>(
    ids: impl Iterator<Item = T>,
    kind: &str,
) -> Result<()> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id.to_string()) {
            return Err(Error::Validation(format!("duplicate {kind} id {id}")));
        }
    }
    Ok(())
}

fn cav_velocity(c: &CavState) -> Point {
    let rad = c.heading.to_radians();
    [c.speed * rad.cos(), c.speed * rad.sin()]
}

pub fn norm(p: Point) -> f64 {
    p[0].hypot(p[1])
}

pub fn distance(a: Point, b: Point) -> f64 {
    (b[0] - a[0]).hypot(b[1] - a[1])
}

/// Bearing from `from` to `to` in degrees, normalized to `[0, 360)`.
pub fn bearing_deg(from: Point, to: Point) -> Result<f64> {
    let dx = to[0] - from[0];
    let dy = to[1] - from[1];
    if dx == 0.0 && dy == 0.0 {
        return Err(Error::DegenerateGeometry(format!("coincident positions {from:?}")));
    }
    let mut deg = dy.atan2(dx).to_degrees();
    if deg < 0.0 {
        deg += 360.0;
    }
    if deg >= 360.0 {
        deg -= 360.0;
    }
    Ok(deg)
}

pub fn sector_of(bearing: f64, sectors: usize) -> usize {
    let width = 360.0 / sectors as f64;
    ((bearing / width).floor() as usize).min(sectors - 1)
}

/// Smallest absolute difference between two bearings, in `[0, 180]`.
pub fn angular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

/// Straight-line motion. Leaving the disc of `radius` stops the entity at
/// the point where its path crosses the boundary.
fn advance(p: Point, v: Point, dt: f64, radius: f64) -> (Point, bool) {
    let q = [p[0] + v[0] * dt, p[1] + v[1] * dt];
    if norm(q) <= radius {
        return (q, false);
    }
    // |p + s d|^2 = R^2, largest root s in [0, 1]
    let d = [q[0] - p[0], q[1] - p[1]];
    let a = d[0] * d[0] + d[1] * d[1];
    let b = 2.0 * (p[0] * d[0] + p[1] * d[1]);
    let c = p[0] * p[0] + p[1] * p[1] - radius * radius;
    let disc = (b * b - 4.0 * a * c).max(0.0);
    let s = ((-b + disc.sqrt()) / (2.0 * a)).clamp(0.0, 1.0);
    let mut out = [p[0] + s * d[0], p[1] + s * d[1]];
    let n = norm(out);
    if n > radius {
        out = [out[0] * radius / n, out[1] * radius / n];
    }
    (out, true)
}

/// Sizes of a generated scenario.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GenSpec {
    pub cavs: usize,
    pub rsus: usize,
    pub ncts: usize,
    pub seed: u64,
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

fn polar(rng: &mut ChaCha8Rng, r_min: f64, r_max: f64) -> Point {
    let r = rng.gen_range(r_min..r_max);
    let a = rng.gen_range(0.0..std::f64::consts::TAU);
    [r * a.cos(), r * a.sin()]
}

/// Random scenario on a 200 m twin domain. Vehicles sit within 100 m of
/// the base station; each target is placed 5 to 25 m from a random vehicle
/// so that it falls inside that vehicle's security radius. Coordinates are
/// rounded to decimeters.
pub fn generate_scenario(g: GenSpec) -> Result<Scenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(g.seed);
    let mut cavs = Vec::with_capacity(g.cavs);
    for i in 0..g.cavs {
        let p = polar(&mut rng, 0.0, 100.0);
        cavs.push(CavState {
            id: CavId(i as u32),
            position: [round1(p[0]), round1(p[1])],
            heading: rng.gen_range(0..8) as f64 * 45.0,
            speed: rng.gen_range(5..=15) as f64,
            security_radius: 30.0,
            local_compute_units: rng.gen_range(1..=2),
            at_boundary: false,
        });
    }
    let rsus = (0..g.rsus)
        .map(|i| {
            let p = polar(&mut rng, 10.0, 80.0);
            RsuState { id: RsuId(i as u32), position: [round1(p[0]), round1(p[1])], edge_compute_units: 4 }
        })
        .collect();
    let mut ncts = Vec::with_capacity(g.ncts);
    for i in 0..g.ncts {
        let anchor = if cavs.is_empty() { [0.0, 0.0] } else { cavs[rng.gen_range(0..cavs.len())].position };
        let off = polar(&mut rng, 5.0, 25.0);
        let v = polar(&mut rng, 0.0, 2.0);
        ncts.push(NctState {
            id: NctId(i as u32),
            position: [round1(anchor[0] + off[0]), round1(anchor[1] + off[1])],
            velocity: [round1(v[0]), round1(v[1])],
            info_value: rng.gen_range(2..=8) as f64 * 5.0,
            at_boundary: false,
        });
    }
    let s = Scenario {
        cavs,
        rsus,
        ncts,
        twin_domain_radius: 200.0,
        time_horizon: 8,
        angle_sectors: 4,
        subcarriers: 4,
        rng_seed: g.seed,
        process: ProcessParams::default(),
        pricing: PricingConfig::default(),
    };
    s.validate()?;
    Ok(s)
}
