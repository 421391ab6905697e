//! Executable models of the processes that turn pool resources into
//! information: active and passive wireless sensing, uplink transfer,
//! compute extraction and local/edge fusion.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::ContractId;
use crate::pool::{PoolKind, ReceiptId, Site, TwinResourcePool};
use crate::scenario::{angular_distance, bearing_deg, sector_of, CavId, NctId, RsuId, Scenario};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    /// Deterministic expectations.
    Expected,
    /// Seeded Bernoulli draws per slot.
    Sampled,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SensingMode {
    #[serde(rename = "AWS")]
    Active,
    #[serde(rename = "PWS")]
    Passive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProcessParams {
    /// Per-slot detection probability of active sensing.
    pub p_aws: f64,
    /// Per-slot detection probability of passive sensing; below `p_aws`.
    pub p_pws: f64,
    /// Per-slot false-alarm probability.
    pub p_fa: f64,
    /// Data units produced per sensing slot.
    pub d0: f64,
    /// Data units carried by one uplink cell.
    pub r0: f64,
    /// Compute cells needed per data unit.
    pub c_per_unit: f64,
    /// Passive sensing angular tolerance, degrees.
    pub theta_tol: f64,
    /// Seconds per time slot; used to track moving geometry across slots.
    pub slot_seconds: f64,
    pub mode: EvalMode,
}

impl Default for ProcessParams {
    fn default() -> Self {
        ProcessParams {
            p_aws: 0.5,
            p_pws: 0.2,
            p_fa: 0.05,
            d0: 5.0,
            r0: 10.0,
            c_per_unit: 1.0,
            theta_tol: 15.0,
            slot_seconds: 1e-3,
            mode: EvalMode::Expected,
        }
    }
}

impl ProcessParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Validation(format!("process params: {m}")));
        if !(self.p_aws > 0.0 && self.p_aws <= 1.0) {
            return bad("p_aws must lie in (0, 1]");
        }
        if !(self.p_pws > 0.0 && self.p_pws <= 1.0) {
            return bad("p_pws must lie in (0, 1]");
        }
        if self.p_pws >= self.p_aws {
            return bad("p_pws must be below p_aws");
        }
        if !(self.p_fa >= 0.0 && self.p_fa < 1.0) {
            return bad("p_fa must lie in [0, 1)");
        }
        if !(self.d0 >= 0.0 && self.r0 > 0.0 && self.c_per_unit >= 0.0) {
            return bad("d0 >= 0, r0 > 0 and c_per_unit >= 0 required");
        }
        if !(self.theta_tol >= 0.0 && self.slot_seconds >= 0.0) {
            return bad("theta_tol and slot_seconds must be non-negative");
        }
        Ok(())
    }

    pub fn detection_probability(&self, mode: SensingMode) -> f64 {
        match mode {
            SensingMode::Active => self.p_aws,
            SensingMode::Passive => self.p_pws,
        }
    }

    /// Raw data volume, including false alarms, of `slots` sensing slots in expectation.
    pub fn expected_raw_volume(&self, slots: usize) -> f64 {
        self.d0 * slots as f64 * (1.0 + self.p_fa)
    }

    /// Compute cells needed to process `volume` data units.
    pub fn compute_cells_for(&self, volume: f64) -> usize {
        let need = self.c_per_unit * volume;
        // guard against 10.500000000000002-style round-up
        (need - 1e-9).ceil().max(0.0) as usize
    }
}

/// `1 - (1 - p)^n`: probability that at least one of `n` slots detects.
pub fn detection_quality(p: f64, slots: usize) -> f64 {
    1.0 - (1.0 - p).powi(slots as i32)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensingResult {
    pub target: NctId,
    pub sensor: CavId,
    pub mode: SensingMode,
    pub slots: usize,
    pub data_volume: f64,
    pub detection_quality: f64,
    pub false_alarm_volume: f64,
    pub receipts: Vec<ReceiptId>,
}

impl SensingResult {
    pub fn raw_volume(&self) -> f64 {
        self.data_volume + self.false_alarm_volume
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InformationRecord {
    pub target: NctId,
    pub info: f64,
    pub quality: f64,
    /// Compute site that extracted the information (vehicle = local, RSU = edge).
    pub site: Site,
    pub source: Option<ContractId>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transfer {
    pub transferred: f64,
    pub remainder: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fused {
    pub info: f64,
    pub quality: f64,
}

fn sense_outcome(
    p: f64,
    slots: usize,
    params: &ProcessParams,
    rng: &mut impl Rng,
) -> (f64, f64) {
    match params.mode {
        EvalMode::Expected => (detection_quality(p, slots), params.d0 * params.p_fa * slots as f64),
        EvalMode::Sampled => {
            let mut hit = false;
            let mut alarms = 0usize;
            for _ in 0..slots {
                hit |= rng.gen_bool(p);
                if rng.gen_bool(params.p_fa) {
                    alarms += 1;
                }
            }
            (if hit { 1.0 } else { 0.0 }, params.d0 * alarms as f64)
        }
    }
}

fn require_visible(s: &Scenario, cav: CavId, nct: NctId) -> Result<()> {
    s.nct(nct)?;
    if !s.visible_targets(cav)?.contains(&nct) {
        return Err(Error::SensingGeometry(format!("{nct} is outside the security domain of {cav}")));
    }
    Ok(())
}

fn owned(
    pool: &TwinResourcePool,
    id: ReceiptId,
    kind: PoolKind,
    owner: Site,
) -> Result<&crate::pool::AllocationReceipt> {
    let r = pool.receipt(id)?;
    if r.request.kind != kind || r.request.owner != owner {
        return Err(Error::Ownership(format!(
            "{id} is a {:?} block of {}, expected {kind:?} of {owner}",
            r.request.kind, r.request.owner
        )));
    }
    Ok(r)
}

/// Bearing from a vehicle to a target at the start of `slot`.
pub fn bearing_at_slot(s: &Scenario, cav: CavId, nct: NctId, slot: usize, params: &ProcessParams) -> Result<f64> {
    let dt = slot as f64 * params.slot_seconds;
    bearing_deg(s.cav_position_after(cav, dt)?, s.nct_position_after(nct, dt)?)
}

pub fn sector_at_slot(s: &Scenario, cav: CavId, nct: NctId, slot: usize, params: &ProcessParams) -> Result<usize> {
    Ok(sector_of(bearing_at_slot(s, cav, nct, slot, params)?, s.angle_sectors))
}

/// Bearing from a vehicle to an RSU at the start of `slot`.
pub fn rsu_bearing_at_slot(s: &Scenario, cav: CavId, rsu: RsuId, slot: usize, params: &ProcessParams) -> Result<f64> {
    let dt = slot as f64 * params.slot_seconds;
    bearing_deg(s.cav_position_after(cav, dt)?, s.rsu(rsu)?.position)
}

/// Active sensing: a dedicated beam (space cells) and sensing spectrum
/// (frequency cells) track the target slot by slot.
#[allow(clippy::too_many_arguments)]
pub fn aws_sense(
    s: &Scenario,
    pool: &TwinResourcePool,
    cav: CavId,
    nct: NctId,
    space_receipt: ReceiptId,
    freq_receipt: ReceiptId,
    params: &ProcessParams,
    rng: &mut impl Rng,
) -> Result<SensingResult> {
    require_visible(s, cav, nct)?;
    let space = owned(pool, space_receipt, PoolKind::Space, Site::Cav(cav))?;
    let freq = owned(pool, freq_receipt, PoolKind::Freq, Site::Cav(cav))?;
    for c in &space.request.cells {
        let want = sector_at_slot(s, cav, nct, c.time, params)?;
        if c.ordinate != want {
            return Err(Error::SensingGeometry(format!(
                "beam at slot {} points to sector {}, target is in sector {want}",
                c.time, c.ordinate
            )));
        }
    }
    let slots = space.slots();
    if freq.slots() != slots {
        return Err(Error::SensingGeometry(format!(
            "sensing spectrum covers slots {:?}, beam covers {slots:?}",
            freq.slots()
        )));
    }
    let n = slots.len();
    let (q, fa) = sense_outcome(params.p_aws, n, params, rng);
    Ok(SensingResult {
        target: nct,
        sensor: cav,
        mode: SensingMode::Active,
        slots: n,
        data_volume: params.d0 * n as f64,
        detection_quality: q,
        false_alarm_volume: fa,
        receipts: vec![space_receipt, freq_receipt],
    })
}

/// Passive sensing: echoes of an existing uplink beam, restricted to
/// targets within `theta_tol` of the vehicle-to-RSU bearing.
pub fn pws_sense(
    s: &Scenario,
    pool: &TwinResourcePool,
    cav: CavId,
    nct: NctId,
    comm_receipt: ReceiptId,
    params: &ProcessParams,
    rng: &mut impl Rng,
) -> Result<SensingResult> {
    let comm = pool
        .receipt(comm_receipt)
        .map_err(|_| Error::Dependency(format!("{comm_receipt} is not a live uplink")))?;
    if comm.request.kind != PoolKind::Freq || comm.request.owner != Site::Cav(cav) {
        return Err(Error::Dependency(format!("{comm_receipt} is not an uplink of {cav}")));
    }
    let rsu = comm
        .request
        .peer
        .ok_or_else(|| Error::Dependency(format!("{comm_receipt} carries no RSU uplink")))?;
    require_visible(s, cav, nct)?;
    let slots = comm.slots();
    for &t in &slots {
        let off = angular_distance(
            rsu_bearing_at_slot(s, cav, rsu, t, params)?,
            bearing_at_slot(s, cav, nct, t, params)?,
        );
        if off > params.theta_tol {
            return Err(Error::RegionRestriction(format!(
                "{nct} is {off:.2} deg off the beam toward {rsu} at slot {t} (tolerance {})",
                params.theta_tol
            )));
        }
    }
    let n = slots.len();
    let (q, fa) = sense_outcome(params.p_pws, n, params, rng);
    Ok(SensingResult {
        target: nct,
        sensor: cav,
        mode: SensingMode::Passive,
        slots: n,
        data_volume: params.d0 * n as f64,
        detection_quality: q,
        false_alarm_volume: fa,
        receipts: vec![comm_receipt],
    })
}

/// Moves up to `r0` data units per uplink cell to the RSU.
pub fn comm_transfer(
    s: &Scenario,
    pool: &TwinResourcePool,
    cav: CavId,
    rsu: RsuId,
    freq_receipt: ReceiptId,
    data_volume: f64,
    params: &ProcessParams,
) -> Result<Transfer> {
    s.rsu(rsu)?;
    let r = owned(pool, freq_receipt, PoolKind::Freq, Site::Cav(cav))?;
    if let Some(peer) = r.request.peer {
        if peer != rsu {
            return Err(Error::Ownership(format!("{freq_receipt} is an uplink to {peer}, not {rsu}")));
        }
    }
    let capacity = params.r0 * r.request.cells.len() as f64;
    let transferred = capacity.min(data_volume);
    Ok(Transfer { transferred, remainder: data_volume - transferred })
}

/// Extracts information from sensing data with the compute cells of `site`.
/// False-alarm data consumes compute but yields nothing.
pub fn compute_extract(
    sr: &SensingResult,
    pool: &TwinResourcePool,
    compute_receipt: ReceiptId,
    site: Site,
    info_value: f64,
    params: &ProcessParams,
) -> Result<InformationRecord> {
    let r = owned(pool, compute_receipt, PoolKind::Compute, site)?;
    let required = params.compute_cells_for(sr.raw_volume());
    let fraction = if required == 0 {
        1.0
    } else {
        (r.request.cells.len() as f64 / required as f64).min(1.0)
    };
    Ok(InformationRecord {
        target: sr.target,
        info: fraction * sr.detection_quality * info_value,
        quality: sr.detection_quality,
        site,
        source: None,
    })
}

/// Fuses duplicate observations per target by taking the maximum.
pub fn fuse_information<'a>(records: impl IntoIterator<Item = &'a InformationRecord>) -> BTreeMap<NctId, Fused> {
    let mut out: BTreeMap<NctId, Fused> = BTreeMap::new();
    for r in records {
        let e = out.entry(r.target).or_insert(Fused { info: 0.0, quality: 0.0 });
        e.info = e.info.max(r.info);
        e.quality = e.quality.max(r.quality);
    }
    out
}

/// Distinct time slots touched by a set of receipts.
pub fn slots_of(pool: &TwinResourcePool, receipts: &[ReceiptId]) -> Result<BTreeSet<usize>> {
    let mut out = BTreeSet::new();
    for r in receipts {
        out.extend(pool.receipt(*r)?.slots());
    }
    Ok(out)
}
