use serde::{Deserialize, Serialize};

use super::OrderLine;
use crate::pool::{BlockRequest, Cell, GridRef, PoolKind, Site, TwinResourcePool};
use crate::process::{
    bearing_at_slot, detection_quality, rsu_bearing_at_slot, sector_at_slot, ProcessParams, SensingMode,
};
use crate::scenario::{angular_distance, CavId, NctId, Scenario};

/// One way of producing information about a target: who senses, how,
/// for how many slots, and where the data is computed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ContractTemplate {
    pub employee: CavId,
    pub mode: SensingMode,
    pub slots: usize,
    pub site: Site,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Purpose {
    Beam,
    Sensing,
    Uplink,
    Compute,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannedBlock {
    pub purpose: Purpose,
    pub request: BlockRequest,
}

/// A template resolved against the current pool: concrete cells, expected
/// quality and the cost it would add.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannedTemplate {
    pub template: ContractTemplate,
    pub target: NctId,
    pub blocks: Vec<PlannedBlock>,
    pub expected_quality: f64,
    pub incremental_cost: f64,
}

impl PlannedTemplate {
    /// Cells this plan would reuse from live receipts.
    pub fn shared_cells(&self) -> usize {
        self.blocks.iter().filter(|b| b.request.share_with.is_some()).map(|b| b.request.cells.len()).sum()
    }
}

const SLOT_CHOICES: [usize; 2] = [1, 2];

/// Feasible templates for an order line in deterministic order
/// (employee, mode, slots, site).
pub fn enumerate_templates(
    s: &Scenario,
    pool: &TwinResourcePool,
    line: &OrderLine,
    params: &ProcessParams,
) -> Vec<PlannedTemplate> {
    let mut out = Vec::new();
    let mut cavs: Vec<CavId> = s.cavs.iter().map(|c| c.id).collect();
    cavs.sort();
    let mut rsus: Vec<_> = s.rsus.iter().map(|r| r.id).collect();
    rsus.sort();
    for employee in cavs {
        for mode in [SensingMode::Active, SensingMode::Passive] {
            for slots in SLOT_CHOICES {
                let sites = std::iter::once(Site::Cav(employee)).chain(rsus.iter().map(|r| Site::Rsu(*r)));
                for site in sites {
                    let t = ContractTemplate { employee, mode, slots, site };
                    if let Some(plan) = plan_template(s, pool, line.target, t, params) {
                        if plan.expected_quality + 1e-12 >= line.quality {
                            out.push(plan);
                        }
                    }
                }
            }
        }
    }
    out
}

/// Resolves a template into concrete first-fit blocks, or `None` when the
/// geometry or the remaining capacity rules it out.
///
/// Compute runs either at the employee's own LSCU or at an RSU reached by
/// a fresh uplink. Passive sensing piggybacks on an existing uplink of the
/// employee and is processed locally.
pub fn plan_template(
    s: &Scenario,
    pool: &TwinResourcePool,
    target: NctId,
    t: ContractTemplate,
    params: &ProcessParams,
) -> Option<PlannedTemplate> {
    let visible = s.visible_targets(t.employee).ok()?;
    if !visible.contains(&target) {
        return None;
    }
    if let Site::Cav(c) = t.site {
        if c != t.employee {
            return None;
        }
    }
    let owner = Site::Cav(t.employee);
    let weights = pool.weights();
    let mut blocks = Vec::new();
    match t.mode {
        SensingMode::Active => {
            let free_freq = pool.free_cells(GridRef::Freq);
            let mut beam = Vec::new();
            let mut spectrum = Vec::new();
            for slot in 0..pool.time_horizon() {
                if beam.len() == t.slots {
                    break;
                }
                let sector = sector_at_slot(s, t.employee, target, slot, params).ok()?;
                let cell = Cell::new(slot, sector);
                if !pool.is_free(GridRef::Space(t.employee), cell) {
                    continue;
                }
                if let Some(f) = free_freq.iter().find(|c| c.time == slot) {
                    beam.push(cell);
                    spectrum.push(*f);
                }
            }
            if beam.len() < t.slots {
                return None;
            }
            blocks.push(PlannedBlock {
                purpose: Purpose::Beam,
                request: BlockRequest::new(PoolKind::Space, owner, beam),
            });
            blocks.push(PlannedBlock {
                purpose: Purpose::Sensing,
                request: BlockRequest::new(PoolKind::Freq, owner, spectrum.iter().copied()),
            });
            if let Site::Rsu(rsu) = t.site {
                let need = (params.expected_raw_volume(t.slots) / params.r0 - 1e-9).ceil().max(1.0) as usize;
                let up: Vec<Cell> = free_freq.iter().filter(|c| !spectrum.contains(c)).take(need).copied().collect();
                if up.len() < need {
                    return None;
                }
                blocks.push(PlannedBlock {
                    purpose: Purpose::Uplink,
                    request: BlockRequest::new(PoolKind::Freq, owner, up).toward(rsu),
                });
            }
        }
        SensingMode::Passive => {
            if t.site != owner {
                return None;
            }
            let base = pool.receipts().find_map(|r| {
                let req = &r.request;
                if req.kind != PoolKind::Freq || req.owner != owner || req.share_with.is_some() {
                    return None;
                }
                let rsu = req.peer?;
                if req.cells.len() < t.slots {
                    return None;
                }
                let cells: Vec<Cell> = req.cells.iter().take(t.slots).copied().collect();
                let aligned = cells.iter().all(|c| {
                    let toward = rsu_bearing_at_slot(s, t.employee, rsu, c.time, params);
                    let at = bearing_at_slot(s, t.employee, target, c.time, params);
                    matches!((toward, at), (Ok(a), Ok(b)) if angular_distance(a, b) <= params.theta_tol)
                });
                aligned.then_some((r.id, cells))
            })?;
            blocks.push(PlannedBlock {
                purpose: Purpose::Uplink,
                request: BlockRequest::new(PoolKind::Freq, owner, base.1).sharing(base.0),
            });
        }
    }

    let raw = params.expected_raw_volume(t.slots);
    // at least one cell so every contract holds a compute receipt
    let need = params.compute_cells_for(raw).max(1);
    let free: Vec<Cell> = pool.free_cells(GridRef::Compute(t.site)).into_iter().take(need).collect();
    if free.len() < need {
        return None;
    }
    blocks.push(PlannedBlock { purpose: Purpose::Compute, request: BlockRequest::new(PoolKind::Compute, t.site, free) });

    let incremental_cost = blocks
        .iter()
        .filter(|b| b.request.share_with.is_none())
        .map(|b| weights.of(b.request.kind) * b.request.cells.len() as f64)
        .sum();
    Some(PlannedTemplate {
        template: t,
        target,
        blocks,
        expected_quality: detection_quality(params.detection_probability(t.mode), t.slots),
        incremental_cost,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::scenario::RsuId;

    fn line(t: u32, q: f64) -> OrderLine {
        OrderLine { target: NctId(t), level: 1, quality: q, speculative: false }
    }

    #[test]
    fn aws_local_plan_on_fixture() {
        let s = fixtures::tiny3x4();
        let pool = TwinResourcePool::new(&s);
        let t = ContractTemplate { employee: CavId(0), mode: SensingMode::Active, slots: 1, site: Site::Cav(CavId(0)) };
        let p = plan_template(&s, &pool, NctId(0), t, &s.process).unwrap();
        assert_eq!(p.blocks.len(), 3);
        // 1 beam + 1 sensing + ceil(5.25) compute
        assert_eq!(p.incremental_cost, 8.0);
        assert_eq!(p.expected_quality, 0.5);
        let edge = ContractTemplate { site: Site::Rsu(RsuId(0)), slots: 2, ..t };
        let p = plan_template(&s, &pool, NctId(0), edge, &s.process).unwrap();
        // 2 beam + 2 sensing + 2 uplink + 11 compute
        assert_eq!(p.incremental_cost, 17.0);
    }

    #[test]
    fn invisible_target_has_no_templates() {
        let s = fixtures::tiny3x4();
        let pool = TwinResourcePool::new(&s);
        let mut far = s.clone();
        far.ncts[0].position = [150.0, 0.0];
        assert!(enumerate_templates(&far, &pool, &line(0, 0.5), &far.process).is_empty());
        assert!(!enumerate_templates(&s, &pool, &line(0, 0.5), &s.process).is_empty());
    }

    #[test]
    fn no_passive_template_without_uplink() {
        let mut s = fixtures::tiny3x4();
        s.process.p_aws = 0.8;
        s.process.p_pws = 0.5;
        let pool = TwinResourcePool::new(&s);
        let all = enumerate_templates(&s, &pool, &line(3, 0.5), &s.process);
        assert!(all.iter().all(|p| p.template.mode == SensingMode::Active));
    }

    #[test]
    fn quality_filter() {
        let s = fixtures::tiny3x4();
        let pool = TwinResourcePool::new(&s);
        let q2 = enumerate_templates(&s, &pool, &line(0, 0.75), &s.process);
        assert!(!q2.is_empty());
        assert!(q2.iter().all(|p| p.template.slots == 2));
    }
}
