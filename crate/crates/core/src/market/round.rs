use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    enumerate_templates, ContractId, ContractReceipts, DemandProfile, EmploymentContract, InformationOrder, OrderLine,
    PlannedTemplate, Purpose,
};
use crate::error::{Error, Result};
use crate::pool::{Site, TwinResourcePool};
use crate::process::{
    aws_sense, comm_transfer, compute_extract, pws_sense, ProcessParams, SensingMode, SensingResult, Transfer,
};
use crate::scenario::Scenario;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedLine {
    pub line: OrderLine,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FormationOutcome {
    pub contracts: Vec<EmploymentContract>,
    pub skipped: Vec<SkippedLine>,
}

/// Allocates every block of a plan and wraps the receipts in a contract.
/// All-or-nothing: on failure the pool is restored.
pub fn sign_contract(
    pool: &mut TwinResourcePool,
    demand: &DemandProfile,
    line: &OrderLine,
    plan: &PlannedTemplate,
    id: ContractId,
) -> Result<EmploymentContract> {
    let t = plan.template;
    let before = pool.clone();
    let mut receipts = ContractReceipts::default();
    for block in &plan.blocks {
        let r = match pool.allocate(block.request.clone()) {
            Ok(r) => r,
            Err(e) => {
                *pool = before;
                return Err(e);
            }
        };
        let slot = match block.purpose {
            Purpose::Beam => &mut receipts.space,
            Purpose::Sensing => &mut receipts.sensing,
            Purpose::Uplink => &mut receipts.uplink,
            Purpose::Compute => &mut receipts.compute,
        };
        *slot = Some(r.id);
    }
    let (employer, rsu) = match t.site {
        Site::Cav(_) => (t.employee, None),
        Site::Rsu(r) => {
            let other = demand.buyers_of(plan.target).into_iter().map(|(b, _)| b).find(|b| *b != t.employee);
            (other.unwrap_or(t.employee), Some(r))
        }
    };
    Ok(EmploymentContract {
        id,
        employer,
        employee: t.employee,
        rsu,
        target: plan.target,
        mode: t.mode,
        slots: t.slots,
        site: t.site,
        ordered_quality: line.quality,
        receipts,
        produced: None,
    })
}

/// Turns order lines into contracts. `decision[i]` indexes the templates
/// enumerated for line `i` against the pool as it stands when that line is
/// reached; `None` or an invalid index skips the line.
pub fn form_contracts(
    s: &Scenario,
    pool: &mut TwinResourcePool,
    demand: &DemandProfile,
    order: &InformationOrder,
    decision: &[Option<usize>],
    params: &ProcessParams,
) -> FormationOutcome {
    form_contracts_with(s, pool, demand, order, params, |i, _, _, _| decision.get(i).copied().flatten())
}

/// Like [`form_contracts`], but asks `choose(line index, line, pool,
/// templates)` for each line in turn. Lines without templates are skipped
/// without asking.
pub fn form_contracts_with(
    s: &Scenario,
    pool: &mut TwinResourcePool,
    demand: &DemandProfile,
    order: &InformationOrder,
    params: &ProcessParams,
    mut choose: impl FnMut(usize, &OrderLine, &TwinResourcePool, &[PlannedTemplate]) -> Option<usize>,
) -> FormationOutcome {
    let mut out = FormationOutcome::default();
    for (i, line) in order.lines.iter().enumerate() {
        let skip = |reason: String| SkippedLine { line: line.clone(), reason };
        let templates = enumerate_templates(s, pool, line, params);
        if templates.is_empty() {
            out.skipped.push(skip("no feasible template".into()));
            continue;
        }
        let Some(choice) = choose(i, line, pool, &templates) else {
            out.skipped.push(skip("no template chosen".into()));
            continue;
        };
        let Some(plan) = templates.get(choice) else {
            out.skipped.push(skip(format!("template {choice} of {} is not feasible", templates.len())));
            continue;
        };
        let id = ContractId(out.contracts.len() as u32);
        match sign_contract(pool, demand, line, plan, id) {
            Ok(c) => out.contracts.push(c),
            Err(e) => out.skipped.push(skip(e.to_string())),
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractOutcome {
    pub contract: EmploymentContract,
    pub sensing: Option<SensingResult>,
    pub transfer: Option<Transfer>,
    /// Weighted cost of the cells this contract added to the pool.
    pub cost: f64,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExecutionReport {
    pub outcomes: Vec<ContractOutcome>,
}

impl ExecutionReport {
    pub fn total_cost(&self) -> f64 {
        self.outcomes.iter().map(|o| o.cost).sum()
    }

    pub fn records(&self) -> impl Iterator<Item = &crate::process::InformationRecord> {
        self.outcomes.iter().filter_map(|o| o.contract.produced.as_ref())
    }

    pub fn contracts(&self) -> impl Iterator<Item = &EmploymentContract> {
        self.outcomes.iter().map(|o| &o.contract)
    }
}

fn run_contract(
    s: &Scenario,
    pool: &TwinResourcePool,
    c: &EmploymentContract,
    params: &ProcessParams,
    rng: &mut impl Rng,
) -> Result<(SensingResult, Option<Transfer>, crate::process::InformationRecord)> {
    let missing = |what: &str| Error::Dependency(format!("{} holds no {what} receipt", c.id));
    let sr = match c.mode {
        SensingMode::Active => aws_sense(
            s,
            pool,
            c.employee,
            c.target,
            c.receipts.space.ok_or_else(|| missing("beam"))?,
            c.receipts.sensing.ok_or_else(|| missing("sensing"))?,
            params,
            rng,
        )?,
        SensingMode::Passive => {
            pws_sense(s, pool, c.employee, c.target, c.receipts.uplink.ok_or_else(|| missing("uplink"))?, params, rng)?
        }
    };
    let mut share = 1.0;
    let transfer = match c.site {
        Site::Rsu(rsu) => {
            let up = c.receipts.uplink.ok_or_else(|| missing("uplink"))?;
            let tr = comm_transfer(s, pool, c.employee, rsu, up, sr.raw_volume(), params)?;
            if sr.raw_volume() > 0.0 {
                share = tr.transferred / sr.raw_volume();
            }
            Some(tr)
        }
        Site::Cav(_) => None,
    };
    let mut at_site = sr.clone();
    at_site.data_volume *= share;
    at_site.false_alarm_volume *= share;
    let info_value = s.info_value(c.target)?;
    let compute = c.receipts.compute.ok_or_else(|| missing("compute"))?;
    let mut record = compute_extract(&at_site, pool, compute, c.site, info_value, params)?;
    record.info *= share;
    record.source = Some(c.id);
    Ok((sr, transfer, record))
}

/// Runs sensing, optional uplink transfer and extraction for every contract
/// in id order. Failures are recorded per contract; the round continues.
pub fn execute_round(
    s: &Scenario,
    pool: &TwinResourcePool,
    contracts: Vec<EmploymentContract>,
    params: &ProcessParams,
    rng: &mut impl Rng,
) -> ExecutionReport {
    let mut contracts = contracts;
    contracts.sort_by_key(|c| c.id);
    let outcomes = contracts
        .into_iter()
        .map(|mut contract| {
            let cost = contract
                .receipts
                .all()
                .iter()
                .filter_map(|r| pool.receipt(*r).ok())
                .map(|r| r.weighted_cost)
                .sum();
            match run_contract(s, pool, &contract, params, rng) {
                Ok((sr, transfer, record)) => {
                    contract.produced = Some(record);
                    ContractOutcome { contract, sensing: Some(sr), transfer, cost, error: None }
                }
                Err(e) => ContractOutcome { contract, sensing: None, transfer: None, cost, error: Some(e.to_string()) },
            }
        })
        .collect();
    ExecutionReport { outcomes }
}
