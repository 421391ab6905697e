use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ContractId, DemandProfile, ExecutionReport, InformationOrder, OrderLine};
use crate::process::fuse_information;
use crate::scenario::{CavId, NctId};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TransactionLedger {
    pub gross_income: f64,
    pub resource_cost: f64,
    pub net_profit: f64,
    pub payments: BTreeMap<CavId, f64>,
    /// Income per target, summed over its buyers.
    pub income: BTreeMap<NctId, f64>,
    pub contract_costs: BTreeMap<ContractId, f64>,
    /// Fused information per target that no buyer paid for.
    pub unsold: BTreeMap<NctId, f64>,
    pub unfulfilled: Vec<OrderLine>,
    /// Fused information over all targets.
    pub produced_info: f64,
    /// Fused information of targets sold at least once.
    pub sold_info: f64,
    /// Fused information of targets sold to two or more buyers.
    pub resold_info: f64,
}

impl TransactionLedger {
    pub fn hit_rate(&self) -> f64 {
        if self.produced_info > 0.0 {
            self.sold_info / self.produced_info
        } else {
            0.0
        }
    }

    pub fn reuse_rate(&self) -> f64 {
        if self.sold_info > 0.0 {
            self.resold_info / self.sold_info
        } else {
            0.0
        }
    }

    /// Cost of the contracts producing `target`.
    pub fn cost_of(&self, report: &ExecutionReport, target: NctId) -> f64 {
        report.outcomes.iter().filter(|o| o.contract.target == target).map(|o| o.cost).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ledger serializes")
    }
}

/// Fuses production per target and sells it to every buyer whose quality
/// threshold is met. Information is non-rival: one fused record can be
/// paid for by several buyers.
pub fn settle(demand: &DemandProfile, order: &InformationOrder, report: &ExecutionReport) -> TransactionLedger {
    let fused = fuse_information(report.records());
    let mut ledger = TransactionLedger::default();

    let mut sales: BTreeMap<NctId, usize> = BTreeMap::new();
    for (buyer, wants) in &demand.buyers {
        for (target, terms) in wants {
            let Some(f) = fused.get(target) else { continue };
            if f.info <= 0.0 || f.quality + 1e-12 < terms.q_min {
                continue;
            }
            let cap = demand.info_values.get(target).copied().unwrap_or(f.info);
            let pay = terms.unit_price * f.info.min(cap);
            *ledger.payments.entry(*buyer).or_default() += pay;
            *ledger.income.entry(*target).or_default() += pay;
            *sales.entry(*target).or_default() += 1;
        }
    }
    for (target, f) in &fused {
        ledger.produced_info += f.info;
        match sales.get(target).copied().unwrap_or(0) {
            0 => {
                if f.info > 0.0 {
                    ledger.unsold.insert(*target, f.info);
                }
            }
            n => {
                ledger.sold_info += f.info;
                if n >= 2 {
                    ledger.resold_info += f.info;
                }
            }
        }
    }

    for o in &report.outcomes {
        ledger.contract_costs.insert(o.contract.id, o.cost);
    }
    for line in &order.lines {
        let met = report.outcomes.iter().any(|o| {
            o.contract.target == line.target
                && o.contract.produced.as_ref().is_some_and(|r| r.quality + 1e-12 >= line.quality)
        });
        if !met {
            ledger.unfulfilled.push(line.clone());
        }
    }

    ledger.gross_income = ledger.payments.values().sum();
    ledger.resource_cost = report.total_cost();
    ledger.net_profit = ledger.gross_income - ledger.resource_cost;
    ledger
}
