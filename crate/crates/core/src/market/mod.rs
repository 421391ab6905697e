//! Information-oriented resource trading: buyers publish demand, the
//! distributor places an information order, the purchaser turns order
//! lines into employment contracts, the round executes and settles.

mod round;
mod settle;
mod templates;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pool::{CostWeights, ReceiptId, Site};
use crate::process::{InformationRecord, SensingMode};
use crate::scenario::{CavId, NctId, RsuId, Scenario};

pub use round::{
    execute_round, form_contracts, form_contracts_with, sign_contract, ContractOutcome, ExecutionReport, FormationOutcome, SkippedLine,
};
pub use settle::{settle, TransactionLedger};
pub use templates::{enumerate_templates, plan_template, ContractTemplate, PlannedBlock, PlannedTemplate, Purpose};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ContractId(pub u32);

impl fmt::Display for ContractId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PricingConfig {
    /// Payment per information unit.
    pub unit_price: f64,
    /// Minimum fused detection quality a buyer pays for.
    pub q_min: f64,
    /// Non-zero orderable quality levels, ascending.
    pub quality_ladder: Vec<f64>,
    pub weights: CostWeights,
}

impl Default for PricingConfig {
    fn default() -> Self {
        PricingConfig { unit_price: 1.0, q_min: 0.5, quality_ladder: vec![0.5, 0.75], weights: CostWeights::default() }
    }
}

impl PricingConfig {
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Validation(format!("pricing: {m}")));
        if !(self.unit_price >= 0.0) {
            return bad("unit_price must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.q_min) {
            return bad("q_min must lie in [0, 1]");
        }
        if self.quality_ladder.is_empty()
            || self.quality_ladder.iter().any(|q| !(*q > 0.0 && *q <= 1.0))
            || self.quality_ladder.windows(2).any(|w| w[0] >= w[1])
        {
            return bad("quality_ladder must be strictly ascending within (0, 1]");
        }
        let w = self.weights;
        if !(w.space >= 0.0 && w.freq >= 0.0 && w.compute >= 0.0) {
            return bad("cost weights must be >= 0");
        }
        Ok(())
    }

    /// Quality of ladder index `level`; index 0 means "not ordered".
    pub fn level_quality(&self, level: usize) -> Option<f64> {
        match level {
            0 => Some(0.0),
            k => self.quality_ladder.get(k - 1).copied(),
        }
    }

    pub fn levels(&self) -> usize {
        self.quality_ladder.len() + 1
    }

    /// Highest ladder index whose quality does not exceed `q`.
    pub fn level_for_quality(&self, q: f64) -> usize {
        self.quality_ladder.iter().take_while(|l| **l <= q + 1e-12).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemandTerms {
    pub unit_price: f64,
    pub q_min: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DemandProfile {
    pub buyers: BTreeMap<CavId, BTreeMap<NctId, DemandTerms>>,
    /// Information carried by every target of the scenario.
    pub info_values: BTreeMap<NctId, f64>,
}

impl DemandProfile {
    pub fn is_empty(&self) -> bool {
        self.buyers.values().all(BTreeMap::is_empty)
    }

    pub fn demanded_targets(&self) -> BTreeSet<NctId> {
        self.buyers.values().flat_map(|m| m.keys().copied()).collect()
    }

    pub fn buyers_of(&self, target: NctId) -> Vec<(CavId, DemandTerms)> {
        self.buyers.iter().filter_map(|(b, m)| m.get(&target).map(|t| (*b, *t))).collect()
    }

    /// Total price-weighted value of a target: sum of buyer prices times its information.
    pub fn demand_value(&self, target: NctId) -> f64 {
        let i = self.info_values.get(&target).copied().unwrap_or(0.0);
        self.buyers_of(target).iter().map(|(_, t)| t.unit_price * i).sum()
    }

    /// What a produced record of `info` at `quality` would fetch from current demand.
    pub fn sellable_value(&self, target: NctId, info: f64, quality: f64) -> f64 {
        let cap = self.info_values.get(&target).copied().unwrap_or(0.0);
        self.buyers_of(target)
            .iter()
            .filter(|(_, t)| quality + 1e-12 >= t.q_min && info > 0.0)
            .map(|(_, t)| t.unit_price * info.min(cap))
            .sum()
    }

    /// Targets sorted by demand value descending, ties by id. Order lines,
    /// contract formation and the exhaustive search all use this order.
    pub fn canonical_order(&self, targets: impl IntoIterator<Item = NctId>) -> Vec<NctId> {
        let mut v: Vec<NctId> = targets.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        v.sort_by(|a, b| self.demand_value(*b).total_cmp(&self.demand_value(*a)).then(a.cmp(b)));
        v
    }
}

/// Every vehicle demands every target in its security domain.
pub fn publish_demand(s: &Scenario) -> DemandProfile {
    let terms = DemandTerms { unit_price: s.pricing.unit_price, q_min: s.pricing.q_min };
    let mut buyers = BTreeMap::new();
    for c in &s.cavs {
        let seen = s.visible_targets(c.id).expect("cav from scenario");
        if !seen.is_empty() {
            buyers.insert(c.id, seen.into_iter().map(|t| (t, terms)).collect());
        }
    }
    DemandProfile { buyers, info_values: s.ncts.iter().map(|n| (n.id, n.info_value)).collect() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderLine {
    pub target: NctId,
    pub level: usize,
    pub quality: f64,
    /// Ordered although no buyer currently demands the target.
    pub speculative: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InformationOrder {
    pub lines: Vec<OrderLine>,
}

/// Distributor decision: a ladder index per target (0 = skip).
pub type DistributorDecision = Vec<(NctId, usize)>;

pub fn place_order(
    demand: &DemandProfile,
    pricing: &PricingConfig,
    decision: &[(NctId, usize)],
) -> Result<InformationOrder> {
    let mut seen = BTreeSet::new();
    let mut chosen = BTreeMap::new();
    for &(t, level) in decision {
        if !demand.info_values.contains_key(&t) {
            return Err(Error::Decision(format!("unknown target {t}")));
        }
        if !seen.insert(t) {
            return Err(Error::Decision(format!("target {t} decided twice")));
        }
        let q = pricing
            .level_quality(level)
            .ok_or_else(|| Error::Decision(format!("ladder level {level} out of range for {t}")))?;
        if level > 0 {
            chosen.insert(t, (level, q));
        }
    }
    let demanded = demand.demanded_targets();
    let lines = demand
        .canonical_order(chosen.keys().copied())
        .into_iter()
        .map(|t| {
            let (level, quality) = chosen[&t];
            OrderLine { target: t, level, quality, speculative: !demanded.contains(&t) }
        })
        .collect();
    Ok(InformationOrder { lines })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ContractReceipts {
    pub space: Option<ReceiptId>,
    pub sensing: Option<ReceiptId>,
    pub uplink: Option<ReceiptId>,
    pub compute: Option<ReceiptId>,
}

impl ContractReceipts {
    pub fn all(&self) -> Vec<ReceiptId> {
        [self.space, self.sensing, self.uplink, self.compute].into_iter().flatten().collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmploymentContract {
    pub id: ContractId,
    pub employer: CavId,
    pub employee: CavId,
    /// Relay RSU; `None` for work computed at the employee itself.
    pub rsu: Option<RsuId>,
    pub target: NctId,
    pub mode: SensingMode,
    pub slots: usize,
    pub site: Site,
    pub ordered_quality: f64,
    pub receipts: ContractReceipts,
    pub produced: Option<InformationRecord>,
}

impl EmploymentContract {
    pub fn is_self_employment(&self) -> bool {
        self.employer == self.employee && self.rsu.is_none()
    }

    pub fn touches(&self, cav: CavId) -> bool {
        self.employer == cav || self.employee == cav
    }
}
