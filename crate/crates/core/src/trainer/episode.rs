use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{EpisodeStats, TrainConfig};
use crate::baselines::{play_round, RoundOutcome};
use crate::error::Result;
use crate::graph::{build_employment_graph, reused_resources, EmploymentGraph, GraphEdge, Role};
use crate::market::{
    enumerate_templates, place_order, publish_demand, sign_contract, ContractId, ContractOutcome, DemandProfile,
    EmploymentContract, ExecutionReport, OrderLine, PlannedTemplate,
};
use crate::neural::{backward, gnn_forward, policy_distribution, Choice, Forward, Grads, Logit, LossSpec, PolicyParams};
use crate::pool::TwinResourcePool;
use crate::process::InformationRecord;
use crate::scenario::{NctId, Scenario};

/// Distributor vertex features.
pub const DISTRIBUTOR_FEATURES: usize = 10;
/// Purchaser vertex features.
pub const PURCHASER_FEATURES: usize = 10;
/// Index of the margin feature (sellable value minus cost) in both roles.
pub const DISTRIBUTOR_MARGIN: usize = 8;
pub const PURCHASER_MARGIN: usize = 9;

/// Largest information value of the scenario, at least 1.
pub fn money_scale(s: &Scenario) -> f64 {
    s.ncts.iter().map(|n| n.info_value).fold(1.0, f64::max)
}

/// Money-valued features are measured in quarters of [`money_scale`].
fn feature_scale(s: &Scenario) -> f64 {
    money_scale(s) / 4.0
}

/// How actions are picked from the policy.
pub enum Act<'r, R: Rng> {
    Sample(&'r mut R),
    Argmax,
}

impl<R: Rng> Act<'_, R> {
    fn pick(&mut self, p: &[f64]) -> usize {
        match self {
            Act::Argmax => {
                let mut best = 0;
                for (i, x) in p.iter().enumerate() {
                    if *x > p[best] {
                        best = i;
                    }
                }
                best
            }
            Act::Sample(rng) => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for (i, x) in p.iter().enumerate() {
                    acc += x;
                    if u < acc {
                        return i;
                    }
                }
                p.iter().rposition(|x| *x > 0.0).unwrap_or(0)
            }
        }
    }
}

/// One policy evaluation: a graph and the choices made on it. `targets`
/// names the target each choice is about.
#[derive(Clone, Debug)]
pub struct Step {
    pub role: Role,
    pub graph: EmploymentGraph,
    pub forward: Forward,
    pub choices: Vec<Choice>,
    pub targets: Vec<NctId>,
}

#[derive(Clone, Debug, Default)]
pub struct Trajectory {
    pub steps: Vec<Step>,
}

impl Trajectory {
    pub fn decisions(&self) -> usize {
        self.steps.iter().map(|s| s.choices.len()).sum()
    }
}

#[derive(Clone, Debug)]
pub struct Episode {
    pub trajectory: Trajectory,
    pub stats: EpisodeStats,
    pub round: RoundOutcome,
}

fn expected_record(s: &Scenario, plan: &PlannedTemplate, id: ContractId) -> InformationRecord {
    let info = plan.expected_quality * s.info_value(plan.target).unwrap_or(0.0);
    InformationRecord { target: plan.target, info, quality: plan.expected_quality, site: plan.template.site, source: Some(id) }
}

fn speculative_outcome(s: &Scenario, mut c: EmploymentContract, plan: &PlannedTemplate) -> ContractOutcome {
    c.produced = Some(expected_record(s, plan, c.id));
    ContractOutcome { contract: c, sensing: None, transfer: None, cost: plan.incremental_cost, error: None }
}

fn scaled_base(mut f: Vec<f64>, scale: f64) -> Vec<f64> {
    for i in [0, 1, 2] {
        f[i] /= scale;
    }
    f
}

fn cheapest(plans: &[PlannedTemplate]) -> Option<&PlannedTemplate> {
    plans.iter().fold(None, |best: Option<&PlannedTemplate>, p| match best {
        Some(b) if b.incremental_cost <= p.incremental_cost => Some(b),
        _ => Some(p),
    })
}

/// Ladder options of one demanded target: `(level, vertex)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetOptions {
    pub target: NctId,
    pub levels: Vec<(usize, usize)>,
}

/// Candidate graph of the distributor: one vertex per demanded target and
/// feasible ladder level, realized by the cheapest template on the empty
/// pool. The last feature flags the target under decision; see [`focus`].
pub fn distributor_view(s: &Scenario, demand: &DemandProfile) -> (EmploymentGraph, Vec<TargetOptions>) {
    let fresh = TwinResourcePool::new(s);
    let scale = feature_scale(s);
    let mut outcomes = Vec::new();
    let mut extra = Vec::new();
    let mut options = Vec::new();
    for t in demand.canonical_order(demand.demanded_targets()) {
        let mut levels = Vec::new();
        for level in 1..s.pricing.levels() {
            let quality = s.pricing.level_quality(level).unwrap_or(1.0);
            let line = OrderLine { target: t, level, quality, speculative: false };
            let plans = enumerate_templates(s, &fresh, &line, &s.process);
            let Some(plan) = cheapest(&plans) else { continue };
            let id = ContractId(outcomes.len() as u32);
            let mut scratch = fresh.clone();
            let c = sign_contract(&mut scratch, demand, &line, plan, id).expect("plan fits the empty pool");
            let info = plan.expected_quality * s.info_value(t).unwrap_or(0.0);
            let sellable = demand.sellable_value(t, info, plan.expected_quality);
            extra.push([demand.buyers_of(t).len() as f64, sellable / scale, (sellable - plan.incremental_cost) / scale]);
            levels.push((level, outcomes.len()));
            outcomes.push(speculative_outcome(s, c, plan));
        }
        options.push(TargetOptions { target: t, levels });
    }
    let report = ExecutionReport { outcomes };
    let mut g = build_employment_graph(&report, &fresh, demand, Role::Distributor);
    for (f, x) in g.features.iter_mut().zip(extra) {
        *f = scaled_base(std::mem::take(f), scale);
        f.extend(x);
        f.push(0.0);
    }
    for e in &mut g.edges {
        e.feature /= scale;
    }
    (g, options)
}

/// Copy of a distributor graph with `vertices` flagged as under decision.
pub fn focus(graph: &EmploymentGraph, vertices: impl IntoIterator<Item = usize>) -> EmploymentGraph {
    let mut g = graph.clone();
    for v in vertices {
        g.features[v][DISTRIBUTOR_FEATURES - 1] = 1.0;
    }
    g
}

/// Candidate graph of the purchaser for one line: the contracts formed so
/// far followed by one vertex per feasible template.
pub fn purchaser_view(
    s: &Scenario,
    demand: &DemandProfile,
    pool: &TwinResourcePool,
    formed: &[(EmploymentContract, PlannedTemplate)],
    line: &OrderLine,
    templates: &[PlannedTemplate],
) -> EmploymentGraph {
    let scale = feature_scale(s);
    let row = |c: &EmploymentContract, plan: &PlannedTemplate, candidate: bool| {
        let rec = expected_record(s, plan, c.id);
        let it = s.info_value(c.target).unwrap_or(0.0);
        let mut f = scaled_base(crate::graph::contract_features(c, rec.info, plan.incremental_cost, it), scale);
        let sellable = demand.sellable_value(c.target, rec.info, rec.quality);
        f.extend([
            if candidate { 1.0 } else { 0.0 },
            plan.shared_cells() as f64,
            sellable / scale,
            (sellable - plan.incremental_cost) / scale,
        ]);
        f
    };
    let mut features: Vec<Vec<f64>> = formed.iter().map(|(c, p)| row(c, p, false)).collect();
    let mut edges = Vec::new();
    for i in 0..formed.len() {
        for j in i + 1..formed.len() {
            let (a, b) = (&formed[i].0, &formed[j].0);
            let reuse = reused_resources(pool, a, b) as f64;
            if reuse > 0.0 || a.touches(b.employee) || a.touches(b.employer) {
                edges.push(GraphEdge { a: i, b: j, feature: reuse });
            }
        }
    }
    let base = formed.len();
    let mut candidates = Vec::new();
    for (k, plan) in templates.iter().enumerate() {
        let mut scratch = pool.clone();
        let id = ContractId((base + k) as u32);
        let c = sign_contract(&mut scratch, demand, line, plan, id).expect("template is feasible on this pool");
        features.push(row(&c, plan, true));
        for (i, (f, _)) in formed.iter().enumerate() {
            let reuse = reused_resources(&scratch, &c, f) as f64;
            if reuse > 0.0 || c.touches(f.employee) || c.touches(f.employer) {
                edges.push(GraphEdge { a: i, b: base + k, feature: reuse });
            }
        }
        candidates.push(c);
    }
    for i in 0..candidates.len() {
        for j in i + 1..candidates.len() {
            let (a, b) = (&candidates[i], &candidates[j]);
            if a.touches(b.employee) || a.touches(b.employer) {
                edges.push(GraphEdge { a: base + i, b: base + j, feature: 0.0 });
            }
        }
    }
    let mut g = EmploymentGraph::new(Role::Purchaser, features, edges);
    g.edges.sort_by_key(|e| (e.a, e.b));
    g
}

/// One market round driven by the two policies.
pub fn run_episode<R: Rng>(
    s: &Scenario,
    distributor: &PolicyParams,
    purchaser: &PolicyParams,
    act: &mut Act<'_, R>,
    seed: u64,
) -> Result<Episode> {
    let demand = publish_demand(s);
    let mut trajectory = Trajectory::default();

    let (graph, options) = distributor_view(s, &demand);
    let mut decision = Vec::new();
    for o in &options {
        let graph = focus(&graph, o.levels.iter().map(|(_, v)| *v));
        let forward = gnn_forward(distributor, &graph)?;
        let logits: Vec<Logit> = std::iter::once(Logit::Fixed).chain(o.levels.iter().map(|(_, v)| Logit::Vertex(*v))).collect();
        let mut choice = Choice { options: logits, taken: 0, advantage: 0.0 };
        let p = choice.probabilities(&forward.scores);
        choice.taken = act.pick(&p);
        decision.push((o.target, if choice.taken == 0 { 0 } else { o.levels[choice.taken - 1].0 }));
        trajectory.steps.push(Step { role: Role::Distributor, graph, forward, choices: vec![choice], targets: vec![o.target] });
    }
    let order = place_order(&demand, &s.pricing, &decision)?;

    let mut formed: Vec<(EmploymentContract, PlannedTemplate)> = Vec::new();
    let mut failure = None;
    let round = play_round(s, &demand, order, seed, |_, line, pool, templates| {
        if failure.is_some() {
            return None;
        }
        let graph = purchaser_view(s, &demand, pool, &formed, line, templates);
        let forward = match gnn_forward(purchaser, &graph) {
            Ok(f) => f,
            Err(e) => {
                failure = Some(e);
                return None;
            }
        };
        let base = formed.len();
        let options: Vec<Logit> = (0..templates.len()).map(|k| Logit::Vertex(base + k)).collect();
        let scores: Vec<f64> = (0..templates.len()).map(|k| forward.scores[base + k]).collect();
        let p = policy_distribution(&scores, &vec![true; scores.len()]).ok()?;
        let taken = act.pick(&p);
        let plan = templates[taken].clone();
        let mut scratch = pool.clone();
        let c = sign_contract(&mut scratch, &demand, line, &plan, ContractId(base as u32)).ok()?;
        formed.push((c, plan));
        trajectory.steps.push(Step {
            role: Role::Purchaser,
            graph,
            forward,
            choices: vec![Choice { options, taken, advantage: 0.0 }],
            targets: vec![line.target],
        });
        Some(taken)
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let stats = EpisodeStats::of(&round);
    Ok(Episode { trajectory, stats, round })
}

/// Per-target pieces of the settled round.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TargetAccount {
    pub income: f64,
    pub cost: f64,
    pub unsold: f64,
    pub unfulfilled: bool,
}

pub fn target_accounts(round: &RoundOutcome) -> BTreeMap<NctId, TargetAccount> {
    let l = &round.ledger;
    let mut out: BTreeMap<NctId, TargetAccount> = BTreeMap::new();
    for line in &round.order.lines {
        let a = out.entry(line.target).or_default();
        a.income = l.income.get(&line.target).copied().unwrap_or(0.0);
        a.cost = l.cost_of(&round.report, line.target);
        a.unsold = l.unsold.get(&line.target).copied().unwrap_or(0.0);
        a.unfulfilled = l.unfulfilled.iter().any(|u| u.target == line.target);
    }
    out
}

/// Learning return of one decision about `target`, before scaling.
pub fn decision_return(role: Role, account: &TargetAccount, cfg: &TrainConfig) -> f64 {
    let net = account.income - account.cost;
    let own = match role {
        Role::Distributor => account.income - cfg.lambda_unsold * account.unsold,
        Role::Purchaser => -account.cost - if account.unfulfilled { cfg.lambda_unfulfilled } else { 0.0 },
    };
    (1.0 - cfg.net_guidance) * own + cfg.net_guidance * net
}

/// Gradient of one episode's loss for `role`, the scaled returns used,
/// and their mean absolute raw value.
pub fn episode_gradient(
    episode: &Episode,
    role: Role,
    params: &PolicyParams,
    scale: f64,
    cfg: &TrainConfig,
) -> Result<(Grads, f64, usize)> {
    let accounts = target_accounts(&episode.round);
    let mut grads = Grads::zeros(params.values.len());
    let mut abs_sum = 0.0;
    let mut count = 0;
    for step in episode.trajectory.steps.iter().filter(|s| s.role == role) {
        let mut choices = step.choices.clone();
        let mut returns = Vec::with_capacity(choices.len());
        for (c, t) in choices.iter_mut().zip(&step.targets) {
            let raw = accounts.get(t).map_or(0.0, |a| decision_return(role, a, cfg));
            abs_sum += raw.abs();
            count += 1;
            let r = raw / scale;
            c.advantage = r - step.forward.value;
            returns.push(r);
        }
        let spec = LossSpec { choices, entropy_weight: cfg.entropy_weight, value_weight: cfg.value_weight, returns };
        grads.add(&backward(params, &step.graph, &step.forward, &spec)?);
    }
    Ok((grads, abs_sum, count))
}
