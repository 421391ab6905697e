//! Checks behind the acceptance run. Each returns a one-line detail on
//! success and a diagnostic on failure.
#![allow(dead_code)]

use iscc::baselines::{exhaustive_optimal, feasible_levels, greedy_allocator, play_round, random_allocator, replay_choices, SearchCaps};
use iscc::commands::{self, Allocator};
use iscc::error::Error;
use iscc::fixtures;
use iscc::graph::{EmploymentGraph, GraphEdge, Role};
use iscc::market::{
    place_order, plan_template, publish_demand, settle, sign_contract, ContractId, ContractTemplate,
    DemandTerms, InformationOrder, Purpose,
};
use iscc::neural::{backward, gnn_forward, init_params, loss_value, Choice, GnnArch, Logit, LossSpec};
use iscc::pool::{BlockRequest, Cell, PoolKind, Site, TwinResourcePool};
use iscc::process::{aws_sense, detection_quality, pws_sense, EvalMode, SensingMode};
use iscc::scenario::{generate_scenario, CavId, CavState, GenSpec, NctId, RsuId, Scenario};
use iscc::trainer::{margin_following_params, run_episode, train, Act, TrainConfig};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if std::ops::Not::not($cond) {
            return Err(format!($($msg)+));
        }
    };
}

fn generated(seed: u64) -> Scenario {
    let g = GenSpec { cavs: 2 + (seed % 3) as usize, rsus: (seed % 2) as usize, ncts: 2 + (seed % 4) as usize, seed };
    generate_scenario(g).expect("generator output is valid")
}

// ---------------------------------------------------------------- ledger

pub fn ledger_identity() -> Check {
    let fixtures = fixtures::all();
    let cfg = TrainConfig::default();
    let (d_arch, p_arch) = cfg.archs();
    let (dist, purch) = (init_params(d_arch, 1).unwrap(), init_params(p_arch, 2).unwrap());
    let mut contracts = 0;
    for seed in 0..1000u64 {
        let mut s = match seed % 4 {
            3 => generated(seed),
            k => fixtures[k as usize % fixtures.len()].1.clone(),
        };
        s.rng_seed = seed;
        if seed % 5 == 0 {
            s.process.mode = EvalMode::Sampled;
        }
        let round = match seed % 3 {
            0 => random_allocator(seed, &s),
            1 => greedy_allocator(&s),
            _ => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                run_episode(&s, &dist, &purch, &mut Act::Sample(&mut rng), seed).map_err(|e| e.to_string())?.round
            }
        };
        let l = &round.ledger;
        ensure!(l.net_profit == l.gross_income - l.resource_cost, "seed {seed}: net {} != gross - cost", l.net_profit);
        let per_contract: f64 = l.contract_costs.values().sum();
        ensure!(per_contract == l.resource_cost, "seed {seed}: contract costs {per_contract} != {}", l.resource_cost);
        let distinct = round.pool.as_ref().expect("round keeps its pool").weighted_allocated();
        ensure!(per_contract == distinct, "seed {seed}: contract costs {per_contract} != weighted cells {distinct}");
        contracts += l.contract_costs.len();
    }
    Ok(format!("1000 rounds, {contracts} contracts"))
}

// ------------------------------------------------------------------ pool

#[derive(Clone, Debug)]
pub enum Op {
    Alloc { kind: u8, owner: u8, cells: Vec<(usize, usize)>, share: Option<usize>, peer: bool },
    Release(usize),
}

pub fn op_strategy() -> impl Strategy<Value = Op> {
    prop_oneof![
        3 => (0u8..3, 0u8..4, prop::collection::vec((0usize..9, 0usize..5), 1..4), prop::option::of(0usize..8), any::<bool>())
            .prop_map(|(kind, owner, cells, share, peer)| Op::Alloc { kind, owner, cells, share, peer }),
        1 => (0usize..8).prop_map(Op::Release),
    ]
}

/// Block request of an allocation op against the current pool.
pub fn request(pool: &TwinResourcePool, op: &Op) -> Option<BlockRequest> {
    let Op::Alloc { kind, owner, cells, share, peer } = op else { return None };
    let live: Vec<_> = pool.receipts().cloned().collect();
    if let (Some(k), false) = (share, live.is_empty()) {
        // share a prefix of a live block, or ask for foreign cells
        let base = &live[k % live.len()];
        let take = cells.len().min(base.request.cells.len());
        let own: Vec<Cell> = base.request.cells.iter().take(take).copied().collect();
        let cells: Vec<Cell> = if *peer { own } else { cells.iter().map(|&(t, o)| Cell::new(t, o)).collect() };
        return Some(BlockRequest::new(base.request.kind, base.request.owner, cells).sharing(base.id));
    }
    let kind = [PoolKind::Space, PoolKind::Freq, PoolKind::Compute][*kind as usize];
    let owner = if *owner < 3 { Site::Cav(CavId(*owner as u32)) } else { Site::Rsu(RsuId(0)) };
    let mut req = BlockRequest::new(kind, owner, cells.iter().map(|&(t, o)| Cell::new(t, o)));
    if *peer && kind == PoolKind::Freq {
        req = req.toward(RsuId(0));
    }
    Some(req)
}

/// Applies `ops`, checking atomicity and invariants on the way and exact
/// log replay of every intermediate state at the end.
pub fn check_ops(s: &Scenario, ops: &[Op]) -> Result<(), TestCaseError> {
    let mut pool = TwinResourcePool::new(s);
    let mut states = vec![pool.clone()];
    for op in ops {
        let before = pool.clone();
        let result = match op {
            Op::Release(k) => {
                let live: Vec<_> = pool.receipts().map(|r| r.id).collect();
                if live.is_empty() {
                    continue;
                }
                pool.release(live[k % live.len()]).map(|_| ())
            }
            Op::Alloc { .. } => {
                let req = request(&pool, op).expect("alloc op");
                let shared = req.share_with.is_some();
                let n = req.cells.len() as f64;
                let w = pool.weights().of(req.kind);
                pool.allocate(req).map(|r| {
                    let want = if shared { 0.0 } else { w * n };
                    assert_eq!(r.weighted_cost, want);
                })
            }
        };
        match result {
            Err(_) => {
                prop_assert_eq!(&pool, &before);
                prop_assert_eq!(serde_json::to_string(&pool.dump()).unwrap(), serde_json::to_string(&before.dump()).unwrap());
            }
            Ok(()) => {
                prop_assert!(pool.check_invariants().is_ok(), "{:?}", pool.check_invariants());
                states.push(pool.clone());
            }
        }
    }
    for st in &states {
        let rebuilt = TwinResourcePool::replay(s, st.log()).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(&rebuilt, st);
    }
    Ok(())
}

pub fn deterministic_runner(cases: u32) -> TestRunner {
    TestRunner::new_with_rng(Config { cases, failure_persistence: None, ..Config::default() }, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

pub fn resource_conservation() -> Check {
    let s = fixtures::tiny3x4();
    let mut runner = deterministic_runner(512);
    runner
        .run(&prop::collection::vec(op_strategy(), 1..40), |ops| check_ops(&s, &ops))
        .map_err(|e| e.to_string())?;
    Ok("512 random allocate/release sequences".into())
}

// ------------------------------------------------------------------- pws

/// Signs every offered passive plan on a copy of the pool and compares
/// space and frequency occupancy. Returns (plans checked, contracts formed).
pub fn pws_round(s: &Scenario, seed: u64) -> Result<(usize, usize), String> {
    let demand = publish_demand(s);
    let fresh = TwinResourcePool::new(s);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut decision = Vec::new();
    for t in demand.canonical_order(demand.demanded_targets()) {
        let mut levels = vec![0];
        levels.extend(feasible_levels(s, &fresh, t, &s.process));
        decision.push((t, levels[rng.gen_range(0..levels.len())]));
    }
    let order = place_order(&demand, &s.pricing, &decision).map_err(|e| e.to_string())?;
    let mut checked = 0;
    let mut failure = None;
    let round = play_round(s, &demand, order, seed, |i, line, pool, ts| {
        for plan in ts.iter().filter(|p| p.template.mode == SensingMode::Passive) {
            let mut after = pool.clone();
            if let Err(e) = sign_contract(&mut after, &demand, line, plan, ContractId(i as u32)) {
                failure.get_or_insert(format!("passive plan failed to sign: {e}"));
                continue;
            }
            let (u0, u1) = (pool.utilization(), after.utilization());
            let (c0, c1) = (pool.allocated_cells(), after.allocated_cells());
            if u0.space != u1.space || u0.freq != u1.freq || c0[..2] != c1[..2] {
                failure.get_or_insert(format!("{:?} for {} moved space/freq: {c0:?} -> {c1:?}", plan.template, line.target));
            }
            checked += 1;
        }
        Some(rng.gen_range(0..ts.len()))
    });
    if let Some(f) = failure {
        return Err(f);
    }
    let formed = round.report.outcomes.iter().filter(|o| o.contract.mode == SensingMode::Passive).count();
    Ok((checked, formed))
}

pub fn pws_zero_cost() -> Check {
    let mut by_fixture = Vec::new();
    for (name, s) in fixtures::all() {
        let (mut checked, mut formed) = (0, 0);
        for seed in 0..300 {
            let (c, f) = pws_round(&s, seed)?;
            checked += c;
            formed += f;
        }
        by_fixture.push(format!("{name}: {checked} plans/{formed} contracts"));
        if name == "pws_corridor" {
            ensure!(checked > 0 && formed > 0, "no passive contracts formed on {name}");
        }
    }
    Ok(by_fixture.join(", "))
}

// --------------------------------------------------------------- sensing

pub fn monte_carlo_quality() -> Check {
    const N: usize = 100_000;
    let mut worst: f64 = 0.0;
    for p in [0.2, 0.5] {
        for n in [1usize, 2, 3] {
            let expected = detection_quality(p, n);
            let se = (expected * (1.0 - expected) / N as f64).sqrt();
            for mode in [SensingMode::Active, SensingMode::Passive] {
                let mean = sampled_quality(p, n, mode, N)?;
                let z = (mean - expected).abs() / se;
                worst = worst.max(z);
                ensure!(z <= 3.0, "{mode:?} p={p} n={n}: sampled {mean:.5}, expected {expected:.5}, {z:.2} SE");
            }
        }
    }
    Ok(format!("12 cases, worst deviation {worst:.2} SE"))
}

fn sampled_quality(p: f64, n: usize, mode: SensingMode, samples: usize) -> Result<f64, String> {
    let mut s = fixtures::pws_corridor();
    s.process.mode = EvalMode::Sampled;
    match mode {
        SensingMode::Active => {
            s.process.p_aws = p;
            s.process.p_pws = p / 2.0;
        }
        SensingMode::Passive => {
            s.process.p_pws = p;
            s.process.p_aws = (p + 1.0) / 2.0;
        }
    }
    s.validate().map_err(|e| e.to_string())?;
    let mut pool = TwinResourcePool::new(&s);
    let cav = CavId(0);
    let mut rng = ChaCha8Rng::seed_from_u64((p * 1e3) as u64 * 10 + n as u64);
    let mut total = 0.0;
    match mode {
        SensingMode::Active => {
            let t = ContractTemplate { employee: cav, mode, slots: n, site: Site::Cav(cav) };
            let plan = plan_template(&s, &pool, NctId(0), t, &s.process).ok_or("no active plan")?;
            let mut ids = Vec::new();
            for b in plan.blocks.iter().filter(|b| matches!(b.purpose, Purpose::Beam | Purpose::Sensing)) {
                ids.push(pool.allocate(b.request.clone()).map_err(|e| e.to_string())?.id);
            }
            for _ in 0..samples {
                total += aws_sense(&s, &pool, cav, NctId(0), ids[0], ids[1], &s.process, &mut rng)
                    .map_err(|e| e.to_string())?
                    .detection_quality;
            }
        }
        SensingMode::Passive => {
            let up = BlockRequest::new(PoolKind::Freq, Site::Cav(cav), (0..n).map(|t| Cell::new(t, 0))).toward(RsuId(0));
            let id = pool.allocate(up).map_err(|e| e.to_string())?.id;
            for _ in 0..samples {
                total += pws_sense(&s, &pool, cav, NctId(1), id, &s.process, &mut rng)
                    .map_err(|e| e.to_string())?
                    .detection_quality;
            }
        }
    }
    Ok(total / samples as f64)
}

// -------------------------------------------------------------- gradients

pub fn random_graph(rng: &mut ChaCha8Rng, n: usize, edges: &[(usize, usize)], d_v: usize) -> EmploymentGraph {
    let features = (0..n).map(|_| (0..d_v).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let edges = edges.iter().map(|&(a, b)| GraphEdge { a, b, feature: rng.gen_range(0.0..2.0) }).collect();
    EmploymentGraph::new(Role::Distributor, features, edges)
}

pub type Shape = (&'static str, usize, Vec<(usize, usize)>);

pub fn shapes() -> Vec<Shape> {
    vec![
        ("path+isolated", 4, vec![(0, 1), (1, 2)]),
        ("triangle+pendant+loop", 4, vec![(0, 1), (1, 2), (0, 2), (2, 3), (3, 3)]),
        ("star", 5, vec![(0, 1), (0, 2), (0, 3), (0, 4)]),
        ("single", 1, vec![]),
    ]
}

fn loss_spec(rng: &mut ChaCha8Rng, n: usize) -> LossSpec {
    let mut choices = vec![Choice {
        options: (0..n).map(Logit::Vertex).chain([Logit::Fixed]).collect(),
        taken: rng.gen_range(0..=n),
        advantage: rng.gen_range(-2.0..2.0),
    }];
    if n >= 2 {
        choices.push(Choice { options: vec![Logit::Fixed, Logit::Vertex(n - 1), Logit::Vertex(0)], taken: 1, advantage: rng.gen_range(-2.0..2.0) });
    }
    LossSpec { choices, entropy_weight: 0.3, value_weight: 0.5, returns: vec![rng.gen_range(-1.0..1.0), 0.25] }
}

pub fn gradient_check() -> Check {
    let arch = GnnArch { d_v: 3, hidden: 5, layers: 2 };
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let mut params = init_params(arch, seed).unwrap();
        for v in &mut params.values {
            *v += rng.gen_range(-0.1..0.1);
        }
        for (name, n, edges) in shapes() {
            let g = random_graph(&mut rng, n, &edges, arch.d_v);
            let spec = loss_spec(&mut rng, n);
            let f = gnn_forward(&params, &g).map_err(|e| e.to_string())?;
            let grads = backward(&params, &g, &f, &spec).map_err(|e| e.to_string())?;
            let mut probe = params.clone();
            for i in 0..params.values.len() {
                probe.values[i] = params.values[i] + eps;
                let up = loss_value(&probe, &g, &spec).unwrap();
                probe.values[i] = params.values[i] - eps;
                let down = loss_value(&probe, &g, &spec).unwrap();
                probe.values[i] = params.values[i];
                let numeric = (up - down) / (2.0 * eps);
                let a = grads.values[i];
                let scale = a.abs().max(numeric.abs());
                let err = if scale < 1e-7 { 0.0 } else { (a - numeric).abs() / scale };
                worst = worst.max(err);
                checked += 1;
                ensure!(err <= 1e-4, "seed {seed}, {name}, param {i}: analytic {a:e}, numeric {numeric:e}");
            }
        }
    }
    Ok(format!("{checked} partials over 5 seeds x 4 shapes, worst relative error {worst:.2e}"))
}

pub fn gnn_symmetry() -> Check {
    let arch = GnnArch::new(4);
    let mut worst: f64 = 0.0;
    for seed in 0..10u64 {
        let params = init_params(arch, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph(&mut rng, 7, &[(0, 1), (1, 2), (2, 0), (3, 4), (4, 4)], 4);
        let mut perm: Vec<usize> = (0..7).collect();
        for i in (1..7).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let f = gnn_forward(&params, &g).map_err(|e| e.to_string())?;
        let h = gnn_forward(&params, &g.permuted(&perm)).map_err(|e| e.to_string())?;
        for (i, &p) in perm.iter().enumerate() {
            worst = worst.max((f.scores[i] - h.scores[p]).abs());
        }
        worst = worst.max((f.value - h.value).abs());
    }
    ensure!(worst <= 1e-12, "largest deviation {worst:e}");
    Ok(format!("10 relabelings, largest deviation {worst:.1e}"))
}

// ---------------------------------------------------------------- oracle

pub fn mean_random_net(s: &Scenario, seeds: u64) -> f64 {
    (0..seeds).map(|k| random_allocator(k, s).ledger.net_profit).sum::<f64>() / seeds as f64
}

pub fn oracle_soundness() -> Check {
    let caps = SearchCaps::default();
    let mut instances = 0;
    let mut seed = 0u64;
    let mut leaves = (0u64, 0u64);
    while instances < 20 {
        seed += 1;
        ensure!(seed < 500, "could not find 20 guard-capped instances");
        let s = generated(seed);
        let pruned = match exhaustive_optimal(&s, caps, true) {
            Err(Error::Size(_)) => continue,
            r => r.map_err(|e| e.to_string())?,
        };
        if pruned.targets.is_empty() {
            continue;
        }
        instances += 1;
        let full = exhaustive_optimal(&s, caps, false).map_err(|e| e.to_string())?;
        ensure!(pruned.net == full.net && pruned.choices == full.choices, "seed {seed}: pruned {} vs full {}", pruned.net, full.net);
        leaves.0 += pruned.leaves;
        leaves.1 += full.leaves;
        let greedy = greedy_allocator(&s).ledger.net_profit;
        ensure!(greedy <= pruned.net + 1e-9, "seed {seed}: greedy {greedy} beats oracle {}", pruned.net);
        let random = mean_random_net(&s, 1000);
        ensure!(random <= pruned.net + 1e-9, "seed {seed}: random mean {random} beats oracle {}", pruned.net);
    }
    Ok(format!("20 instances, {} vs {} leaves with pruning", leaves.0, leaves.1))
}

// -------------------------------------------------------------- learning

pub fn learning() -> Check {
    let s = fixtures::tiny3x4();
    let oracle = exhaustive_optimal(&s, SearchCaps::default(), true).map_err(|e| e.to_string())?.net;
    let random = mean_random_net(&s, 1000);
    let cfg = TrainConfig::default();
    let r = train(&cfg, std::slice::from_ref(&s)).map_err(|e| e.to_string())?;
    let last = r.curve.last().ok_or("empty curve")?.mean_net;
    let nets: Vec<f64> = r.episodes.iter().map(|e| e.net).collect();
    let decile = nets.len() / 10;
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let (first, tail) = (mean(&nets[..decile]), mean(&nets[nets.len() - decile..]));
    let detail = format!(
        "final window {last:.3} vs 0.9*oracle {:.3} and 1.2*random {:.3}; deciles {first:.3} -> {tail:.3}",
        0.9 * oracle,
        1.2 * random
    );
    ensure!(last >= 0.9 * oracle && last >= 1.2 * random && tail > first, "{detail}");
    Ok(detail)
}

// ----------------------------------------------------------------- reuse

pub fn reuse_economics() -> Check {
    let s = fixtures::tiny3x4();
    let base = exhaustive_optimal(&s, SearchCaps::default(), true).map_err(|e| e.to_string())?;
    let demand = publish_demand(&s);
    let l0 = &base.outcome.ledger;

    // settlement: one more buyer for a target that is sold exactly once
    let target = *l0
        .income
        .keys()
        .find(|t| demand.buyers_of(**t).len() == 1)
        .ok_or("no target with a single buyer")?;
    let outsider = s.cavs.iter().map(|c| c.id).find(|c| !demand.buyers_of(target).iter().any(|(b, _)| b == c)).unwrap();
    let mut more = demand.clone();
    let terms = DemandTerms { unit_price: s.pricing.unit_price, q_min: s.pricing.q_min };
    more.buyers.entry(outsider).or_default().insert(target, terms);
    let l1 = settle(&more, &InformationOrder::default(), &base.outcome.report);
    ensure!(l1.gross_income > l0.gross_income, "gross {} -> {}", l0.gross_income, l1.gross_income);
    ensure!(l1.resource_cost == l0.resource_cost, "cost {} -> {}", l0.resource_cost, l1.resource_cost);
    ensure!(l1.reuse_rate() > l0.reuse_rate(), "reuse {} -> {}", l0.reuse_rate(), l1.reuse_rate());

    // scenario: a new vehicle that only sees an already produced target
    let mut s2 = s.clone();
    let near = s.nct(target).unwrap().position;
    s2.cavs.push(CavState {
        id: CavId(s.cavs.len() as u32),
        position: [near[0] + 8.0, near[1]],
        heading: 0.0,
        speed: 5.0,
        security_radius: 10.0,
        local_compute_units: 1,
        at_boundary: false,
    });
    s2.validate().map_err(|e| e.to_string())?;
    let d2 = publish_demand(&s2);
    ensure!(d2.buyers_of(target).len() == 2, "new vehicle does not demand {target}");
    let r2 = replay_choices(&s2, &d2, &base.targets, &base.choices).map_err(|e| e.to_string())?;
    let l2 = &r2.ledger;
    ensure!(l2.gross_income > l0.gross_income, "scenario gross {} -> {}", l0.gross_income, l2.gross_income);
    ensure!(l2.resource_cost == l0.resource_cost, "scenario cost {} -> {}", l0.resource_cost, l2.resource_cost);
    ensure!(l2.reuse_rate() > l0.reuse_rate(), "scenario reuse {} -> {}", l0.reuse_rate(), l2.reuse_rate());
    Ok(format!(
        "{target}: gross {} -> {}, cost {} unchanged, reuse {:.3} -> {:.3}",
        l0.gross_income,
        l2.gross_income,
        l0.resource_cost,
        l0.reuse_rate(),
        l2.reuse_rate()
    ))
}

// ----------------------------------------------------------- determinism

pub fn determinism() -> Check {
    let s = fixtures::tiny3x4();
    let (d, p) = margin_following_params(&TrainConfig::default()).map_err(|e| e.to_string())?;
    let twice = |f: &dyn Fn() -> iscc::Result<commands::Outputs>, what: &str| -> Result<(), String> {
        let a = f().map_err(|e| e.to_string())?;
        let b = f().map_err(|e| e.to_string())?;
        ensure!(a == b, "{what} differs between invocations");
        Ok(())
    };
    let allocators = [
        Allocator::Random,
        Allocator::Greedy,
        Allocator::Oracle,
        Allocator::Policy { distributor: d.clone(), purchaser: p.clone() },
    ];
    for a in &allocators {
        twice(&|| commands::run(&s, a, 5), &format!("run {}", a.name()))?;
    }
    let set = vec![s.clone(), fixtures::pws_corridor()];
    twice(&|| commands::eval(&d, &p, &set, 3, 9), "eval")?;
    let cfg = TrainConfig { episodes: 200, ..TrainConfig::default() };
    twice(&|| commands::train(&cfg, std::slice::from_ref(&s), None), "train")?;
    Ok("run (4 allocators), eval and replay-mode train".into())
}
