//! Asynchronous advantage training of the distributor and purchaser
//! policies against a shared parameter store.
//!
//! Distributor workers and purchaser workers each run market rounds with a
//! snapshot of both policies and push gradients for their own role. The
//! store applies pushes one at a time and rejects those based on a version
//! more than `staleness` merges old. In replay mode the schedule is a pure
//! function of the config, so a run is reproducible bit for bit.

mod episode;
mod reference;

use std::collections::{BTreeMap, VecDeque};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::RoundOutcome;
use crate::error::{Error, Result};
use crate::graph::Role;
use crate::market::TransactionLedger;
use crate::neural::{init_params, GnnArch, Grads, PolicyParams};
use crate::scenario::Scenario;

pub use episode::{
    decision_return, distributor_view, episode_gradient, focus, money_scale, purchaser_view, run_episode, target_accounts,
    Act, Episode, Step, TargetAccount, TargetOptions, Trajectory, DISTRIBUTOR_FEATURES, DISTRIBUTOR_MARGIN,
    PURCHASER_FEATURES, PURCHASER_MARGIN,
};
pub use reference::margin_following_params;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    /// Deterministic ticks: workers pull one version, pushes land in worker order.
    Replay,
    /// Free-running threads; the merge log records what happened.
    Async,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub distributor_workers: usize,
    pub purchaser_workers: usize,
    pub episodes_per_push: usize,
    pub episodes: usize,
    /// Episodes are single rounds, so only 1.0 is meaningful.
    pub discount: f64,
    pub learning_rate: f64,
    pub entropy_weight: f64,
    pub value_weight: f64,
    pub lambda_unsold: f64,
    pub lambda_unfulfilled: f64,
    /// Weight of net profit in each decision's return; the rest is the
    /// role's own reward.
    pub net_guidance: f64,
    /// Divide returns by the running mean absolute return of the role.
    pub normalize_rewards: bool,
    pub staleness: u64,
    pub hidden: usize,
    pub layers: usize,
    /// Episodes per learning-curve row.
    pub window: usize,
    /// Halt when the mean absolute parameter exceeds this.
    pub divergence_bound: f64,
    pub schedule: Schedule,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            distributor_workers: 2,
            purchaser_workers: 2,
            episodes_per_push: 1,
            episodes: 2000,
            discount: 1.0,
            learning_rate: 1e-2,
            entropy_weight: 1e-2,
            value_weight: 0.5,
            lambda_unsold: 1.0,
            lambda_unfulfilled: 10.0,
            net_guidance: 1.0,
            normalize_rewards: true,
            staleness: 4,
            hidden: 32,
            layers: 2,
            window: 100,
            divergence_bound: 1e3,
            schedule: Schedule::Replay,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.distributor_workers == 0 || self.purchaser_workers == 0 {
            return bad("each role needs at least one worker");
        }
        if self.episodes_per_push == 0 || self.window == 0 || self.hidden == 0 || self.layers == 0 {
            return bad("episodes_per_push, window, hidden and layers must be positive");
        }
        let weights = [
            self.learning_rate,
            self.entropy_weight,
            self.value_weight,
            self.lambda_unsold,
            self.lambda_unfulfilled,
            self.divergence_bound,
        ];
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return bad("rates, weights and penalties must be finite and >= 0");
        }
        if !(0.0..=1.0).contains(&self.net_guidance) {
            return bad("net_guidance must lie in [0, 1]");
        }
        if self.discount != 1.0 {
            return bad("episodes are single rounds; discount must be 1");
        }
        Ok(())
    }

    pub fn workers(&self) -> usize {
        self.distributor_workers + self.purchaser_workers
    }

    pub fn role_of(&self, worker: usize) -> Role {
        if worker < self.distributor_workers {
            Role::Distributor
        } else {
            Role::Purchaser
        }
    }

    pub fn archs(&self) -> (GnnArch, GnnArch) {
        let a = |d_v| GnnArch { d_v, hidden: self.hidden, layers: self.layers };
        (a(DISTRIBUTOR_FEATURES), a(PURCHASER_FEATURES))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub gross: f64,
    pub cost: f64,
    pub net: f64,
    pub hit_rate: f64,
    pub reuse_rate: f64,
    pub unfulfilled: usize,
}

impl EpisodeStats {
    pub fn of(round: &RoundOutcome) -> Self {
        let l = &round.ledger;
        EpisodeStats {
            gross: l.gross_income,
            cost: l.resource_cost,
            net: l.net_profit,
            hit_rate: l.hit_rate(),
            reuse_rate: l.reuse_rate(),
            unfulfilled: l.unfulfilled.len(),
        }
    }

    pub fn mean(all: &[EpisodeStats]) -> EpisodeStats {
        if all.is_empty() {
            return EpisodeStats::default();
        }
        let n = all.len() as f64;
        let avg = |f: fn(&EpisodeStats) -> f64| all.iter().map(f).sum::<f64>() / n;
        EpisodeStats {
            gross: avg(|e| e.gross),
            cost: avg(|e| e.cost),
            net: avg(|e| e.net),
            hit_rate: avg(|e| e.hit_rate),
            reuse_rate: avg(|e| e.reuse_rate),
            unfulfilled: (all.iter().map(|e| e.unfulfilled).sum::<usize>() as f64 / n).round() as usize,
        }
    }
}

/// Episode reward of a worker population, as logged.
pub fn worker_reward(role: Role, ledger: &TransactionLedger, cfg: &TrainConfig) -> f64 {
    match role {
        Role::Distributor => ledger.gross_income - cfg.lambda_unsold * (ledger.produced_info - ledger.sold_info),
        Role::Purchaser => -ledger.resource_cost - cfg.lambda_unfulfilled * ledger.unfulfilled.len() as f64,
    }
}

/// Running mean of absolute returns, merged at push time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunningScale {
    pub sum_abs: f64,
    pub count: f64,
}

impl RunningScale {
    fn prior(value: f64) -> Self {
        RunningScale { sum_abs: value, count: 1.0 }
    }

    pub fn value(&self) -> f64 {
        (self.sum_abs / self.count.max(1.0)).max(1e-6)
    }
}

/// What a worker reads: both parameter sets at one version.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub version: u64,
    pub distributor: PolicyParams,
    pub purchaser: PolicyParams,
    pub scales: [RunningScale; 2],
}

impl Snapshot {
    pub fn params(&self, role: Role) -> &PolicyParams {
        match role {
            Role::Distributor => &self.distributor,
            Role::Purchaser => &self.purchaser,
        }
    }
}

fn slot(role: Role) -> usize {
    match role {
        Role::Distributor => 0,
        Role::Purchaser => 1,
    }
}

#[derive(Clone, Debug)]
pub struct GlobalStore {
    current: Snapshot,
    learning_rate: f64,
    staleness: u64,
    /// The last `staleness + 1` versions, oldest first.
    history: VecDeque<Snapshot>,
}

impl GlobalStore {
    pub fn new(distributor: PolicyParams, purchaser: PolicyParams, learning_rate: f64, staleness: u64, prior_scale: f64) -> Self {
        let scale = RunningScale::prior(prior_scale);
        let current = Snapshot { version: 0, distributor, purchaser, scales: [scale, scale] };
        GlobalStore { history: VecDeque::from([current.clone()]), current, learning_rate, staleness }
    }

    pub fn version(&self) -> u64 {
        self.current.version
    }

    pub fn snapshot(&self) -> Snapshot {
        self.current.clone()
    }

    pub fn snapshot_at(&self, version: u64) -> Option<&Snapshot> {
        self.history.iter().find(|s| s.version == version)
    }

    /// `params_role -= lr * grads`, bumping the version. `abs_returns` is
    /// the (sum, count) of absolute returns behind the gradient.
    pub fn push_merge(&mut self, role: Role, grads: &Grads, base_version: u64, abs_returns: (f64, usize)) -> Result<u64> {
        let current = self.current.version;
        if base_version > current || base_version + self.staleness < current {
            return Err(Error::StalePush { base: base_version, current, bound: self.staleness });
        }
        let lr = self.learning_rate;
        let params = match role {
            Role::Distributor => &mut self.current.distributor,
            Role::Purchaser => &mut self.current.purchaser,
        };
        if grads.values.len() != params.values.len() {
            return Err(Error::Shape(format!("{} gradients for {} parameters", grads.values.len(), params.values.len())));
        }
        for (p, g) in params.values.iter_mut().zip(&grads.values) {
            *p -= lr * g;
        }
        let sc = &mut self.current.scales[slot(role)];
        sc.sum_abs += abs_returns.0;
        sc.count += abs_returns.1 as f64;
        self.current.version += 1;
        self.history.push_back(self.current.clone());
        while self.history.len() as u64 > self.staleness + 1 {
            self.history.pop_front();
        }
        Ok(self.current.version)
    }

    pub fn check_divergence(&self, bound: f64) -> Result<()> {
        for (role, p) in [(Role::Distributor, &self.current.distributor), (Role::Purchaser, &self.current.purchaser)] {
            let m = p.mean_abs();
            if !p.is_finite() || m > bound {
                return Err(Error::Divergence(format!(
                    "{role} mean |param| {m} exceeds {bound} at version {}",
                    self.current.version
                )));
            }
        }
        Ok(())
    }
}

/// One accepted push.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeEntry {
    pub version: u64,
    pub role: Role,
    pub worker: usize,
    pub base_version: u64,
    /// Global episode indices `[start, end)`.
    pub episodes: (usize, usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub window: usize,
    pub episodes: usize,
    pub mean_gross: f64,
    pub mean_cost: f64,
    pub mean_net: f64,
    pub hit_rate: f64,
    pub reuse_rate: f64,
}

pub fn learning_curve(stats: &[EpisodeStats], window: usize) -> Vec<CurveRow> {
    stats
        .chunks(window.max(1))
        .enumerate()
        .map(|(i, chunk)| {
            let m = EpisodeStats::mean(chunk);
            CurveRow {
                window: i,
                episodes: chunk.len(),
                mean_gross: m.gross,
                mean_cost: m.cost,
                mean_net: m.net,
                hit_rate: m.hit_rate,
                reuse_rate: m.reuse_rate,
            }
        })
        .collect()
}

pub fn curve_csv(curve: &[CurveRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in curve {
        w.serialize(row)?;
    }
    if curve.is_empty() {
        w.write_record(["window", "episodes", "mean_gross", "mean_cost", "mean_net", "hit_rate", "reuse_rate"])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainResult {
    pub distributor: PolicyParams,
    pub purchaser: PolicyParams,
    pub version: u64,
    /// Per-episode statistics in global episode order.
    pub episodes: Vec<EpisodeStats>,
    pub curve: Vec<CurveRow>,
    pub merge_log: Vec<MergeEntry>,
    /// Episodes the simulator rejected.
    pub skipped: usize,
}

/// Seed of the `index`-th episode of a run.
pub fn episode_seed(seed: u64, index: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ (index as u64).wrapping_mul(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Result of one worker's batch against a snapshot.
struct Work {
    grads: Grads,
    abs_returns: (f64, usize),
    stats: Vec<(usize, Option<EpisodeStats>)>,
}

fn work(cfg: &TrainConfig, scenarios: &[Scenario], snap: &Snapshot, role: Role, episodes: (usize, usize)) -> Result<Work> {
    let params = snap.params(role);
    let mut grads = Grads::zeros(params.values.len());
    let mut abs_returns = (0.0, 0);
    let mut stats = Vec::new();
    let scale = if cfg.normalize_rewards { snap.scales[slot(role)].value() } else { 1.0 };
    for idx in episodes.0..episodes.1 {
        let s = &scenarios[idx % scenarios.len()];
        let seed = episode_seed(cfg.seed, idx);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ep = match run_episode(s, &snap.distributor, &snap.purchaser, &mut Act::Sample(&mut rng), seed) {
            Ok(ep) => ep,
            Err(_) => {
                stats.push((idx, None));
                continue;
            }
        };
        let (g, sum, n) = episode_gradient(&ep, role, params, scale, cfg)?;
        grads.add(&g);
        abs_returns.0 += sum;
        abs_returns.1 += n;
        stats.push((idx, Some(ep.stats)));
    }
    let n = (episodes.1 - episodes.0).max(1) as f64;
    grads.scale(1.0 / n);
    Ok(Work { grads, abs_returns, stats })
}

fn initial_store(cfg: &TrainConfig, scenarios: &[Scenario]) -> Result<GlobalStore> {
    let (da, pa) = cfg.archs();
    let d = init_params(da, cfg.seed)?;
    let p = init_params(pa, cfg.seed.wrapping_add(1))?;
    let prior = scenarios.iter().map(money_scale).fold(1.0, f64::max);
    Ok(GlobalStore::new(d, p, cfg.learning_rate, cfg.staleness, prior))
}

/// The deterministic schedule: ticks of at most `staleness + 1` workers
/// that share one base version and push in worker order.
pub fn replay_schedule(cfg: &TrainConfig) -> Vec<MergeEntry> {
    let mut log = Vec::new();
    let group = (cfg.staleness as usize + 1).min(cfg.workers()).max(1);
    let mut next = 0;
    let mut version = 0u64;
    let mut worker = 0;
    while next < cfg.episodes {
        let base = version;
        for _ in 0..group {
            if next >= cfg.episodes {
                break;
            }
            let end = (next + cfg.episodes_per_push).min(cfg.episodes);
            version += 1;
            log.push(MergeEntry { version, role: cfg.role_of(worker), worker, base_version: base, episodes: (next, end) });
            next = end;
            worker = (worker + 1) % cfg.workers();
        }
    }
    log
}

fn finish(cfg: &TrainConfig, store: GlobalStore, stats: BTreeMap<usize, Option<EpisodeStats>>, log: Vec<MergeEntry>) -> TrainResult {
    let skipped = stats.values().filter(|s| s.is_none()).count();
    let episodes: Vec<EpisodeStats> = stats.into_values().flatten().collect();
    let curve = learning_curve(&episodes, cfg.window);
    let snap = store.snapshot();
    TrainResult { distributor: snap.distributor, purchaser: snap.purchaser, version: snap.version, episodes, curve, merge_log: log, skipped }
}

/// Applies a merge log in order. Entries sharing a base version are
/// computed in parallel; results are merged in log order.
pub fn replay(cfg: &TrainConfig, scenarios: &[Scenario], log: &[MergeEntry]) -> Result<TrainResult> {
    cfg.validate()?;
    if scenarios.is_empty() {
        return Err(Error::Config("no scenarios to train on".into()));
    }
    let mut store = initial_store(cfg, scenarios)?;
    let mut stats = BTreeMap::new();
    let mut i = 0;
    while i < log.len() {
        let base = log[i].base_version;
        let mut j = i;
        while j < log.len() && log[j].base_version == base && log[j].version <= base + cfg.staleness + 1 {
            j += 1;
        }
        let snap = store
            .snapshot_at(base)
            .cloned()
            .ok_or(Error::StalePush { base, current: store.version(), bound: cfg.staleness })?;
        let batch = &log[i..j];
        let results: Vec<Result<Work>> = std::thread::scope(|scope| {
            let handles: Vec<_> = batch
                .iter()
                .map(|e| {
                    let snap = &snap;
                    scope.spawn(move || work(cfg, scenarios, snap, e.role, e.episodes))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("worker thread panicked")).collect()
        });
        for (e, r) in batch.iter().zip(results) {
            let w = r?;
            let v = store.push_merge(e.role, &w.grads, e.base_version, w.abs_returns)?;
            if v != e.version {
                return Err(Error::Config(format!("merge log expects version {}, store reached {v}", e.version)));
            }
            store.check_divergence(cfg.divergence_bound)?;
            stats.extend(w.stats);
        }
        i = j;
    }
    Ok(finish(cfg, store, stats, log.to_vec()))
}

/// Free-running workers on threads.
fn train_async(cfg: &TrainConfig, scenarios: &[Scenario]) -> Result<TrainResult> {
    let store = Mutex::new(initial_store(cfg, scenarios)?);
    let results = Mutex::new((BTreeMap::new(), Vec::new()));
    let next = AtomicUsize::new(0);
    let failure: Mutex<Option<Error>> = Mutex::new(None);
    std::thread::scope(|scope| {
        for worker in 0..cfg.workers() {
            let (store, results, next, failure) = (&store, &results, &next, &failure);
            scope.spawn(move || {
                let role = cfg.role_of(worker);
                loop {
                    if failure.lock().unwrap().is_some() {
                        return;
                    }
                    let start = next.fetch_add(cfg.episodes_per_push, Ordering::SeqCst);
                    if start >= cfg.episodes {
                        return;
                    }
                    let range = (start, (start + cfg.episodes_per_push).min(cfg.episodes));
                    loop {
                        let snap = store.lock().unwrap().snapshot();
                        let w = match work(cfg, scenarios, &snap, role, range) {
                            Ok(w) => w,
                            Err(e) => {
                                *failure.lock().unwrap() = Some(e);
                                return;
                            }
                        };
                        let mut st = store.lock().unwrap();
                        match st.push_merge(role, &w.grads, snap.version, w.abs_returns) {
                            Ok(version) => {
                                if let Err(e) = st.check_divergence(cfg.divergence_bound) {
                                    *failure.lock().unwrap() = Some(e);
                                    return;
                                }
                                let mut r = results.lock().unwrap();
                                r.0.extend(w.stats);
                                r.1.push(MergeEntry { version, role, worker, base_version: snap.version, episodes: range });
                                break;
                            }
                            // too stale: pull again and redo the batch
                            Err(Error::StalePush { .. }) => continue,
                            Err(e) => {
                                *failure.lock().unwrap() = Some(e);
                                return;
                            }
                        }
                    }
                }
            });
        }
    });
    if let Some(e) = failure.into_inner().unwrap() {
        return Err(e);
    }
    let (stats, mut log) = results.into_inner().unwrap();
    log.sort_by_key(|e| e.version);
    Ok(finish(cfg, store.into_inner().unwrap(), stats, log))
}

pub fn train(cfg: &TrainConfig, scenarios: &[Scenario]) -> Result<TrainResult> {
    cfg.validate()?;
    if scenarios.is_empty() {
        return Err(Error::Config("no scenarios to train on".into()));
    }
    match cfg.schedule {
        Schedule::Replay => replay(cfg, scenarios, &replay_schedule(cfg)),
        Schedule::Async => train_async(cfg, scenarios),
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub mean: EpisodeStats,
    pub episodes: Vec<EpisodeStats>,
    pub rounds: Vec<RoundOutcome>,
}

/// Argmax play, `episodes` rounds per scenario, seeds derived from `seed`.
pub fn evaluate(
    distributor: &PolicyParams,
    purchaser: &PolicyParams,
    scenarios: &[Scenario],
    episodes: usize,
    seed: u64,
) -> Result<EvalReport> {
    let mut report = EvalReport::default();
    for (k, s) in scenarios.iter().enumerate() {
        for e in 0..episodes {
            let ep_seed = episode_seed(seed, k * episodes + e);
            let ep = run_episode::<ChaCha8Rng>(s, distributor, purchaser, &mut Act::Argmax, ep_seed)?;
            report.episodes.push(ep.stats);
            report.rounds.push(ep.round);
        }
    }
    report.mean = EpisodeStats::mean(&report.episodes);
    Ok(report)
}
