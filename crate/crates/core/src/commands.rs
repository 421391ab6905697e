//! File-level operations behind the `iscc` binary. Every command returns
//! its outputs as named byte buffers so that callers decide where they go;
//! [`write_outputs`] puts them in a directory.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::baselines::{exhaustive_optimal, greedy_allocator, random_allocator, RoundOutcome, SearchCaps};
use crate::error::{Error, Result};
use crate::graph::Role;
use crate::market::TransactionLedger;
use crate::neural::{Checkpoint, PolicyParams};
use crate::scenario::{generate_scenario, load_scenario, GenSpec, NctId, Scenario};
use crate::trainer::{self, curve_csv, evaluate, EpisodeStats, MergeEntry, TrainConfig};

/// Exit status for an error: 3 for divergence, 2 for everything else.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Divergence(_) => 3,
        _ => 2,
    }
}

/// Named files produced by a command.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Outputs {
    pub files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    fn push(&mut self, name: &str, bytes: impl Into<Vec<u8>>) {
        self.files.push((name.to_string(), bytes.into()));
    }

    pub fn get(&self, name: &str) -> Option<&[u8]> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, b)| b.as_slice())
    }
}

pub fn write_outputs(dir: &Path, out: &Outputs) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (name, bytes) in &out.files {
        std::fs::write(dir.join(name), bytes)?;
    }
    Ok(())
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// Splits `key=value`.
pub fn parse_override(text: &str) -> Result<(String, String)> {
    match text.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.trim().to_string())),
        _ => Err(Error::Config(format!("override `{text}` is not key=value"))),
    }
}

/// Sets dotted-path fields of `value` through its JSON form. A value that
/// parses as JSON is used as such, anything else as a string. The path
/// must name an existing field.
pub fn apply_overrides<T: Serialize + DeserializeOwned>(value: &T, overrides: &[(String, String)]) -> Result<T> {
    if overrides.is_empty() {
        return serde_json::from_value(serde_json::to_value(value).expect("serializable")).map_err(parse_error);
    }
    let mut doc = serde_json::to_value(value).expect("serializable");
    for (key, raw) in overrides {
        let mut slot = &mut doc;
        for part in key.split('.') {
            slot = match slot {
                Value::Object(map) => map.get_mut(part),
                Value::Array(items) => part.parse::<usize>().ok().and_then(|i| items.get_mut(i)),
                _ => None,
            }
            .ok_or_else(|| Error::Config(format!("unknown parameter `{key}`")))?;
        }
        *slot = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.clone()));
    }
    serde_path_to_error::deserialize(doc).map_err(|e| Error::Parse {
        field: e.path().to_string(),
        message: e.into_inner().to_string(),
    })
}

fn parse_error(e: serde_json::Error) -> Error {
    Error::Parse { field: "<root>".into(), message: e.to_string() }
}

/// Loads a scenario file and applies overrides; the result is validated.
pub fn read_scenario(path: &Path, overrides: &[(String, String)]) -> Result<Scenario> {
    let s = load_scenario(&read(path)?)?;
    let s = apply_overrides(&s, overrides)?;
    s.validate()?;
    Ok(s)
}

/// Training configuration from an optional JSON file (missing fields take
/// defaults) plus overrides.
pub fn read_train_config(path: Option<&Path>, overrides: &[(String, String)]) -> Result<TrainConfig> {
    let base = match path {
        Some(p) => {
            let text = read(p)?;
            let de = &mut serde_json::Deserializer::from_str(&text);
            serde_path_to_error::deserialize(de)
                .map_err(|e| Error::Parse { field: e.path().to_string(), message: e.into_inner().to_string() })?
        }
        None => TrainConfig::default(),
    };
    let cfg = apply_overrides(&base, overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn read_checkpoint(path: &Path, role: Role) -> Result<PolicyParams> {
    let c = Checkpoint::from_json(&read(path)?)?;
    if c.role != role {
        return Err(Error::Config(format!("{} holds {} parameters, expected {role}", path.display(), c.role)));
    }
    let want = match role {
        Role::Distributor => trainer::DISTRIBUTOR_FEATURES,
        Role::Purchaser => trainer::PURCHASER_FEATURES,
    };
    if c.params.arch.d_v != want {
        return Err(Error::Shape(format!("{} expects {} vertex features, {role} graphs have {want}", path.display(), c.params.arch.d_v)));
    }
    Ok(c.params)
}

pub fn read_merge_log(path: &Path) -> Result<Vec<MergeEntry>> {
    serde_json::from_str(&read(path)?).map_err(parse_error)
}

/// `gen-scenario`: a pretty-printed scenario document.
pub fn gen_scenario(g: GenSpec, overrides: &[(String, String)]) -> Result<String> {
    let s = apply_overrides(&generate_scenario(g)?, overrides)?;
    s.validate()?;
    Ok(s.to_json() + "\n")
}

/// Allocator of a single `run`.
#[derive(Clone, Debug, PartialEq)]
pub enum Allocator {
    Random,
    Greedy,
    Oracle,
    Policy { distributor: PolicyParams, purchaser: PolicyParams },
}

impl Allocator {
    pub fn name(&self) -> &'static str {
        match self {
            Allocator::Random => "random",
            Allocator::Greedy => "greedy",
            Allocator::Oracle => "oracle",
            Allocator::Policy { .. } => "policy",
        }
    }
}

/// One summary row of `run`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub allocator: String,
    pub seed: u64,
    pub lines: usize,
    pub contracts: usize,
    pub gross: f64,
    pub cost: f64,
    pub net: f64,
    pub hit_rate: f64,
    pub reuse_rate: f64,
    pub unfulfilled: usize,
}

fn csv_bytes<T: Serialize>(rows: &[T], header: &[&str]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(header)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.to_string()))
}

/// The round the allocator plays, with `seed` as the round seed.
pub fn play(s: &Scenario, allocator: &Allocator, seed: u64) -> Result<RoundOutcome> {
    let mut s = s.clone();
    s.rng_seed = seed;
    Ok(match allocator {
        Allocator::Random => random_allocator(seed, &s),
        Allocator::Greedy => greedy_allocator(&s),
        Allocator::Oracle => exhaustive_optimal(&s, SearchCaps::default(), true)?.outcome,
        Allocator::Policy { distributor, purchaser } => {
            evaluate(distributor, purchaser, std::slice::from_ref(&s), 1, seed)?.rounds.remove(0)
        }
    })
}

/// `run`: `ledger.json` and `summary.csv` of one round.
pub fn run(s: &Scenario, allocator: &Allocator, seed: u64) -> Result<Outputs> {
    let round = play(s, allocator, seed)?;
    let l: &TransactionLedger = &round.ledger;
    let row = RunSummary {
        allocator: allocator.name().into(),
        seed,
        lines: round.order.lines.len(),
        contracts: round.report.outcomes.len(),
        gross: l.gross_income,
        cost: l.resource_cost,
        net: l.net_profit,
        hit_rate: l.hit_rate(),
        reuse_rate: l.reuse_rate(),
        unfulfilled: l.unfulfilled.len(),
    };
    let mut out = Outputs::default();
    out.push("ledger.json", l.to_json() + "\n");
    out.push("summary.csv", csv_bytes(&[row], &[])?);
    Ok(out)
}

/// `train`: learning curve, both checkpoints and the merge log. With a
/// merge log the run replays it instead of scheduling its own.
pub fn train(cfg: &TrainConfig, scenarios: &[Scenario], log: Option<&[MergeEntry]>) -> Result<Outputs> {
    let r = match log {
        Some(log) => trainer::replay(cfg, scenarios, log)?,
        None => trainer::train(cfg, scenarios)?,
    };
    let mut out = Outputs::default();
    out.push("curve.csv", curve_csv(&r.curve)?);
    out.push("distributor.ckpt.json", Checkpoint::new(Role::Distributor, r.version, r.distributor).to_json() + "\n");
    out.push("purchaser.ckpt.json", Checkpoint::new(Role::Purchaser, r.version, r.purchaser).to_json() + "\n");
    out.push("merge_log.json", serde_json::to_string_pretty(&r.merge_log).expect("log serializes") + "\n");
    Ok(out)
}

#[derive(Serialize)]
struct EvalRow {
    scenario: usize,
    episode: usize,
    gross: f64,
    cost: f64,
    net: f64,
    hit_rate: f64,
    reuse_rate: f64,
    unfulfilled: usize,
}

const EVAL_HEADER: [&str; 8] = ["scenario", "episode", "gross", "cost", "net", "hit_rate", "reuse_rate", "unfulfilled"];

/// `eval`: `metrics.csv` with one row per evaluated round.
pub fn eval(
    distributor: &PolicyParams,
    purchaser: &PolicyParams,
    scenarios: &[Scenario],
    episodes: usize,
    seed: u64,
) -> Result<Outputs> {
    let report = evaluate(distributor, purchaser, scenarios, episodes, seed)?;
    let rows: Vec<EvalRow> = report
        .episodes
        .iter()
        .enumerate()
        .map(|(i, e): (usize, &EpisodeStats)| EvalRow {
            scenario: i / episodes.max(1),
            episode: i % episodes.max(1),
            gross: e.gross,
            cost: e.cost,
            net: e.net,
            hit_rate: e.hit_rate,
            reuse_rate: e.reuse_rate,
            unfulfilled: e.unfulfilled,
        })
        .collect();
    let mut out = Outputs::default();
    out.push("metrics.csv", csv_bytes(&rows, &EVAL_HEADER)?);
    Ok(out)
}

#[derive(Serialize)]
struct OracleReport<'a> {
    net: f64,
    gross: f64,
    cost: f64,
    leaves: u64,
    targets: &'a [NctId],
    /// Template index per target in `targets`; null means skipped.
    choices: &'a [Option<usize>],
    ledger: &'a TransactionLedger,
}

/// `oracle`: `oracle.json` with the optimum and its choice vector.
pub fn oracle(s: &Scenario, caps: SearchCaps) -> Result<Outputs> {
    let r = exhaustive_optimal(s, caps, true)?;
    let l = &r.outcome.ledger;
    let doc = OracleReport {
        net: r.net,
        gross: l.gross_income,
        cost: l.resource_cost,
        leaves: r.leaves,
        targets: &r.targets,
        choices: &r.choices,
        ledger: l,
    };
    let mut out = Outputs::default();
    out.push("oracle.json", serde_json::to_string_pretty(&doc).expect("report serializes") + "\n");
    Ok(out)
}
