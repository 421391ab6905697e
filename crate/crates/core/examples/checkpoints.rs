//! Saves the hand-built margin-following policies as checkpoints, loads
//! them back and evaluates them next to the oracle.
//!
//! cargo run -p iscc --example checkpoints

use iscc::baselines::{exhaustive_optimal, SearchCaps};
use iscc::fixtures;
use iscc::graph::Role;
use iscc::neural::Checkpoint;
use iscc::trainer::{evaluate, margin_following_params, TrainConfig};

fn main() -> iscc::Result<()> {
    let (d, p) = margin_following_params(&TrainConfig::default())?;
    let dir = std::env::temp_dir().join("iscc-checkpoints");
    std::fs::create_dir_all(&dir)?;
    for (role, params) in [(Role::Distributor, &d), (Role::Purchaser, &p)] {
        let path = dir.join(format!("{role}.ckpt.json"));
        std::fs::write(&path, Checkpoint::new(role, 0, params.clone()).to_json())?;
        println!("wrote {}", path.display());
    }
    let load = |role: Role| -> iscc::Result<_> {
        Ok(Checkpoint::from_json(&std::fs::read_to_string(dir.join(format!("{role}.ckpt.json")))?)?.params)
    };
    let (d2, p2) = (load(Role::Distributor)?, load(Role::Purchaser)?);
    assert_eq!((&d2, &p2), (&d, &p));

    for (name, s) in fixtures::all() {
        let eval = evaluate(&d2, &p2, std::slice::from_ref(&s), 1, 0)?;
        let oracle = exhaustive_optimal(&s, SearchCaps::default(), true)?;
        println!("{name}: policy net {:.3}, oracle net {:.3}", eval.mean.net, oracle.net);
    }
    Ok(())
}
