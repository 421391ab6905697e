//! Trains both policies on the built-in fixture with the default
//! configuration and prints the learning curve.
//!
//! cargo run -p iscc --example train --release [episodes] [seed]

use iscc::fixtures;
use iscc::trainer::{evaluate, margin_following_params, train, TrainConfig};

fn main() -> iscc::Result<()> {
    let s = fixtures::tiny3x4();
    let mut cfg = TrainConfig::default();
    if let Some(n) = std::env::args().nth(1) {
        cfg.episodes = n.parse().expect("episode count");
    }
    if let Some(n) = std::env::args().nth(2) {
        cfg.seed = n.parse().expect("seed");
    }
    let started = std::time::Instant::now();
    let run = train(&cfg, std::slice::from_ref(&s))?;
    for row in &run.curve {
        println!(
            "window {:3}  net {:8.3}  gross {:8.3}  cost {:7.3}  hit {:.3}  reuse {:.3}",
            row.window, row.mean_net, row.mean_gross, row.mean_cost, row.hit_rate, row.reuse_rate
        );
    }
    println!("{} merges in {:.1?}", run.version, started.elapsed());

    let greedy = evaluate(&run.distributor, &run.purchaser, std::slice::from_ref(&s), 1, cfg.seed)?;
    println!("argmax play of the trained policies: net {:.3}", greedy.mean.net);
    let (d, p) = margin_following_params(&cfg)?;
    let reference = evaluate(&d, &p, std::slice::from_ref(&s), 1, cfg.seed)?;
    println!("hand-built margin-following policies: net {:.3}", reference.mean.net);
    Ok(())
}
