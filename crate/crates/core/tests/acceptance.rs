//! Runs every acceptance criterion, prints one pass/fail line each and
//! fails if any criterion does.
//!
//! cargo test -p iscc --test acceptance -- --nocapture

mod common;

use std::time::{Duration, Instant};

use common::Check;

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    run: fn() -> Check,
}

const fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

#[test]
fn acceptance() {
    let criteria = [
        Criterion { id: 1, name: "ledger identity", budget: secs(30), run: common::ledger_identity },
        Criterion { id: 2, name: "resource conservation", budget: secs(10), run: common::resource_conservation },
        Criterion { id: 3, name: "passive sensing costs no space/freq", budget: secs(60), run: common::pws_zero_cost },
        Criterion { id: 4, name: "sampled vs expected quality", budget: secs(20), run: common::monte_carlo_quality },
        Criterion { id: 5, name: "gradients vs finite differences", budget: secs(60), run: common::gradient_check },
        Criterion { id: 6, name: "gnn relabeling symmetry", budget: secs(60), run: common::gnn_symmetry },
        Criterion { id: 7, name: "oracle soundness", budget: secs(120), run: common::oracle_soundness },
        Criterion { id: 8, name: "learning on tiny3x4", budget: secs(600), run: common::learning },
        Criterion { id: 9, name: "reuse economics", budget: secs(60), run: common::reuse_economics },
        Criterion { id: 10, name: "determinism", budget: secs(120), run: common::determinism },
    ];
    let mut failed = Vec::new();
    for c in &criteria {
        let started = Instant::now();
        let outcome = std::panic::catch_unwind(c.run).unwrap_or_else(|_| Err("panicked".into()));
        let took = started.elapsed();
        let outcome = match outcome {
            Ok(detail) if took > c.budget => Err(format!("{detail}; took {took:.1?}, budget {:?}", c.budget)),
            o => o,
        };
        match &outcome {
            Ok(detail) => println!("criterion {:2} PASS  {}  ({detail}; {took:.1?})", c.id, c.name),
            Err(why) => {
                println!("criterion {:2} FAIL  {}  ({why}; {took:.1?})", c.id, c.name);
                failed.push(c.id);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
