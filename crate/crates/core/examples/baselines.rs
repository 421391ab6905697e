//! Compares the random, greedy and exhaustive allocators on the built-in
//! three-vehicle fixture.
//!
//! cargo run -p iscc --example baselines --release

use iscc::baselines::{exhaustive_optimal, greedy_allocator, random_allocator, SearchCaps};
use iscc::fixtures;

fn main() -> iscc::Result<()> {
    let s = fixtures::tiny3x4();
    let oracle = exhaustive_optimal(&s, SearchCaps::default(), true)?;
    let greedy = greedy_allocator(&s);
    let runs = 1000;
    let random: f64 = (0..runs).map(|seed| random_allocator(seed, &s).ledger.net_profit).sum::<f64>() / runs as f64;

    println!("oracle  net {:8.3}  ({} leaves)", oracle.net, oracle.leaves);
    for (t, c) in oracle.targets.iter().zip(&oracle.choices) {
        match c {
            Some(i) => println!("  {t}: template {i}"),
            None => println!("  {t}: skip"),
        }
    }
    for c in &oracle.outcome.formation.contracts {
        println!("  {} {} -> {} {:?} {} slot(s) at {}", c.id, c.target, c.employee, c.mode, c.slots, c.site);
    }
    println!("greedy  net {:8.3}", greedy.ledger.net_profit);
    println!("random  net {:8.3}  (mean of {runs} seeds)", random);
    Ok(())
}
