//! One market round by hand: demand, order, contracts, execution and
//! settlement.
//!
//! cargo run -p iscc --example market_round

use iscc::fixtures;
use iscc::market::{execute_round, form_contracts, place_order, publish_demand, settle};
use iscc::pool::TwinResourcePool;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> iscc::Result<()> {
    let s = fixtures::tiny3x4();
    let demand = publish_demand(&s);
    for t in demand.canonical_order(demand.demanded_targets()) {
        let buyers: Vec<String> = demand.buyers_of(t).iter().map(|(b, _)| b.to_string()).collect();
        println!("{t}: value {} from [{}]", demand.demand_value(t), buyers.join(", "));
    }

    // every demanded target at the first quality level
    let decision: Vec<_> = demand.demanded_targets().into_iter().map(|t| (t, 1)).collect();
    let order = place_order(&demand, &s.pricing, &decision)?;
    let mut pool = TwinResourcePool::new(&s);
    // first feasible template for every line
    let formation = form_contracts(&s, &mut pool, &demand, &order, &vec![Some(0); order.lines.len()], &s.process);
    for c in &formation.contracts {
        println!("{}: {} senses {} ({:?}, {} slots) for {} at {}", c.id, c.employee, c.target, c.mode, c.slots, c.employer, c.site);
    }
    for k in &formation.skipped {
        println!("skipped {:?}: {}", k.line.target, k.reason);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(s.rng_seed);
    let report = execute_round(&s, &pool, formation.contracts, &s.process, &mut rng);
    let ledger = settle(&demand, &order, &report);
    println!("{}", ledger.to_json());
    println!("net {} = gross {} - cost {}", ledger.net_profit, ledger.gross_income, ledger.resource_cost);
    Ok(())
}
