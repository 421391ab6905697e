//! Flow graph, folded vehicle digraph and the two employment graphs of a
//! greedy round.
//!
//! cargo run -p iscc --example graphs

use iscc::baselines::greedy_allocator;
use iscc::fixtures;
use iscc::graph::{build_employment_graph, build_flow_graph, fold_rsus, Role};
use iscc::market::publish_demand;

fn main() -> iscc::Result<()> {
    let s = fixtures::tiny3x4();
    let round = greedy_allocator(&s);
    let flow = build_flow_graph(&round.formation.contracts);
    println!("flow graph: {} nodes, {} edges", flow.nodes.len(), flow.edges.len());
    for e in &flow.edges {
        println!("  {:?} -> {:?} ({})", e.from, e.to, e.contract);
    }
    let folded = fold_rsus(&flow)?;
    for e in &folded.edges {
        println!("  {} -> {} via {:?} ({})", e.from, e.to, e.rsu, e.contract);
    }

    let demand = publish_demand(&s);
    let pool = round.pool.as_ref().expect("round keeps its pool");
    for role in [Role::Distributor, Role::Purchaser] {
        print!("{}", build_employment_graph(&round.report, pool, &demand, role).dump());
    }
    Ok(())
}
