//! Allocates, shares and releases blocks on the twin resource pool, then
//! rebuilds the pool from its event log.
//!
//! cargo run -p iscc --example pool

use iscc::fixtures;
use iscc::pool::{BlockRequest, Cell, PoolKind, Site, TwinResourcePool};
use iscc::scenario::{CavId, RsuId};

fn main() -> iscc::Result<()> {
    let s = fixtures::tiny3x4();
    let mut pool = TwinResourcePool::new(&s);
    let cav = Site::Cav(CavId(0));

    let beam = pool.allocate(BlockRequest::new(PoolKind::Space, cav, [Cell::new(0, 0), Cell::new(1, 0)]))?;
    let uplink = pool.allocate(BlockRequest::new(PoolKind::Freq, cav, [Cell::new(0, 1), Cell::new(1, 1)]).toward(RsuId(0)))?;
    println!("beam {} costs {}, uplink {} costs {}", beam.id, beam.weighted_cost, uplink.id, uplink.weighted_cost);

    // a passive sensor rides on the uplink: no new cells, no cost
    let rider = pool.allocate(BlockRequest::new(PoolKind::Freq, cav, [Cell::new(0, 1)]).sharing(uplink.id))?;
    println!("shared block {} costs {}", rider.id, rider.weighted_cost);

    // another vehicle cannot use the same subcarrier
    let clash = pool.allocate(BlockRequest::new(PoolKind::Freq, Site::Cav(CavId(1)), [Cell::new(0, 1)]));
    println!("conflicting request: {}", clash.unwrap_err());

    println!("utilization {:?}, weighted cells {}", pool.utilization(), pool.weighted_allocated());
    pool.release(uplink.id)?;
    println!("after releasing the uplink the rider keeps its cell: {:?}", pool.allocated_cells());

    let rebuilt = TwinResourcePool::replay(&s, pool.log())?;
    assert_eq!(rebuilt, pool);
    println!("replayed {} events into an identical pool", pool.log().len());
    println!("{}", serde_json::to_string_pretty(&pool.dump()).expect("dump serializes"));
    Ok(())
}
