//! Detection quality of active and passive sensing, expected against
//! sampled.
//!
//! cargo run -p iscc --example sensing --release

use iscc::fixtures;
use iscc::pool::{BlockRequest, Cell, PoolKind, Site, TwinResourcePool};
use iscc::process::{detection_quality, pws_sense, EvalMode};
use iscc::scenario::{CavId, NctId, RsuId};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> iscc::Result<()> {
    let mut s = fixtures::pws_corridor();
    println!("slots  q(aws={})  q(pws={})", s.process.p_aws, s.process.p_pws);
    for n in 1..=4 {
        println!("{n:5}  {:9.4}  {:9.4}", detection_quality(s.process.p_aws, n), detection_quality(s.process.p_pws, n));
    }

    // passive sensing of nct1 along cav0's uplink to rsu0
    s.process.mode = EvalMode::Sampled;
    let mut pool = TwinResourcePool::new(&s);
    let up = BlockRequest::new(PoolKind::Freq, Site::Cav(CavId(0)), [Cell::new(0, 0), Cell::new(1, 0)]).toward(RsuId(0));
    let id = pool.allocate(up)?.id;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 20_000;
    let mut hits = 0.0;
    for _ in 0..n {
        hits += pws_sense(&s, &pool, CavId(0), NctId(1), id, &s.process, &mut rng)?.detection_quality;
    }
    println!("sampled passive quality over {n} draws: {:.4} (expected {:.4})", hits / n as f64, detection_quality(s.process.p_pws, 2));

    // a target outside the beam is refused
    let err = pws_sense(&s, &pool, CavId(0), NctId(2), id, &s.process, &mut rng);
    println!("nct2: {}", match err {
        Ok(r) => format!("sensed with q {}", r.detection_quality),
        Err(e) => e.to_string(),
    });
    Ok(())
}
