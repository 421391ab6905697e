//! Loads the built-in fixture, generates a random scenario and moves the
//! world forward in time.
//!
//! cargo run -p iscc --example scenario

use iscc::fixtures;
use iscc::scenario::{generate_scenario, GenSpec};

fn main() -> iscc::Result<()> {
    let s = fixtures::tiny3x4();
    for c in &s.cavs {
        let seen: Vec<String> = s.visible_targets(c.id)?.iter().map(|t| t.to_string()).collect();
        println!("{} at {:?} sees [{}]", c.id, c.position, seen.join(", "));
        for t in s.visible_targets(c.id)? {
            println!("  {t} in sector {}", s.bearing_sector(c.id, t)?);
        }
    }

    let later = s.step_mobility(2.0);
    for (a, b) in s.cavs.iter().zip(&later.cavs) {
        println!("{} moves {:?} -> {:?}", a.id, a.position, b.position);
    }

    let g = generate_scenario(GenSpec { cavs: 4, rsus: 2, ncts: 5, seed: 42 })?;
    println!("generated: {} vehicles, {} units, {} targets", g.cavs.len(), g.rsus.len(), g.ncts.len());
    println!("{}", g.to_json());
    Ok(())
}
