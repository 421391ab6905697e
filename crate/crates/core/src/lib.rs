//! Sensing-communication-computing resource trading for connected vehicles.
//!
//! The crate models a twin resource pool over time, space, frequency and
//! compute, an information market that turns buyer demand into employment
//! contracts, and a pair of graph policies trained asynchronously to
//! maximize net profit.

pub mod baselines;
pub mod commands;
pub mod error;
pub mod graph;
pub mod market;
pub mod neural;
pub mod pool;
pub mod process;
pub mod scenario;
pub mod trainer;

pub use error::{Error, Result};

/// Small built-in scenarios used by tests, examples and the CLI.
pub mod fixtures {
    use crate::scenario::{load_scenario, Scenario};

    pub const TINY3X4: &str = include_str!("../fixtures/tiny3x4.json");

    /// Three vehicles, one roadside unit, four targets.
    pub fn tiny3x4() -> Scenario {
        load_scenario(TINY3X4).expect("built-in fixture is valid")
    }

    pub const PWS_CORRIDOR: &str = include_str!("../fixtures/pws_corridor.json");

    /// Two vehicles and one roadside unit; the first vehicle's uplink beam
    /// toward the unit also covers a second target, and passive sensing is
    /// strong enough to sell.
    pub fn pws_corridor() -> Scenario {
        load_scenario(PWS_CORRIDOR).expect("built-in fixture is valid")
    }

    /// Every built-in fixture by name.
    pub fn all() -> Vec<(&'static str, Scenario)> {
        vec![("tiny3x4", tiny3x4()), ("pws_corridor", pws_corridor())]
    }
}
