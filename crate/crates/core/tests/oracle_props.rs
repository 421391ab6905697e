//! Exhaustive search against brute force and the baselines on random
//! instances.

use iscc::baselines::{exhaustive_optimal, greedy_allocator, random_allocator, SearchCaps};
use iscc::error::Error;
use iscc::scenario::{generate_scenario, GenSpec};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn pruning_is_exact_and_dominates_baselines(cavs in 1usize..4, rsus in 0usize..2, ncts in 1usize..5, seed in 0u64..100_000) {
        let s = generate_scenario(GenSpec { cavs, rsus, ncts, seed }).unwrap();
        let caps = SearchCaps::default();
        let pruned = match exhaustive_optimal(&s, caps, true) {
            Err(Error::Size(_)) => return Ok(()),
            r => r.unwrap(),
        };
        let full = exhaustive_optimal(&s, caps, false).unwrap();
        prop_assert_eq!(pruned.net, full.net);
        prop_assert_eq!(&pruned.choices, &full.choices);
        prop_assert!(pruned.leaves <= full.leaves);
        prop_assert_eq!(pruned.outcome.ledger.net_profit, pruned.net);
        prop_assert!(greedy_allocator(&s).ledger.net_profit <= pruned.net + 1e-9);
        for k in 0..50 {
            prop_assert!(random_allocator(k, &s).ledger.net_profit <= pruned.net + 1e-9);
        }
    }
}

#[test]
fn oversized_instances_are_refused() {
    let s = generate_scenario(GenSpec { cavs: 3, rsus: 1, ncts: 9, seed: 4 }).unwrap();
    let caps = SearchCaps { max_targets: 2, max_templates: 12 };
    assert!(matches!(exhaustive_optimal(&s, caps, true), Err(Error::Size(_))));
}
