//! Employment graphs built from random rounds.

use iscc::baselines::random_allocator;
use iscc::fixtures;
use iscc::graph::{build_employment_graph, build_flow_graph, fold_rsus, Role};
use iscc::market::publish_demand;
use iscc::neural::{gnn_forward, init_params, GnnArch};
use iscc::trainer::{distributor_view, DISTRIBUTOR_FEATURES};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn graphs_are_well_formed(seed in 0u64..10_000, corridor in any::<bool>()) {
        let s = if corridor { fixtures::pws_corridor() } else { fixtures::tiny3x4() };
        let r = random_allocator(seed, &s);
        let demand = publish_demand(&s);
        let pool = r.pool.as_ref().unwrap();
        for role in [Role::Distributor, Role::Purchaser] {
            let g = build_employment_graph(&r.report, pool, &demand, role);
            prop_assert_eq!(g.len(), r.report.outcomes.len());
            for e in &g.edges {
                prop_assert!(e.a < e.b && e.b < g.len());
                prop_assert!(e.feature >= 0.0);
            }
            let f0 = g.features.first().map_or(0, Vec::len);
            prop_assert!(g.features.iter().all(|f| f.len() == f0));
            // deterministic text form
            prop_assert_eq!(g.dump(), build_employment_graph(&r.report, pool, &demand, role).dump());
        }
        let flow = build_flow_graph(&r.formation.contracts);
        let folded = fold_rsus(&flow).unwrap();
        prop_assert_eq!(folded.edges.len(), r.formation.contracts.len());
    }

    #[test]
    fn network_is_equivariant_on_market_graphs(seed in 0u64..1_000) {
        let s = fixtures::tiny3x4();
        let (g, _) = distributor_view(&s, &publish_demand(&s));
        let params = init_params(GnnArch::new(DISTRIBUTOR_FEATURES), seed).unwrap();
        let n = g.len();
        let perm: Vec<usize> = (0..n).map(|i| (i + seed as usize) % n).collect();
        let a = gnn_forward(&params, &g).unwrap();
        let b = gnn_forward(&params, &g.permuted(&perm)).unwrap();
        for (i, &j) in perm.iter().enumerate() {
            prop_assert!((a.scores[i] - b.scores[j]).abs() <= 1e-12);
        }
        prop_assert!((a.value - b.value).abs() <= 1e-12);
    }
}
