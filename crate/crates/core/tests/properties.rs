mod common;

use proptest::prelude::*;

use pollflow::cost::{haversine_km, transfer_order_cost, CostParameters, GeoPoint, SiteKind};
use pollflow::optimizer::{solve_lexicographic, validate_plan};
use pollflow::planner::baseline_allocation;
use pollflow::queueing::{
    default_services, enumerate_feasible_combinations, robust_wait, simulate_voting_day, ArrivalInput,
    ReplicationPolicy,
};
use pollflow::scoring::{score_of_wait, IndifferenceZoneSpec};
use pollflow::{PerResource, Resource, ResourceCombination};

fn point() -> impl Strategy<Value = GeoPoint> {
    (33.0f64..34.5, -85.0f64..-83.5).prop_map(|(lat, lon)| GeoPoint::new(lat, lon).unwrap())
}

proptest! {
    #[test]
    fn quantile_is_a_sample_and_grows_with_q(
        samples in prop::collection::vec(0.0f64..500.0, 1..300),
        q1 in 0.01f64..0.99,
        q2 in 0.01f64..0.99,
    ) {
        let (lo, hi) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
        let a = robust_wait(&samples, lo);
        let b = robust_wait(&samples, hi);
        prop_assert!(samples.contains(&a) && samples.contains(&b));
        prop_assert!(a <= b);
    }

    #[test]
    fn distance_is_a_metric(a in point(), b in point(), c in point()) {
        let ab = haversine_km(a, b);
        prop_assert!((ab - haversine_km(b, a)).abs() < 1e-9);
        prop_assert!(haversine_km(a, a) == 0.0);
        prop_assert!(haversine_km(a, c) <= ab + haversine_km(b, c) + 1e-9);
    }

    #[test]
    fn one_order_is_never_dearer_than_two(q1 in 1u32..20, q2 in 1u32..20, leg in 0.0f64..50.0, cap in 1u32..6) {
        let p = CostParameters { module_capacity: cap, ..CostParameters::default() };
        let joint = transfer_order_cost(q1 + q2, leg, &p).unwrap();
        let split = transfer_order_cost(q1, leg, &p).unwrap() + transfer_order_cost(q2, leg, &p).unwrap();
        prop_assert!(joint <= split + 1e-9);
        prop_assert!(transfer_order_cost(q1, f64::INFINITY, &p).is_err());
    }

    #[test]
    fn scores_never_rise_with_waiting(w1 in 0.0f64..400.0, w2 in 0.0f64..400.0) {
        let spec = IndifferenceZoneSpec::default();
        let (lo, hi) = if w1 <= w2 { (w1, w2) } else { (w2, w1) };
        prop_assert!(score_of_wait(lo, &spec) >= score_of_wait(hi, &spec));
    }

    #[test]
    fn combinations_fill_the_layout(p in 1u32..5, b in 1u32..7, s in 1u32..4) {
        let combos = enumerate_feasible_combinations(PerResource::new(p, b, s)).unwrap();
        prop_assert_eq!(combos.len() as u32, p * b * s);
        prop_assert!(combos.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn combination_text_round_trips(p in 0u32..50, b in 0u32..50, s in 0u32..50) {
        let c = ResourceCombination::new(p, b, s);
        let text = format!("{p},{b},{s}");
        prop_assert_eq!(text.parse::<ResourceCombination>().unwrap(), c);
    }

    #[test]
    fn baseline_hands_out_every_machine(
        registered in prop::collection::vec(1u64..5000, 1..10),
        extra in 0u32..60,
    ) {
        let mut sites = vec![common::site("W", 33.7, -84.4, 0, SiteKind::Warehouse)];
        for (k, &r) in registered.iter().enumerate() {
            let mut s = common::site(&format!("L{k}"), 33.7, -84.3, 1, SiteKind::PollingLocation);
            s.registered = r;
            sites.push(s);
        }
        let fleet = PerResource::splat(registered.len() as u32 + extra);
        let alloc = baseline_allocation(&sites, fleet).unwrap();
        for r in Resource::ALL {
            prop_assert_eq!(alloc.values().map(|p| p[r]).sum::<u32>(), fleet[r]);
            prop_assert!(alloc.values().all(|p| p[r] >= 1));
        }
        prop_assert!(baseline_allocation(&sites, PerResource::splat(registered.len() as u32 - 1)).is_err());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn solved_plans_pass_validation(seed in any::<u64>()) {
        let inst = common::random_instance(&mut common::rng(seed));
        if let Ok((one, c_star, two)) = solve_lexicographic(&inst) {
            prop_assert_eq!(validate_plan(&one, &inst), Vec::<String>::new());
            prop_assert_eq!(validate_plan(&two, &inst), Vec::<String>::new());
            prop_assert!(two.total_cost <= (1.0 + inst.epsilon) * c_star * (1.0 + 1e-9) + 1e-9);
            prop_assert!(two.total_score >= one.total_score - 1e-9);
        }
    }

    #[test]
    fn every_voter_is_served_once(counts in prop::collection::vec(0u64..40, 1..6), seed in any::<u64>()) {
        let res = simulate_voting_day(
            &ArrivalInput::Counts(counts.clone()),
            ResourceCombination::new(1, 3, 1),
            &default_services(),
            ReplicationPolicy::Fixed(3),
            seed,
        )
        .unwrap();
        let n: u64 = counts.iter().sum();
        prop_assert_eq!(res.total_voters, 3 * n);
        prop_assert_eq!(res.waits.len() as u64, 3 * n);
        prop_assert!(res.waits.iter().all(|&w| w >= 0.0));
        for r in Resource::ALL {
            prop_assert!((0.0..=1.0 + 1e-9).contains(&res.utilization[r]));
        }
    }
}
