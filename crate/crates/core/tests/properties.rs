use proptest::prelude::*;

use prefscale::oracle::{hard_preference, PreferenceScale, ScalingContext};
use prefscale::reward_model::{binary_entropy, pair_loss, pair_probability};
use prefscale::trajectory::{featurize_pair, Segment, SegmentQueue, Transition};

fn context(values: &[f64]) -> ScalingContext {
    let mut c = ScalingContext::new();
    for pair in values.chunks(2) {
        c.update(pair[0], *pair.get(1).unwrap_or(&pair[0])).unwrap();
    }
    c
}

fn rewards() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-100.0..100.0f64, 2..60)
}

proptest! {
    #[test]
    fn scaled_label_in_unit_interval_and_sign_consistent(vals in rewards(), l in -150.0..150.0f64, r in -150.0..150.0f64) {
        let c = context(&vals);
        let z = c.scale_preference(l, r).value();
        prop_assert!((0.0..=1.0).contains(&z));
        // a winner at or below R_min scales to an exact tie
        if l > r {
            prop_assert!(z >= 0.5);
        }
        if l < r {
            prop_assert!(z <= 0.5);
        }
        if let Some((lo, _)) = c.bounds().filter(|_| !c.is_degenerate()) {
            prop_assert_eq!(z > 0.5, l > r && l > lo);
            prop_assert_eq!(z < 0.5, l < r && r > lo);
        }
        if l == r {
            prop_assert_eq!(z, 0.5);
        }
    }

    #[test]
    fn monotone_in_winning_return(vals in rewards(), r in -100.0..100.0f64, a in 0.0..50.0f64, b in 0.0..50.0f64) {
        let c = context(&vals);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let z1 = c.scale_preference(r + lo + 1e-9, r).value();
        let z2 = c.scale_preference(r + hi + 1e-9, r).value();
        prop_assert!(z2 >= z1);
    }

    #[test]
    fn clamping_at_the_bounds(vals in rewards(), excess in 0.0..10.0f64) {
        let c = context(&vals);
        prop_assume!(!c.is_degenerate());
        let (rmin, rmax) = c.bounds().unwrap();
        prop_assert_eq!(c.scale_preference(rmax + excess, rmin - 1.0).value(), 1.0);
        prop_assert_eq!(c.scale_preference(rmin - excess, rmin - excess - 1.0).value(), 0.5);
        prop_assert_eq!(c.scale_preference(rmin - 1.0, rmax + excess).value(), 0.0);
    }

    #[test]
    fn degenerate_context_gives_hard_labels(v in -10.0..10.0f64, n in 1usize..20, l in -20.0..20.0f64, r in -20.0..20.0f64) {
        let c = context(&vec![v; 2 * n]);
        prop_assert!(c.is_degenerate());
        prop_assert_eq!(c.scale_preference(l, r), hard_preference(l, r));
    }

    #[test]
    fn preference_scale_rejects_out_of_range(z in prop_oneof![-10.0..-1e-12f64, (1.0 + 1e-12)..10.0f64]) {
        prop_assert!(PreferenceScale::new(z).is_err());
    }

    #[test]
    fn pair_probability_antisymmetric(a in -500.0..500.0f64, b in -500.0..500.0f64) {
        prop_assert_eq!(pair_probability(a, b), 1.0 - pair_probability(b, a));
    }

    #[test]
    fn pair_probability_shift_invariant(a in -50.0..50.0f64, b in -50.0..50.0f64, c in -1.0..1.0f64) {
        let l = 25;
        let p0 = pair_probability(a, b);
        let p1 = pair_probability(a + c * l as f64, b + c * l as f64);
        prop_assert!((p0 - p1).abs() < 1e-9);
    }

    #[test]
    fn loss_bounded_below_by_label_entropy(a in -20.0..20.0f64, b in -20.0..20.0f64, z in 0.0..=1.0f64) {
        prop_assert!(pair_loss(a, b, z) >= binary_entropy(z) - 1e-12);
    }

    #[test]
    fn feature_map_swaps_halves(xs in prop::collection::vec(-5.0..5.0f64, 20), ys in prop::collection::vec(-5.0..5.0f64, 20)) {
        let seg = |v: &[f64]| Segment::new(
            v.chunks(2).map(|c| Transition { observation: vec![c[0]], action: vec![c[1]], true_reward: c[0], predicted_reward: 0.0 }).collect(),
            0, 0);
        let (a, b) = (seg(&xs), seg(&ys));
        prop_assert_eq!(featurize_pair(&a, &b).swapped(), featurize_pair(&b, &a));
        prop_assert_eq!(a.recomputed_return(), a.true_return());
    }

    #[test]
    fn queue_respects_capacity(cap in 2usize..20, pushes in 0usize..60) {
        let mut q = SegmentQueue::new(cap);
        for i in 0..pushes {
            q.push(Segment::new(vec![Transition { observation: vec![i as f64], action: vec![0.0], true_reward: 0.0, predicted_reward: 0.0 }], i as u64, 0));
        }
        prop_assert!(q.len() <= cap);
        prop_assert_eq!(q.total_pushed() - q.evicted(), q.len() as u64);
    }
}

/// Continuous returns produce labels strictly between 0.5 and 1.
#[test]
fn weak_preferences_occur() {
    let mut c = ScalingContext::new();
    let mut weak = 0;
    for k in 0..200 {
        let l = ((k * 37) % 101) as f64 * 0.731;
        let r = ((k * 53) % 97) as f64 * 0.613;
        c.update(l, r).unwrap();
        let z = c.scale_preference(l, r).value();
        if z > 0.5 && z < 1.0 {
            weak += 1;
        }
    }
    assert!(weak > 20, "{weak}");
}
