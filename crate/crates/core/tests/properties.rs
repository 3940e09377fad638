use nfdp_core::accountant::{
    budget_with_replacement, budget_without_replacement, calibrate_gaussian_sigma, more_private, PrivacyOrdering,
};
use nfdp_core::datagen::{draw_party_sets, generate_task, LabelSpace, PartitionMode, PartitionPlan, SyntheticTask};
use nfdp_core::federation::aggregate;
use nfdp_core::learner::gradcheck::{check_gradient, trial};
use nfdp_core::learner::{KnowledgeMode, KnowledgeVector};
use nfdp_core::oracle::{enumerate_mechanism, hockey_stick_delta, verify_theorem};
use nfdp_core::rng::{derive_stream, Purpose, StreamLabel};
use nfdp_core::sampling::sample;
use nfdp_core::{Budget, SamplingScheme};
use proptest::prelude::*;

fn scheme() -> impl Strategy<Value = SamplingScheme> {
    prop_oneof![Just(SamplingScheme::WithReplacement), Just(SamplingScheme::WithoutReplacement)]
}

proptest! {
    #[test]
    fn with_replacement_dominates((n, k) in (2u64..1_000_000).prop_flat_map(|n| (Just(n), 2..=n))) {
        let w: Budget = budget_with_replacement(n, k).unwrap();
        let wo: Budget = budget_without_replacement(n, k).unwrap();
        prop_assert!(w.epsilon_nat() < wo.epsilon_nat());
        prop_assert!(w.delta() < wo.delta());
        prop_assert_eq!(more_private(&w, &wo), PrivacyOrdering::StrictlyMorePrivate);
    }

    #[test]
    fn schemes_agree_at_one_draw(n in 1u64..10_000_000) {
        let w: Budget = budget_with_replacement(n, 1).unwrap();
        let wo: Budget = budget_without_replacement(n, 1).unwrap();
        prop_assert!((w.epsilon_nat() - wo.epsilon_nat()).abs() <= 1e-15);
        prop_assert!((w.delta() - wo.delta()).abs() <= 1e-15);
    }

    #[test]
    fn budgets_grow_with_k_and_shrink_with_n(n in 2u64..100_000, k in 1u64..1000) {
        let k = k.min(n - 1);
        for s in [SamplingScheme::WithReplacement, SamplingScheme::WithoutReplacement] {
            let a: Budget = nfdp_core::accountant::budget_for(s, n, k).unwrap();
            let more_k: Budget = nfdp_core::accountant::budget_for(s, n, k + 1).unwrap();
            let more_n: Budget = nfdp_core::accountant::budget_for(s, n + 1, k).unwrap();
            prop_assert!(more_k.epsilon_nat() > a.epsilon_nat() && more_k.delta() > a.delta());
            prop_assert!(more_n.epsilon_nat() < a.epsilon_nat() && more_n.delta() < a.delta());
            prop_assert!(a.delta() > 0.0 && a.delta() <= 1.0 && a.epsilon_nat() > 0.0);
        }
    }

    #[test]
    fn sigma_scales_inversely_with_epsilon(eps in 1e-4f64..10.0, delta in 1e-9f64..0.5, t in 1u64..1_000_000, c in 0.1f64..10.0) {
        let s1 = calibrate_gaussian_sigma(&Budget::new(eps, delta).unwrap(), t, c).unwrap();
        let s2 = calibrate_gaussian_sigma(&Budget::new(2.0 * eps, delta).unwrap(), t, c).unwrap();
        let s4t = calibrate_gaussian_sigma(&Budget::new(eps, delta).unwrap(), 4 * t, c).unwrap();
        prop_assert!((s1 / s2 - 2.0).abs() < 1e-12);
        prop_assert!((s4t / s1 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn samples_are_well_formed(s in scheme(), n in 1usize..200, k in 1usize..200, seed in any::<u64>()) {
        let k = if s == SamplingScheme::WithoutReplacement { k.min(n) } else { k };
        let mut stream = derive_stream(seed, StreamLabel::global(Purpose::Diagnostics));
        let pick = sample(&mut stream, s, n, k).unwrap();
        prop_assert_eq!(pick.len(), k);
        prop_assert!(pick.indices().iter().all(|&i| i < n));
        if s == SamplingScheme::WithoutReplacement {
            prop_assert!(pick.indices().windows(2).all(|w| w[0] < w[1]));
        }
        let mut again = derive_stream(seed, StreamLabel::global(Purpose::Diagnostics));
        prop_assert_eq!(sample(&mut again, s, n, k).unwrap(), pick);
    }

    #[test]
    fn hockey_stick_is_bounded_and_falls_with_epsilon(s in scheme(), n in 2usize..6, k in 1usize..4, eps in 0.0f64..3.0) {
        let k = if s == SamplingScheme::WithoutReplacement { k.min(n) } else { k };
        let p = enumerate_mechanism::<f64>(n + 1, k, s).unwrap();
        let q = enumerate_mechanism::<f64>(n, k, s).unwrap();
        let d = hockey_stick_delta(&p, &q, eps);
        let d_more = hockey_stick_delta(&p, &q, eps + 0.5);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&d));
        prop_assert!(d_more <= d + 1e-12);
    }
}

#[test]
fn theorem_holds_on_small_datasets() {
    for n in 1..=6 {
        for k in 1..=n {
            for s in [SamplingScheme::WithReplacement, SamplingScheme::WithoutReplacement] {
                assert!(verify_theorem(n, k, s).unwrap().holds(), "{s} n={n} k={k}");
            }
        }
    }
}

fn knowledge(mode: KnowledgeMode, seed: u64, rows: usize, classes: usize) -> Vec<KnowledgeVector<f64>> {
    let mut s = derive_stream(seed, StreamLabel::global(Purpose::Diagnostics));
    (0..rows)
        .map(|_| match mode {
            KnowledgeMode::Logits => KnowledgeVector::Logits((0..classes).map(|_| s.standard_normal()).collect()),
            KnowledgeMode::Softmax => {
                KnowledgeVector::Probabilities(nfdp_core::learner::softmax(&(0..classes).map(|_| s.standard_normal()).collect::<Vec<_>>()))
            }
            KnowledgeMode::Argmax => KnowledgeVector::Label(s.below_usize(classes)),
        })
        .collect()
}

fn mode() -> impl Strategy<Value = KnowledgeMode> {
    prop_oneof![Just(KnowledgeMode::Logits), Just(KnowledgeMode::Softmax), Just(KnowledgeMode::Argmax)]
}

fn close(a: &[KnowledgeVector<f64>], b: &[KnowledgeVector<f64>], tol: f64) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| match (x, y) {
            (KnowledgeVector::Label(i), KnowledgeVector::Label(j)) => i == j,
            (KnowledgeVector::Logits(u), KnowledgeVector::Logits(v))
            | (KnowledgeVector::Probabilities(u), KnowledgeVector::Probabilities(v)) => {
                u.iter().zip(v).all(|(p, q)| (p - q).abs() <= tol)
            }
            _ => false,
        })
}

proptest! {
    #[test]
    fn aggregating_copies_changes_nothing(m in mode(), parties in 1usize..8, seed in any::<u64>()) {
        let one = knowledge(m, seed, 5, 4);
        let out = aggregate(&vec![one.clone(); parties], m, 4).unwrap();
        prop_assert!(close(&out, &one, 1e-15));
    }

    #[test]
    fn party_order_does_not_matter(m in mode(), parties in 1usize..6, seed in any::<u64>(), rot in 0usize..6) {
        let lists: Vec<_> = (0..parties).map(|p| knowledge(m, seed ^ p as u64, 5, 3)).collect();
        let mut rotated = lists.clone();
        rotated.rotate_left(rot % parties);
        let mut reversed = lists.clone();
        reversed.reverse();
        let base = aggregate(&lists, m, 3).unwrap();
        // Means may differ in the last bit with summation order.
        prop_assert!(close(&aggregate(&rotated, m, 3).unwrap(), &base, 1e-15));
        prop_assert!(close(&aggregate(&reversed, m, 3).unwrap(), &base, 1e-15));
        if m == KnowledgeMode::Softmax {
            for kv in &base {
                let KnowledgeVector::Probabilities(p) = kv else { unreachable!() };
                prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn random_trials_pass_the_gradient_check(seed in any::<u64>(), i in 0usize..30) {
        let t = trial(seed, i);
        let report = check_gradient(&t.model, &t.batch, t.loss).unwrap();
        prop_assert!(report.relative_error <= 1e-6, "{:?}", report);
    }

    #[test]
    fn datasets_are_a_pure_function_of_the_seed(seed in any::<u64>(), shift in 0.0f64..2.0) {
        let task = SyntheticTask {
            features: 5,
            superclasses: 3,
            subclasses_per_super: 2,
            separation: 3.0,
            noise_sigma: 1.0,
            label_space: LabelSpace::Superclass,
        };
        let plan = PartitionPlan { parties: 2, mode: PartitionMode::NonIidShift, per_party_n: 20, shift_strength: shift, test_size: 20 };
        let draw = || {
            let gm = generate_task(&task, &mut derive_stream(seed, StreamLabel::global(Purpose::TaskMeans))).unwrap();
            draw_party_sets(&gm, &plan, seed).unwrap()
        };
        let a = draw();
        prop_assert_eq!(&a, &draw());
        prop_assert!(a.test[0].labels.iter().all(|&l| l < 3));
    }
}
