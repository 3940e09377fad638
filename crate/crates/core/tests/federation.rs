use nfdp_core::datagen::*;
use nfdp_core::federation::*;
use nfdp_core::learner::{accuracy, init_model, predict_knowledge, train, Batch, KnowledgeMode, LossKind, Targets, TrainSpec};
use nfdp_core::rng::{derive_stream, Purpose, StreamLabel};
use nfdp_core::sampling::select_for_party;
use nfdp_core::SamplingScheme;

fn task() -> SyntheticTask {
    SyntheticTask {
        features: 6,
        superclasses: 3,
        subclasses_per_super: 2,
        separation: 4.0,
        noise_sigma: 1.0,
        label_space: LabelSpace::Superclass,
    }
}

fn plan(parties: usize) -> PartitionPlan {
    PartitionPlan {
        parties,
        mode: PartitionMode::Iid,
        per_party_n: 80,
        shift_strength: 0.0,
        test_size: 200,
    }
}

fn small(parties: usize, seed: u64) -> FederationConfig {
    FederationConfig {
        parties,
        rounds: 3,
        t1: 3,
        k: 20,
        public_subset_size: 40,
        public_pool_size: 200,
        hidden: vec![8],
        master_seed: seed,
        ..Default::default()
    }
}

struct Bundle {
    sets: PartySets,
    pool: UnlabeledSet,
    classes: usize,
}

impl Bundle {
    fn new(config: &FederationConfig) -> Self {
        let t = task();
        let seed = config.master_seed;
        let model = generate_task(&t, &mut derive_stream(seed, StreamLabel::global(Purpose::TaskMeans))).unwrap();
        Self {
            sets: draw_party_sets(&model, &plan(config.parties), seed).unwrap(),
            pool: draw_public_pool(&model, config.public_pool_size, PoolDistribution::Matched, seed),
            classes: t.classes(),
        }
    }

    fn data(&self) -> FederationData<'_> {
        FederationData {
            train: &self.sets.train,
            test: &self.sets.test,
            pool: &self.pool,
            classes: self.classes,
            warm_start: None,
        }
    }
}

#[test]
fn private_rows_outside_the_selection_are_never_touched() {
    for scheme in [SamplingScheme::WithReplacement, SamplingScheme::WithoutReplacement] {
        let config = FederationConfig { scheme, ..small(3, 1) };
        let trace = run_simulation(&config, &task(), &plan(3)).unwrap();
        for state in &trace.states {
            let selected: std::collections::HashSet<_> = state.selection.indices().iter().copied().collect();
            for (row, &count) in state.touches.iter().enumerate() {
                assert_eq!(count > 0, selected.contains(&row), "row {row} touched {count} times");
            }
        }
    }
}

#[test]
fn selection_is_drawn_once_and_kept() {
    let config = small(3, 2);
    let trace = run_simulation(&config, &task(), &plan(3)).unwrap();
    for (party, state) in trace.states.iter().enumerate() {
        let again = select_for_party(2, party, config.scheme, 80, 20).unwrap();
        assert_eq!(state.selection, again);
    }
}

#[test]
fn a_changed_selection_is_caught() {
    let config = small(2, 3);
    let bundle = Bundle::new(&config);
    let data = bundle.data();
    let (mut states, consensus, _) = run_initialization(&config, &data).unwrap();
    states[1].selection = select_for_party(99, 1, config.scheme, 80, 20).unwrap();
    assert!(matches!(
        run_round(0, &mut states, &consensus, &config, &data),
        Err(FederationError::SelectionDrift { party: 1 })
    ));
}

#[test]
fn without_local_training_all_parties_agree() {
    let config = FederationConfig { t1: 0, ..small(3, 4) };
    let bundle = Bundle::new(&config);
    let (states, consensus, _) = run_initialization(&config, &bundle.data()).unwrap();
    assert!(states.windows(2).all(|w| w[0].model == w[1].model));
    let inputs = bundle.pool.inputs.select(ndarray::Axis(0), &consensus.public_indices);
    let own = predict_knowledge(&states[0].model, inputs.view(), config.mode).unwrap();
    for (a, b) in own.iter().zip(&consensus.knowledge) {
        let (nfdp_core::learner::KnowledgeVector::Probabilities(a), nfdp_core::learner::KnowledgeVector::Probabilities(b)) = (a, b) else {
            panic!()
        };
        assert!(a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-15));
    }
}

#[test]
fn a_single_party_consensus_is_its_own_knowledge() {
    for mode in [KnowledgeMode::Logits, KnowledgeMode::Softmax, KnowledgeMode::Argmax] {
        let config = FederationConfig { mode, ..small(1, 5) };
        let bundle = Bundle::new(&config);
        let (states, consensus, _) = run_initialization(&config, &bundle.data()).unwrap();
        let inputs = bundle.pool.inputs.select(ndarray::Axis(0), &consensus.public_indices);
        assert_eq!(predict_knowledge(&states[0].model, inputs.view(), mode).unwrap(), consensus.knowledge);
    }
}

#[test]
fn non_private_runs_use_everything_and_report_no_privacy() {
    let config = FederationConfig {
        privacy: PrivacyMode::NonPrivate,
        ..small(2, 6)
    };
    let trace = run_simulation(&config, &task(), &plan(2)).unwrap();
    for (state, summary) in trace.states.iter().zip(&trace.summary) {
        assert_eq!(state.selection.indices(), (0..80).collect::<Vec<_>>().as_slice());
        assert!(state.touches.iter().all(|&c| c > 0));
        assert!(summary.budget.epsilon_nat().is_infinite());
        assert_eq!(summary.budget.delta(), 1.0);
        assert_eq!(summary.k, 80);
    }
}

#[test]
fn summary_budget_matches_the_closed_form() {
    let config = FederationConfig {
        parties: 1,
        rounds: 1,
        t1: 1,
        k: 60,
        scheme: SamplingScheme::WithReplacement,
        public_subset_size: 20,
        public_pool_size: 50,
        hidden: vec![4],
        ..Default::default()
    };
    let p = PartitionPlan {
        per_party_n: 300,
        ..plan(1)
    };
    let trace = run_simulation(&config, &task(), &p).unwrap();
    let b = trace.summary[0].budget;
    assert!((b.epsilon_log10() - 0.0867).abs() < 5e-5, "{}", b.epsilon_log10());
    assert!((b.delta() - 0.1815).abs() < 5e-5, "{}", b.delta());
}

#[test]
fn zero_epoch_rounds_leave_models_alone() {
    let config = FederationConfig { t2: 0, t3: 0, ..small(2, 7) };
    let bundle = Bundle::new(&config);
    let data = bundle.data();
    let (mut states, consensus, _) = run_initialization(&config, &data).unwrap();
    let before: Vec<_> = states.iter().map(|s| s.model.clone()).collect();
    let (next, record) = run_round(0, &mut states, &consensus, &config, &data).unwrap();
    assert!(states.iter().zip(&before).all(|(s, b)| &s.model == b));
    assert_ne!(next.public_indices, consensus.public_indices);
    assert_eq!(record.pre_digest_accuracy, record.post_revisit_accuracy);
    // Same models on the new subset: the consensus is what the old models say there.
    let inputs = bundle.pool.inputs.select(ndarray::Axis(0), &next.public_indices);
    let views: Vec<_> = states
        .iter()
        .map(|s| predict_knowledge(&s.model, inputs.view(), config.mode).unwrap())
        .collect();
    assert_eq!(aggregate(&views, config.mode, bundle.classes).unwrap(), next.knowledge);
}

#[test]
fn self_distillation_does_not_collapse() {
    for seed in 0..3 {
        let config = FederationConfig {
            privacy: PrivacyMode::NonPrivate,
            rounds: 10,
            t1: 10,
            ..small(1, seed)
        };
        let trace = run_simulation(&config, &task(), &plan(1)).unwrap();
        let init = trace.init.accuracy[0];
        let last = trace.summary[0].final_accuracy;
        assert!(last >= init - 0.02, "seed {seed}: {init} -> {last}");
    }
}

#[test]
fn schedule_does_not_change_results() {
    let base = small(4, 8);
    let run = |execution| run_simulation(&FederationConfig { execution, ..base.clone() }, &task(), &plan(4)).unwrap();
    let serial = run(Execution::Serial);
    assert_eq!(serial, run(Execution::Parallel { threads: None }));
    assert_eq!(serial, run(Execution::Parallel { threads: Some(1) }));
    assert_eq!(serial, run(Execution::Parallel { threads: Some(3) }));
}

#[test]
fn metrics_cover_every_round_and_party() {
    let config = small(2, 9);
    let trace = run_simulation(&config, &task(), &plan(2)).unwrap();
    let rows = trace.metrics_rows();
    assert_eq!(rows.len(), 2 + 2 * 4);
    assert_eq!(rows.iter().filter(|r| r.phase == MetricsPhase::Init).count(), 2);
    for r in 0..=3 {
        for p in 0..2 {
            assert!(rows.iter().any(|m| m.phase == MetricsPhase::Round && m.round == r && m.party == p));
        }
    }
    assert!(rows.iter().all(|m| (0.0..=1.0).contains(&m.test_accuracy) && m.train_loss.is_finite()));
    assert_eq!(trace.rounds.len(), 3);
    assert!(trace.rounds.iter().all(|r| r.consensus_entropy >= 0.0 && r.public_indices.len() == 40));
}

#[test]
fn fixed_public_subset_policy_reuses_the_subset() {
    let config = FederationConfig {
        public_policy: PublicSubsetPolicy::Fixed,
        ..small(2, 10)
    };
    let trace = run_simulation(&config, &task(), &plan(2)).unwrap();
    assert!(trace.rounds.iter().all(|r| r.public_indices == trace.init.public_indices));
    let per_round = run_simulation(&small(2, 10), &task(), &plan(2)).unwrap();
    assert_ne!(per_round.rounds[0].public_indices, per_round.init.public_indices);
}

#[test]
fn control_run_has_no_rounds() {
    let config = small(2, 11);
    let control = config.no_collaboration_control();
    assert_eq!((control.rounds, control.t1), (0, config.t1 + config.rounds * config.t3));
    let trace = run_simulation(&control, &task(), &plan(2)).unwrap();
    assert!(trace.rounds.is_empty());
    assert_eq!(trace.summary[0].final_accuracy, trace.init.accuracy[0]);
    assert_eq!(trace.metrics_rows().len(), 4);
}

#[test]
fn bad_configurations_are_rejected() {
    let t = task();
    let ok = small(2, 0);
    let cases = [
        FederationConfig { k: 0, ..ok.clone() },
        FederationConfig { parties: 0, ..ok.clone() },
        FederationConfig { public_subset_size: 500, ..ok.clone() },
        FederationConfig {
            k: 81,
            scheme: SamplingScheme::WithoutReplacement,
            ..ok.clone()
        },
        FederationConfig {
            mode: KnowledgeMode::Argmax,
            privacy: PrivacyMode::FedLdp(LdpSettings {
                noise: LdpNoise::Sigma { sigma: 1.0, delta: 1e-3 },
                c2: 1.0,
                query_rule: QueryRule::PerClass,
                composition: LdpComposition::Formula,
            }),
            ..ok.clone()
        },
    ];
    for c in &cases {
        assert!(run_simulation(c, &t, &plan(c.parties.max(1))).is_err(), "{c:?}");
    }
    assert!(run_simulation(&ok, &t, &plan(3)).is_err());
    // k larger than n is fine with replacement.
    assert!(run_simulation(&FederationConfig { k: 81, ..ok.clone() }, &t, &plan(2)).is_ok());

    let bundle = Bundle::new(&ok);
    let data = bundle.data();
    let (mut states, consensus, _) = run_initialization(&ok, &data).unwrap();
    assert!(run_round(3, &mut states, &consensus, &ok, &data).is_err());
}

#[test]
fn local_noise_budget_and_determinism() {
    let ldp = LdpSettings {
        noise: LdpNoise::Sigma { sigma: 2.0, delta: 1e-3 },
        c2: 1.0,
        query_rule: QueryRule::PerExample,
        composition: LdpComposition::Formula,
    };
    let config = FederationConfig {
        privacy: PrivacyMode::FedLdp(ldp),
        ..small(2, 12)
    };
    let a = run_simulation(&config, &task(), &plan(2)).unwrap();
    assert_eq!(a, run_simulation(&config, &task(), &plan(2)).unwrap());
    let queries = (40 * 4) as f64;
    let expected = (queries * (1e3f64).ln()).sqrt() / 2.0;
    assert!((a.summary[0].budget.epsilon_nat() - expected).abs() < 1e-12);
    assert_eq!(a.summary[0].budget.delta(), 1e-3);

    let basic = FederationConfig {
        privacy: PrivacyMode::FedLdp(LdpSettings {
            composition: LdpComposition::Basic,
            ..ldp
        }),
        ..config.clone()
    };
    let b = run_simulation(&basic, &task(), &plan(2)).unwrap();
    let per = (1e3f64).ln().sqrt() / 2.0;
    assert!((b.summary[0].budget.epsilon_nat() - per * queries).abs() < 1e-9);
    assert!((b.summary[0].budget.delta() - 0.16).abs() < 1e-12);

    let clean = run_simulation(&small(2, 12), &task(), &plan(2)).unwrap();
    assert_ne!(a.consensus, clean.consensus);
}

#[test]
fn a_target_budget_is_reported_as_given() {
    let target = nfdp_core::Budget::new(2.0, 1e-4).unwrap();
    let config = FederationConfig {
        privacy: PrivacyMode::FedLdp(LdpSettings {
            noise: LdpNoise::Target(target),
            c2: 1.0,
            query_rule: QueryRule::PerClass,
            composition: LdpComposition::Formula,
        }),
        ..small(2, 13)
    };
    let trace = run_simulation(&config, &task(), &plan(2)).unwrap();
    assert_eq!(trace.summary[1].budget, target);
}

#[test]
fn separated_blobs_are_easy() {
    let t = SyntheticTask {
        features: 2,
        superclasses: 2,
        subclasses_per_super: 1,
        separation: 10.0,
        noise_sigma: 0.5,
        label_space: LabelSpace::Subclass,
    };
    let gm = generate_task(&t, &mut derive_stream(3, StreamLabel::global(Purpose::TaskMeans))).unwrap();
    let data = gm.draw_labeled(400, &mut derive_stream(3, StreamLabel::new(Purpose::PartyData, 0, 0)));
    let test = gm.draw_labeled(1000, &mut derive_stream(3, StreamLabel::global(Purpose::TestData)));
    let mut model = init_model::<f64>(&[2, 2], &mut derive_stream(3, StreamLabel::global(Purpose::ModelInit))).unwrap();
    let mut batch = Batch::new(data.inputs.clone(), Targets::Hard(data.labels.clone())).unwrap();
    let spec = TrainSpec::new(0.05, 32, 10, LossKind::HardCrossEntropy).unwrap();
    train(&mut model, &mut batch, &spec, &mut derive_stream(3, StreamLabel::global(Purpose::InitShuffle))).unwrap();
    assert!(accuracy(&model, test.inputs.view(), &test.labels).unwrap() >= 0.99);
}

#[test]
fn a_shifted_public_pool_hurts() {
    let t = SyntheticTask {
        features: 10,
        superclasses: 4,
        subclasses_per_super: 2,
        separation: 4.0,
        noise_sigma: 1.0,
        label_space: LabelSpace::Superclass,
    };
    let p = PartitionPlan {
        parties: 3,
        mode: PartitionMode::NonIidShift,
        per_party_n: 200,
        shift_strength: 1.0,
        test_size: 500,
    };
    let mean = |dist| {
        (0..3)
            .map(|seed| {
                let c = FederationConfig {
                    parties: 3,
                    rounds: 8,
                    t1: 10,
                    k: 40,
                    public_subset_size: 200,
                    public_pool_size: 1000,
                    public_distribution: dist,
                    master_seed: seed,
                    ..Default::default()
                };
                run_simulation(&c, &t, &p).unwrap().mean_final_accuracy()
            })
            .sum::<f64>()
            / 3.0
    };
    let matched = mean(PoolDistribution::Matched);
    let shifted = mean(PoolDistribution::Shifted(5.0));
    assert!(shifted < matched, "matched {matched}, shifted {shifted}");
}
