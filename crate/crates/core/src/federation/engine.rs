use rayon::prelude::*;

use super::aggregate::{aggregate, apply_ldp_noise, consensus_entropy, consensus_targets};
use super::view::PrivateView;
use super::{
    Execution, FederationConfig, FederationError, LdpComposition, LdpNoise, PrivacyMode, PublicSubsetPolicy,
};
use crate::accountant::{budget_for, calibrate_gaussian_sigma, compose_basic, SamplingScheme};
use crate::datagen::{
    draw_party_sets, draw_public_pool, generate_task, LabeledSet, PartitionPlan, SyntheticTask, UnlabeledSet,
};
use crate::learner::{
    accuracy, evaluate_loss, init_model, predict_knowledge, train, Batch, KnowledgeVector, LearnerError, LossKind,
    MlpModel, TrainSpec, TrainingSource,
};
use crate::rng::{derive_stream, Purpose, RngStream, StreamLabel};
use crate::sampling::{sample_without_replacement, select_for_party, SubsetSelection};
use crate::Budget;

/// Everything the protocol reads besides its configuration.
#[derive(Debug, Clone, Copy)]
pub struct FederationData<'a> {
    pub train: &'a [LabeledSet],
    pub test: &'a [LabeledSet],
    pub pool: &'a UnlabeledSet,
    pub classes: usize,
    /// Labelled rows for the optional shared warm start.
    pub warm_start: Option<&'a LabeledSet>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartyState {
    pub model: MlpModel<f64>,
    pub selection: SubsetSelection,
    fingerprint: u64,
    /// How often each private row has been handed to the learner.
    pub touches: Vec<u64>,
}

/// Aggregated knowledge `Y_p[t]` on the public subset `X_p[t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Consensus {
    pub public_indices: Vec<usize>,
    pub knowledge: Vec<KnowledgeVector<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitRecord {
    /// Test accuracy of the shared starting model as each party sees it.
    pub start_accuracy: Vec<f64>,
    pub start_loss: Vec<f64>,
    /// After the local training phase.
    pub accuracy: Vec<f64>,
    /// Mean hard-label loss on the private subset.
    pub train_loss: Vec<f64>,
    pub public_indices: Vec<usize>,
    pub consensus_entropy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    /// The subset predictions were issued on, `X_p[t + 1]`.
    pub public_indices: Vec<usize>,
    pub pre_digest_accuracy: Vec<f64>,
    pub post_revisit_accuracy: Vec<f64>,
    pub train_loss: Vec<f64>,
    pub consensus_entropy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MetricsPhase {
    Init,
    Round,
}

impl MetricsPhase {
    pub fn name(self) -> &'static str {
        match self {
            MetricsPhase::Init => "init",
            MetricsPhase::Round => "round",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub round: usize,
    pub party: usize,
    pub phase: MetricsPhase,
    pub test_accuracy: f64,
    pub train_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartySummary {
    pub party: usize,
    pub n: usize,
    pub k: usize,
    pub scheme: SamplingScheme,
    pub budget: Budget,
    pub final_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTrace {
    pub init: InitRecord,
    pub rounds: Vec<RoundRecord>,
    pub summary: Vec<PartySummary>,
    pub states: Vec<PartyState>,
    pub consensus: Consensus,
}

impl SimulationTrace {
    /// One `init` row per party for the starting model, then one `round`
    /// row per party for every consensus index `0..=R`: row `r` describes
    /// the model whose predictions formed `Y_p[r]`.
    pub fn metrics_rows(&self) -> Vec<MetricsRow> {
        let parties = self.init.accuracy.len();
        let mut rows = Vec::with_capacity(parties * (self.rounds.len() + 2));
        let mut push = |round, phase, acc: &[f64], loss: &[f64]| {
            for party in 0..parties {
                rows.push(MetricsRow {
                    round,
                    party,
                    phase,
                    test_accuracy: acc[party],
                    train_loss: loss[party],
                });
            }
        };
        push(0, MetricsPhase::Init, &self.init.start_accuracy, &self.init.start_loss);
        push(0, MetricsPhase::Round, &self.init.accuracy, &self.init.train_loss);
        for r in &self.rounds {
            push(r.round + 1, MetricsPhase::Round, &r.post_revisit_accuracy, &r.train_loss);
        }
        rows
    }

    pub fn mean_final_accuracy(&self) -> f64 {
        self.summary.iter().map(|s| s.final_accuracy).sum::<f64>() / self.summary.len() as f64
    }
}

fn map_parties<R: Send>(
    execution: Execution,
    parties: usize,
    f: impl Fn(usize) -> Result<R, FederationError> + Sync + Send,
) -> Result<Vec<R>, FederationError> {
    match execution {
        Execution::Serial => (0..parties).map(f).collect(),
        Execution::Parallel { threads: None } => (0..parties).into_par_iter().map(f).collect(),
        Execution::Parallel { threads: Some(t) } => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| FederationError::Config(format!("thread pool: {e}")))?
            .install(|| (0..parties).into_par_iter().map(f).collect()),
    }
}

fn for_each_party<S: Send, R: Send>(
    execution: Execution,
    states: &mut [S],
    f: impl Fn(usize, &mut S) -> Result<R, FederationError> + Sync + Send,
) -> Result<Vec<R>, FederationError> {
    match execution {
        Execution::Serial => states.iter_mut().enumerate().map(|(i, s)| f(i, s)).collect(),
        Execution::Parallel { threads: None } => states.par_iter_mut().enumerate().map(|(i, s)| f(i, s)).collect(),
        Execution::Parallel { threads: Some(t) } => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| FederationError::Config(format!("thread pool: {e}")))?
            .install(|| states.par_iter_mut().enumerate().map(|(i, s)| f(i, s)).collect()),
    }
}

fn stream(config: &FederationConfig, purpose: Purpose, party: usize, round: usize) -> RngStream {
    derive_stream(config.master_seed, StreamLabel::new(purpose, party as u64, round as u64))
}

/// Noise scale of a local-noise run, `None` otherwise.
fn ldp_sigma(config: &FederationConfig, classes: usize) -> Result<Option<f64>, FederationError> {
    let PrivacyMode::FedLdp(ldp) = &config.privacy else { return Ok(None) };
    Ok(Some(match ldp.noise {
        LdpNoise::Sigma { sigma, .. } => sigma,
        LdpNoise::Target(target) => {
            calibrate_gaussian_sigma(&target, config.ldp_queries(classes, ldp.query_rule), ldp.c2)?
        }
    }))
}

/// Budget reported for a local-noise run.
fn ldp_budget(config: &FederationConfig, classes: usize, sigma: f64) -> Result<Budget, FederationError> {
    let PrivacyMode::FedLdp(ldp) = &config.privacy else { unreachable!("local-noise run") };
    let queries = config.ldp_queries(classes, ldp.query_rule);
    let delta = match ldp.noise {
        LdpNoise::Target(target) if ldp.composition == LdpComposition::Formula => return Ok(target),
        LdpNoise::Target(target) => target.delta() / queries as f64,
        LdpNoise::Sigma { delta, .. } => delta,
    };
    let log_inv = -delta.ln();
    Ok(match ldp.composition {
        LdpComposition::Formula => Budget::new(ldp.c2 * (queries as f64 * log_inv).sqrt() / sigma, delta)?,
        LdpComposition::Basic => compose_basic(&Budget::new(ldp.c2 * log_inv.sqrt() / sigma, delta)?, queries),
    })
}

fn public_subset(config: &FederationConfig, pool: &UnlabeledSet, index: usize) -> Result<Vec<usize>, FederationError> {
    let round = match config.public_policy {
        PublicSubsetPolicy::PerRound => index,
        PublicSubsetPolicy::Fixed => 0,
    };
    let mut s = stream(config, Purpose::PublicSubset, 0, round);
    let pick = sample_without_replacement(&mut s, pool.len(), config.public_subset_size)
        .map_err(|e| FederationError::Config(format!("public subset: {e}")))?;
    Ok(pick.indices().to_vec())
}

fn learner_err(phase: &'static str, round: usize, party: usize) -> impl FnOnce(LearnerError) -> FederationError {
    move |source| FederationError::Learner {
        phase,
        round,
        party,
        source,
    }
}

/// Trains for `epochs` unless that is zero.
fn maybe_train<S: TrainingSource<f64> + ?Sized>(
    model: &mut MlpModel<f64>,
    data: &mut S,
    lr: f64,
    batch: usize,
    epochs: usize,
    loss: LossKind,
    stream: &mut RngStream,
) -> Result<(), LearnerError> {
    if epochs == 0 {
        return Ok(());
    }
    train(model, data, &TrainSpec::new(lr, batch, epochs, loss)?, stream)?;
    Ok(())
}

/// Predictions on `indices`, noised party-side in local-noise runs.
fn share(
    config: &FederationConfig,
    model: &MlpModel<f64>,
    pool: &UnlabeledSet,
    indices: &[usize],
    sigma: Option<f64>,
    party: usize,
    release: usize,
) -> Result<Vec<KnowledgeVector<f64>>, FederationError> {
    let inputs = pool.inputs.select(ndarray::Axis(0), indices);
    let knowledge =
        predict_knowledge(model, inputs.view(), config.mode).map_err(learner_err("prediction", release, party))?;
    match sigma {
        Some(s) => apply_ldp_noise(&knowledge, s, &mut stream(config, Purpose::LdpNoise, party, release)),
        None => Ok(knowledge),
    }
}

fn check_data(config: &FederationConfig, data: &FederationData<'_>) -> Result<(), FederationError> {
    config.validate()?;
    if data.train.len() != config.parties || data.test.len() != config.parties {
        return Err(FederationError::Config(format!(
            "{} parties configured but {} training and {} test sets given",
            config.parties,
            data.train.len(),
            data.test.len()
        )));
    }
    if data.pool.len() < config.public_subset_size {
        return Err(FederationError::Config(format!(
            "public pool has {} rows, fewer than the subset size {}",
            data.pool.len(),
            config.public_subset_size
        )));
    }
    if data.classes < 2 {
        return Err(FederationError::Config("a task needs at least two classes".into()));
    }
    Ok(())
}

fn evaluate(
    model: &MlpModel<f64>,
    test: &LabeledSet,
    view: &mut PrivateView<'_>,
    phase: &'static str,
    round: usize,
    party: usize,
) -> Result<(f64, f64), FederationError> {
    let acc = accuracy(model, test.inputs.view(), &test.labels).map_err(learner_err(phase, round, party))?;
    let loss = evaluate_loss(model, &view.all(), LossKind::HardCrossEntropy).map_err(learner_err(phase, round, party))?;
    Ok((acc, loss))
}

/// Shared start, one-shot subsampling, `T1` local epochs, and the first
/// consensus `Y_p[0]`.
pub fn run_initialization(
    config: &FederationConfig,
    data: &FederationData<'_>,
) -> Result<(Vec<PartyState>, Consensus, InitRecord), FederationError> {
    check_data(config, data)?;
    let features = data.train[0].features();
    let mut dims = vec![features];
    dims.extend(&config.hidden);
    dims.push(data.classes);
    let mut shared =
        init_model(&dims, &mut stream(config, Purpose::ModelInit, 0, 0)).map_err(learner_err("initialization", 0, 0))?;
    if let (Some(ws), Some(rows)) = (config.warm_start, data.warm_start) {
        let mut batch = Batch::new(rows.inputs.clone(), crate::learner::Targets::Hard(rows.labels.clone()))
            .map_err(learner_err("warm start", 0, 0))?;
        maybe_train(
            &mut shared,
            &mut batch,
            ws.learning_rate,
            config.batch_size,
            ws.epochs,
            LossKind::HardCrossEntropy,
            &mut stream(config, Purpose::WarmStart, 0, 0),
        )
        .map_err(learner_err("warm start", 0, 0))?;
    }

    let sigma = ldp_sigma(config, data.classes)?;
    let public_indices = public_subset(config, data.pool, 0)?;
    let results = map_parties(config.execution, config.parties, |party| {
        let private = &data.train[party];
        let n = private.len();
        let selection = match config.privacy {
            PrivacyMode::NonPrivate => {
                SubsetSelection::full(n, stream(config, Purpose::Selection, party, 0).origin())
            }
            _ => select_for_party(config.master_seed, party, config.scheme, n, config.k)
                .map_err(|source| FederationError::Selection { party, source })?,
        };
        let mut model = shared.clone();
        let mut touches = vec![0u64; n];
        let mut view = PrivateView::new(private, &selection, &mut touches);
        let start = evaluate(&model, &data.test[party], &mut view, "initialization", 0, party)?;
        maybe_train(
            &mut model,
            &mut view,
            config.lr_revisit,
            config.batch_size,
            config.t1,
            LossKind::HardCrossEntropy,
            &mut stream(config, Purpose::InitShuffle, party, 0),
        )
        .map_err(learner_err("initialization", 0, party))?;
        let after = evaluate(&model, &data.test[party], &mut view, "initialization", 0, party)?;
        let knowledge = share(config, &model, data.pool, &public_indices, sigma, party, 0)?;
        let fingerprint = selection.fingerprint();
        Ok((
            PartyState {
                model,
                selection,
                fingerprint,
                touches,
            },
            start,
            after,
            knowledge,
        ))
    })?;

    let mut states = Vec::with_capacity(config.parties);
    let mut record = InitRecord {
        start_accuracy: Vec::new(),
        start_loss: Vec::new(),
        accuracy: Vec::new(),
        train_loss: Vec::new(),
        public_indices: public_indices.clone(),
        consensus_entropy: 0.0,
    };
    let mut shared_knowledge = Vec::with_capacity(config.parties);
    for (state, start, after, knowledge) in results {
        states.push(state);
        record.start_accuracy.push(start.0);
        record.start_loss.push(start.1);
        record.accuracy.push(after.0);
        record.train_loss.push(after.1);
        shared_knowledge.push(knowledge);
    }
    let knowledge = aggregate(&shared_knowledge, config.mode, data.classes)?;
    record.consensus_entropy = consensus_entropy(&knowledge);
    Ok((
        states,
        Consensus {
            public_indices,
            knowledge,
        },
        record,
    ))
}

/// Round `t`: digest `Y_p[t]` on `X_p[t]`, revisit the private subset,
/// predict on `X_p[t + 1]`, aggregate to `Y_p[t + 1]`.
pub fn run_round(
    t: usize,
    states: &mut [PartyState],
    consensus: &Consensus,
    config: &FederationConfig,
    data: &FederationData<'_>,
) -> Result<(Consensus, RoundRecord), FederationError> {
    check_data(config, data)?;
    if t >= config.rounds {
        return Err(FederationError::Config(format!("round {t} is past the last round {}", config.rounds)));
    }
    if states.len() != config.parties {
        return Err(FederationError::Config(format!("{} party states for {} parties", states.len(), config.parties)));
    }
    let sigma = ldp_sigma(config, data.classes)?;
    let next_indices = public_subset(config, data.pool, t + 1)?;
    let digest_batch = Batch::new(
        data.pool.inputs.select(ndarray::Axis(0), &consensus.public_indices),
        consensus_targets(&consensus.knowledge, data.classes),
    )
    .map_err(learner_err("digest", t, 0))?;
    let digest_loss = config.mode.digest_loss();

    let results = for_each_party(config.execution, states, |party, state| {
        if state.selection.fingerprint() != state.fingerprint {
            return Err(FederationError::SelectionDrift { party });
        }
        let test = &data.test[party];
        let pre = accuracy(&state.model, test.inputs.view(), &test.labels).map_err(learner_err("digest", t, party))?;
        maybe_train(
            &mut state.model,
            &mut digest_batch.clone(),
            config.lr_digest,
            config.batch_size,
            config.t2,
            digest_loss,
            &mut stream(config, Purpose::DigestShuffle, party, t),
        )
        .map_err(learner_err("digest", t, party))?;
        let mut view = PrivateView::new(&data.train[party], &state.selection, &mut state.touches);
        maybe_train(
            &mut state.model,
            &mut view,
            config.lr_revisit,
            config.batch_size,
            config.t3,
            LossKind::HardCrossEntropy,
            &mut stream(config, Purpose::RevisitShuffle, party, t),
        )
        .map_err(learner_err("revisit", t, party))?;
        let (post, loss) = evaluate(&state.model, test, &mut view, "revisit", t, party)?;
        let knowledge = share(config, &state.model, data.pool, &next_indices, sigma, party, t + 1)?;
        Ok((pre, post, loss, knowledge))
    })?;

    let mut record = RoundRecord {
        round: t,
        public_indices: next_indices.clone(),
        pre_digest_accuracy: Vec::new(),
        post_revisit_accuracy: Vec::new(),
        train_loss: Vec::new(),
        consensus_entropy: 0.0,
    };
    let mut shared_knowledge = Vec::with_capacity(states.len());
    for (pre, post, loss, knowledge) in results {
        record.pre_digest_accuracy.push(pre);
        record.post_revisit_accuracy.push(post);
        record.train_loss.push(loss);
        shared_knowledge.push(knowledge);
    }
    let knowledge = aggregate(&shared_knowledge, config.mode, data.classes)?;
    record.consensus_entropy = consensus_entropy(&knowledge);
    Ok((
        Consensus {
            public_indices: next_indices,
            knowledge,
        },
        record,
    ))
}

/// Generates the task, runs every phase, and attaches a budget per party.
pub fn run_simulation(
    config: &FederationConfig,
    task: &SyntheticTask,
    plan: &PartitionPlan,
) -> Result<SimulationTrace, FederationError> {
    config.validate()?;
    if plan.parties != config.parties {
        return Err(FederationError::Config(format!(
            "partition has {} parties, federation has {}",
            plan.parties, config.parties
        )));
    }
    let seed = config.master_seed;
    let model = generate_task(task, &mut derive_stream(seed, StreamLabel::global(Purpose::TaskMeans)))?;
    let sets = draw_party_sets(&model, plan, seed)?;
    let pool = draw_public_pool(&model, config.public_pool_size, config.public_distribution, seed);
    let warm = config
        .warm_start
        .map(|ws| model.draw_labeled(ws.rows, &mut derive_stream(seed, StreamLabel::new(Purpose::WarmStart, 0, 1))));
    let data = FederationData {
        train: &sets.train,
        test: &sets.test,
        pool: &pool,
        classes: task.classes(),
        warm_start: warm.as_ref(),
    };

    let (mut states, mut consensus, init) = run_initialization(config, &data)?;
    let mut rounds = Vec::with_capacity(config.rounds);
    for t in 0..config.rounds {
        let (next, record) = run_round(t, &mut states, &consensus, config, &data)?;
        consensus = next;
        rounds.push(record);
    }

    let final_accuracy = rounds.last().map_or(&init.accuracy, |r| &r.post_revisit_accuracy);
    let sigma = ldp_sigma(config, data.classes)?;
    let summary = states
        .iter()
        .enumerate()
        .map(|(party, state)| {
            let n = state.selection.dataset_size();
            let k = state.selection.len();
            let budget = match config.privacy {
                PrivacyMode::Nfdp => budget_for(config.scheme, n as u64, k as u64)?,
                PrivacyMode::NonPrivate => Budget::non_private(),
                PrivacyMode::FedLdp(_) => ldp_budget(config, data.classes, sigma.expect("local-noise run"))?,
            };
            Ok(PartySummary {
                party,
                n,
                k,
                scheme: state.selection.scheme(),
                budget,
                final_accuracy: final_accuracy[party],
            })
        })
        .collect::<Result<_, FederationError>>()?;

    Ok(SimulationTrace {
        init,
        rounds,
        summary,
        states,
        consensus,
    })
}
