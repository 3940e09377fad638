//! The federated distillation protocol.
//!
//! Initialization: every party starts from the same model, draws its one
//! private subset, and trains on it. Each of the `R` rounds then digests the
//! previous consensus on the previous public subset, revisits the private
//! subset, and predicts on the next public subset. Digest therefore always
//! consumes round `t`'s subset and consensus while predictions go out on
//! round `t + 1`'s subset.
//!
//! Randomness is drawn from per-(purpose, party, round) streams, so running
//! parties serially or on a thread pool gives bit-identical results.

mod aggregate;
mod engine;
mod view;

use thiserror::Error;

use crate::accountant::{AccountingError, SamplingScheme};
use crate::datagen::{DataError, PoolDistribution};
use crate::learner::{KnowledgeMode, LearnerError};
use crate::sampling::SamplingError;
use crate::Budget;

pub use aggregate::{aggregate, apply_ldp_noise, consensus_entropy, consensus_targets};
pub use engine::{
    run_initialization, run_round, run_simulation, Consensus, FederationData, InitRecord, MetricsPhase, MetricsRow,
    PartyState, PartySummary, RoundRecord, SimulationTrace,
};
pub use view::PrivateView;

#[derive(Debug, Error)]
pub enum FederationError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("party {party}: {source}")]
    Selection { party: usize, source: SamplingError },
    #[error("{phase} of party {party} in round {round}: {source}")]
    Learner {
        phase: &'static str,
        round: usize,
        party: usize,
        source: LearnerError,
    },
    #[error("aggregation: {0}")]
    Aggregate(String),
    #[error("local noise applies to logits or probabilities, not hard labels")]
    LdpOnLabels,
    #[error("party {party}: private selection changed between rounds")]
    SelectionDrift { party: usize },
    #[error(transparent)]
    Accounting(#[from] AccountingError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// How many scalar releases a local-noise run is charged for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QueryRule {
    /// One query per class probability or logit of every public example.
    PerClass,
    /// One query per public example.
    PerExample,
}

/// How the reported local-noise budget is derived from σ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LdpComposition {
    /// `ε = c2 √(T ln(1/δ)) / σ`, the inverse of the calibration.
    Formula,
    /// Per-query `(c2 √(ln(1/δ)) / σ, δ)` summed over `T` queries.
    Basic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LdpNoise {
    /// Fixed σ, with the δ used when reporting the budget.
    Sigma { sigma: f64, delta: f64 },
    /// σ calibrated to meet this total budget.
    Target(Budget),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LdpSettings {
    pub noise: LdpNoise,
    pub c2: f64,
    pub query_rule: QueryRule,
    pub composition: LdpComposition,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PrivacyMode {
    /// Privacy from the one-shot subsample alone.
    Nfdp,
    /// Subsample plus Gaussian noise on every shared scalar.
    FedLdp(LdpSettings),
    /// Every party trains on its whole dataset.
    NonPrivate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PublicSubsetPolicy {
    /// A fresh subset per round, drawn without replacement from the pool.
    PerRound,
    /// One subset reused by every round.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Execution {
    Serial,
    /// Parties on a rayon pool; `None` uses the global pool.
    Parallel { threads: Option<usize> },
}

/// Optional shared pre-training on labelled data from the task itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarmStart {
    pub rows: usize,
    pub epochs: usize,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederationConfig {
    pub parties: usize,
    /// Zero rounds gives the no-collaboration control.
    pub rounds: usize,
    pub t1: usize,
    pub t2: usize,
    pub t3: usize,
    pub k: usize,
    pub scheme: SamplingScheme,
    pub mode: KnowledgeMode,
    pub privacy: PrivacyMode,
    pub public_subset_size: usize,
    pub public_policy: PublicSubsetPolicy,
    pub public_pool_size: usize,
    pub public_distribution: PoolDistribution,
    /// Hidden layer widths; input and output widths come from the task.
    pub hidden: Vec<usize>,
    pub batch_size: usize,
    pub lr_digest: f64,
    /// Used by the initialization phase as well as every revisit.
    pub lr_revisit: f64,
    pub warm_start: Option<WarmStart>,
    pub execution: Execution,
    pub master_seed: u64,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            parties: 5,
            rounds: 20,
            t1: 20,
            t2: 2,
            t3: 1,
            k: 60,
            scheme: SamplingScheme::WithReplacement,
            mode: KnowledgeMode::Softmax,
            privacy: PrivacyMode::Nfdp,
            public_subset_size: 500,
            public_policy: PublicSubsetPolicy::PerRound,
            public_pool_size: 5000,
            public_distribution: PoolDistribution::Matched,
            hidden: vec![32],
            batch_size: 32,
            lr_digest: 0.05,
            lr_revisit: 0.05,
            warm_start: None,
            execution: Execution::Parallel { threads: None },
            master_seed: 0,
        }
    }
}

impl FederationConfig {
    /// Same parties and seed without collaboration: zero rounds, with the
    /// revisit epochs the rounds would have spent added to initialization.
    pub fn no_collaboration_control(&self) -> Self {
        Self {
            rounds: 0,
            t1: self.t1 + self.rounds * self.t3,
            ..self.clone()
        }
    }

    /// Number of shared scalars charged under local noise: the predictions
    /// issued at initialization and after each of the rounds.
    pub fn ldp_queries(&self, classes: usize, rule: QueryRule) -> u64 {
        let per_release = match rule {
            QueryRule::PerClass => self.public_subset_size * classes,
            QueryRule::PerExample => self.public_subset_size,
        };
        (per_release * (self.rounds + 1)) as u64
    }

    /// Checks everything that does not depend on the party datasets.
    pub fn validate(&self) -> Result<(), FederationError> {
        let bad = |m: String| Err(FederationError::Config(m));
        if self.parties == 0 {
            return bad("parties must be at least 1".into());
        }
        if self.privacy != PrivacyMode::NonPrivate && self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.public_subset_size == 0 || self.public_subset_size > self.public_pool_size {
            return bad(format!(
                "public subset size must be in [1, {}] (got {})",
                self.public_pool_size, self.public_subset_size
            ));
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if self.hidden.contains(&0) {
            return bad("hidden layer widths must be positive".into());
        }
        for (name, lr) in [("lr_digest", self.lr_digest), ("lr_revisit", self.lr_revisit)] {
            if !(lr.is_finite() && lr >= 0.0) {
                return bad(format!("{name} must be finite and nonnegative"));
            }
        }
        if let PoolDistribution::Shifted(s) = self.public_distribution {
            if !s.is_finite() {
                return bad("public shift must be finite".into());
            }
        }
        if let Execution::Parallel { threads: Some(0) } = self.execution {
            return bad("thread count must be at least 1".into());
        }
        if let PrivacyMode::FedLdp(ldp) = &self.privacy {
            if self.mode == KnowledgeMode::Argmax {
                return Err(FederationError::LdpOnLabels);
            }
            if !(ldp.c2 > 0.0 && ldp.c2.is_finite()) {
                return bad("ldp_c2 must be positive".into());
            }
            if let LdpNoise::Sigma { sigma, delta } = ldp.noise {
                if !(sigma > 0.0 && sigma.is_finite()) {
                    return bad("ldp_sigma must be positive and finite".into());
                }
                if !(delta > 0.0 && delta < 1.0) {
                    return bad("ldp_delta must lie in (0, 1)".into());
                }
            }
        }
        Ok(())
    }
}
