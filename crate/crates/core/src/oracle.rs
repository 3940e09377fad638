//! Brute-force audit of the (ε, δ) claims for the subsampling mechanisms.
//!
//! For tiny datasets the output distribution of each sampler can be listed
//! exactly. The tight δ at a given ε is then the hockey-stick divergence
//! `Σ_o max(0, p(o) − e^ε q(o))`, which is the supremum over events `S` of
//! `P[S] − e^ε Q[S]`. A claim holds when that quantity stays below the
//! claimed δ against both add-one and remove-one neighbours, in both orders.
//!
//! A dataset of size `m` is always the index set `{0, …, m−1}`, so the extra
//! record of an add-one neighbour of `{0, …, n−1}` is index `n`.

use std::collections::BTreeMap;
use std::fmt::{self, Debug};
use std::ops::{Add, Mul, Sub};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use thiserror::Error;

use crate::accountant::{PrivacyBudget, SamplingScheme};

/// Largest outcome space [`enumerate_mechanism`] will list.
pub const ENUMERATION_CAP: u64 = 1_000_000;
/// Outcome spaces up to this size are audited in exact rational arithmetic.
pub const EXACT_CAP: u64 = 10_000;
/// Largest dataset size the audit accepts.
pub const MAX_AUDIT_N: usize = 8;
/// Slack allowed when comparing in floating point.
pub const FLOAT_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("dataset size {n} is outside the enumerable range [1, {max}]", max = MAX_AUDIT_N + 1)]
    SizeOutOfRange { n: usize },
    #[error("subsample size k must be at least 1")]
    EmptySubsample,
    #[error("cannot draw k = {k} distinct records from n = {n}")]
    SubsampleTooLarge { n: usize, k: usize },
    #[error("outcome space of {count} exceeds the enumeration cap of {cap}", cap = ENUMERATION_CAP)]
    TooManyOutcomes { count: u64 },
    #[error("probability values must be finite and nonnegative")]
    InvalidValue,
}

/// Scalar arithmetic the oracle runs in: exact rationals or doubles.
pub trait Probability:
    Clone + Debug + PartialOrd + Zero + One + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self>
{
    fn ratio(numerator: u64, denominator: u64) -> Self;
    fn from_double(value: f64) -> Result<Self, OracleError>;
    fn as_f64(&self) -> f64;
    /// Tolerance used when comparing against a claim.
    fn slack() -> Self;
}

impl Probability for f64 {
    fn ratio(numerator: u64, denominator: u64) -> Self {
        numerator as f64 / denominator as f64
    }

    fn from_double(value: f64) -> Result<Self, OracleError> {
        if value.is_finite() {
            Ok(value)
        } else {
            Err(OracleError::InvalidValue)
        }
    }

    fn as_f64(&self) -> f64 {
        *self
    }

    fn slack() -> Self {
        FLOAT_SLACK
    }
}

impl Probability for BigRational {
    fn ratio(numerator: u64, denominator: u64) -> Self {
        BigRational::new(BigInt::from(numerator), BigInt::from(denominator))
    }

    fn from_double(value: f64) -> Result<Self, OracleError> {
        BigRational::from_float(value).ok_or(OracleError::InvalidValue)
    }

    fn as_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }

    fn slack() -> Self {
        Self::zero()
    }
}

/// Canonical outcome of a sampler: a sorted index set (without replacement)
/// or an ordered index tuple (with replacement).
pub type Outcome = Vec<usize>;

/// Exact output distribution of a sampler on `{0, …, n−1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeDistribution<P> {
    outcomes: Vec<Outcome>,
    probabilities: Vec<P>,
}

impl<P: Probability> OutcomeDistribution<P> {
    pub fn outcomes(&self) -> &[Outcome] {
        &self.outcomes
    }

    pub fn probabilities(&self) -> &[P] {
        &self.probabilities
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    /// Probability of `outcome`, zero when it is outside the support.
    pub fn probability(&self, outcome: &[usize]) -> P {
        match self.outcomes.binary_search_by(|o| o.as_slice().cmp(outcome)) {
            Ok(i) => self.probabilities[i].clone(),
            Err(_) => P::zero(),
        }
    }

    pub fn total_mass(&self) -> P {
        self.probabilities.iter().cloned().fold(P::zero(), |a, b| a + b)
    }

    /// Builds a distribution from arbitrary (outcome, mass) pairs, merging
    /// duplicates. Used for empirical distributions in tests.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (Outcome, P)>) -> Self {
        let mut merged: BTreeMap<Outcome, P> = BTreeMap::new();
        for (o, p) in pairs {
            let slot = merged.entry(o).or_insert_with(P::zero);
            *slot = slot.clone() + p;
        }
        let (outcomes, probabilities) = merged.into_iter().unzip();
        Self {
            outcomes,
            probabilities,
        }
    }
}

/// Number of outcomes the scheme produces for (n, k).
pub fn outcome_count(n: usize, k: usize, scheme: SamplingScheme) -> Option<u64> {
    match scheme {
        SamplingScheme::WithoutReplacement => {
            if k > n {
                return Some(0);
            }
            let mut c: u64 = 1;
            for i in 0..k as u64 {
                c = c.checked_mul(n as u64 - i)? / (i + 1);
            }
            Some(c)
        }
        SamplingScheme::WithReplacement => (n as u64).checked_pow(k as u32),
    }
}

fn check_cap(n: usize, k: usize, scheme: SamplingScheme) -> Result<u64, OracleError> {
    if n == 0 || n > MAX_AUDIT_N + 1 {
        return Err(OracleError::SizeOutOfRange { n });
    }
    if k == 0 {
        return Err(OracleError::EmptySubsample);
    }
    if scheme == SamplingScheme::WithoutReplacement && k > n {
        return Err(OracleError::SubsampleTooLarge { n, k });
    }
    match outcome_count(n, k, scheme) {
        Some(count) if count <= ENUMERATION_CAP => Ok(count),
        Some(count) => Err(OracleError::TooManyOutcomes { count }),
        None => Err(OracleError::TooManyOutcomes { count: u64::MAX }),
    }
}

/// Lists every outcome of the sampler on `{0, …, n−1}` with its exact mass.
///
/// `n` may go one past [`MAX_AUDIT_N`] so that add-one neighbours of the
/// largest audited dataset can still be enumerated.
pub fn enumerate_mechanism<P: Probability>(
    n: usize,
    k: usize,
    scheme: SamplingScheme,
) -> Result<OutcomeDistribution<P>, OracleError> {
    let count = check_cap(n, k, scheme)?;
    let mass = P::ratio(1, count);
    let outcomes = match scheme {
        SamplingScheme::WithoutReplacement => combinations(n, k),
        SamplingScheme::WithReplacement => tuples(n, k),
    };
    debug_assert_eq!(outcomes.len() as u64, count);
    let probabilities = vec![mass; outcomes.len()];
    Ok(OutcomeDistribution {
        outcomes,
        probabilities,
    })
}

// Lexicographic order, so the result is already sorted.
fn combinations(n: usize, k: usize) -> Vec<Outcome> {
    let mut out = Vec::new();
    let mut current: Vec<usize> = (0..k).collect();
    loop {
        out.push(current.clone());
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if current[i] < n - k + i {
                break;
            }
        }
        current[i] += 1;
        for j in i + 1..k {
            current[j] = current[j - 1] + 1;
        }
    }
}

fn tuples(n: usize, k: usize) -> Vec<Outcome> {
    let mut out = Vec::new();
    let mut current = vec![0usize; k];
    loop {
        out.push(current.clone());
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            current[i] += 1;
            if current[i] < n {
                break;
            }
            current[i] = 0;
        }
    }
}

/// `Σ_o max(0, p(o) − factor·q(o))` where `factor = e^ε`.
pub fn hockey_stick_with_factor<P: Probability>(
    p: &OutcomeDistribution<P>,
    q: &OutcomeDistribution<P>,
    factor: &P,
) -> P {
    let mut total = P::zero();
    for (outcome, mass) in p.outcomes.iter().zip(&p.probabilities) {
        let scaled = factor.clone() * q.probability(outcome);
        if *mass > scaled {
            total = total + (mass.clone() - scaled);
        }
    }
    total
}

/// Tight δ of `p` against `q` at natural-log `epsilon`.
pub fn hockey_stick_delta(p: &OutcomeDistribution<f64>, q: &OutcomeDistribution<f64>, epsilon_nat: f64) -> f64 {
    hockey_stick_with_factor(p, q, &epsilon_nat.exp()).clamp(0.0, 1.0)
}

/// Which neighbour of the base dataset `{0, …, n−1}` is compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NeighborDirection {
    /// D′ = D ∪ {u}: sizes n and n + 1.
    Add,
    /// D = D′ ∪ {u}: sizes n and n − 1.
    Remove,
}

impl fmt::Display for NeighborDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NeighborDirection::Add => "add",
            NeighborDirection::Remove => "remove",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NeighborPair {
    pub base_size: usize,
    pub direction: NeighborDirection,
}

impl NeighborPair {
    pub fn neighbor_size(&self) -> usize {
        match self.direction {
            NeighborDirection::Add => self.base_size + 1,
            NeighborDirection::Remove => self.base_size.saturating_sub(1),
        }
    }
}

/// Claim in the arithmetic of the audit: `e^ε` and δ.
#[derive(Debug, Clone, PartialEq)]
pub struct Claim<P> {
    pub exp_epsilon: P,
    pub delta: P,
}

impl<P: Probability> Claim<P> {
    pub fn from_budget(budget: &PrivacyBudget<f64>) -> Result<Self, OracleError> {
        Ok(Self {
            exp_epsilon: P::from_double(budget.epsilon_nat().exp())?,
            delta: P::from_double(budget.delta())?,
        })
    }
}

impl Claim<BigRational> {
    /// The theorem's claim with `e^ε` and δ as exact rationals:
    /// without replacement `((n+1)/(n+1−k), k/n)`, with replacement
    /// `(((n+1)/n)^k, 1 − ((n−1)/n)^k)`.
    pub fn exact_theorem(n: usize, k: usize, scheme: SamplingScheme) -> Result<Self, OracleError> {
        if n == 0 {
            return Err(OracleError::SizeOutOfRange { n });
        }
        if k == 0 {
            return Err(OracleError::EmptySubsample);
        }
        let (n64, k64) = (n as u64, k as u64);
        match scheme {
            SamplingScheme::WithoutReplacement => {
                if k > n {
                    return Err(OracleError::SubsampleTooLarge { n, k });
                }
                Ok(Self {
                    exp_epsilon: BigRational::ratio(n64 + 1, n64 + 1 - k64),
                    delta: BigRational::ratio(k64, n64),
                })
            }
            SamplingScheme::WithReplacement => {
                let up = BigRational::ratio(n64 + 1, n64);
                let down = BigRational::ratio(n64 - 1, n64);
                Ok(Self {
                    exp_epsilon: num_traits::pow(up, k),
                    delta: BigRational::one() - num_traits::pow(down, k),
                })
            }
        }
    }
}

/// Tight δ for one (neighbour, order) combination.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionCheck<P> {
    pub pair: NeighborPair,
    /// `true` when p is the base dataset and q the neighbour.
    pub base_first: bool,
    pub tight_delta: P,
    /// `claimed δ − tight δ`; negative means violated.
    pub slack: P,
}

impl<P: Probability> DirectionCheck<P> {
    pub fn holds(&self) -> bool {
        self.slack >= P::zero() - P::slack()
    }

    /// Size of the dataset behind p.
    pub fn p_size(&self) -> usize {
        if self.base_first {
            self.pair.base_size
        } else {
            self.pair.neighbor_size()
        }
    }

    /// Size of the dataset behind q.
    pub fn q_size(&self) -> usize {
        if self.base_first {
            self.pair.neighbor_size()
        } else {
            self.pair.base_size
        }
    }

    /// True when p's dataset holds the extra record and q's does not.
    pub fn record_removed_towards_q(&self) -> bool {
        self.p_size() > self.q_size()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict<P> {
    Holds(Vec<DirectionCheck<P>>),
    Violated {
        worst: DirectionCheck<P>,
        checks: Vec<DirectionCheck<P>>,
    },
}

impl<P: Probability> Verdict<P> {
    pub fn holds(&self) -> bool {
        matches!(self, Verdict::Holds(_))
    }

    pub fn checks(&self) -> &[DirectionCheck<P>] {
        match self {
            Verdict::Holds(c) => c,
            Verdict::Violated { checks, .. } => checks,
        }
    }

    /// Check for a given neighbour direction and order, if it was applicable.
    pub fn check(&self, direction: NeighborDirection, base_first: bool) -> Option<&DirectionCheck<P>> {
        self.checks()
            .iter()
            .find(|c| c.pair.direction == direction && c.base_first == base_first)
    }
}

/// Whether the sampler is defined on a dataset of size `m`.
fn mechanism_defined(m: usize, k: usize, scheme: SamplingScheme) -> bool {
    m >= 1 && (scheme == SamplingScheme::WithReplacement || k <= m)
}

/// Audits `claim` for the sampler on a dataset of size `n`.
///
/// Checks the add-one neighbour (size n+1) and the remove-one neighbour
/// (size n−1), each with p and q in both orders. A remove-one neighbour on
/// which the sampler is undefined (k > n−1 without replacement, or n = 1) is
/// skipped.
pub fn verify_claim_with<P: Probability>(
    n: usize,
    k: usize,
    scheme: SamplingScheme,
    claim: &Claim<P>,
) -> Result<Verdict<P>, OracleError> {
    if n > MAX_AUDIT_N {
        return Err(OracleError::SizeOutOfRange { n });
    }
    let base = enumerate_mechanism::<P>(n, k, scheme)?;
    let mut checks = Vec::with_capacity(4);
    for direction in [NeighborDirection::Add, NeighborDirection::Remove] {
        let pair = NeighborPair {
            base_size: n,
            direction,
        };
        let m = pair.neighbor_size();
        if !mechanism_defined(m, k, scheme) {
            continue;
        }
        let neighbor = enumerate_mechanism::<P>(m, k, scheme)?;
        for base_first in [true, false] {
            let (p, q) = if base_first { (&base, &neighbor) } else { (&neighbor, &base) };
            let tight = hockey_stick_with_factor(p, q, &claim.exp_epsilon);
            let slack = claim.delta.clone() - tight.clone();
            checks.push(DirectionCheck {
                pair,
                base_first,
                tight_delta: tight,
                slack,
            });
        }
    }
    let worst = checks
        .iter()
        .filter(|c| !c.holds())
        .min_by(|a, b| a.slack.partial_cmp(&b.slack).unwrap_or(std::cmp::Ordering::Equal))
        .cloned();
    Ok(match worst {
        None => Verdict::Holds(checks),
        Some(worst) => Verdict::Violated { worst, checks },
    })
}

/// Audit outcome in whichever arithmetic was used.
#[derive(Debug, Clone, PartialEq)]
pub enum AuditVerdict {
    Exact(Verdict<BigRational>),
    Float(Verdict<f64>),
}

impl AuditVerdict {
    pub fn holds(&self) -> bool {
        match self {
            AuditVerdict::Exact(v) => v.holds(),
            AuditVerdict::Float(v) => v.holds(),
        }
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, AuditVerdict::Exact(_))
    }

    /// (direction, base_first, tight δ, slack) as doubles, for reporting.
    pub fn summary(&self) -> Vec<(NeighborDirection, bool, f64, f64)> {
        match self {
            AuditVerdict::Exact(v) => v
                .checks()
                .iter()
                .map(|c| (c.pair.direction, c.base_first, c.tight_delta.as_f64(), c.slack.as_f64()))
                .collect(),
            AuditVerdict::Float(v) => v
                .checks()
                .iter()
                .map(|c| (c.pair.direction, c.base_first, c.tight_delta, c.slack))
                .collect(),
        }
    }
}

fn largest_space(n: usize, k: usize, scheme: SamplingScheme) -> u64 {
    outcome_count(n + 1, k, scheme).unwrap_or(u64::MAX)
}

/// Audits a floating-point claim, in rational arithmetic when the outcome
/// space is small enough and in doubles (with [`FLOAT_SLACK`]) otherwise.
///
/// A double claim converted to a rational is exact, but `exp(ε)` has already
/// been rounded, so the rational comparison also grants [`FLOAT_SLACK`].
pub fn verify_claim(
    n: usize,
    k: usize,
    scheme: SamplingScheme,
    claimed: &PrivacyBudget<f64>,
) -> Result<AuditVerdict, OracleError> {
    if largest_space(n, k, scheme) <= EXACT_CAP {
        let mut claim = Claim::<BigRational>::from_budget(claimed)?;
        claim.delta = claim.delta + BigRational::from_float(FLOAT_SLACK).expect("finite");
        Ok(AuditVerdict::Exact(verify_claim_with(n, k, scheme, &claim)?))
    } else {
        let claim = Claim::<f64>::from_budget(claimed)?;
        Ok(AuditVerdict::Float(verify_claim_with(n, k, scheme, &claim)?))
    }
}

/// Audits the closed-form theorem budget itself; exact when feasible.
pub fn verify_theorem(n: usize, k: usize, scheme: SamplingScheme) -> Result<AuditVerdict, OracleError> {
    if largest_space(n, k, scheme) <= EXACT_CAP {
        let claim = Claim::exact_theorem(n, k, scheme)?;
        Ok(AuditVerdict::Exact(verify_claim_with(n, k, scheme, &claim)?))
    } else {
        let budget = crate::accountant::budget_for::<f64>(scheme, n as u64, k as u64)
            .map_err(|_| OracleError::SubsampleTooLarge { n, k })?;
        let claim = Claim::<f64>::from_budget(&budget)?;
        Ok(AuditVerdict::Float(verify_claim_with(n, k, scheme, &claim)?))
    }
}
