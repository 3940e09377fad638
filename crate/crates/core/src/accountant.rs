//! Closed-form (ε, δ) accounting for noise-free subsampling mechanisms and
//! the Gaussian calibration used by the local-DP baseline.
//!
//! ε is always held in natural-log units. The base-10 view
//! ([`PrivacyBudget::epsilon_log10`]) exists only for reporting, because
//! published tables quote ε that way.

use std::cmp::Ordering;
use std::fmt;

use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AccountingError {
    #[error("dataset size n must be at least 1 (got n = {n})")]
    EmptyDataset { n: u64 },
    #[error("subsample size k must be at least 1 (got k = {k})")]
    EmptySubsample { k: u64 },
    #[error("subsample size k = {k} exceeds dataset size n = {n} for sampling without replacement")]
    SubsampleTooLarge { n: u64, k: u64 },
    #[error("epsilon must be nonnegative (got {0})")]
    NegativeEpsilon(f64),
    #[error("delta must lie in [0, 1] (got {0})")]
    DeltaOutOfRange(f64),
    #[error("gaussian calibration needs epsilon > 0 (got {0})")]
    ZeroEpsilon(f64),
    #[error("gaussian calibration needs 0 < delta < 1 (got {0})")]
    DegenerateDelta(f64),
    #[error("gaussian calibration needs at least one query")]
    NoQueries,
    #[error("gaussian calibration constant c2 must be positive (got {0})")]
    NonPositiveConstant(f64),
}

/// Subset selection scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SamplingScheme {
    WithoutReplacement,
    WithReplacement,
}

impl SamplingScheme {
    pub fn short_name(self) -> &'static str {
        match self {
            SamplingScheme::WithoutReplacement => "without",
            SamplingScheme::WithReplacement => "with",
        }
    }
}

impl fmt::Display for SamplingScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl std::str::FromStr for SamplingScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "with" | "with_replacement" => Ok(SamplingScheme::WithReplacement),
            "without" | "without_replacement" => Ok(SamplingScheme::WithoutReplacement),
            other => Err(format!("unknown sampling scheme `{other}` (expected with|without)")),
        }
    }
}

/// An (ε, δ) guarantee with ε in natural-log units.
///
/// ε may be `+∞` to represent "no guarantee" (paired with δ = 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyBudget<T> {
    epsilon_nat: T,
    delta: T,
}

impl<T: Real> PrivacyBudget<T> {
    pub fn new(epsilon_nat: T, delta: T) -> Result<Self, AccountingError> {
        if epsilon_nat.is_nan() || epsilon_nat < T::zero() {
            return Err(AccountingError::NegativeEpsilon(epsilon_nat.to_f64_lossy()));
        }
        if !(delta >= T::zero() && delta <= T::one()) {
            return Err(AccountingError::DeltaOutOfRange(delta.to_f64_lossy()));
        }
        Ok(Self { epsilon_nat, delta })
    }

    /// Builds a budget whose ε is given in base-10 units.
    pub fn from_log10(epsilon_log10: T, delta: T) -> Result<Self, AccountingError> {
        Self::new(epsilon_log10 / T::of(std::f64::consts::LOG10_E), delta)
    }

    /// The budget of a mechanism that offers no protection: (+∞, 1).
    pub fn non_private() -> Self {
        Self {
            epsilon_nat: T::infinity(),
            delta: T::one(),
        }
    }

    pub fn epsilon_nat(&self) -> T {
        self.epsilon_nat
    }

    pub fn epsilon_log10(&self) -> T {
        self.epsilon_nat * T::of(std::f64::consts::LOG10_E)
    }

    pub fn delta(&self) -> T {
        self.delta
    }

    pub fn is_finite(&self) -> bool {
        self.epsilon_nat.is_finite()
    }
}

fn check_sizes(n: u64, k: u64) -> Result<(), AccountingError> {
    if n == 0 {
        return Err(AccountingError::EmptyDataset { n });
    }
    if k == 0 {
        return Err(AccountingError::EmptySubsample { k });
    }
    Ok(())
}

/// Budget of drawing a uniform k-subset without replacement from n records:
/// `(ln((n+1)/(n+1-k)), k/n)`.
pub fn budget_without_replacement<T: Real>(n: u64, k: u64) -> Result<PrivacyBudget<T>, AccountingError> {
    check_sizes(n, k)?;
    if k > n {
        return Err(AccountingError::SubsampleTooLarge { n, k });
    }
    // ln(1 + k/(n+1-k)) keeps full precision when k << n.
    let ratio = T::of_u64(k) / T::of_u64(n + 1 - k);
    let epsilon = ratio.ln_1p();
    let delta = T::of_u64(k) / T::of_u64(n);
    PrivacyBudget::new(epsilon, delta)
}

/// Budget of k independent uniform draws with replacement from n records:
/// `(k ln((n+1)/n), 1 - ((n-1)/n)^k)`. Here k may exceed n.
pub fn budget_with_replacement<T: Real>(n: u64, k: u64) -> Result<PrivacyBudget<T>, AccountingError> {
    check_sizes(n, k)?;
    let inv_n = T::one() / T::of_u64(n);
    let k = T::of_u64(k);
    let epsilon = k * inv_n.ln_1p();
    // 1 - (1 - 1/n)^k via expm1/ln1p; exact 1 when n = 1.
    let delta = if n == 1 {
        T::one()
    } else {
        -(k * (-inv_n).ln_1p()).exp_m1()
    };
    PrivacyBudget::new(epsilon, delta)
}

pub fn budget_for<T: Real>(scheme: SamplingScheme, n: u64, k: u64) -> Result<PrivacyBudget<T>, AccountingError> {
    match scheme {
        SamplingScheme::WithoutReplacement => budget_without_replacement(n, k),
        SamplingScheme::WithReplacement => budget_with_replacement(n, k),
    }
}

/// Component-wise comparison of two guarantees.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrivacyOrdering {
    /// Both ε and δ strictly smaller.
    StrictlyMorePrivate,
    Equal,
    /// Both ε and δ strictly larger.
    LessPrivate,
    /// Anything else: components disagree, or only one of them differs.
    Incomparable,
}

/// How `a` relates to `b` as a privacy guarantee.
pub fn more_private<T: Real>(a: &PrivacyBudget<T>, b: &PrivacyBudget<T>) -> PrivacyOrdering {
    let eps = a.epsilon_nat.partial_cmp(&b.epsilon_nat);
    let delta = a.delta.partial_cmp(&b.delta);
    match (eps, delta) {
        (Some(Ordering::Less), Some(Ordering::Less)) => PrivacyOrdering::StrictlyMorePrivate,
        (Some(Ordering::Equal), Some(Ordering::Equal)) => PrivacyOrdering::Equal,
        (Some(Ordering::Greater), Some(Ordering::Greater)) => PrivacyOrdering::LessPrivate,
        _ => PrivacyOrdering::Incomparable,
    }
}

/// Gaussian noise scale `c2 * sqrt(T ln(1/δ)) / ε` meeting `target` over
/// `total_queries` releases.
pub fn calibrate_gaussian_sigma<T: Real>(
    target: &PrivacyBudget<T>,
    total_queries: u64,
    c2: T,
) -> Result<T, AccountingError> {
    let eps = target.epsilon_nat();
    let delta = target.delta();
    if !(eps > T::zero()) || !eps.is_finite() {
        return Err(AccountingError::ZeroEpsilon(eps.to_f64_lossy()));
    }
    if !(delta > T::zero() && delta < T::one()) {
        return Err(AccountingError::DegenerateDelta(delta.to_f64_lossy()));
    }
    if total_queries == 0 {
        return Err(AccountingError::NoQueries);
    }
    if !(c2 > T::zero()) {
        return Err(AccountingError::NonPositiveConstant(c2.to_f64_lossy()));
    }
    let log_inv_delta = -delta.ln();
    Ok(c2 * (T::of_u64(total_queries) * log_inv_delta).sqrt() / eps)
}

/// A Gaussian noise scale together with what it was calibrated for.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LdpCalibration<T> {
    pub total_queries: u64,
    pub c2: T,
    pub target: PrivacyBudget<T>,
    pub sigma: T,
}

impl<T: Real> LdpCalibration<T> {
    pub fn new(target: PrivacyBudget<T>, total_queries: u64, c2: T) -> Result<Self, AccountingError> {
        let sigma = calibrate_gaussian_sigma(&target, total_queries, c2)?;
        Ok(Self {
            total_queries,
            c2,
            target,
            sigma,
        })
    }
}

/// Basic sequential composition: ε and δ add up, δ capped at 1.
pub fn compose_basic<T: Real>(per_query: &PrivacyBudget<T>, queries: u64) -> PrivacyBudget<T> {
    let q = T::of_u64(queries);
    PrivacyBudget {
        epsilon_nat: per_query.epsilon_nat * q,
        delta: (per_query.delta * q).min(T::one()),
    }
}
