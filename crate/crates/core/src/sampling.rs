//! Seeded subset selection, the whole privacy mechanism of NFDP.

use thiserror::Error;

use crate::accountant::SamplingScheme;
use crate::rng::{derive_stream, Purpose, RngStream, StreamLabel, StreamOrigin};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SamplingError {
    #[error("cannot sample from an empty dataset (n = 0)")]
    EmptyDataset,
    #[error("subsample size k must be at least 1")]
    EmptySubsample,
    #[error("cannot draw k = {k} distinct records from n = {n}")]
    SubsampleTooLarge { n: usize, k: usize },
}

/// Indices drawn from one party's private dataset.
///
/// Without replacement the indices are distinct and sorted ascending; with
/// replacement they keep draw order and may repeat.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubsetSelection {
    indices: Vec<usize>,
    dataset_size: usize,
    scheme: SamplingScheme,
    origin: StreamOrigin,
}

impl SubsetSelection {
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn dataset_size(&self) -> usize {
        self.dataset_size
    }

    pub fn scheme(&self) -> SamplingScheme {
        self.scheme
    }

    /// Master seed and stream label the selection was drawn from.
    pub fn origin(&self) -> StreamOrigin {
        self.origin
    }

    /// Number of distinct records the selection touches.
    pub fn distinct_count(&self) -> usize {
        let mut seen = vec![false; self.dataset_size];
        self.indices.iter().filter(|&&i| !std::mem::replace(&mut seen[i], true)).count()
    }

    /// Order-sensitive 64-bit digest, used to check the selection never changes.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xCBF2_9CE4_8422_2325;
        for &i in &self.indices {
            for byte in (i as u64).to_le_bytes() {
                h ^= u64::from(byte);
                h = h.wrapping_mul(0x0000_0100_0000_01B3);
            }
        }
        h ^ (self.indices.len() as u64).rotate_left(32)
    }

    /// Every record of the dataset exactly once; used for non-private runs.
    pub fn full(dataset_size: usize, origin: StreamOrigin) -> Self {
        Self {
            indices: (0..dataset_size).collect(),
            dataset_size,
            scheme: SamplingScheme::WithoutReplacement,
            origin,
        }
    }
}

/// Uniform k-subset by partial Fisher-Yates, returned sorted ascending.
pub fn sample_without_replacement(
    stream: &mut RngStream,
    n: usize,
    k: usize,
) -> Result<SubsetSelection, SamplingError> {
    if n == 0 {
        return Err(SamplingError::EmptyDataset);
    }
    if k == 0 {
        return Err(SamplingError::EmptySubsample);
    }
    if k > n {
        return Err(SamplingError::SubsampleTooLarge { n, k });
    }
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = i + stream.below_usize(n - i);
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool.sort_unstable();
    Ok(SubsetSelection {
        indices: pool,
        dataset_size: n,
        scheme: SamplingScheme::WithoutReplacement,
        origin: stream.origin(),
    })
}

/// k independent uniform draws from `[0, n)`, in draw order.
pub fn sample_with_replacement(
    stream: &mut RngStream,
    n: usize,
    k: usize,
) -> Result<SubsetSelection, SamplingError> {
    if n == 0 {
        return Err(SamplingError::EmptyDataset);
    }
    if k == 0 {
        return Err(SamplingError::EmptySubsample);
    }
    let indices = (0..k).map(|_| stream.below_usize(n)).collect();
    Ok(SubsetSelection {
        indices,
        dataset_size: n,
        scheme: SamplingScheme::WithReplacement,
        origin: stream.origin(),
    })
}

pub fn sample(
    stream: &mut RngStream,
    scheme: SamplingScheme,
    n: usize,
    k: usize,
) -> Result<SubsetSelection, SamplingError> {
    match scheme {
        SamplingScheme::WithoutReplacement => sample_without_replacement(stream, n, k),
        SamplingScheme::WithReplacement => sample_with_replacement(stream, n, k),
    }
}

/// The one selection a party makes for a whole experiment.
pub fn select_for_party(
    master_seed: u64,
    party: usize,
    scheme: SamplingScheme,
    n: usize,
    k: usize,
) -> Result<SubsetSelection, SamplingError> {
    let mut stream = derive_stream(master_seed, StreamLabel::new(Purpose::Selection, party as u64, 0));
    sample(&mut stream, scheme, n, k)
}
