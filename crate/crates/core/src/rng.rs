//! Labeled, splittable pseudo-random streams.
//!
//! Every consumer of randomness derives its own [`RngStream`] from the master
//! seed and a [`StreamLabel`]. Derivation is a fixed chain of SplitMix64
//! finalizers, so the same `(seed, label)` reproduces the same sequence on
//! every platform and under every thread schedule.
//!
//! Derivation, bit-exact:
//!
//! ```text
//! mix(z)   = z ^= z >> 30; z *= 0xBF58476D1CE4E5B9;
//!            z ^= z >> 27; z *= 0x94D049BB133111EB; z ^ (z >> 31)
//! h0       = mix(seed ^ 0x6E66_6470_2D73_6565)
//! h1       = mix(h0 ^ mix(purpose + GAMMA))
//! h2       = mix(h1 ^ mix(party   + 2 * GAMMA))
//! state    = mix(h2 ^ mix(round   + 3 * GAMMA))
//! ```
//!
//! with `GAMMA = 0x9E3779B97F4A7C15` and wrapping arithmetic. Because `mix`
//! is a bijection on `u64`, changing any single label field (others fixed)
//! always yields a different initial state. Outputs follow SplitMix64:
//! `state += GAMMA; next = mix(state)`, which never degenerates for a zero
//! seed.

use std::f64::consts::TAU;

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const SEED_SALT: u64 = 0x6E66_6470_2D73_6565;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// What a stream is used for. The numeric code is part of the bit-exact
/// derivation and must never be renumbered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Purpose {
    ModelInit,
    Selection,
    TaskMeans,
    PartyData,
    TestData,
    PublicPool,
    PublicSubset,
    InitShuffle,
    DigestShuffle,
    RevisitShuffle,
    LdpNoise,
    PartyShift,
    WarmStart,
    Diagnostics,
}

impl Purpose {
    pub fn code(self) -> u64 {
        match self {
            Purpose::ModelInit => 1,
            Purpose::Selection => 2,
            Purpose::TaskMeans => 3,
            Purpose::PartyData => 4,
            Purpose::TestData => 5,
            Purpose::PublicPool => 6,
            Purpose::PublicSubset => 7,
            Purpose::InitShuffle => 8,
            Purpose::DigestShuffle => 9,
            Purpose::RevisitShuffle => 10,
            Purpose::LdpNoise => 11,
            Purpose::PartyShift => 12,
            Purpose::WarmStart => 13,
            Purpose::Diagnostics => 14,
        }
    }
}

/// Structured tag identifying a stream: purpose, party and round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamLabel {
    pub purpose: Purpose,
    pub party: u64,
    pub round: u64,
}

impl StreamLabel {
    pub fn new(purpose: Purpose, party: u64, round: u64) -> Self {
        Self {
            purpose,
            party,
            round,
        }
    }

    /// Label for randomness that is not tied to a party or round.
    pub fn global(purpose: Purpose) -> Self {
        Self::new(purpose, 0, 0)
    }
}

/// Provenance of a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamOrigin {
    pub master_seed: u64,
    pub label: StreamLabel,
}

/// A SplitMix64 generator together with the label it was derived from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngStream {
    state: u64,
    origin: StreamOrigin,
    spare_normal: Option<u64>,
}

/// Derives the stream for `label` under `master_seed`.
pub fn derive_stream(master_seed: u64, label: StreamLabel) -> RngStream {
    let mut h = mix(master_seed ^ SEED_SALT);
    h = mix(h ^ mix(label.purpose.code().wrapping_add(GAMMA)));
    h = mix(h ^ mix(label.party.wrapping_add(GAMMA.wrapping_mul(2))));
    h = mix(h ^ mix(label.round.wrapping_add(GAMMA.wrapping_mul(3))));
    RngStream {
        state: h,
        origin: StreamOrigin {
            master_seed,
            label,
        },
        spare_normal: None,
    }
}

impl RngStream {
    pub fn origin(&self) -> StreamOrigin {
        self.origin
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GAMMA);
        mix(self.state)
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `(0, 1]`; never returns zero.
    fn next_open_f64(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, bound)` by rejection, free of modulo bias.
    ///
    /// # Panics
    ///
    /// Panics if `bound` is zero.
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "below() needs a positive bound");
        // 2^64 mod bound: values under it would over-represent small residues.
        let reject_under = bound.wrapping_neg() % bound;
        loop {
            let x = self.next_u64();
            if x >= reject_under {
                return x % bound;
            }
        }
    }

    pub fn below_usize(&mut self, bound: usize) -> usize {
        self.below(bound as u64) as usize
    }

    pub fn uniform(&mut self, low: f64, high: f64) -> f64 {
        low + (high - low) * self.next_f64()
    }

    /// Standard normal deviate (Box-Muller; the second deviate is cached).
    pub fn standard_normal(&mut self) -> f64 {
        if let Some(bits) = self.spare_normal.take() {
            return f64::from_bits(bits);
        }
        let u1 = self.next_open_f64();
        let u2 = self.next_f64();
        let radius = (-2.0 * u1.ln()).sqrt();
        let (sin, cos) = (TAU * u2).sin_cos();
        self.spare_normal = Some((radius * sin).to_bits());
        radius * cos
    }

    pub fn normal(&mut self, mean: f64, std_dev: f64) -> f64 {
        mean + std_dev * self.standard_normal()
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below_usize(i + 1);
            items.swap(i, j);
        }
    }
}
