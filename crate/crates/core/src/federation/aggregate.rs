//! Server-side aggregation and party-side Gaussian noise.

use ndarray::Array2;

use super::FederationError;
use crate::learner::{argmax, softmax, KnowledgeMode, KnowledgeVector, Targets};
use crate::rng::RngStream;

/// Equal-weight consensus of every party's knowledge. Logits and
/// probabilities are averaged; hard labels go to a majority vote with ties
/// broken towards the lowest class index.
pub fn aggregate(
    knowledge: &[Vec<KnowledgeVector<f64>>],
    mode: KnowledgeMode,
    classes: usize,
) -> Result<Vec<KnowledgeVector<f64>>, FederationError> {
    let first = knowledge
        .first()
        .ok_or_else(|| FederationError::Aggregate("no parties to aggregate".into()))?;
    let rows = first.len();
    for (party, list) in knowledge.iter().enumerate() {
        if list.len() != rows {
            return Err(FederationError::Aggregate(format!(
                "party {party} sent {} rows, party 0 sent {rows}",
                list.len()
            )));
        }
        if let Some(bad) = list.iter().find(|kv| kv.mode() != mode) {
            return Err(FederationError::Aggregate(format!(
                "party {party} sent {} knowledge in a {} run",
                bad.mode().name(),
                mode.name()
            )));
        }
    }
    let parties = knowledge.len() as f64;
    (0..rows)
        .map(|row| match mode {
            KnowledgeMode::Argmax => {
                let mut votes = vec![0usize; classes];
                for list in knowledge {
                    let KnowledgeVector::Label(c) = list[row] else { unreachable!() };
                    if c >= classes {
                        return Err(FederationError::Aggregate(format!("vote {c} outside {classes} classes")));
                    }
                    votes[c] += 1;
                }
                Ok(KnowledgeVector::Label(argmax(&votes)))
            }
            KnowledgeMode::Logits | KnowledgeMode::Softmax => {
                let mut sum = vec![0.0; classes];
                for list in knowledge {
                    let (KnowledgeVector::Logits(v) | KnowledgeVector::Probabilities(v)) = &list[row] else {
                        unreachable!()
                    };
                    if v.len() != classes {
                        return Err(FederationError::Aggregate(format!(
                            "knowledge row has width {}, expected {classes}",
                            v.len()
                        )));
                    }
                    sum.iter_mut().zip(v).for_each(|(s, x)| *s += x);
                }
                let mean: Vec<f64> = sum.into_iter().map(|s| s / parties).collect();
                Ok(if mode == KnowledgeMode::Logits {
                    KnowledgeVector::Logits(mean)
                } else {
                    KnowledgeVector::Probabilities(mean)
                })
            }
        })
        .collect()
}

/// Adds `N(0, σ²)` to every scalar. Probability rows are then clamped at
/// zero and renormalised; a row with no positive mass falls back to uniform.
pub fn apply_ldp_noise(
    knowledge: &[KnowledgeVector<f64>],
    sigma: f64,
    stream: &mut RngStream,
) -> Result<Vec<KnowledgeVector<f64>>, FederationError> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(FederationError::Config(format!("noise scale must be positive and finite (got {sigma})")));
    }
    knowledge
        .iter()
        .map(|kv| match kv {
            KnowledgeVector::Label(_) => Err(FederationError::LdpOnLabels),
            KnowledgeVector::Logits(v) => Ok(KnowledgeVector::Logits(
                v.iter().map(|&x| x + sigma * stream.standard_normal()).collect(),
            )),
            KnowledgeVector::Probabilities(v) => {
                let mut noisy: Vec<f64> = v.iter().map(|&x| (x + sigma * stream.standard_normal()).max(0.0)).collect();
                let total: f64 = noisy.iter().sum();
                if total > 0.0 && total.is_finite() {
                    noisy.iter_mut().for_each(|x| *x /= total);
                } else {
                    let uniform = 1.0 / noisy.len() as f64;
                    noisy.iter_mut().for_each(|x| *x = uniform);
                }
                Ok(KnowledgeVector::Probabilities(noisy))
            }
        })
        .collect()
}

/// Digest targets for a consensus list.
///
/// # Panics
///
/// Panics if the list mixes payload kinds.
pub fn consensus_targets(consensus: &[KnowledgeVector<f64>], classes: usize) -> Targets<f64> {
    let matrix = || {
        Array2::from_shape_fn((consensus.len(), classes), |(r, c)| match &consensus[r] {
            KnowledgeVector::Logits(v) | KnowledgeVector::Probabilities(v) => v[c],
            KnowledgeVector::Label(_) => unreachable!("mixed consensus"),
        })
    };
    match consensus.first() {
        Some(KnowledgeVector::Logits(_)) => Targets::Logits(matrix()),
        Some(KnowledgeVector::Probabilities(_)) => Targets::Soft(matrix()),
        _ => Targets::Hard(
            consensus
                .iter()
                .map(|kv| match kv {
                    KnowledgeVector::Label(c) => *c,
                    _ => unreachable!("mixed consensus"),
                })
                .collect(),
        ),
    }
}

/// Mean Shannon entropy (nats) of the consensus class distribution. Logits
/// go through a softmax; a hard-label consensus is one-hot, so this is zero.
pub fn consensus_entropy(consensus: &[KnowledgeVector<f64>]) -> f64 {
    if consensus.is_empty() {
        return 0.0;
    }
    let entropy = |p: &[f64]| -> f64 { p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum() };
    let total: f64 = consensus
        .iter()
        .map(|kv| match kv {
            KnowledgeVector::Logits(z) => entropy(&softmax(z)),
            KnowledgeVector::Probabilities(p) => entropy(p),
            KnowledgeVector::Label(_) => 0.0,
        })
        .sum();
    total / consensus.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{derive_stream, Purpose, StreamLabel};
    use KnowledgeVector::*;

    #[test]
    fn mean_and_vote_examples() {
        let out = aggregate(&[vec![Logits(vec![1.0, 3.0])], vec![Logits(vec![3.0, 1.0])]], KnowledgeMode::Logits, 2).unwrap();
        assert_eq!(out, vec![Logits(vec![2.0, 2.0])]);

        let out = aggregate(
            &[vec![Probabilities(vec![1.0, 0.0])], vec![Probabilities(vec![0.0, 1.0])]],
            KnowledgeMode::Softmax,
            2,
        )
        .unwrap();
        assert_eq!(out, vec![Probabilities(vec![0.5, 0.5])]);

        let votes = |v: &[usize]| v.iter().map(|&c| vec![Label(c)]).collect::<Vec<_>>();
        assert_eq!(aggregate(&votes(&[2, 0, 0]), KnowledgeMode::Argmax, 3).unwrap(), vec![Label(0)]);
        assert_eq!(aggregate(&votes(&[1, 2]), KnowledgeMode::Argmax, 3).unwrap(), vec![Label(1)]);
    }

    #[test]
    fn mismatches_are_rejected() {
        let a = vec![Logits(vec![1.0, 3.0])];
        assert!(aggregate(&[a.clone(), vec![]], KnowledgeMode::Logits, 2).is_err());
        assert!(aggregate(&[a.clone()], KnowledgeMode::Softmax, 2).is_err());
        assert!(aggregate(&[a], KnowledgeMode::Logits, 3).is_err());
        assert!(aggregate(&[], KnowledgeMode::Logits, 2).is_err());
        assert!(aggregate(&[vec![Label(5)]], KnowledgeMode::Argmax, 3).is_err());
    }

    #[test]
    fn tiny_noise_is_invisible_and_noise_is_seeded() {
        let input = vec![Logits(vec![0.3, -1.2]), Logits(vec![2.0, 0.0])];
        let mut s = derive_stream(1, StreamLabel::new(Purpose::LdpNoise, 0, 0));
        let out = apply_ldp_noise(&input, 1e-300, &mut s).unwrap();
        for (a, b) in input.iter().zip(&out) {
            let (Logits(a), Logits(b)) = (a, b) else { panic!() };
            assert!(a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12));
        }
        let probs = vec![Probabilities(vec![0.25, 0.75])];
        let out = apply_ldp_noise(&probs, 1e-300, &mut s).unwrap();
        let Probabilities(p) = &out[0] else { panic!() };
        assert!((p[0] - 0.25).abs() <= 1e-12 && (p[1] - 0.75).abs() <= 1e-12);

        let again = |seed| {
            let mut s = derive_stream(seed, StreamLabel::new(Purpose::LdpNoise, 0, 0));
            apply_ldp_noise(&input, 0.5, &mut s).unwrap()
        };
        assert_eq!(again(7), again(7));
        assert_ne!(again(7), again(8));
    }

    #[test]
    fn heavy_noise_keeps_rows_on_the_simplex() {
        let mut s = derive_stream(2, StreamLabel::new(Purpose::LdpNoise, 0, 0));
        let rows = vec![Probabilities(vec![0.2, 0.3, 0.5]); 200];
        for kv in apply_ldp_noise(&rows, 1e5, &mut s).unwrap() {
            let Probabilities(p) = kv else { panic!() };
            assert!(p.iter().all(|&x| x >= 0.0));
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn labels_and_bad_sigma_are_rejected() {
        let mut s = derive_stream(3, StreamLabel::new(Purpose::LdpNoise, 0, 0));
        assert!(matches!(apply_ldp_noise(&[Label(1)], 1.0, &mut s), Err(FederationError::LdpOnLabels)));
        assert!(apply_ldp_noise(&[Logits(vec![0.0])], 0.0, &mut s).is_err());
    }

    #[test]
    fn entropy_of_consensus() {
        assert_eq!(consensus_entropy(&[Label(0)]), 0.0);
        let h = consensus_entropy(&[Probabilities(vec![0.5, 0.5])]);
        assert!((h - std::f64::consts::LN_2).abs() < 1e-15);
        let h = consensus_entropy(&[Logits(vec![4.0, 4.0])]);
        assert!((h - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn targets_follow_the_payload() {
        assert!(matches!(consensus_targets(&[Label(1)], 2), Targets::Hard(v) if v == vec![1]));
        assert!(matches!(consensus_targets(&[Logits(vec![1.0, 2.0])], 2), Targets::Logits(_)));
        assert!(matches!(consensus_targets(&[Probabilities(vec![1.0, 0.0])], 2), Targets::Soft(_)));
    }
}
