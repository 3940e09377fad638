use ndarray::ArrayView2;

use super::loss::LossKind;
use super::model::{softmax, MlpModel};
use super::LearnerError;
use crate::scalar::Real;

/// What parties share about each public example.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KnowledgeMode {
    Logits,
    Softmax,
    Argmax,
}

impl KnowledgeMode {
    /// Loss a party digests the consensus with.
    pub fn digest_loss(self) -> LossKind {
        match self {
            KnowledgeMode::Logits => LossKind::LogitMse,
            KnowledgeMode::Softmax => LossKind::SoftCrossEntropy,
            KnowledgeMode::Argmax => LossKind::HardCrossEntropy,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            KnowledgeMode::Logits => "logits",
            KnowledgeMode::Softmax => "softmax",
            KnowledgeMode::Argmax => "argmax",
        }
    }
}

impl std::str::FromStr for KnowledgeMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "logits" => Ok(KnowledgeMode::Logits),
            "softmax" => Ok(KnowledgeMode::Softmax),
            "argmax" => Ok(KnowledgeMode::Argmax),
            other => Err(format!("unknown mode `{other}` (expected logits|softmax|argmax)")),
        }
    }
}

/// One shared prediction on one public example.
#[derive(Debug, Clone, PartialEq)]
pub enum KnowledgeVector<T> {
    Logits(Vec<T>),
    Probabilities(Vec<T>),
    Label(usize),
}

impl<T: Real> KnowledgeVector<T> {
    pub fn mode(&self) -> KnowledgeMode {
        match self {
            KnowledgeVector::Logits(_) => KnowledgeMode::Logits,
            KnowledgeVector::Probabilities(_) => KnowledgeMode::Softmax,
            KnowledgeVector::Label(_) => KnowledgeMode::Argmax,
        }
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<T: PartialOrd>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

pub fn predict_knowledge<T: Real>(
    model: &MlpModel<T>,
    inputs: ArrayView2<'_, T>,
    mode: KnowledgeMode,
) -> Result<Vec<KnowledgeVector<T>>, LearnerError> {
    let logits = model.forward(inputs)?;
    Ok(logits
        .rows()
        .into_iter()
        .map(|row| {
            let z = row.as_slice().expect("row-major");
            match mode {
                KnowledgeMode::Logits => KnowledgeVector::Logits(z.to_vec()),
                KnowledgeMode::Softmax => KnowledgeVector::Probabilities(softmax(z)),
                KnowledgeMode::Argmax => KnowledgeVector::Label(argmax(z)),
            }
        })
        .collect())
}
