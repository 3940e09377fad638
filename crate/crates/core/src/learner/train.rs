use ndarray::ArrayView2;

use super::knowledge::argmax;
use super::loss::{loss_and_grad, Batch, LossKind};
use super::model::MlpModel;
use super::LearnerError;
use crate::rng::RngStream;
use crate::scalar::Real;

/// Plain SGD settings for one training phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSpec<T> {
    pub learning_rate: T,
    pub batch_size: usize,
    pub epochs: usize,
    pub loss: LossKind,
}

impl<T: Real> TrainSpec<T> {
    pub fn new(learning_rate: T, batch_size: usize, epochs: usize, loss: LossKind) -> Result<Self, LearnerError> {
        if !(learning_rate >= T::zero()) || !learning_rate.is_finite() {
            return Err(LearnerError::InvalidSpec("learning rate must be finite and nonnegative"));
        }
        if batch_size == 0 {
            return Err(LearnerError::InvalidSpec("batch size must be at least 1"));
        }
        if epochs == 0 {
            return Err(LearnerError::InvalidSpec("epochs must be at least 1"));
        }
        Ok(Self {
            learning_rate,
            batch_size,
            epochs,
            loss,
        })
    }
}

/// Where training rows come from. Positions are `0..len()`; a source is free
/// to map them onto whatever storage it guards.
pub trait TrainingSource<T> {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn fetch(&mut self, positions: &[usize]) -> Batch<T>;
}

impl<T: Real> TrainingSource<T> for Batch<T> {
    fn len(&self) -> usize {
        Batch::len(self)
    }

    fn fetch(&mut self, positions: &[usize]) -> Batch<T> {
        self.select(positions)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport<T> {
    /// Mean per-example loss of each epoch, measured before each step.
    pub epoch_losses: Vec<T>,
    pub steps: usize,
}

impl<T: Real> TrainReport<T> {
    pub fn final_loss(&self) -> Option<T> {
        self.epoch_losses.last().copied()
    }
}

/// Minibatch SGD. Each epoch visits the rows in a fresh seeded order; the
/// last partial batch is kept.
pub fn train<T: Real, S: TrainingSource<T> + ?Sized>(
    model: &mut MlpModel<T>,
    data: &mut S,
    spec: &TrainSpec<T>,
    stream: &mut RngStream,
) -> Result<TrainReport<T>, LearnerError> {
    let n = data.len();
    if n == 0 {
        return Err(LearnerError::EmptyDataset);
    }
    let mut epoch_losses = Vec::with_capacity(spec.epochs);
    let mut steps = 0;
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..spec.epochs {
        stream.shuffle(&mut order);
        let mut total = T::zero();
        for (b, chunk) in order.chunks(spec.batch_size).enumerate() {
            let batch = data.fetch(chunk);
            let (loss, grad) = loss_and_grad(model, &batch, spec.loss)?;
            if !loss.is_finite() {
                return Err(LearnerError::NonFiniteLoss { epoch, batch: b });
            }
            total += loss * T::of_u64(chunk.len() as u64);
            let lr = spec.learning_rate;
            model.zip_params_mut(&grad, |p, g| *p -= lr * g);
            if !model.is_finite() {
                return Err(LearnerError::NonFiniteParameters { epoch, batch: b });
            }
            steps += 1;
        }
        epoch_losses.push(total / T::of_u64(n as u64));
    }
    Ok(TrainReport { epoch_losses, steps })
}

/// Fraction of rows whose highest logit is the label.
pub fn accuracy<T: Real>(model: &MlpModel<T>, inputs: ArrayView2<'_, T>, labels: &[usize]) -> Result<f64, LearnerError> {
    if labels.is_empty() {
        return Ok(0.0);
    }
    let logits = model.forward(inputs)?;
    let correct = logits
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(row, &y)| argmax(row.as_slice().expect("row-major")) == y)
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::{init_model, Targets};
    use crate::rng::{derive_stream, Purpose, StreamLabel};
    use ndarray::Array2;

    fn blobs(seed: u64, n: usize) -> (Array2<f64>, Vec<usize>) {
        let mut s = derive_stream(seed, StreamLabel::global(Purpose::Diagnostics));
        let mut x = Array2::zeros((n, 2));
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let label = i % 2;
            let center = if label == 0 { -2.0 } else { 2.0 };
            x[(i, 0)] = s.normal(center, 0.5);
            x[(i, 1)] = s.normal(center, 0.5);
            y.push(label);
        }
        (x, y)
    }

    fn stream(tag: u64) -> RngStream {
        derive_stream(tag, StreamLabel::global(Purpose::InitShuffle))
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let (x, y) = blobs(1, 40);
        let mut data = Batch::new(x, Targets::Hard(y)).unwrap();
        let mut m: MlpModel<f64> = init_model(&[2, 4, 2], &mut stream(2)).unwrap();
        let before = m.clone();
        let spec = TrainSpec::new(0.0, 7, 5, LossKind::HardCrossEntropy).unwrap();
        let report = train(&mut m, &mut data, &spec, &mut stream(3)).unwrap();
        assert_eq!(m, before);
        let first = report.epoch_losses[0];
        assert!(report.epoch_losses.iter().all(|&l| (l - first).abs() < 1e-12));
        // 40 rows in batches of 7: 6 steps per epoch including the partial one.
        assert_eq!(report.steps, 30);
    }

    #[test]
    fn separable_blobs_are_learned() {
        let (x, y) = blobs(4, 200);
        let mut data = Batch::new(x.clone(), Targets::Hard(y.clone())).unwrap();
        let mut m: MlpModel<f64> = init_model(&[2, 8, 2], &mut stream(5)).unwrap();
        let spec = TrainSpec::new(0.1, 16, 50, LossKind::HardCrossEntropy).unwrap();
        train(&mut m, &mut data, &spec, &mut stream(6)).unwrap();
        assert!(accuracy(&m, x.view(), &y).unwrap() >= 0.99);
    }

    #[test]
    fn same_seed_gives_identical_models() {
        let (x, y) = blobs(7, 50);
        let spec = TrainSpec::new(0.05, 8, 3, LossKind::HardCrossEntropy).unwrap();
        let run = || {
            let mut data = Batch::new(x.clone(), Targets::Hard(y.clone())).unwrap();
            let mut m: MlpModel<f64> = init_model(&[2, 5, 2], &mut stream(8)).unwrap();
            train(&mut m, &mut data, &spec, &mut stream(9)).unwrap();
            m
        };
        let (a, b) = (run(), run());
        assert!(a.parameters().iter().zip(b.parameters()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn divergence_is_reported() {
        let (x, y) = blobs(10, 20);
        let mut data = Batch::new(x * 1e150, Targets::Hard(y)).unwrap();
        let mut m: MlpModel<f64> = init_model(&[2, 3, 2], &mut stream(11)).unwrap();
        let spec = TrainSpec::new(1e150, 4, 3, LossKind::HardCrossEntropy).unwrap();
        let err = train(&mut m, &mut data, &spec, &mut stream(12)).unwrap_err();
        assert!(matches!(
            err,
            LearnerError::NonFiniteLoss { .. } | LearnerError::NonFiniteParameters { .. }
        ));
    }

    #[test]
    fn spec_validation() {
        assert!(TrainSpec::new(0.1f64, 0, 1, LossKind::LogitMse).is_err());
        assert!(TrainSpec::new(0.1f64, 1, 0, LossKind::LogitMse).is_err());
        assert!(TrainSpec::new(-0.1f64, 1, 1, LossKind::LogitMse).is_err());
    }
}
