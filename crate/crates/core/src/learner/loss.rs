use ndarray::{Array1, Array2, Axis};

use super::model::{log_softmax_row, softmax, DenseLayer, MlpModel};
use super::LearnerError;
use crate::scalar::Real;

const SIMPLEX_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    /// `−log softmax(z)_y` against an integer label.
    HardCrossEntropy,
    /// `−Σ_c q_c log softmax(z)_c` against a probability row.
    SoftCrossEntropy,
    /// Mean squared error between logits and target logits.
    LogitMse,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets<T> {
    Hard(Vec<usize>),
    Soft(Array2<T>),
    Logits(Array2<T>),
}

impl<T: Real> Targets<T> {
    pub fn len(&self) -> usize {
        match self {
            Targets::Hard(l) => l.len(),
            Targets::Soft(m) | Targets::Logits(m) => m.nrows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn matches(&self, loss: LossKind) -> bool {
        matches!(
            (self, loss),
            (Targets::Hard(_), LossKind::HardCrossEntropy)
                | (Targets::Soft(_), LossKind::SoftCrossEntropy)
                | (Targets::Logits(_), LossKind::LogitMse)
        )
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        match self {
            Targets::Hard(l) => Targets::Hard(rows.iter().map(|&r| l[r]).collect()),
            Targets::Soft(m) => Targets::Soft(m.select(Axis(0), rows)),
            Targets::Logits(m) => Targets::Logits(m.select(Axis(0), rows)),
        }
    }
}

/// Inputs paired with targets of one kind.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    inputs: Array2<T>,
    targets: Targets<T>,
}

impl<T: Real> Batch<T> {
    /// Checks row counts and that soft targets lie on the simplex.
    pub fn new(inputs: Array2<T>, targets: Targets<T>) -> Result<Self, LearnerError> {
        if inputs.nrows() != targets.len() {
            return Err(LearnerError::RowMismatch {
                inputs: inputs.nrows(),
                targets: targets.len(),
            });
        }
        if let Targets::Soft(m) = &targets {
            let tol = T::of(SIMPLEX_TOLERANCE);
            for (row, r) in m.axis_iter(Axis(0)).enumerate() {
                let sum: T = r.iter().copied().sum();
                if r.iter().any(|&v| !(v >= T::zero())) || (sum - T::one()).abs() > tol {
                    return Err(LearnerError::NotOnSimplex { row });
                }
            }
        }
        Ok(Self { inputs, targets })
    }

    pub fn inputs(&self) -> &Array2<T> {
        &self.inputs
    }

    pub fn targets(&self) -> &Targets<T> {
        &self.targets
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            inputs: self.inputs.select(Axis(0), rows),
            targets: self.targets.select(rows),
        }
    }

    fn check_against(&self, classes: usize, loss: LossKind) -> Result<(), LearnerError> {
        if !self.targets.matches(loss) {
            let expected = match loss {
                LossKind::HardCrossEntropy => "hard-label",
                LossKind::SoftCrossEntropy => "soft-label",
                LossKind::LogitMse => "logit",
            };
            return Err(LearnerError::TargetKind { loss, expected });
        }
        match &self.targets {
            Targets::Hard(labels) => {
                if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
                    return Err(LearnerError::LabelOutOfRange { label, classes });
                }
            }
            Targets::Soft(m) | Targets::Logits(m) => {
                if m.ncols() != classes {
                    return Err(LearnerError::TargetWidth {
                        expected: classes,
                        got: m.ncols(),
                    });
                }
            }
        }
        Ok(())
    }
}

fn row_loss<T: Real>(logits: &[T], targets: &Targets<T>, row: usize) -> T {
    match targets {
        Targets::Hard(labels) => -log_softmax_row(logits)[labels[row]],
        Targets::Soft(q) => {
            let logp = log_softmax_row(logits);
            let mut total = T::zero();
            for (&qc, lp) in q.row(row).iter().zip(logp) {
                if qc > T::zero() {
                    total -= qc * lp;
                }
            }
            total
        }
        Targets::Logits(y) => {
            let c = T::of_u64(logits.len() as u64);
            logits
                .iter()
                .zip(y.row(row).iter())
                .map(|(&z, &t)| (z - t) * (z - t))
                .sum::<T>()
                / c
        }
    }
}

fn mean_loss<T: Real>(logits: &Array2<T>, targets: &Targets<T>) -> T {
    let b = T::of_u64(logits.nrows() as u64);
    logits
        .axis_iter(Axis(0))
        .enumerate()
        .map(|(i, row)| row_loss(row.as_slice().expect("row-major"), targets, i))
        .sum::<T>()
        / b
}

/// Mean loss of `model` on `batch`, by a forward pass only.
pub fn evaluate_loss<T: Real>(model: &MlpModel<T>, batch: &Batch<T>, loss: LossKind) -> Result<T, LearnerError> {
    batch.check_against(model.classes(), loss)?;
    let logits = model.forward(batch.inputs.view())?;
    Ok(mean_loss(&logits, &batch.targets))
}

/// Gradient of the mean loss with respect to the logits.
pub fn output_gradient<T: Real>(logits: &Array2<T>, targets: &Targets<T>) -> Array2<T> {
    let (b, c) = logits.dim();
    let bf = T::of_u64(b as u64);
    let mut grad = Array2::zeros((b, c));
    for (i, (row, mut g)) in logits.axis_iter(Axis(0)).zip(grad.axis_iter_mut(Axis(0))).enumerate() {
        let z = row.as_slice().expect("row-major");
        match targets {
            Targets::Hard(labels) => {
                let p = softmax(z);
                for (j, gj) in g.iter_mut().enumerate() {
                    let onehot = if j == labels[i] { T::one() } else { T::zero() };
                    *gj = (p[j] - onehot) / bf;
                }
            }
            Targets::Soft(q) => {
                let p = softmax(z);
                // d/dz of −Σ q log softmax(z) is (Σq)·p − q.
                let qrow = q.row(i);
                let mass: T = qrow.iter().copied().sum();
                for (j, gj) in g.iter_mut().enumerate() {
                    *gj = (mass * p[j] - qrow[j]) / bf;
                }
            }
            Targets::Logits(y) => {
                let scale = T::of(2.0) / (bf * T::of_u64(c as u64));
                for (j, gj) in g.iter_mut().enumerate() {
                    *gj = scale * (z[j] - y[(i, j)]);
                }
            }
        }
    }
    grad
}

/// Mean loss and its exact gradient for every parameter, by backpropagation.
///
/// The gradient is returned as a model of the same shape.
pub fn loss_and_grad<T: Real>(
    model: &MlpModel<T>,
    batch: &Batch<T>,
    loss: LossKind,
) -> Result<(T, MlpModel<T>), LearnerError> {
    batch.check_against(model.classes(), loss)?;
    let pre = model.forward_trace(batch.inputs.view())?;
    let logits = &pre[pre.len() - 1];
    let value = mean_loss(logits, &batch.targets);

    let layers = model.layers();
    let mut grads: Vec<DenseLayer<T>> = Vec::with_capacity(layers.len());
    let mut delta = output_gradient(logits, &batch.targets);
    for l in (0..layers.len()).rev() {
        let input_act = if l == 0 {
            batch.inputs.clone()
        } else {
            pre[l - 1].mapv(super::model::relu)
        };
        let weights = input_act.t().dot(&delta);
        let biases: Array1<T> = delta.sum_axis(Axis(0));
        if l > 0 {
            let mut upstream = delta.dot(&layers[l].weights.t());
            upstream.zip_mut_with(&pre[l - 1], |d, &z| {
                if !(z > T::zero()) {
                    *d = T::zero();
                }
            });
            delta = upstream;
        }
        grads.push(DenseLayer { weights, biases });
    }
    grads.reverse();
    Ok((value, MlpModel::from_layers(grads)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::init_model;
    use crate::rng::{derive_stream, Purpose, StreamLabel};
    use ndarray::array;

    fn model() -> MlpModel<f64> {
        let mut s = derive_stream(3, StreamLabel::global(Purpose::ModelInit));
        init_model(&[3, 4, 3], &mut s).unwrap()
    }

    #[test]
    fn soft_targets_equal_to_prediction_zero_the_output_gradient() {
        let logits: Array2<f64> = array![[0.3, -1.2, 2.0], [5.0, 5.0, -3.0]];
        let q = crate::learner::softmax_rows(logits.view());
        let g = output_gradient(&logits, &Targets::Soft(q));
        assert!(g.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn logit_mse_fixed_point() {
        let m = model();
        let x = array![[0.1, 0.2, -0.3], [1.0, -1.0, 0.5]];
        let y = m.forward(x.view()).unwrap();
        let batch = Batch::new(x, Targets::Logits(y)).unwrap();
        let (value, grad) = loss_and_grad(&m, &batch, LossKind::LogitMse).unwrap();
        assert_eq!(value, 0.0);
        assert!(grad.parameters().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn mismatched_target_kind_is_rejected() {
        let m = model();
        let batch = Batch::new(array![[0.0, 0.0, 0.0]], Targets::Hard(vec![1])).unwrap();
        assert!(matches!(
            loss_and_grad(&m, &batch, LossKind::LogitMse),
            Err(LearnerError::TargetKind { .. })
        ));
        let batch = Batch::new(array![[0.0, 0.0, 0.0]], Targets::Hard(vec![3])).unwrap();
        assert_eq!(
            loss_and_grad(&m, &batch, LossKind::HardCrossEntropy).unwrap_err(),
            LearnerError::LabelOutOfRange { label: 3, classes: 3 }
        );
    }

    #[test]
    fn batch_validation() {
        assert!(matches!(
            Batch::new(array![[0.0], [1.0]], Targets::<f64>::Hard(vec![0])),
            Err(LearnerError::RowMismatch { .. })
        ));
        assert_eq!(
            Batch::new(array![[0.0]], Targets::Soft(array![[0.6, 0.6]])).unwrap_err(),
            LearnerError::NotOnSimplex { row: 0 }
        );
        assert!(Batch::new(array![[0.0]], Targets::Soft(array![[-0.1, 1.1]])).is_err());
        assert!(Batch::new(array![[0.0]], Targets::Soft(array![[0.25, 0.75]])).is_ok());
    }

    #[test]
    fn evaluate_matches_loss_and_grad_value() {
        let m = model();
        let x = array![[0.1, 0.2, -0.3], [1.0, -1.0, 0.5]];
        let batch = Batch::new(x, Targets::Hard(vec![2, 0])).unwrap();
        let a = evaluate_loss(&m, &batch, LossKind::HardCrossEntropy).unwrap();
        let (b, _) = loss_and_grad(&m, &batch, LossKind::HardCrossEntropy).unwrap();
        assert!((a - b).abs() < 1e-15);
    }
}
