//! Central finite-difference check of the analytic gradients.
//!
//! The numeric side only ever calls [`evaluate_loss`], a forward pass, so it
//! shares no code with backpropagation. Relative error per coordinate is
//! `|a − n| / max(|a|, |n|, RELATIVE_FLOOR)`; the floor keeps coordinates
//! whose true gradient is near zero from turning round-off into huge ratios.
//!
//! Rectifier kinks make finite differences meaningless, so random trials
//! whose hidden pre-activations come within [`KINK_MARGIN`] of zero are
//! redrawn.

use ndarray::Array2;

use super::loss::{evaluate_loss, loss_and_grad, Batch, LossKind, Targets};
use super::model::{init_model, softmax, MlpModel};
use super::LearnerError;
use crate::rng::{derive_stream, Purpose, RngStream, StreamLabel};

pub const FD_STEP: f64 = 1e-5;
pub const RELATIVE_FLOOR: f64 = 1e-3;
pub const KINK_MARGIN: f64 = 1e-3;
const MAX_REDRAWS: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateError {
    /// Flat parameter index (layer order, weights row-major, then biases).
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

/// Worst coordinate of one (model, batch, loss) comparison.
pub fn check_gradient(model: &MlpModel<f64>, batch: &Batch<f64>, loss: LossKind) -> Result<CoordinateError, LearnerError> {
    let (_, grad) = loss_and_grad(model, batch, loss)?;
    compare_gradient(model, batch, loss, &grad.parameters())
}

/// Compares a claimed gradient (flat parameter order) against central
/// differences of the loss.
pub fn compare_gradient(
    model: &MlpModel<f64>,
    batch: &Batch<f64>,
    loss: LossKind,
    analytic: &[f64],
) -> Result<CoordinateError, LearnerError> {
    let mut probe = model.clone();
    let mut worst = CoordinateError {
        index: 0,
        analytic: 0.0,
        numeric: 0.0,
        relative_error: 0.0,
    };
    for (index, &a) in analytic.iter().enumerate() {
        let original = *probe.parameter_mut(index).expect("index in range");
        *probe.parameter_mut(index).expect("index in range") = original + FD_STEP;
        let up = evaluate_loss(&probe, batch, loss)?;
        *probe.parameter_mut(index).expect("index in range") = original - FD_STEP;
        let down = evaluate_loss(&probe, batch, loss)?;
        *probe.parameter_mut(index).expect("index in range") = original;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let relative_error = (a - numeric).abs() / a.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
        if relative_error >= worst.relative_error {
            worst = CoordinateError {
                index,
                analytic: a,
                numeric,
                relative_error,
            };
        }
    }
    Ok(worst)
}

/// A randomly drawn (model, batch, loss) case.
#[derive(Debug, Clone)]
pub struct Trial {
    pub model: MlpModel<f64>,
    pub batch: Batch<f64>,
    pub loss: LossKind,
}

fn near_kink(model: &MlpModel<f64>, batch: &Batch<f64>) -> bool {
    let pre = model.forward_trace(batch.inputs().view()).expect("shapes are consistent");
    pre[..pre.len() - 1]
        .iter()
        .any(|z| z.iter().any(|v| v.abs() < KINK_MARGIN))
}

fn draw_trial(stream: &mut RngStream, loss: LossKind) -> Trial {
    for _ in 0..MAX_REDRAWS {
        let depth = 1 + stream.below_usize(3);
        let dims: Vec<usize> = (0..=depth).map(|_| 2 + stream.below_usize(5)).collect();
        let mut model: MlpModel<f64> = init_model(&dims, stream).expect("dims are positive");
        for layer in model.layers_mut() {
            layer.biases.mapv_inplace(|_| stream.normal(0.0, 0.5));
        }
        let rows = 1 + stream.below_usize(5);
        let classes = dims[dims.len() - 1];
        let inputs = Array2::from_shape_fn((rows, dims[0]), |_| stream.normal(0.0, 1.0));
        let targets = match loss {
            LossKind::HardCrossEntropy => Targets::Hard((0..rows).map(|_| stream.below_usize(classes)).collect()),
            LossKind::SoftCrossEntropy => {
                let mut q = Array2::zeros((rows, classes));
                for mut row in q.rows_mut() {
                    let z: Vec<f64> = (0..classes).map(|_| stream.normal(0.0, 1.5)).collect();
                    row.iter_mut().zip(softmax(&z)).for_each(|(d, p)| *d = p);
                }
                Targets::Soft(q)
            }
            LossKind::LogitMse => Targets::Logits(Array2::from_shape_fn((rows, classes), |_| stream.normal(0.0, 2.0))),
        };
        let batch = Batch::new(inputs, targets).expect("rows match");
        if !near_kink(&model, &batch) {
            return Trial { model, batch, loss };
        }
    }
    unreachable!("random trials keep landing on rectifier kinks")
}

/// The `i`-th trial of the sweep seeded by `seed`; losses cycle through all
/// three kinds.
pub fn trial(seed: u64, i: usize) -> Trial {
    let loss = [LossKind::HardCrossEntropy, LossKind::SoftCrossEntropy, LossKind::LogitMse][i % 3];
    let mut stream = derive_stream(seed, StreamLabel::new(Purpose::Diagnostics, 0, i as u64));
    draw_trial(&mut stream, loss)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub trials: usize,
    pub worst_trial: usize,
    pub worst_loss: LossKind,
    pub worst: CoordinateError,
}

impl SweepReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.worst.relative_error <= tolerance
    }
}

pub fn sweep(trials: usize, seed: u64) -> Result<SweepReport, LearnerError> {
    let mut report: Option<SweepReport> = None;
    for i in 0..trials {
        let t = trial(seed, i);
        let worst = check_gradient(&t.model, &t.batch, t.loss)?;
        if report.as_ref().is_none_or(|r| worst.relative_error >= r.worst.relative_error) {
            report = Some(SweepReport {
                trials,
                worst_trial: i,
                worst_loss: t.loss,
                worst,
            });
        }
    }
    report.ok_or(LearnerError::InvalidSpec("gradient sweep needs at least one trial"))
}
