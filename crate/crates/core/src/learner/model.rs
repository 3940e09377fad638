use ndarray::{Array1, Array2, ArrayView2, Axis};

use super::LearnerError;
use crate::rng::RngStream;
use crate::scalar::Real;

/// Affine map `x ↦ x·W + b` with `W` of shape (inputs × outputs).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<T> {
    pub weights: Array2<T>,
    pub biases: Array1<T>,
}

impl<T: Real> DenseLayer<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weights: Array2::zeros((inputs, outputs)),
            biases: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weights.ncols()
    }

    fn apply(&self, x: ArrayView2<'_, T>) -> Array2<T> {
        x.dot(&self.weights) + &self.biases
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel<T> {
    layers: Vec<DenseLayer<T>>,
}

impl<T: Real> MlpModel<T> {
    /// Builds a model from explicit layers; shapes must chain.
    pub fn from_layers(layers: Vec<DenseLayer<T>>) -> Result<Self, LearnerError> {
        if layers.is_empty() {
            return Err(LearnerError::TooFewDims(layers.len()));
        }
        for pair in layers.windows(2) {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(LearnerError::InputWidth {
                    expected: pair[0].outputs(),
                    got: pair[1].inputs(),
                });
            }
        }
        for l in &layers {
            if l.biases.len() != l.outputs() {
                return Err(LearnerError::TargetWidth {
                    expected: l.outputs(),
                    got: l.biases.len(),
                });
            }
        }
        Ok(Self { layers })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self, LearnerError> {
        check_dims(dims)?;
        Ok(Self {
            layers: dims.windows(2).map(|w| DenseLayer::zeros(w[0], w[1])).collect(),
        })
    }

    pub fn layers(&self) -> &[DenseLayer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer<T>] {
        &mut self.layers
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].inputs()];
        dims.extend(self.layers.iter().map(|l| l.outputs()));
        dims
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn classes(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.biases.iter()).all(|v| v.is_finite()))
    }

    /// Logits for every input row.
    pub fn forward(&self, inputs: ArrayView2<'_, T>) -> Result<Array2<T>, LearnerError> {
        self.check_input(inputs)?;
        let mut activation = self.layers[0].apply(inputs);
        for layer in &self.layers[1..] {
            activation.mapv_inplace(relu);
            activation = layer.apply(activation.view());
        }
        Ok(activation)
    }

    /// Pre-activations of every layer (the last entry is the logits).
    pub(crate) fn forward_trace(&self, inputs: ArrayView2<'_, T>) -> Result<Vec<Array2<T>>, LearnerError> {
        self.check_input(inputs)?;
        let mut pre = Vec::with_capacity(self.layers.len());
        pre.push(self.layers[0].apply(inputs));
        for layer in &self.layers[1..] {
            let hidden = pre[pre.len() - 1].mapv(relu);
            pre.push(layer.apply(hidden.view()));
        }
        Ok(pre)
    }

    fn check_input(&self, inputs: ArrayView2<'_, T>) -> Result<(), LearnerError> {
        if inputs.ncols() != self.input_width() {
            return Err(LearnerError::InputWidth {
                expected: self.input_width(),
                got: inputs.ncols(),
            });
        }
        Ok(())
    }

    /// Visits every parameter alongside the matching one of `other`.
    pub(crate) fn zip_params_mut(&mut self, other: &MlpModel<T>, mut f: impl FnMut(&mut T, T)) {
        for (mine, theirs) in self.layers.iter_mut().zip(&other.layers) {
            mine.weights.zip_mut_with(&theirs.weights, |a, &b| f(a, b));
            mine.biases.zip_mut_with(&theirs.biases, |a, &b| f(a, b));
        }
    }

    /// Mutable access to the i-th parameter in layer order (weights row-major,
    /// then biases).
    pub fn parameter_mut(&mut self, mut index: usize) -> Option<&mut T> {
        for layer in &mut self.layers {
            let w = layer.weights.len();
            if index < w {
                let cols = layer.weights.ncols();
                return layer.weights.get_mut((index / cols, index % cols));
            }
            index -= w;
            let b = layer.biases.len();
            if index < b {
                return layer.biases.get_mut(index);
            }
            index -= b;
        }
        None
    }

    pub fn parameters(&self) -> Vec<T> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.biases.iter()).copied())
            .collect()
    }
}

#[inline]
pub(crate) fn relu<T: Real>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        T::zero()
    }
}

fn check_dims(dims: &[usize]) -> Result<(), LearnerError> {
    if dims.len() < 2 {
        return Err(LearnerError::TooFewDims(dims.len()));
    }
    if let Some(index) = dims.iter().position(|&d| d == 0) {
        return Err(LearnerError::ZeroDim { index });
    }
    Ok(())
}

/// Uniform Glorot initialisation: weights in `[−s, s]` with
/// `s = sqrt(6 / (fan_in + fan_out))`, zero biases.
pub fn init_model<T: Real>(dims: &[usize], stream: &mut RngStream) -> Result<MlpModel<T>, LearnerError> {
    check_dims(dims)?;
    let layers = dims
        .windows(2)
        .map(|w| {
            let scale = (6.0 / (w[0] + w[1]) as f64).sqrt();
            let weights = Array2::from_shape_fn((w[0], w[1]), |_| T::of(stream.uniform(-scale, scale)));
            DenseLayer {
                weights,
                biases: Array1::zeros(w[1]),
            }
        })
        .collect();
    Ok(MlpModel { layers })
}

/// Max-subtracted softmax of one logit row.
pub fn softmax<T: Real>(row: &[T]) -> Vec<T> {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = row.iter().map(|&z| (z - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `log softmax(row)` computed through log-sum-exp.
pub fn log_softmax_row<T: Real>(row: &[T]) -> Vec<T> {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = max + row.iter().map(|&z| (z - max).exp()).sum::<T>().ln();
    row.iter().map(|&z| z - lse).collect()
}

pub fn softmax_rows<T: Real>(logits: ArrayView2<'_, T>) -> Array2<T> {
    let mut out = logits.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let probs = softmax(row.as_slice().expect("row-major"));
        row.iter_mut().zip(probs).for_each(|(dst, p)| *dst = p);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{derive_stream, Purpose, StreamLabel};
    use ndarray::array;

    fn stream() -> RngStream {
        derive_stream(5, StreamLabel::global(Purpose::ModelInit))
    }

    #[test]
    fn glorot_range() {
        let m: MlpModel<f64> = init_model(&[4, 3], &mut stream()).unwrap();
        let s = (6.0f64 / 7.0).sqrt();
        assert!((s - 0.9258).abs() < 1e-4);
        assert!(m.layers()[0].weights.iter().all(|w| w.abs() <= s));
        assert!(m.layers()[0].biases.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn init_is_deterministic() {
        let a: MlpModel<f64> = init_model(&[3, 5, 2], &mut stream()).unwrap();
        let b: MlpModel<f64> = init_model(&[3, 5, 2], &mut stream()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn shapes_chain() {
        let m: MlpModel<f64> = init_model(&[2, 5, 3], &mut stream()).unwrap();
        assert_eq!(m.layers()[0].weights.dim(), (2, 5));
        assert_eq!(m.layers()[1].weights.dim(), (5, 3));
        assert_eq!(m.layers()[0].biases.len(), 5);
        assert_eq!(m.layers()[1].biases.len(), 3);
        assert_eq!(m.layer_dims(), vec![2, 5, 3]);
        assert_eq!(m.parameter_count(), 10 + 5 + 15 + 3);
    }

    #[test]
    fn rejects_bad_dims() {
        assert_eq!(init_model::<f64>(&[4], &mut stream()).unwrap_err(), LearnerError::TooFewDims(1));
        assert_eq!(
            init_model::<f64>(&[4, 0, 2], &mut stream()).unwrap_err(),
            LearnerError::ZeroDim { index: 1 }
        );
    }

    #[test]
    fn zero_model_gives_zero_logits() {
        let m = MlpModel::<f64>::zeros(&[3, 4, 2]).unwrap();
        let out = m.forward(array![[1.0, -2.0, 3.0], [0.5, 0.5, 0.5]].view()).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_layer_passes_through() {
        let layer = DenseLayer {
            weights: array![[1.0, 0.0], [0.0, 1.0]],
            biases: array![0.0, 0.0],
        };
        let m = MlpModel::from_layers(vec![layer]).unwrap();
        let out = m.forward(array![[3.0, -1.0]].view()).unwrap();
        assert_eq!(out, array![[3.0, -1.0]]);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let m = MlpModel::<f64>::zeros(&[3, 2]).unwrap();
        assert_eq!(
            m.forward(array![[1.0, 2.0]].view()).unwrap_err(),
            LearnerError::InputWidth { expected: 3, got: 2 }
        );
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&[0.0f64, 0.0, 0.0]);
        assert!(p.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
        let p = softmax(&[1000.0f64, 0.0]);
        assert!(p[0] == 1.0 && p[1] >= 0.0 && p[1] < 1e-300);
        let p = softmax(&[2f64.ln(), 0.0]);
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15 && (p[1] - 1.0 / 3.0).abs() < 1e-15);
        let p = softmax(&[-700.0f64, 700.0]);
        assert!(p.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn works_in_single_precision() {
        let m: MlpModel<f32> = init_model(&[3, 4, 2], &mut stream()).unwrap();
        let out = m.forward(array![[0.1f32, 0.2, 0.3]].view()).unwrap();
        assert_eq!(out.dim(), (1, 2));
    }
}
