use ndarray::Axis;

use crate::datagen::LabeledSet;
use crate::learner::{Batch, Targets, TrainingSource};
use crate::sampling::SubsetSelection;

/// The only path from a party's private rows to its learner. Positions map
/// through the selection, and every row handed out is counted in `touches`
/// (one slot per private row).
pub struct PrivateView<'a> {
    data: &'a LabeledSet,
    selection: &'a SubsetSelection,
    touches: &'a mut [u64],
}

impl<'a> PrivateView<'a> {
    /// # Panics
    ///
    /// Panics if the selection or the touch counter does not fit `data`.
    pub fn new(data: &'a LabeledSet, selection: &'a SubsetSelection, touches: &'a mut [u64]) -> Self {
        assert_eq!(selection.dataset_size(), data.len(), "selection drawn for another dataset");
        assert_eq!(touches.len(), data.len(), "one touch counter per private row");
        Self {
            data,
            selection,
            touches,
        }
    }

    /// The whole selected subset, for evaluation.
    pub fn all(&mut self) -> Batch<f64> {
        let positions: Vec<usize> = (0..self.selection.len()).collect();
        self.fetch(&positions)
    }
}

impl TrainingSource<f64> for PrivateView<'_> {
    fn len(&self) -> usize {
        self.selection.len()
    }

    fn fetch(&mut self, positions: &[usize]) -> Batch<f64> {
        let rows: Vec<usize> = positions.iter().map(|&p| self.selection.indices()[p]).collect();
        for &r in &rows {
            self.touches[r] += 1;
        }
        let inputs = self.data.inputs.select(Axis(0), &rows);
        let labels = rows.iter().map(|&r| self.data.labels[r]).collect();
        Batch::new(inputs, Targets::Hard(labels)).expect("row counts match by construction")
    }
}
