//! Inverse-frequency class weights.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Grade, NUM_CLASSES};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WeightsError {
    #[error("grade {0} has no samples")]
    EmptyClass(Grade),
}

/// Per-grade loss weights, `w_c = N / (6 n_c)`.
///
/// With this scaling the sample-weighted mean `Σ n_c w_c / N` is exactly one, so
/// a balanced dataset gets unit weights.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassWeights(pub [f64; NUM_CLASSES]);

impl ClassWeights {
    pub fn uniform() -> Self {
        Self([1.0; NUM_CLASSES])
    }

    pub fn get(&self, grade: Grade) -> f64 {
        self.0[grade.index()]
    }

    pub fn as_array(&self) -> [f64; NUM_CLASSES] {
        self.0
    }
}

pub fn class_weights(counts: &[usize; NUM_CLASSES]) -> Result<ClassWeights, WeightsError> {
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(WeightsError::EmptyClass(Grade::ALL[c]));
    }
    let total: usize = counts.iter().sum();
    Ok(ClassWeights(std::array::from_fn(|c| {
        total as f64 / (NUM_CLASSES * counts[c]) as f64
    })))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_counts_give_unit_weights() {
        assert_eq!(class_weights(&[9; 6]).unwrap(), ClassWeights::uniform());
    }

    #[test]
    fn empty_class_is_rejected() {
        assert_eq!(
            class_weights(&[3, 0, 1, 1, 1, 1]),
            Err(WeightsError::EmptyClass(Grade::ALL[1]))
        );
    }
}
