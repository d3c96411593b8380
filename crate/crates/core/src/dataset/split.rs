//! Stratified hold-out test set plus 5-fold assignment of the remainder.
//!
//! The test set is carved first and is shared by all folds. Per-class test
//! quotas use largest-remainder apportionment of 15% of each class, with the
//! global test size `round(0.15 * N)` taking precedence. The remaining samples of
//! every class are dealt round-robin into the folds, continuing the deal across
//! classes so both per-class and global fold sizes differ by at most one.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{DatasetManifest, Grade, Modality, NUM_CLASSES};

pub const TEST_PERCENT: usize = 15;
pub const NUM_FOLDS: usize = 5;
/// Smallest class size that leaves a non-empty test share and five non-empty folds.
pub const MIN_PER_CLASS: usize = 7;

#[derive(Debug, Error)]
pub enum SplitError {
    #[error("the {0} dataset is empty")]
    Empty(Modality),
    #[error("grade {grade} has {count} samples, at least {MIN_PER_CLASS} are required")]
    TooFewSamples { grade: Grade, count: usize },
    #[error("fold {0} is outside 1..={NUM_FOLDS}")]
    BadFold(usize),
    #[error("split file is inconsistent: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitPlan {
    seed: u64,
    test_ids: BTreeSet<String>,
    fold_of: BTreeMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct SplitFile {
    seed: u64,
    test_ids: Vec<String>,
    folds: BTreeMap<String, Vec<String>>,
}

impl SplitPlan {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn test_ids(&self) -> &BTreeSet<String> {
        &self.test_ids
    }

    pub fn is_test(&self, id: &str) -> bool {
        self.test_ids.contains(id)
    }

    pub fn fold_of(&self, id: &str) -> Option<usize> {
        self.fold_of.get(id).copied()
    }

    pub fn len(&self) -> usize {
        self.test_ids.len() + self.fold_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check_fold(fold: usize) -> Result<(), SplitError> {
        if (1..=NUM_FOLDS).contains(&fold) {
            Ok(())
        } else {
            Err(SplitError::BadFold(fold))
        }
    }

    /// Ids held out for validation when training fold `fold` (1-based).
    pub fn validation_ids(&self, fold: usize) -> Result<Vec<&str>, SplitError> {
        Self::check_fold(fold)?;
        Ok(self
            .fold_of
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(id, _)| id.as_str())
            .collect())
    }

    /// Ids of the four training folds when `fold` is held out.
    pub fn train_ids(&self, fold: usize) -> Result<Vec<&str>, SplitError> {
        Self::check_fold(fold)?;
        Ok(self
            .fold_of
            .iter()
            .filter(|(_, &f)| f != fold)
            .map(|(id, _)| id.as_str())
            .collect())
    }

    pub fn fold_sizes(&self) -> [usize; NUM_FOLDS] {
        let mut sizes = [0; NUM_FOLDS];
        for &f in self.fold_of.values() {
            sizes[f - 1] += 1;
        }
        sizes
    }

    pub fn to_json(&self) -> String {
        let mut folds: BTreeMap<String, Vec<String>> = (1..=NUM_FOLDS).map(|k| (k.to_string(), Vec::new())).collect();
        for (id, f) in &self.fold_of {
            folds.get_mut(&f.to_string()).expect("fold key").push(id.clone());
        }
        let file = SplitFile {
            seed: self.seed,
            test_ids: self.test_ids.iter().cloned().collect(),
            folds,
        };
        serde_json::to_string_pretty(&file).expect("split serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, SplitError> {
        let file: SplitFile = serde_json::from_str(text)?;
        let test_ids: BTreeSet<String> = file.test_ids.into_iter().collect();
        let mut fold_of = BTreeMap::new();
        for (key, ids) in file.folds {
            let fold: usize = key
                .parse()
                .map_err(|_| SplitError::Inconsistent(format!("fold key `{key}`")))?;
            Self::check_fold(fold)?;
            for id in ids {
                if test_ids.contains(&id) || fold_of.insert(id.clone(), fold).is_some() {
                    return Err(SplitError::Inconsistent(format!("id `{id}` assigned twice")));
                }
            }
        }
        Ok(Self {
            seed: file.seed,
            test_ids,
            fold_of,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), SplitError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, SplitError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Per-class test counts by largest remainder; ties go to the lower grade.
fn test_quotas(counts: &[usize; NUM_CLASSES]) -> [usize; NUM_CLASSES] {
    let total: usize = counts.iter().sum();
    let target = (TEST_PERCENT * total + 50) / 100;
    let mut quotas = [0; NUM_CLASSES];
    let mut remainders = Vec::with_capacity(NUM_CLASSES);
    for (c, &n) in counts.iter().enumerate() {
        quotas[c] = TEST_PERCENT * n / 100;
        remainders.push((TEST_PERCENT * n % 100, c));
    }
    let assigned: usize = quotas.iter().sum();
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, c) in remainders.iter().take(target.saturating_sub(assigned)) {
        quotas[c] += 1;
    }
    quotas
}

pub fn make_split(manifest: &DatasetManifest, modality: Modality, seed: u64) -> Result<SplitPlan, SplitError> {
    let mut by_class: [Vec<&str>; NUM_CLASSES] = Default::default();
    for r in manifest.records_for(modality) {
        by_class[r.grade.index()].push(r.id.as_str());
    }
    if by_class.iter().all(Vec::is_empty) {
        return Err(SplitError::Empty(modality));
    }
    for (grade, ids) in Grade::ALL.iter().zip(&by_class) {
        if ids.len() < MIN_PER_CLASS {
            return Err(SplitError::TooFewSamples {
                grade: *grade,
                count: ids.len(),
            });
        }
    }

    let counts: [usize; NUM_CLASSES] = std::array::from_fn(|c| by_class[c].len());
    let quotas = test_quotas(&counts);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut test_ids = BTreeSet::new();
    let mut fold_of = BTreeMap::new();
    let mut dealt = 0usize;
    for (ids, quota) in by_class.iter_mut().zip(quotas) {
        ids.sort_unstable();
        ids.shuffle(&mut rng);
        let (test, rest) = ids.split_at(quota);
        test_ids.extend(test.iter().map(|s| s.to_string()));
        for id in rest {
            fold_of.insert(id.to_string(), dealt % NUM_FOLDS + 1);
            dealt += 1;
        }
    }
    Ok(SplitPlan {
        seed,
        test_ids,
        fold_of,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{SampleRecord, CLINICAL_THERMAL_COUNTS};
    use std::path::PathBuf;

    pub(crate) fn manifest_with_counts(counts: &[usize; NUM_CLASSES]) -> DatasetManifest {
        let mut records = Vec::new();
        for (g, &n) in counts.iter().enumerate() {
            for i in 0..n {
                records.push(SampleRecord {
                    id: format!("g{g}_{i:04}"),
                    rgb_path: PathBuf::from("x.png"),
                    thermal_raw_path: Some(PathBuf::from("x.tiff")),
                    grade: Grade::from_index(g).unwrap(),
                    thermal_valid: true,
                });
            }
        }
        DatasetManifest::from_records(records).unwrap()
    }

    #[test]
    fn clinical_counts_give_166_test_samples() {
        let m = manifest_with_counts(&CLINICAL_THERMAL_COUNTS);
        let plan = make_split(&m, Modality::Fused, 7).unwrap();
        assert_eq!(plan.test_ids().len(), 166);
        let mut sizes = plan.fold_sizes();
        sizes.sort_unstable_by(|a, b| b.cmp(a));
        assert_eq!(sizes, [189, 189, 188, 188, 188]);
    }

    #[test]
    fn quotas_respect_global_target() {
        let q = test_quotas(&CLINICAL_THERMAL_COUNTS);
        assert_eq!(q.iter().sum::<usize>(), 166);
        for (c, &n) in CLINICAL_THERMAL_COUNTS.iter().enumerate() {
            assert!((q[c] as f64 - 0.15 * n as f64).abs() <= 1.0);
        }
    }

    #[test]
    fn same_seed_same_plan() {
        let m = manifest_with_counts(&[20, 11, 40, 9, 7, 13]);
        let a = make_split(&m, Modality::Rgb, 3).unwrap();
        let b = make_split(&m, Modality::Rgb, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_json(), b.to_json());
        let c = make_split(&m, Modality::Rgb, 4).unwrap();
        assert_ne!(a.test_ids(), c.test_ids());
    }

    #[test]
    fn too_few_samples_names_the_class() {
        let m = manifest_with_counts(&[20, 6, 40, 9, 7, 13]);
        match make_split(&m, Modality::Rgb, 0) {
            Err(SplitError::TooFewSamples { grade, count }) => {
                assert_eq!(grade.value(), 1);
                assert_eq!(count, 6);
            }
            other => panic!("unexpected {other:?}"),
        }
        let empty = DatasetManifest::default();
        assert!(matches!(
            make_split(&empty, Modality::Rgb, 0),
            Err(SplitError::Empty(_))
        ));
    }

    #[test]
    fn json_round_trip_and_fold_views() {
        let m = manifest_with_counts(&[10, 10, 10, 10, 10, 10]);
        let plan = make_split(&m, Modality::Fused, 11).unwrap();
        let back = SplitPlan::from_json(&plan.to_json()).unwrap();
        assert_eq!(back, plan);
        for k in 1..=NUM_FOLDS {
            let val = plan.validation_ids(k).unwrap();
            let train = plan.train_ids(k).unwrap();
            assert_eq!(val.len() + train.len() + plan.test_ids().len(), 60);
            assert!(val.iter().all(|id| !train.contains(id)));
            assert!(train.iter().all(|id| !plan.is_test(id)));
        }
        assert!(plan.validation_ids(0).is_err());
        assert!(plan.train_ids(6).is_err());
    }
}
