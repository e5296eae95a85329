use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::dataset::SampleRecord;
use crate::error::{HarnessError, Result};

/// Subject-grouped cross-validation split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    /// subject id → fold index
    pub assignments: BTreeMap<usize, usize>,
}

impl FoldPlan {
    pub fn fold_of(&self, subject: usize) -> Option<usize> {
        self.assignments.get(&subject).copied()
    }

    pub fn test_subjects(&self, fold: usize) -> Vec<usize> {
        self.assignments.iter().filter(|&(_, &f)| f == fold).map(|(&s, _)| s).collect()
    }

    /// Indices of the records held out in `fold`.
    pub fn test_indices(&self, records: &[SampleRecord], fold: usize) -> Vec<usize> {
        self.select(records, |f| f == Some(fold))
    }

    /// Indices of the records trained on for `fold`. Subjects unknown to the
    /// plan are never used for training.
    pub fn train_indices(&self, records: &[SampleRecord], fold: usize) -> Vec<usize> {
        self.select(records, |f| f.is_some_and(|f| f != fold))
    }

    fn select(&self, records: &[SampleRecord], keep: impl Fn(Option<usize>) -> bool) -> Vec<usize> {
        records
            .iter()
            .enumerate()
            .filter(|(_, r)| keep(self.fold_of(r.meta.subject_id)))
            .map(|(i, _)| i)
            .collect()
    }

    /// Checks that every fold has at least one subject and that the plan
    /// covers every subject in `records`.
    pub fn validate(&self, records: &[SampleRecord]) -> Result<()> {
        if self.k < 2 {
            return Err(HarnessError::Config(format!("k = {} leaves no training data", self.k)));
        }
        for fold in 0..self.k {
            if self.test_subjects(fold).is_empty() {
                return Err(HarnessError::Config(format!("fold {fold} has no subjects")));
            }
        }
        if let Some(f) = self.assignments.values().find(|&&f| f >= self.k) {
            return Err(HarnessError::Config(format!("fold index {f} out of range for k = {}", self.k)));
        }
        if let Some(r) = records.iter().find(|r| self.fold_of(r.meta.subject_id).is_none()) {
            return Err(HarnessError::Data(format!(
                "subject {} is not assigned to any fold",
                r.meta.subject_id
            )));
        }
        Ok(())
    }
}

/// Deals the sorted distinct subjects round-robin into `k` folds, so with as
/// many subjects as folds each fold holds out exactly one subject.
pub fn kfold_by_subject(records: &[SampleRecord], k: usize) -> Result<FoldPlan> {
    if k < 2 {
        return Err(HarnessError::Config(format!(
            "k = {k} is degenerate: the training set would be empty"
        )));
    }
    let subjects: BTreeSet<usize> = records.iter().map(|r| r.meta.subject_id).collect();
    if subjects.len() < k {
        return Err(HarnessError::Config(format!(
            "{} distinct subjects cannot fill {k} folds",
            subjects.len()
        )));
    }
    let assignments = subjects.into_iter().enumerate().map(|(i, s)| (s, i % k)).collect();
    Ok(FoldPlan { k, assignments })
}
