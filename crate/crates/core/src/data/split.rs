use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Disjoint train and test subject sets.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train_subjects: Vec<String>,
    pub test_subjects: Vec<String>,
}

impl DatasetSplit {
    pub fn new(train_subjects: Vec<String>, test_subjects: Vec<String>) -> Result<Self> {
        if let Some(s) = test_subjects.iter().find(|s| train_subjects.contains(s)) {
            return Err(Error::SubjectLeakage(s.clone()));
        }
        Ok(DatasetSplit {
            train_subjects,
            test_subjects,
        })
    }

    pub fn is_test(&self, subject: &str) -> bool {
        self.test_subjects.iter().any(|s| s == subject)
    }
}

/// Seeded shuffle of `subject_ids`; the first `n_train` train, the next `n_test` test.
pub fn split_subjects(subject_ids: &[String], n_train: usize, n_test: usize, seed: u64) -> Result<DatasetSplit> {
    if n_train + n_test > subject_ids.len() {
        return Err(Error::invalid(format!(
            "need {} subjects for a {n_train}/{n_test} split, have {}",
            n_train + n_test,
            subject_ids.len()
        )));
    }
    let mut ids = subject_ids.to_vec();
    ids.sort();
    ids.dedup();
    if ids.len() != subject_ids.len() {
        return Err(Error::invalid("duplicate subject ids"));
    }
    let mut ids = subject_ids.to_vec();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = ids[n_train..n_train + n_test].to_vec();
    ids.truncate(n_train);
    DatasetSplit::new(ids, test)
}
