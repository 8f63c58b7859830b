//! Deterministic 7:1:2 train/validation/test splits.
//!
//! Rounding rule: floor the validation and test counts (`n/10` and `2n/10`
//! in integer arithmetic), remainder to train.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{QaError, Result};
use crate::params::derive_seed;

use super::types::Database;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl SplitAssignment {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }
}

pub fn split_database(db: &Database, seed: u64) -> Result<SplitAssignment> {
    let n = db.samples.len();
    if n < 10 {
        return Err(QaError::DatabaseTooSmall {
            name: db.spec.name.clone(),
            n,
            min: 10,
        });
    }
    let n_val = n / 10;
    let n_test = n * 2 / 10;
    let n_train = n - n_val - n_test;

    let mut ids: Vec<String> = db.samples.iter().map(|s| s.sample_id.clone()).collect();
    ids.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("split/{}", db.spec.name)));
    ids.shuffle(&mut rng);

    let train = ids[..n_train].to_vec();
    let val = ids[n_train..n_train + n_val].to_vec();
    let test = ids[n_train + n_val..].to_vec();
    Ok(SplitAssignment {
        seed,
        train,
        val,
        test,
    })
}
