//! Seeded train/validation/test partitioning of sample ids.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default split ratios (train, val, test).
pub const DEFAULT_RATIOS: [f64; 3] = [0.6, 0.2, 0.2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub seed: u64,
    pub ratios: [f64; 3],
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

impl DatasetSplit {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (
            self.train_ids.len(),
            self.val_ids.len(),
            self.test_ids.len(),
        )
    }
}

/// Shuffles `ids` with a Fisher–Yates pass driven by xoshiro256** seeded from
/// `seed`, then cuts at `floor(N·r_train)` and `floor(N·(r_train + r_val))`.
/// Whatever is left goes to the test list.
pub fn split_dataset(ids: &[String], ratios: [f64; 3], seed: u64) -> Result<DatasetSplit> {
    if ratios.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(Error::Validation(format!(
            "split ratios must be positive, got {ratios:?}"
        )));
    }
    let total: f64 = ratios.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Validation(format!(
            "split ratios must sum to 1, got {total}"
        )));
    }
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::Validation(format!("duplicate sample id {id:?}")));
        }
    }

    let mut order: Vec<String> = ids.to_vec();
    let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }

    let n = order.len() as f64;
    let cut_train = (n * ratios[0]).floor() as usize;
    let cut_val = ((n * (ratios[0] + ratios[1])).floor() as usize).min(order.len());
    let test_ids = order.split_off(cut_val);
    let val_ids = order.split_off(cut_train);
    Ok(DatasetSplit {
        seed,
        ratios,
        train_ids: order,
        val_ids,
        test_ids,
    })
}
