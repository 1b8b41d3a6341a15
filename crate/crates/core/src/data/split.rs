use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::BagDataset;
use crate::error::{MilError, Result};

/// Case ids per partition, each in dataset order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    /// Classes too small to be spread across all three partitions.
    pub warnings: Vec<String>,
}

impl Split {
    pub fn get(&self, name: &str) -> Result<&[String]> {
        match name {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => Ok(&self.test),
            other => Err(MilError::Input(format!("unknown split {other:?} (train, val, test)"))),
        }
    }
}

/// Splits cases by class so every partition keeps the class proportions
/// (within one case per class).
pub fn stratified_split(ds: &BagDataset, fractions: [f64; 3], seed: u64) -> Result<Split> {
    if fractions.iter().any(|f| !(f.is_finite() && *f >= 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(MilError::Config(format!(
            "split fractions {fractions:?} must be nonnegative and sum to 1"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0u8; ds.len()];
    let mut split = Split::default();
    for class in 0..ds.n_classes() {
        let mut members: Vec<usize> = (0..ds.len()).filter(|&i| ds.cases()[i].label == class).collect();
        let n = members.len();
        if n == 0 {
            continue;
        }
        if n < 3 {
            let msg = format!(
                "class {} has only {n} case(s); partitions get a best-effort assignment",
                ds.class_names()[class]
            );
            log::warn!("{msg}");
            split.warnings.push(msg);
        }
        members.shuffle(&mut rng);
        let n_train = ((fractions[0] * n as f64).round() as usize).min(n);
        let n_val = ((fractions[1] * n as f64).round() as usize).min(n - n_train);
        for (k, &i) in members.iter().enumerate() {
            assignment[i] = if k < n_train {
                0
            } else if k < n_train + n_val {
                1
            } else {
                2
            };
        }
    }
    for (i, part) in assignment.into_iter().enumerate() {
        let id = ds.cases()[i].case_id.clone();
        match part {
            0 => split.train.push(id),
            1 => split.val.push(id),
            _ => split.test.push(id),
        }
    }
    Ok(split)
}
