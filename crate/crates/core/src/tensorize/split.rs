use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Result, TensorizeError, TrajectorySet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.7,
            val: 0.15,
            test: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub seed: u64,
}

impl SplitAssignment {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train_ids.len(), self.val_ids.len(), self.test_ids.len())
    }
}

/// Seeded trajectory-level split: `⌊train·K⌋` to train, `⌊val·K⌋` to
/// validation, the remainder to test.
pub fn split_trajectories(set: &TrajectorySet, ratios: SplitRatios, seed: u64) -> Result<SplitAssignment> {
    let k = set.trajectory_ids.len();
    if k < 3 {
        return Err(TensorizeError::TooFewTrajectories(k));
    }
    let mut ids = set.trajectory_ids.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let n_train = (ratios.train * k as f64).floor() as usize;
    let n_val = ((ratios.val * k as f64).floor() as usize).min(k - n_train);
    let test_ids = ids.split_off(n_train + n_val);
    let val_ids = ids.split_off(n_train);
    Ok(SplitAssignment {
        train_ids: ids,
        val_ids,
        test_ids,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::super::DrifterRecord;
    use super::*;
    use chrono::{TimeZone, Utc};
    use proptest::prelude::*;

    fn set_with(k: usize) -> TrajectorySet {
        let t = Utc.with_ymd_and_hms(2021, 10, 1, 0, 0, 0).unwrap();
        TrajectorySet::from_records(
            (0..k)
                .map(|i| DrifterRecord {
                    trajectory_id: format!("traj-{i:02}"),
                    timestamp: t,
                    lat: 27.0,
                    lon: -80.0,
                    salinity: Some(35.0),
                    covariates: Default::default(),
                })
                .collect(),
        )
    }

    #[test]
    fn twenty_ids_give_14_3_3_deterministically() {
        let set = set_with(20);
        let a = split_trajectories(&set, SplitRatios::default(), 42).unwrap();
        let b = split_trajectories(&set, SplitRatios::default(), 42).unwrap();
        assert_eq!(a.sizes(), (14, 3, 3));
        assert_eq!(a, b);
    }

    #[test]
    fn three_ids_leave_validation_empty() {
        // ⌊0.7·3⌋ = 2, ⌊0.15·3⌋ = 0, remainder 1
        let a = split_trajectories(&set_with(3), SplitRatios::default(), 42).unwrap();
        assert_eq!(a.sizes(), (2, 0, 1));
    }

    #[test]
    fn too_few() {
        assert!(matches!(
            split_trajectories(&set_with(2), SplitRatios::default(), 1),
            Err(TensorizeError::TooFewTrajectories(2))
        ));
    }

    proptest! {
        #[test]
        fn split_is_a_partition(k in 3usize..60, seed in any::<u64>()) {
            let set = set_with(k);
            let s = split_trajectories(&set, SplitRatios::default(), seed).unwrap();
            let mut all: Vec<String> = s.train_ids.iter().chain(&s.val_ids).chain(&s.test_ids).cloned().collect();
            all.sort();
            let mut expected = set.trajectory_ids.clone();
            expected.sort();
            prop_assert_eq!(all, expected);
        }
    }
}
