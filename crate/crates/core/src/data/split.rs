use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Split};
use crate::error::{HydraError, Result};

/// Which training records keep their labels. Indices point into
/// `Dataset::records`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub labelled_budget: usize,
    pub labelled: Vec<usize>,
    pub unlabelled: Vec<usize>,
}

impl SplitPlan {
    pub fn labelled_ids<'a>(&'a self, data: &'a Dataset) -> impl Iterator<Item = &'a str> + 'a {
        self.labelled.iter().map(|&i| data.records[i].id.as_str())
    }
}

/// Per-class quotas: `budget / C` each, the remainder going one apiece to
/// the lowest class indices.
pub fn stratified_quotas(budget: usize, classes: usize) -> Vec<usize> {
    (0..classes)
        .map(|c| budget / classes + usize::from(c < budget % classes))
        .collect()
}

/// Draws a class-stratified labelled subset of exactly `budget` training
/// records. The rest of the training split becomes the unlabelled pool.
pub fn make_split(data: &Dataset, budget: usize, seed: u64) -> Result<SplitPlan> {
    let c = data.num_classes();
    let train: Vec<usize> = data.indices(Split::Train).collect();
    if budget > train.len() {
        return Err(HydraError::Argument(format!(
            "budget {budget} exceeds the {} training records",
            train.len()
        )));
    }
    if budget < c {
        return Err(HydraError::Argument(format!(
            "budget {budget} cannot cover {c} classes"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![false; data.records.len()];
    let mut labelled = Vec::with_capacity(budget);
    for (class, quota) in stratified_quotas(budget, c).into_iter().enumerate() {
        let mut pool: Vec<usize> = train
            .iter()
            .copied()
            .filter(|&i| data.records[i].class_id == class)
            .collect();
        if pool.len() < quota {
            return Err(HydraError::Argument(format!(
                "class `{}` has {} training records, budget needs {quota}",
                data.classes[class],
                pool.len()
            )));
        }
        pool.shuffle(&mut rng);
        for &i in &pool[..quota] {
            chosen[i] = true;
            labelled.push(i);
        }
    }
    let unlabelled = train.into_iter().filter(|&i| !chosen[i]).collect();
    Ok(SplitPlan {
        labelled_budget: budget,
        labelled,
        unlabelled,
    })
}
