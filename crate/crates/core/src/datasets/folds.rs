use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FoldStrategy {
    #[default]
    Random,
    /// Every region tag lands in exactly one fold.
    ByRegion,
}

/// Fold membership for every sample, in input order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub k: usize,
    pub ids: Vec<String>,
    pub assignment: Vec<usize>,
}

/// Fold roles for one cross-validation round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Round {
    pub test_fold: usize,
    pub validation_fold: usize,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Assigns samples to `k` folds. Random shuffles and deals round-robin;
/// by-region places whole region groups, largest first, into the currently
/// smallest fold.
pub fn make_folds(
    ids: &[&str],
    regions: &[&str],
    k: usize,
    seed: u64,
    strategy: FoldStrategy,
) -> Result<FoldSplit> {
    assert_eq!(ids.len(), regions.len(), "one region tag per sample");
    if k < 3 {
        return Err(Error::InvalidConfig(format!(
            "need at least 3 folds, got {k}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0; ids.len()];
    match strategy {
        FoldStrategy::Random => {
            if ids.len() < k {
                return Err(Error::TooFewSamples {
                    samples: ids.len(),
                    folds: k,
                });
            }
            let mut order: Vec<usize> = (0..ids.len()).collect();
            order.shuffle(&mut rng);
            for (pos, &i) in order.iter().enumerate() {
                assignment[i] = pos % k;
            }
        }
        FoldStrategy::ByRegion => {
            let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for (i, r) in regions.iter().enumerate() {
                groups.entry(r).or_default().push(i);
            }
            if groups.len() < k {
                return Err(Error::TooFewSamples {
                    samples: groups.len(),
                    folds: k,
                });
            }
            let mut groups: Vec<Vec<usize>> = groups.into_values().collect();
            groups.shuffle(&mut rng);
            groups.sort_by_key(|g| std::cmp::Reverse(g.len()));
            let mut sizes = vec![0usize; k];
            for g in groups {
                let f = (0..k).min_by_key(|&f| (sizes[f], f)).expect("k > 0");
                sizes[f] += g.len();
                for i in g {
                    assignment[i] = f;
                }
            }
        }
    }
    Ok(FoldSplit {
        k,
        ids: ids.iter().map(|s| s.to_string()).collect(),
        assignment,
    })
}

impl FoldSplit {
    pub fn members(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] == fold)
            .collect()
    }

    pub fn fold_of(&self, id: &str) -> Option<usize> {
        self.ids
            .iter()
            .position(|s| s == id)
            .map(|i| self.assignment[i])
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignment {
            sizes[f] += 1;
        }
        sizes
    }

    /// Round `i` tests on fold `i` and validates on fold `(i + 1) mod k`.
    pub fn round(&self, i: usize) -> Round {
        let test_fold = i % self.k;
        let validation_fold = (i + 1) % self.k;
        let mut r = Round {
            test_fold,
            validation_fold,
            train: Vec::new(),
            validation: Vec::new(),
            test: Vec::new(),
        };
        for (s, &f) in self.assignment.iter().enumerate() {
            if f == test_fold {
                r.test.push(s);
            } else if f == validation_fold {
                r.validation.push(s);
            } else {
                r.train.push(s);
            }
        }
        r
    }

    pub fn rounds(&self) -> impl Iterator<Item = Round> + '_ {
        (0..self.k).map(|i| self.round(i))
    }
}
