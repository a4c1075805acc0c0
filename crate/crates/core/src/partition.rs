//! IID and label-skewed assignment of samples to workers.

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Sample indices per worker plus the skew bookkeeping.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub assignments: Vec<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skew: Option<SkewInfo>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkewInfo {
    pub n_total: usize,
    pub n_skew: usize,
    pub dominant_class: Vec<usize>,
    /// Dominant-class samples each worker was short of `n_skew`.
    pub shortfall: Vec<usize>,
}

impl PartitionPlan {
    pub fn m(&self) -> usize {
        self.assignments.len()
    }
}

/// Random permutation split into `m` contiguous chunks whose sizes differ by
/// at most one; the first `n % m` workers get the larger size.
pub fn iid_partition(n_samples: usize, m: usize, rng: &mut RngStream) -> Result<PartitionPlan> {
    if m == 0 || n_samples < m {
        return Err(Error::invalid(
            "n_samples",
            format!("{n_samples} samples cannot cover {m} workers"),
        ));
    }
    let mut perm: Vec<usize> = (0..n_samples).collect();
    perm.shuffle(rng);
    let base = n_samples / m;
    let extra = n_samples % m;
    let mut assignments = Vec::with_capacity(m);
    let mut start = 0;
    for i in 0..m {
        let len = base + usize::from(i < extra);
        assignments.push(perm[start..start + len].to_vec());
        start += len;
    }
    Ok(PartitionPlan {
        assignments,
        skew: None,
    })
}

/// Each worker gets `n_skew` samples of its dominant class (worker `i` owns
/// class `i mod num_classes`), then `n_total - n_skew` samples drawn uniformly
/// from the unassigned samples of the other classes.
///
/// Dominant-class picks for all workers happen before any filling, so early
/// workers' fills cannot starve later workers of their dominant class. When a
/// dominant class runs out, the shortfall is recorded and filled from the
/// remainder instead.
pub fn label_skew_partition(
    labels: &[usize],
    m: usize,
    n_total: usize,
    n_skew: usize,
    rng: &mut RngStream,
) -> Result<PartitionPlan> {
    if m == 0 {
        return Err(Error::invalid("m", "need at least one worker"));
    }
    if n_skew > n_total {
        return Err(Error::invalid("n_skew", format!("{n_skew} exceeds n_total {n_total}")));
    }
    if m * n_total > labels.len() {
        return Err(Error::invalid(
            "n_total",
            format!("{m} workers x {n_total} samples exceeds the {} available", labels.len()),
        ));
    }
    let num_classes = labels.iter().max().map_or(0, |c| c + 1);

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &c) in labels.iter().enumerate() {
        by_class[c].push(i);
    }
    for pool in &mut by_class {
        pool.shuffle(rng);
    }

    let dominant_class: Vec<usize> = (0..m).map(|i| i % num_classes).collect();
    let mut assignments: Vec<Vec<usize>> = vec![Vec::with_capacity(n_total); m];
    let mut shortfall = vec![0; m];
    for (i, &class) in dominant_class.iter().enumerate() {
        let pool = &mut by_class[class];
        let take = n_skew.min(pool.len());
        assignments[i].extend(pool.drain(pool.len() - take..));
        shortfall[i] = n_skew - take;
    }

    for i in 0..m {
        let need = n_total - assignments[i].len();
        let mut others: Vec<usize> = by_class
            .iter()
            .enumerate()
            .filter(|&(c, _)| c != dominant_class[i])
            .flat_map(|(_, p)| p.iter().copied())
            .collect();
        // Only fall back to the dominant class once the others are exhausted.
        if others.len() < need {
            others.extend(by_class[dominant_class[i]].iter().copied());
        }
        others.sort_unstable();
        let picked: Vec<usize> = others.choose_multiple(rng, need).copied().collect();
        for &s in &picked {
            let pool = &mut by_class[labels[s]];
            let pos = pool.iter().position(|&x| x == s).expect("picked from pool");
            pool.swap_remove(pos);
        }
        assignments[i].extend(picked);
    }

    Ok(PartitionPlan {
        assignments,
        skew: Some(SkewInfo {
            n_total,
            n_skew,
            dominant_class,
            shortfall,
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Purpose;
    use std::collections::BTreeSet;

    fn rng() -> RngStream {
        RngStream::shared(11, Purpose::Partition)
    }

    #[test]
    fn iid_even_split() {
        let plan = iid_partition(4, 2, &mut rng()).unwrap();
        assert_eq!(plan.assignments.iter().map(Vec::len).collect::<Vec<_>>(), [2, 2]);
    }

    #[test]
    fn iid_uneven_split_and_coverage() {
        let plan = iid_partition(5, 2, &mut rng()).unwrap();
        assert_eq!(plan.assignments.iter().map(Vec::len).collect::<Vec<_>>(), [3, 2]);
        let all: BTreeSet<usize> = plan.assignments.iter().flatten().copied().collect();
        assert_eq!(all, (0..5).collect());
    }

    #[test]
    fn iid_too_few_samples() {
        assert!(iid_partition(1, 2, &mut rng()).is_err());
    }

    #[test]
    fn maximal_skew_is_single_class() {
        let labels: Vec<usize> = (0..400).map(|i| i % 4).collect();
        let plan = label_skew_partition(&labels, 4, 50, 50, &mut rng()).unwrap();
        for (i, a) in plan.assignments.iter().enumerate() {
            assert_eq!(a.len(), 50);
            assert!(a.iter().all(|&s| labels[s] == i % 4));
        }
    }

    #[test]
    fn shortfall_is_recorded_and_filled() {
        // Class 1 has only 3 samples.
        let mut labels = vec![0; 30];
        labels.extend([1, 1, 1]);
        let plan = label_skew_partition(&labels, 2, 10, 8, &mut rng()).unwrap();
        let skew = plan.skew.unwrap();
        assert_eq!(skew.shortfall, [0, 5]);
        assert_eq!(plan.assignments[1].len(), 10);
    }

    #[test]
    fn insufficient_pool_rejected() {
        let labels = vec![0; 10];
        assert!(label_skew_partition(&labels, 3, 4, 2, &mut rng()).is_err());
    }

    #[test]
    fn sixteen_workers_scaled_down() {
        // 16 workers, 125 samples each with 80 from one class. The
        // pool is twice what the workers take so fills never need to fall back
        // to a dominant class.
        let labels: Vec<usize> = (0..4000).map(|i| i % 10).collect();
        let plan = label_skew_partition(&labels, 16, 125, 80, &mut rng()).unwrap();
        assert_eq!(plan.m(), 16);
        for (i, a) in plan.assignments.iter().enumerate() {
            assert_eq!(a.len(), 125);
            assert_eq!(a.iter().filter(|&&s| labels[s] == i % 10).count(), 80);
        }
        assert!(plan.skew.unwrap().shortfall.iter().all(|&s| s == 0));
    }
}
