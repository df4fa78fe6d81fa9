use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::points::dist2;
use crate::{Error, Result};

/// Partition of anchor tokens into per-seed clusters.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub seed_count: usize,
    pub anchor_count: usize,
    /// Owning seed of each anchor.
    pub owner: Vec<usize>,
    /// Sorted anchor indices per seed; may be empty.
    pub members: Vec<Vec<usize>>,
}

impl ClusterAssignment {
    pub fn from_owner(seed_count: usize, owner: Vec<usize>) -> Result<Self> {
        let mut members = vec![Vec::new(); seed_count];
        for (j, &o) in owner.iter().enumerate() {
            if o >= seed_count {
                return Err(Error::invalid(format!(
                    "anchor {j} owned by seed {o} of {seed_count}"
                )));
            }
            members[o].push(j);
        }
        Ok(Self {
            seed_count,
            anchor_count: owner.len(),
            owner,
            members,
        })
    }

    /// Uniform budget: slot `j` belongs to seed `j mod S`, so seed `s` owns slot
    /// `s` plus every `S`-th slot after it, `N/S` slots in all and the first
    /// `N mod S` seeds one extra.
    pub fn uniform(seed_count: usize, anchor_count: usize) -> Result<Self> {
        if seed_count == 0 || seed_count > anchor_count {
            return Err(Error::invalid(format!(
                "cannot spread {anchor_count} anchors over {seed_count} seeds"
            )));
        }
        Self::from_owner(seed_count, (0..anchor_count).map(|j| j % seed_count).collect())
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.members.iter().map(|m| m.len()).collect()
    }
}

/// Assigns every anchor to its nearest seed; ties go to the lower seed index.
pub fn cluster_partition(seeds: &[[f64; 3]], anchors: &[[f64; 3]]) -> Result<ClusterAssignment> {
    if seeds.is_empty() || anchors.is_empty() {
        return Err(Error::invalid("cluster partition needs seeds and anchors"));
    }
    let owner = anchors
        .iter()
        .map(|a| {
            let mut best = (0, f64::INFINITY);
            for (s, p) in seeds.iter().enumerate() {
                let d = dist2(a, p);
                if d < best.1 {
                    best = (s, d);
                }
            }
            best.0
        })
        .collect();
    ClusterAssignment::from_owner(seeds.len(), owner)
}

/// Repeats each seed token over its cluster: row `j` is `seed_tokens[owner[j]]`.
/// Returns the aligned tokens and the owner map.
pub fn repeat_align(
    seed_tokens: &Array2<f64>,
    assignment: &ClusterAssignment,
) -> Result<(Array2<f64>, Vec<usize>)> {
    if seed_tokens.nrows() != assignment.seed_count {
        return Err(Error::invalid(format!(
            "{} seed tokens but the assignment covers {} seeds",
            seed_tokens.nrows(),
            assignment.seed_count
        )));
    }
    let d = seed_tokens.ncols();
    let out = Array2::from_shape_fn((assignment.anchor_count, d), |(j, c)| {
        seed_tokens[[assignment.owner[j], c]]
    });
    Ok((out, assignment.owner.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::farthest_point_sampling;
    use proptest::prelude::*;

    #[test]
    fn single_seed_owns_everything() {
        let a = cluster_partition(&[[0.0; 3]], &[[1.0, 0.0, 0.0], [0.0, 5.0, 0.0]]).unwrap();
        assert_eq!(a.owner, vec![0, 0]);
        assert_eq!(a.members, vec![vec![0, 1]]);
    }

    #[test]
    fn strict_nearest() {
        let s = [[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]];
        let a = [[-0.9, 0.0, 0.0], [0.9, 0.0, 0.0]];
        assert_eq!(cluster_partition(&s, &a).unwrap().owner, vec![1, 0]);
    }

    #[test]
    fn equidistant_goes_to_lower_seed() {
        let s = [[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]];
        assert_eq!(cluster_partition(&s, &[[0.0; 3]]).unwrap().owner, vec![0]);
    }

    #[test]
    fn repeat_align_examples() {
        let t = ndarray::array![[1.0, 2.0], [3.0, 4.0]];
        let id = ClusterAssignment::from_owner(2, vec![0, 1]).unwrap();
        assert_eq!(repeat_align(&t, &id).unwrap().0, t);
        let one = ndarray::array![[7.0, 8.0]];
        let all = ClusterAssignment::from_owner(1, vec![0; 4]).unwrap();
        let (out, map) = repeat_align(&one, &all).unwrap();
        assert_eq!(out.nrows(), 4);
        assert!(out.rows().into_iter().all(|r| r == one.row(0)));
        assert_eq!(map, vec![0; 4]);
        assert!(repeat_align(&t, &all).is_err());
    }

    #[test]
    fn uniform_budget() {
        let a = ClusterAssignment::uniform(3, 8).unwrap();
        assert_eq!(a.sizes(), vec![3, 3, 2]);
        assert_eq!(a.owner, vec![0, 1, 2, 0, 1, 2, 0, 1]);
        assert!(ClusterAssignment::uniform(9, 8).is_err());
    }

    fn cloud() -> impl Strategy<Value = Vec<[f64; 3]>> {
        prop::collection::vec(prop::array::uniform3(-1.0f64..1.0), 8..64)
    }

    proptest! {
        #[test]
        fn members_form_exact_partition(anchors in cloud(), s in 1usize..8) {
            let seeds = &anchors[..s.min(anchors.len())];
            let a = cluster_partition(seeds, &anchors).unwrap();
            let mut all: Vec<usize> = a.members.concat();
            all.sort();
            prop_assert_eq!(all, (0..anchors.len()).collect::<Vec<_>>());
            prop_assert_eq!(a.sizes().iter().sum::<usize>(), anchors.len());
        }

        #[test]
        fn fps_seeds_own_themselves(anchors in cloud(), s in 1usize..8) {
            let idx = farthest_point_sampling(&anchors, s, 0).unwrap();
            let seeds: Vec<[f64; 3]> = idx.iter().map(|&i| anchors[i]).collect();
            let a = cluster_partition(&seeds, &anchors).unwrap();
            for (k, &i) in idx.iter().enumerate() {
                // a duplicate point earlier in the seed list may claim it instead
                let first = seeds.iter().position(|p| *p == anchors[i]).unwrap();
                prop_assert_eq!(a.owner[i], first);
                prop_assert!(first <= k);
            }
        }

        #[test]
        fn repeat_align_length_matches_anchors(owner in prop::collection::vec(0usize..4, 1..50)) {
            let t = Array2::from_shape_fn((4, 3), |(i, j)| (i * 3 + j) as f64);
            let a = ClusterAssignment::from_owner(4, owner.clone()).unwrap();
            let (out, _) = repeat_align(&t, &a).unwrap();
            prop_assert_eq!(out.nrows(), owner.len());
        }
    }
}
