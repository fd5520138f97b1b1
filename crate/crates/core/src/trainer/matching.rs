use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::pose_center;

/// Anchor-to-person assignment for one scene.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    /// `matched[z]` lists the anchors assigned to person `z`, nearest first.
    pub matched: Vec<Vec<usize>>,
    /// Every anchor not in `matched`, ascending.
    pub negatives: Vec<usize>,
    /// Person of each anchor, if any.
    pub label: Vec<Option<usize>>,
}

impl Assignment {
    pub fn positives(&self) -> usize {
        self.matched.iter().map(Vec::len).sum()
    }
}

/// Assigns each person its `w` nearest anchors by pose-center distance.
/// Pairs are visited in order of increasing distance (ties: lower person,
/// then lower anchor); a pair is taken when the anchor is free and the
/// person still needs anchors.
pub fn match_anchors(
    gts: &[Vec<Vector3<f64>>],
    anchors: &[Vec<Vector3<f64>>],
    w: usize,
) -> Result<Assignment> {
    let (z, k) = (gts.len(), anchors.len());
    if w == 0 || k < w * z {
        return Err(Error::InsufficientAnchors {
            anchors: k,
            persons: z,
            w,
        });
    }
    let gc: Vec<Vector3<f64>> = gts.iter().map(|g| pose_center(g)).collect();
    let ac: Vec<Vector3<f64>> = anchors.iter().map(|a| pose_center(a)).collect();
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(z * k);
    for (p, g) in gc.iter().enumerate() {
        for (a, c) in ac.iter().enumerate() {
            pairs.push(((g - c).norm(), p, a));
        }
    }
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut label = vec![None; k];
    let mut matched = vec![Vec::with_capacity(w); z];
    let mut remaining = w * z;
    for (_, p, a) in pairs {
        if remaining == 0 {
            break;
        }
        if label[a].is_none() && matched[p].len() < w {
            label[a] = Some(p);
            matched[p].push(a);
            remaining -= 1;
        }
    }
    let negatives = (0..k).filter(|&a| label[a].is_none()).collect();
    Ok(Assignment {
        matched,
        negatives,
        label,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::tpose_at;
    use proptest::prelude::*;

    fn grid(g: usize, spacing: f64) -> Vec<Vec<Vector3<f64>>> {
        (0..g * g)
            .map(|i| tpose_at((i % g) as f64 * spacing, (i / g) as f64 * spacing))
            .collect()
    }

    #[test]
    fn single_gt_single_anchor() {
        let anchors = grid(4, 1000.0);
        let gt = vec![tpose_at(2100.0, 950.0)];
        let a = match_anchors(&gt, &anchors, 1).unwrap();
        assert_eq!(a.matched, vec![vec![6]]);
        assert_eq!(a.negatives.len(), 15);
    }

    #[test]
    fn too_few_anchors() {
        let anchors = grid(2, 1000.0);
        let gts = vec![tpose_at(0.0, 0.0), tpose_at(500.0, 0.0)];
        assert!(matches!(
            match_anchors(&gts, &anchors, 3),
            Err(Error::InsufficientAnchors {
                anchors: 4,
                persons: 2,
                w: 3
            })
        ));
    }

    /// Brute force: repeatedly take the globally closest (needy person, free
    /// anchor) pair.
    fn brute(
        gts: &[Vec<Vector3<f64>>],
        anchors: &[Vec<Vector3<f64>>],
        w: usize,
    ) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); gts.len()];
        let mut free = vec![true; anchors.len()];
        for _ in 0..w * gts.len() {
            let mut best: Option<(f64, usize, usize)> = None;
            for (p, g) in gts.iter().enumerate() {
                if out[p].len() == w {
                    continue;
                }
                for (a, an) in anchors.iter().enumerate() {
                    if !free[a] {
                        continue;
                    }
                    let d = (pose_center(g) - pose_center(an)).norm();
                    if best.is_none_or(|b| d < b.0) {
                        best = Some((d, p, a));
                    }
                }
            }
            let (_, p, a) = best.unwrap();
            free[a] = false;
            out[p].push(a);
        }
        out
    }

    #[test]
    fn matches_brute_force_on_random_scenes() {
        use rand::{Rng, SeedableRng};
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let anchors = grid(8, 500.0);
        for _ in 0..200 {
            let z = r.random_range(1..=5);
            let gts: Vec<_> = (0..z)
                .map(|_| tpose_at(r.random_range(0.0..3500.0), r.random_range(0.0..3500.0)))
                .collect();
            let w = r.random_range(1..=6);
            let a = match_anchors(&gts, &anchors, w).unwrap();
            assert_eq!(a.matched, brute(&gts, &anchors, w));
            assert_eq!(a.positives() + a.negatives.len(), 64);
        }
    }

    #[test]
    fn rematching_is_identical() {
        let anchors = grid(8, 500.0);
        let gts = vec![tpose_at(1234.0, 2222.0), tpose_at(300.0, 100.0)];
        assert_eq!(
            match_anchors(&gts, &anchors, 5).unwrap(),
            match_anchors(&gts, &anchors, 5).unwrap()
        );
    }

    proptest! {
        #[test]
        fn relabeling_anchors_permutes_the_assignment(
            seed in 0u64..1000,
            xs in proptest::collection::vec((0.0f64..3500.0, 0.0f64..3500.0), 1..4),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let anchors: Vec<_> = (0..36)
                .map(|i| tpose_at((i % 6) as f64 * 700.0 + (i as f64) * 0.37, (i / 6) as f64 * 700.0))
                .collect();
            let gts: Vec<_> = xs.iter().map(|&(x, y)| tpose_at(x, y)).collect();
            let mut perm: Vec<usize> = (0..36).collect();
            perm.shuffle(&mut r);
            // anchors_p[i] = anchors[perm[i]]
            let anchors_p: Vec<_> = perm.iter().map(|&i| anchors[i].clone()).collect();
            let a = match_anchors(&gts, &anchors, 5).unwrap();
            let b = match_anchors(&gts, &anchors_p, 5).unwrap();
            for z in 0..gts.len() {
                let mapped: Vec<usize> = b.matched[z].iter().map(|&i| perm[i]).collect();
                prop_assert_eq!(&mapped, &a.matched[z]);
            }
        }
    }
}
