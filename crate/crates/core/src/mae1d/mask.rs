use crate::numcore::{NumError, Result};
use crate::rng::Rng;

use super::config::mask_keep_count;

/// Deterministic partition of patch indices into visible and masked sets.
///
/// `visible_idx` followed by `masked_idx` is exactly the shuffled order the
/// plan was drawn in; `restore_perm[t]` is the position of temporal patch `t`
/// within that shuffled order, so gathering a shuffled sequence with
/// `restore_perm` restores temporal order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskPlan {
    visible_idx: Vec<usize>,
    masked_idx: Vec<usize>,
    restore_perm: Vec<usize>,
}

impl MaskPlan {
    /// Plan with every patch visible, in temporal order.
    pub fn full_visible(len: usize) -> Self {
        MaskPlan {
            visible_idx: (0..len).collect(),
            masked_idx: Vec::new(),
            restore_perm: (0..len).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.visible_idx.len() + self.masked_idx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn visible_idx(&self) -> &[usize] {
        &self.visible_idx
    }

    pub fn masked_idx(&self) -> &[usize] {
        &self.masked_idx
    }

    pub fn restore_perm(&self) -> &[usize] {
        &self.restore_perm
    }

    pub fn n_visible(&self) -> usize {
        self.visible_idx.len()
    }

    pub fn n_masked(&self) -> usize {
        self.masked_idx.len()
    }

    pub fn is_masked(&self, patch: usize) -> bool {
        self.masked_idx.contains(&patch)
    }
}

/// Draws a uniform random mask plan by argsorting seeded noise. The visible
/// count is `floor(len * (1 - mask_ratio))`; the same seed always yields the
/// same plan.
pub fn random_mask(len: usize, mask_ratio: f64, seed: u64) -> Result<MaskPlan> {
    if !(0.0..1.0).contains(&mask_ratio) {
        return Err(NumError::InvalidArgument {
            op: "random_mask",
            detail: format!("mask_ratio {mask_ratio} outside [0, 1)"),
        });
    }
    let keep = mask_keep_count(len, mask_ratio);
    let mut rng = Rng::new(seed);
    let shuffled = rng.noise_argsort(len);
    let visible_idx = shuffled[..keep].to_vec();
    let masked_idx = shuffled[keep..].to_vec();
    let mut restore_perm = vec![0usize; len];
    for (pos, &t) in shuffled.iter().enumerate() {
        restore_perm[t] = pos;
    }
    Ok(MaskPlan { visible_idx, masked_idx, restore_perm })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_match_floor_rule() {
        let plan = random_mask(25, 0.75, 1).unwrap();
        assert_eq!(plan.n_visible(), 6);
        assert_eq!(plan.n_masked(), 19);
        assert_eq!(plan.len(), 25);
    }

    #[test]
    fn zero_ratio_keeps_everything() {
        let plan = random_mask(10, 0.0, 3).unwrap();
        assert_eq!(plan.n_visible(), 10);
        assert!(plan.masked_idx().is_empty());
    }

    #[test]
    fn partition_and_bijection_invariants() {
        for seed in 0..20 {
            let plan = random_mask(17, 0.6, seed).unwrap();
            let mut seen = [false; 17];
            for &i in plan.visible_idx().iter().chain(plan.masked_idx()) {
                assert!(!seen[i], "index {i} repeated");
                seen[i] = true;
            }
            assert!(seen.iter().all(|&s| s));
            // restore_perm maps shuffled order back to temporal order.
            let shuffled: Vec<usize> =
                plan.visible_idx().iter().chain(plan.masked_idx()).copied().collect();
            for t in 0..17 {
                assert_eq!(shuffled[plan.restore_perm()[t]], t);
            }
        }
    }

    #[test]
    fn same_seed_same_plan() {
        assert_eq!(random_mask(25, 0.75, 42).unwrap(), random_mask(25, 0.75, 42).unwrap());
        assert_ne!(
            random_mask(25, 0.75, 42).unwrap().visible_idx(),
            random_mask(25, 0.75, 43).unwrap().visible_idx()
        );
    }

    #[test]
    fn masked_frequency_is_uniform_over_seeds() {
        // Monte-Carlo check: with L=25 and ratio 0.75, every index should be
        // masked in about 19/25 of draws.
        let draws = 1000;
        let mut masked_counts = [0usize; 25];
        for seed in 0..draws {
            let plan = random_mask(25, 0.75, seed).unwrap();
            for &i in plan.masked_idx() {
                masked_counts[i] += 1;
            }
        }
        let expected = 19.0 / 25.0;
        for (i, &count) in masked_counts.iter().enumerate() {
            let freq = count as f64 / draws as f64;
            assert!(
                (freq - expected).abs() <= 0.03,
                "index {i}: frequency {freq} vs expected {expected}"
            );
        }
    }

    #[test]
    fn invalid_ratio_rejected() {
        assert!(random_mask(10, 1.0, 0).is_err());
        assert!(random_mask(10, -0.1, 0).is_err());
    }
}
