//! Imbalance-aware epoch construction: repeat-factor sampling, class-aware
//! round-robin batches, and per-class inverse-frequency / class-balanced
//! weight schemes.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetSplit, DatasetStats};
use crate::taxonomy::POS;

/// Repeat-factor sampling plan for one epoch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RepeatPlan {
    /// Per-instance repeat factor, always >= 1.
    pub repeat_factor: Vec<f64>,
    /// Materialized, shuffled instance indices for one epoch.
    pub epoch_indices: Vec<usize>,
    pub threshold: f64,
    pub seed: u64,
}

/// Repeat factor r_i = max(1, max over positive classes c of sqrt(t / f_c)),
/// where f_c is the instance-level frequency of class c. Fractional repeats
/// are rounded stochastically (or ceiled when `deterministic_ceil` is set),
/// and the epoch index list is shuffled, all seeded.
pub fn compute_repeat_factors(
    stats: &DatasetStats,
    split: &DatasetSplit,
    t: f64,
    seed: u64,
    deterministic_ceil: bool,
) -> RepeatPlan {
    assert!(t > 0.0 && t <= 1.0, "threshold must be in (0, 1]");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut repeat_factor = Vec::with_capacity(split.records.len());
    let mut epoch_indices = Vec::new();
    for (i, record) in split.records.iter().enumerate() {
        let mut r: f64 = 1.0;
        for (c, &label) in record.labels.iter().enumerate() {
            if label == POS {
                r = r.max((t / stats.image_freq[c]).sqrt());
            }
        }
        repeat_factor.push(r);
        let mut copies = r.floor() as usize;
        let frac = r.fract();
        if frac > 0.0 {
            if deterministic_ceil || rng.gen_range(0.0..1.0) < frac {
                copies += 1;
            }
        }
        epoch_indices.extend(std::iter::repeat(i).take(copies));
    }
    epoch_indices.shuffle(&mut rng);
    RepeatPlan { repeat_factor, epoch_indices, threshold: t, seed }
}

/// w_c proportional to (n_pos_c)^-alpha, normalized to sum C. Zero counts
/// floor to 1.
pub fn inverse_frequency_weights(stats: &DatasetStats, alpha: f64) -> Vec<f64> {
    let c = stats.n_pos.len();
    let mut w: Vec<f64> = stats
        .n_pos
        .iter()
        .map(|&n| (n.max(1) as f64).powf(-alpha))
        .collect();
    let sum: f64 = w.iter().sum();
    for v in w.iter_mut() {
        *v *= c as f64 / sum;
    }
    w
}

/// w_c proportional to 1 / E_n with effective number E_n = (1 - beta^n) /
/// (1 - beta), normalized to sum C.
pub fn class_balanced_weights(stats: &DatasetStats, beta: f64) -> Vec<f64> {
    assert!((0.0..1.0).contains(&beta), "beta must be in [0, 1)");
    let c = stats.n_pos.len();
    let mut w: Vec<f64> = stats
        .n_pos
        .iter()
        .map(|&n| {
            let n = n.max(1) as f64;
            let effective = if beta == 0.0 { 1.0 } else { (1.0 - beta.powf(n)) / (1.0 - beta) };
            1.0 / effective
        })
        .collect();
    let sum: f64 = w.iter().sum();
    for v in w.iter_mut() {
        *v *= c as f64 / sum;
    }
    w
}

/// Round-robin over classes with at least one positive instance: for each
/// slot, advance the class cursor and pick a uniformly random instance
/// positive for that class. Deterministic per seed.
pub fn class_aware_sample(split: &DatasetSplit, batch_size: usize, seed: u64) -> Vec<usize> {
    assert!(batch_size >= 1);
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); split.num_classes];
    for (i, record) in split.records.iter().enumerate() {
        for (c, &label) in record.labels.iter().enumerate() {
            if label == POS {
                per_class[c].push(i);
            }
        }
    }
    let active: Vec<usize> = (0..split.num_classes).filter(|&c| !per_class[c].is_empty()).collect();
    assert!(!active.is_empty(), "no class has a positive instance");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..batch_size)
        .map(|slot| {
            let pool = &per_class[active[slot % active.len()]];
            pool[rng.gen_range(0..pool.len())]
        })
        .collect()
}
