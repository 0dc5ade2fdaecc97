//! Case-level ROC AUC (Mann-Whitney with tie credit) and a seeded
//! percentile bootstrap for its confidence interval.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::preprocess::percentile_of_sorted;

/// Default bootstrap resample count.
pub const BOOTSTRAP_RESAMPLES: usize = 2000;
/// Confidence-interval percentiles.
pub const CI_LOW_PCT: f64 = 2.5;
pub const CI_HIGH_PCT: f64 = 97.5;
/// Single-class resamples are redrawn at most this many times each.
pub const MAX_REDRAWS: usize = 1000;

/// Mann-Whitney AUC: concordant pairs count 1, tied scores count 0.5,
/// normalized by `n_pos * n_neg`. Computed via average ranks, which is
/// algebraically the same pair count. Errors when inputs are empty,
/// lengths differ, or only one class is present.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Input(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::Input("empty score list".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Input("scores must be finite".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::DegenerateData(format!(
            "AUC needs both classes, got {n_pos} positive / {n_neg} negative"
        )));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]));

    // average ranks over tie groups, 1-based
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if labels[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Point estimate plus percentile-bootstrap interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BootstrapAuc {
    pub auc: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

fn resample_rng(seed: u64, resample: u64) -> ChaCha8Rng {
    // independent substream per resample index: key = (seed, counter)
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&resample.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// The bootstrap AUC distribution itself, one value per resample, in
/// resample order. Each resample draws `n` cases with replacement from its
/// own counter-derived stream, so the result is independent of scheduling.
/// Resamples that come up single-class are redrawn from the same stream,
/// at most [`MAX_REDRAWS`] times each.
pub fn bootstrap_auc_distribution(
    scores: &[f64],
    labels: &[bool],
    n_resamples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    auc(scores, labels)?; // validates shape and class balance
    if n_resamples == 0 {
        return Err(Error::Input("need at least one resample".into()));
    }
    let n = scores.len();
    (0..n_resamples as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = resample_rng(seed, r);
            for _ in 0..MAX_REDRAWS {
                let mut s = Vec::with_capacity(n);
                let mut l = Vec::with_capacity(n);
                for _ in 0..n {
                    let i = rng.random_range(0..n);
                    s.push(scores[i]);
                    l.push(labels[i]);
                }
                if l.iter().any(|&x| x) && l.iter().any(|&x| !x) {
                    return auc(&s, &l);
                }
            }
            Err(Error::DegenerateData(format!(
                "resample {r} stayed single-class after {MAX_REDRAWS} redraws"
            )))
        })
        .collect()
}

/// Seeded percentile bootstrap: point estimate on the full sample, CI from
/// the 2.5th/97.5th percentiles of the resample distribution.
pub fn bootstrap_auc(
    scores: &[f64],
    labels: &[bool],
    n_resamples: usize,
    seed: u64,
) -> Result<BootstrapAuc> {
    let point = auc(scores, labels)?;
    let mut dist = bootstrap_auc_distribution(scores, labels, n_resamples, seed)?;
    dist.sort_by(|a, b| a.total_cmp(b));
    Ok(BootstrapAuc {
        auc: point,
        ci_low: percentile_of_sorted(&dist, CI_LOW_PCT),
        ci_high: percentile_of_sorted(&dist, CI_HIGH_PCT),
    })
}
