//! Test-score statistics: Spearman's rho, Pearson's r, optimal
//! single-threshold classifier accuracy, ranking accuracy and the
//! subset-resampling bootstrap.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DivError, Result};

/// Diversity-parameter values paired with metric scores.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    params: Vec<f64>,
    scores: Vec<f64>,
}

impl PairedSample {
    pub fn new(params: Vec<f64>, scores: Vec<f64>) -> Result<Self> {
        if params.len() != scores.len() {
            return Err(DivError::InvalidInput(format!(
                "params and scores differ in length ({} vs {})",
                params.len(),
                scores.len()
            )));
        }
        if params.len() < 3 {
            return Err(DivError::InvalidInput(format!(
                "need at least 3 pairs, got {}",
                params.len()
            )));
        }
        if params.iter().chain(&scores).any(|v| !v.is_finite()) {
            return Err(DivError::InvalidInput("non-finite value in sample".into()));
        }
        Ok(Self { params, scores })
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    fn subset(&self, idx: &[usize]) -> Self {
        Self {
            params: idx.iter().map(|&i| self.params[i]).collect(),
            scores: idx.iter().map(|&i| self.scores[i]).collect(),
        }
    }
}

/// 1-based ranks with ties given the mean of the ranks they span.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

fn correlation(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(DivError::Degenerate("parameter side is constant".into()));
    }
    if syy == 0.0 {
        return Err(DivError::Degenerate("score side is constant".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn spearman_rho(sample: &PairedSample) -> Result<f64> {
    correlation(&midranks(&sample.params), &midranks(&sample.scores))
}

pub fn pearson_r(sample: &PairedSample) -> Result<f64> {
    correlation(&sample.params, &sample.scores)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdFit {
    pub accuracy: f64,
    /// Scores strictly above the threshold are predicted high.
    pub threshold: f64,
}

/// Best accuracy of the rule "predict high iff score > threshold".
///
/// Candidate thresholds are a sentinel below the minimum, the midpoints
/// between adjacent distinct scores and a sentinel above the maximum. Ties in
/// accuracy go to the smallest threshold.
pub fn oca(scores_low: &[f64], scores_high: &[f64]) -> Result<ThresholdFit> {
    if scores_low.is_empty() || scores_high.is_empty() {
        return Err(DivError::InvalidInput(
            "both classes need at least one score".into(),
        ));
    }
    let mut all: Vec<(f64, bool)> = scores_low
        .iter()
        .map(|&s| (s, false))
        .chain(scores_high.iter().map(|&s| (s, true)))
        .collect();
    if all.iter().any(|(s, _)| !s.is_finite()) {
        return Err(DivError::InvalidInput("non-finite score".into()));
    }
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total = all.len() as f64;

    // Threshold below everything: all predicted high.
    let mut correct = scores_high.len() as i64;
    let mut best = ThresholdFit {
        accuracy: correct as f64 / total,
        threshold: all[0].0 - 1.0,
    };
    let mut i = 0;
    while i < all.len() {
        let value = all[i].0;
        while i < all.len() && all[i].0 == value {
            correct += if all[i].1 { -1 } else { 1 };
            i += 1;
        }
        let threshold = match all.get(i) {
            Some(&(next, _)) => value + (next - value) / 2.0,
            None => value + 1.0,
        };
        let accuracy = correct as f64 / total;
        if accuracy > best.accuracy {
            best = ThresholdFit {
                accuracy,
                threshold,
            };
        }
    }
    Ok(best)
}

/// Fraction of pairs whose parameter and score differences share a sign.
/// A zero score difference is a miss.
pub fn ranking_accuracy(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(DivError::InvalidInput("no pairs".into()));
    }
    if let Some(i) = pairs.iter().position(|&(dp, _)| dp == 0.0) {
        return Err(DivError::InvalidInput(format!(
            "pair {i} has zero parameter difference"
        )));
    }
    let hits = pairs
        .iter()
        .filter(|&&(dp, ds)| ds != 0.0 && (dp > 0.0) == (ds > 0.0))
        .count();
    Ok(hits as f64 / pairs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    Spearman,
    Pearson,
}

impl Statistic {
    pub fn compute(self, sample: &PairedSample) -> Result<f64> {
        match self {
            Statistic::Spearman => spearman_rho(sample),
            Statistic::Pearson => pearson_r(sample),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub subset_size: usize,
    pub repeats: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub mean: f64,
    /// Population standard deviation over repeats.
    pub std: f64,
    /// Draws discarded because the subset was degenerate.
    pub retries: usize,
}

/// Redraws allowed per requested repeat before giving up.
const MAX_RETRIES_PER_REPEAT: usize = 100;

/// Draw `k` of `0..n` without replacement (partial Fisher-Yates), returned
/// in ascending order.
pub fn draw_subset(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k.min(n) {
        let j = rng.gen_range(i..n);
        idx.swap(i, j);
    }
    idx.truncate(k);
    idx.sort_unstable();
    idx
}

/// Repeatedly compute `stat` on uniform subsets drawn without replacement.
pub fn bootstrap(sample: &PairedSample, cfg: &BootstrapConfig, stat: Statistic) -> Result<BootstrapResult> {
    if cfg.repeats == 0 {
        return Err(DivError::InvalidInput("repeats must be >= 1".into()));
    }
    if cfg.subset_size < 3 || cfg.subset_size > sample.len() {
        return Err(DivError::InvalidInput(format!(
            "subset size {} must be in [3, {}]",
            cfg.subset_size,
            sample.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut values = Vec::with_capacity(cfg.repeats);
    let mut retries = 0;
    while values.len() < cfg.repeats {
        let idx = draw_subset(&mut rng, sample.len(), cfg.subset_size);
        match stat.compute(&sample.subset(&idx)) {
            Ok(v) => values.push(v),
            Err(DivError::Degenerate(_)) if retries < cfg.repeats * MAX_RETRIES_PER_REPEAT => {
                retries += 1
            }
            Err(e) => return Err(e),
        }
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok(BootstrapResult {
        mean,
        std: var.sqrt(),
        retries,
    })
}

/// Output of one meta-evaluation test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub test: String,
    pub metric: String,
    pub rho: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pearson: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oca: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oca_threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bootstrap_mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bootstrap_std: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bootstrap_retries: Option<usize>,
    pub n_sets: usize,
    pub seed: u64,
}
