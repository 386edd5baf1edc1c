//! A stand-in generator for decoding-parameter sweeps. Responses are token
//! sequences sampled i.i.d. from a softmax over a fixed, skewed logit
//! profile, optionally truncated (top-p / top-k), so that diversity is a
//! monotone function of the sweep parameter.

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::corpus::{LabeledSet, ParamKind, ResponseSet};
use crate::error::{DivError, Result};

/// Which decoding knob the sweep values set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sweep {
    /// Softmax temperature `tau > 0`.
    Temperature,
    /// Nucleus mass `p` in `(0, 1]`.
    TopP,
    /// `log10(k)`; `k = round(10^v)` tokens kept.
    Log10TopK,
}

impl Sweep {
    pub fn param_kind(self) -> ParamKind {
        match self {
            Sweep::Temperature => ParamKind::Temperature,
            Sweep::TopP => ParamKind::TopP,
            Sweep::Log10TopK => ParamKind::Log10TopK,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub base_logits: Vec<f64>,
    pub response_length: usize,
    pub sets_per_value: usize,
    pub set_size: usize,
    pub seed: u64,
}

impl SyntheticConfig {
    /// Zipf-like profile: logit of the token at rank `r` is `-skew * ln(r)`.
    pub fn zipf(vocab_size: usize, skew: f64) -> Self {
        let base_logits = (1..=vocab_size).map(|r| -skew * (r as f64).ln()).collect();
        Self {
            base_logits,
            response_length: 8,
            sets_per_value: 10,
            set_size: 10,
            seed: 0,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.base_logits.len()
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(DivError::InvalidInput(m.to_owned()));
        if self.vocab_size() < 2 {
            return bad("vocabulary needs at least 2 tokens");
        }
        if self.base_logits.iter().any(|l| !l.is_finite()) {
            return bad("base logits must be finite");
        }
        if self.response_length == 0 || self.set_size == 0 || self.sets_per_value == 0 {
            return bad("response length, set size and sets per value must be >= 1");
        }
        Ok(())
    }
}

/// `softmax(logits / temperature)`, computed with the max subtracted.
pub fn softmax(logits: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !temperature.is_finite() || temperature <= 0.0 {
        return Err(DivError::InvalidInput(format!(
            "temperature must be > 0, got {temperature}"
        )));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| ((l - max) / temperature).exp()).collect();
    let z: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / z).collect())
}

/// Token indices sorted by descending probability, ties by index.
fn by_probability(probs: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    order
}

fn renormalize_kept(probs: &[f64], kept: &[usize]) -> Vec<f64> {
    let z: f64 = kept.iter().map(|&i| probs[i]).sum();
    let mut out = vec![0.0; probs.len()];
    for &i in kept {
        out[i] = probs[i] / z;
    }
    out
}

/// Keep the smallest prefix of most-likely tokens whose mass reaches `p`.
pub fn truncate_top_p(probs: &[f64], p: f64) -> Result<Vec<f64>> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(DivError::InvalidInput(format!("top-p must be in (0, 1], got {p}")));
    }
    let order = by_probability(probs);
    let mut mass = 0.0;
    let mut kept = Vec::new();
    for i in order {
        kept.push(i);
        mass += probs[i];
        if mass >= p {
            break;
        }
    }
    Ok(renormalize_kept(probs, &kept))
}

pub fn truncate_top_k(probs: &[f64], k: usize) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(DivError::InvalidInput("top-k needs k >= 1".into()));
    }
    let order = by_probability(probs);
    let kept = &order[..k.min(probs.len())];
    Ok(renormalize_kept(probs, kept))
}

/// Token distribution for one sweep value.
pub fn distribution(cfg: &SyntheticConfig, sweep: Sweep, value: f64) -> Result<Vec<f64>> {
    match sweep {
        Sweep::Temperature => softmax(&cfg.base_logits, value),
        Sweep::TopP => truncate_top_p(&softmax(&cfg.base_logits, 1.0)?, value),
        Sweep::Log10TopK => {
            if !value.is_finite() || value < 0.0 {
                return Err(DivError::InvalidInput(format!(
                    "log10(k) must be >= 0, got {value}"
                )));
            }
            let k = 10f64.powf(value).round() as usize;
            truncate_top_k(&softmax(&cfg.base_logits, 1.0)?, k)
        }
    }
}

/// Shannon entropy in nats.
pub fn entropy(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>()
}

fn token_name(i: usize) -> String {
    format!("w{i}")
}

/// Generate `sets_per_value` labeled sets for every sweep value.
///
/// Value `v` at position `i` draws from its own ChaCha stream `i` under the
/// configured seed, so output does not depend on scheduling.
pub fn generate(cfg: &SyntheticConfig, sweep: Sweep, values: &[f64]) -> Result<Vec<LabeledSet>> {
    cfg.validate()?;
    if values.is_empty() {
        return Err(DivError::InvalidInput("no sweep values".into()));
    }
    let dists = values
        .iter()
        .map(|&v| distribution(cfg, sweep, v))
        .collect::<Result<Vec<_>>>()?;
    let per_value: Vec<Vec<LabeledSet>> = dists
        .par_iter()
        .zip(values.par_iter())
        .enumerate()
        .map(|(vi, (probs, &value))| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(vi as u64);
            let sampler = WeightedIndex::new(probs).expect("probabilities are valid weights");
            (0..cfg.sets_per_value)
                .map(|si| {
                    let responses: Vec<String> = (0..cfg.set_size)
                        .map(|_| {
                            (0..cfg.response_length)
                                .map(|_| token_name(sampler.sample(&mut rng)))
                                .collect::<Vec<_>>()
                                .join(" ")
                        })
                        .collect();
                    let set = ResponseSet::new(
                        format!("synth-{vi:04}-{si:03}"),
                        format!("context {vi}.{si}"),
                        responses,
                    );
                    LabeledSet::new(set, sweep.param_kind(), value)
                })
                .collect()
        })
        .collect();
    Ok(per_value.into_iter().flatten().collect())
}

/// `count` evenly spaced values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..count)
            .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ngram::{distinct_n, NGramConfig};
    use approx::assert_abs_diff_eq;

    fn small() -> SyntheticConfig {
        SyntheticConfig {
            sets_per_value: 3,
            set_size: 5,
            seed: 11,
            ..SyntheticConfig::zipf(50, 1.5)
        }
    }

    #[test]
    fn softmax_sums_to_one() {
        let cfg = SyntheticConfig::zipf(200, 2.0);
        for t in [1e-6, 0.2, 1.0, 7.5, 1e6] {
            let p = softmax(&cfg.base_logits, t).unwrap();
            assert_abs_diff_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
        }
        assert!(softmax(&cfg.base_logits, 0.0).is_err());
        assert!(softmax(&cfg.base_logits, -1.0).is_err());
    }

    #[test]
    fn entropy_increases_with_temperature() {
        let cfg = SyntheticConfig::zipf(100, 1.5);
        let h: Vec<f64> = linspace(0.05, 5.0, 200)
            .iter()
            .map(|&t| entropy(&softmax(&cfg.base_logits, t).unwrap()))
            .collect();
        assert!(h.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn near_zero_temperature_repeats_argmax() {
        let cfg = small();
        let sets = generate(&cfg, Sweep::Temperature, &[1e-6]).unwrap();
        for s in &sets {
            assert!(s.set.responses.iter().all(|r| r == &["w0"; 8].join(" ")));
        }
        let uni = NGramConfig::new(1, 1, true).unwrap();
        // one distinct token out of 5 * 8
        assert_abs_diff_eq!(distinct_n(&sets[0].set, &uni).unwrap(), 1.0 / 40.0);
    }

    #[test]
    fn huge_temperature_is_nearly_uniform() {
        let cfg = SyntheticConfig {
            sets_per_value: 2,
            set_size: 10,
            seed: 5,
            ..SyntheticConfig::zipf(5000, 1.5)
        };
        let sets = generate(&cfg, Sweep::Temperature, &[1e6]).unwrap();
        for s in &sets {
            assert!(distinct_n(&s.set, &NGramConfig::default()).unwrap() > 0.95);
        }
    }

    #[test]
    fn nonpositive_temperature_rejected() {
        assert!(generate(&small(), Sweep::Temperature, &[0.5, 0.0]).is_err());
        assert!(generate(&small(), Sweep::Temperature, &[]).is_err());
    }

    #[test]
    fn seeded_output_is_identical() {
        let a = generate(&small(), Sweep::Temperature, &[0.3, 0.9]).unwrap();
        let b = generate(&small(), Sweep::Temperature, &[0.3, 0.9]).unwrap();
        assert_eq!(a, b);
        let c = generate(&SyntheticConfig { seed: 12, ..small() }, Sweep::Temperature, &[0.3, 0.9]).unwrap();
        assert_ne!(a, c);
        assert_eq!(a.len(), 6);
        assert_eq!(a[3].param_value, 0.9);
        assert_eq!(a[3].set.id, "synth-0001-000");
    }

    #[test]
    fn truncation() {
        let p = vec![0.5, 0.3, 0.15, 0.05];
        let t = truncate_top_p(&p, 0.8).unwrap();
        assert_abs_diff_eq!(t[0], 0.625);
        assert_abs_diff_eq!(t[1], 0.375);
        assert_eq!(t[2], 0.0);
        let k = truncate_top_k(&p, 1).unwrap();
        assert_eq!(k, vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(truncate_top_k(&p, 10).unwrap().iter().filter(|&&x| x > 0.0).count(), 4);
        assert!(truncate_top_p(&p, 0.0).is_err());
    }

    #[test]
    fn top_k_sweep_uses_log10() {
        let cfg = SyntheticConfig::zipf(1000, 1.0);
        let d = distribution(&cfg, Sweep::Log10TopK, 2.0).unwrap();
        assert_eq!(d.iter().filter(|&&x| x > 0.0).count(), 100);
        let sets = generate(&small(), Sweep::Log10TopK, &[0.0]).unwrap();
        assert_eq!(sets[0].param_kind, ParamKind::Log10TopK);
        assert!(sets[0].set.responses.iter().all(|r| r.split(' ').all(|t| t == "w0")));
    }

    #[test]
    fn linspace_endpoints() {
        let v = linspace(0.2, 1.2, 100);
        assert_eq!(v.len(), 100);
        assert_eq!(v[0], 0.2);
        assert_abs_diff_eq!(v[99], 1.2, epsilon = 1e-15);
    }
}
