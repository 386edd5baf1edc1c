//! Meta-evaluation tests: decoding-parameter correlation, content-class
//! separation, pairwise ranking, the HDS stability sweep, and nuggets
//! subsampling.

use std::collections::{BTreeMap, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    aggregate_abs_ratings, aggregate_sim_ratings, LabeledSet, MetricScore, ParamKind, Question,
    RatingRecord, ResponseSet,
};
use crate::error::{DivError, Result};
use crate::ngram::{distinct_n, NGramConfig, NGramCosine};
use crate::reduction::{reduce_to_diversity, SimilarityMetric};
use crate::stats::{
    bootstrap, draw_subset, oca, pearson_r, ranking_accuracy, spearman_rho, BootstrapConfig,
    PairedSample, Statistic, TestReport,
};

/// A set-level diversity metric; higher means more diverse.
///
/// Takes `&mut self` so that metrics backed by an external process can keep
/// it alive across calls.
pub trait DiversityMetric {
    fn name(&self) -> String;
    fn score_sets(&mut self, sets: &[&ResponseSet]) -> Result<Vec<f64>>;
}

impl<M: DiversityMetric + ?Sized> DiversityMetric for Box<M> {
    fn name(&self) -> String {
        (**self).name()
    }
    fn score_sets(&mut self, sets: &[&ResponseSet]) -> Result<Vec<f64>> {
        (**self).score_sets(sets)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct DistinctN {
    pub cfg: NGramConfig,
}

impl DistinctN {
    pub fn new(cfg: NGramConfig) -> Self {
        Self { cfg }
    }
}

impl DiversityMetric for DistinctN {
    fn name(&self) -> String {
        "distinct-n".into()
    }

    fn score_sets(&mut self, sets: &[&ResponseSet]) -> Result<Vec<f64>> {
        sets.par_iter().map(|s| distinct_n(s, &self.cfg)).collect()
    }
}

/// Any similarity metric turned into a diversity metric by the reduction.
#[derive(Debug, Clone)]
pub struct ReducedSimilarity<S> {
    pub sim: S,
    name: String,
}

impl<S: SimilarityMetric> ReducedSimilarity<S> {
    pub fn new(sim: S) -> Self {
        let name = format!("{}-div", sim.name());
        Self { sim, name }
    }
}

/// n-gram cosine similarity, reduced.
pub fn cos_sim_div(cfg: NGramConfig) -> ReducedSimilarity<NGramCosine> {
    ReducedSimilarity::new(NGramCosine::new(cfg))
}

impl<S: SimilarityMetric> DiversityMetric for ReducedSimilarity<S> {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn score_sets(&mut self, sets: &[&ResponseSet]) -> Result<Vec<f64>> {
        sets.par_iter().map(|s| reduce_to_diversity(&self.sim, s)).collect()
    }
}

/// Scores looked up by set id (score files, human ratings).
#[derive(Debug, Clone, Default)]
pub struct PrecomputedScores {
    name: String,
    scores: HashMap<String, f64>,
}

impl PrecomputedScores {
    pub fn new(name: impl Into<String>, scores: impl IntoIterator<Item = (String, f64)>) -> Self {
        Self {
            name: name.into(),
            scores: scores.into_iter().collect(),
        }
    }

    pub fn renamed(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Build from a scores file. With `metric` set, only matching records
    /// are used; otherwise every record must be for the same metric.
    pub fn from_records(records: &[MetricScore], metric: Option<&str>) -> Result<Self> {
        let wanted: Vec<&MetricScore> = match metric {
            Some(m) => records.iter().filter(|r| r.metric == m).collect(),
            None => records.iter().collect(),
        };
        let name = match metric {
            Some(m) => m.to_owned(),
            None => {
                let first = wanted.first().map(|r| r.metric.clone()).unwrap_or_default();
                if let Some(other) = wanted.iter().find(|r| r.metric != first) {
                    return Err(DivError::InvalidInput(format!(
                        "scores file mixes metrics {first:?} and {:?}",
                        other.metric
                    )));
                }
                first
            }
        };
        Ok(Self::new(
            name,
            wanted.into_iter().map(|r| (r.set_id.clone(), r.score)),
        ))
    }

    /// absHDS / aspHDS: mean rating per set.
    pub fn from_abs_ratings(ratings: &[RatingRecord], question: Question) -> Result<Self> {
        let relevant: Vec<RatingRecord> = ratings
            .iter()
            .filter(|r| r.question == question)
            .cloned()
            .collect();
        let agg = aggregate_abs_ratings(&relevant, question)?;
        let name = match question {
            Question::Abs => "abs-hds",
            Question::AspForm => "asp-form-hds",
            Question::AspContent => "asp-content-hds",
            _ => unreachable!("rejected by aggregate_abs_ratings"),
        };
        Ok(Self::new(name, agg.into_iter().map(|(id, s)| (id, s.mean))))
    }

    /// simHDS for every given set.
    pub fn from_sim_ratings(ratings: &[RatingRecord], sets: &[&ResponseSet]) -> Result<Self> {
        let scores = sets
            .iter()
            .map(|s| Ok((s.id.clone(), aggregate_sim_ratings(ratings, s)?.score)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new("sim-hds", scores))
    }
}

impl DiversityMetric for PrecomputedScores {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn score_sets(&mut self, sets: &[&ResponseSet]) -> Result<Vec<f64>> {
        sets.iter()
            .map(|s| {
                self.scores.get(&s.id).copied().ok_or_else(|| {
                    DivError::InvalidInput(format!("no {} score for set {:?}", self.name, s.id))
                })
            })
            .collect()
    }
}

/// Score sets and check every score is finite.
pub fn score_sets<M: DiversityMetric + ?Sized>(metric: &mut M, sets: &[&ResponseSet]) -> Result<Vec<MetricScore>> {
    let name = metric.name();
    let values = metric.score_sets(sets)?;
    if values.len() != sets.len() {
        return Err(DivError::InvalidInput(format!(
            "metric {name} returned {} scores for {} sets",
            values.len(),
            sets.len()
        )));
    }
    sets.iter()
        .zip(values)
        .map(|(s, v)| {
            if !v.is_finite() {
                return Err(DivError::InvalidInput(format!(
                    "metric {name} gave non-finite score for set {:?}",
                    s.id
                )));
            }
            Ok(MetricScore {
                set_id: s.id.clone(),
                metric: name.clone(),
                score: v,
            })
        })
        .collect()
}

pub fn score_labeled<M: DiversityMetric + ?Sized>(metric: &mut M, data: &[LabeledSet]) -> Result<Vec<MetricScore>> {
    let sets: Vec<&ResponseSet> = data.iter().map(|d| &d.set).collect();
    score_sets(metric, &sets)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TestOptions {
    pub bootstrap: Option<BootstrapConfig>,
    pub seed: u64,
}

fn uniform_kind(data: &[LabeledSet]) -> Result<ParamKind> {
    let first = data
        .first()
        .ok_or_else(|| DivError::InvalidInput("empty dataset".into()))?
        .param_kind;
    if let Some(other) = data.iter().find(|d| d.param_kind != first) {
        return Err(DivError::InvalidInput(format!(
            "mixed param_kind: {} and {} (set {:?})",
            first.as_str(),
            other.param_kind.as_str(),
            other.id()
        )));
    }
    Ok(first)
}

fn check_scores(data: &[LabeledSet], scores: &[MetricScore]) -> Result<()> {
    if data.len() != scores.len() || data.iter().zip(scores).any(|(d, s)| d.id() != s.set_id) {
        return Err(DivError::InvalidInput(
            "scores do not line up with the dataset".into(),
        ));
    }
    Ok(())
}

fn base_report(test: &str, metric: &str, sample: &PairedSample, opts: &TestOptions) -> Result<TestReport> {
    let rho = spearman_rho(sample)?;
    let pearson = pearson_r(sample).ok();
    let boot = opts
        .bootstrap
        .map(|cfg| bootstrap(sample, &cfg, Statistic::Spearman))
        .transpose()?;
    Ok(TestReport {
        test: test.into(),
        metric: metric.into(),
        rho,
        pearson,
        oca: None,
        oca_threshold: None,
        accuracy: None,
        bootstrap_mean: boot.map(|b| b.mean),
        bootstrap_std: boot.map(|b| b.std),
        bootstrap_retries: boot.map(|b| b.retries),
        n_sets: sample.len(),
        seed: opts.bootstrap.map_or(opts.seed, |b| b.seed),
    })
}

/// decTest report from already computed scores (aligned with `data`).
pub fn dec_report(data: &[LabeledSet], scores: &[MetricScore], opts: &TestOptions) -> Result<TestReport> {
    let kind = uniform_kind(data)?;
    if kind == ParamKind::ContentClass {
        return Err(DivError::InvalidInput(
            "dec test needs a decoding parameter, got content_class".into(),
        ));
    }
    check_scores(data, scores)?;
    let sample = PairedSample::new(
        data.iter().map(|d| d.param_value).collect(),
        scores.iter().map(|s| s.score).collect(),
    )?;
    base_report("dec", metric_name(scores), &sample, opts)
}

fn metric_name(scores: &[MetricScore]) -> &str {
    scores.first().map_or("", |s| s.metric.as_str())
}

pub fn run_dec_test<M: DiversityMetric + ?Sized>(data: &[LabeledSet], metric: &mut M, opts: &TestOptions) -> Result<TestReport> {
    uniform_kind(data)?;
    let scores = score_labeled(metric, data)?;
    dec_report(data, &scores, opts)
}

/// Split scores by content class: `(low, high)`.
pub fn class_scores(data: &[LabeledSet], scores: &[MetricScore]) -> (Vec<f64>, Vec<f64>) {
    let mut low = Vec::new();
    let mut high = Vec::new();
    for (d, s) in data.iter().zip(scores) {
        if d.is_high_class() {
            high.push(s.score);
        } else {
            low.push(s.score);
        }
    }
    (low, high)
}

fn check_binary(data: &[LabeledSet]) -> Result<()> {
    if uniform_kind(data)? != ParamKind::ContentClass {
        return Err(DivError::InvalidInput(
            "con test needs content_class labels".into(),
        ));
    }
    let highs = data.iter().filter(|d| d.is_high_class()).count();
    if highs == 0 || highs == data.len() {
        return Err(DivError::InvalidInput(
            "con test needs both content classes present".into(),
        ));
    }
    Ok(())
}

/// conTest report from already computed scores (aligned with `data`).
pub fn con_report(data: &[LabeledSet], scores: &[MetricScore], opts: &TestOptions) -> Result<TestReport> {
    check_binary(data)?;
    check_scores(data, scores)?;
    let sample = PairedSample::new(
        data.iter().map(|d| d.param_value).collect(),
        scores.iter().map(|s| s.score).collect(),
    )?;
    let mut report = base_report("con", metric_name(scores), &sample, opts)?;
    let (low, high) = class_scores(data, scores);
    let fit = oca(&low, &high)?;
    report.oca = Some(fit.accuracy);
    report.oca_threshold = Some(fit.threshold);
    Ok(report)
}

pub fn run_con_test<M: DiversityMetric + ?Sized>(data: &[LabeledSet], metric: &mut M, opts: &TestOptions) -> Result<TestReport> {
    check_binary(data)?;
    let scores = score_labeled(metric, data)?;
    con_report(data, &scores, opts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub test: String,
    pub metric: String,
    /// Spearman over (parameter difference, score difference); absent when
    /// the score differences are constant.
    pub rho: Option<f64>,
    pub accuracy: f64,
    pub n_pairs: usize,
}

/// Ranking report from `(delta_param, delta_score)` pairs.
pub fn rank_report(metric: &str, deltas: &[(f64, f64)]) -> Result<RankReport> {
    let accuracy = ranking_accuracy(deltas)?;
    let rho = if deltas.len() >= 3 {
        let sample = PairedSample::new(
            deltas.iter().map(|d| d.0).collect(),
            deltas.iter().map(|d| d.1).collect(),
        )?;
        match spearman_rho(&sample) {
            Ok(r) => Some(r),
            Err(DivError::Degenerate(_)) => None,
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    Ok(RankReport {
        test: "rank".into(),
        metric: metric.into(),
        rho,
        accuracy,
        n_pairs: deltas.len(),
    })
}

/// Pair sets sharing a context, in order of first appearance. Each context
/// must hold an even number of sets; consecutive sets are paired.
pub fn pair_by_context(data: &[LabeledSet]) -> Result<Vec<(LabeledSet, LabeledSet)>> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: HashMap<&str, Vec<&LabeledSet>> = HashMap::new();
    for d in data {
        let entry = groups.entry(d.set.context.as_str()).or_default();
        if entry.is_empty() {
            order.push(&d.set.context);
        }
        entry.push(d);
    }
    let mut pairs = Vec::new();
    for ctx in order {
        let group = &groups[ctx];
        if !group.len().is_multiple_of(2) {
            return Err(DivError::InvalidInput(format!(
                "context {ctx:?} has {} sets; rank test needs pairs",
                group.len()
            )));
        }
        for chunk in group.chunks(2) {
            pairs.push((chunk[0].clone(), chunk[1].clone()));
        }
    }
    Ok(pairs)
}

pub fn run_rank_test<M: DiversityMetric + ?Sized>(pairs: &[(LabeledSet, LabeledSet)], metric: &mut M) -> Result<RankReport> {
    for (a, b) in pairs {
        if a.set.context != b.set.context {
            return Err(DivError::InvalidInput(format!(
                "sets {:?} and {:?} do not share a context",
                a.id(),
                b.id()
            )));
        }
        if a.param_kind != b.param_kind {
            return Err(DivError::InvalidInput(format!(
                "sets {:?} and {:?} differ in param_kind",
                a.id(),
                b.id()
            )));
        }
        if a.param_value == b.param_value {
            return Err(DivError::InvalidInput(format!(
                "sets {:?} and {:?} have equal param_value",
                a.id(),
                b.id()
            )));
        }
    }
    let sets: Vec<&ResponseSet> = pairs.iter().flat_map(|(a, b)| [&a.set, &b.set]).collect();
    let scores = score_sets(metric, &sets)?;
    let deltas: Vec<(f64, f64)> = pairs
        .iter()
        .zip(scores.chunks(2))
        .map(|((a, b), s)| (a.param_value - b.param_value, s[0].score - s[1].score))
        .collect();
    rank_report(&metric.name(), &deltas)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityGrid {
    pub set_counts: Vec<usize>,
    pub rating_counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityRow {
    pub n_sets: usize,
    pub n_ratings: usize,
    pub rho: Option<f64>,
    pub oca: Option<f64>,
    /// Why the cell has no result, if it has none.
    pub note: Option<String>,
}

/// conTest over absHDS computed from subsampled sets and per-set ratings,
/// for every (set count, rating count) cell of the grid.
///
/// Cell `c` (row-major over the grid) draws from ChaCha stream `c` under
/// `seed`.
pub fn run_stability(
    data: &[LabeledSet],
    ratings: &[RatingRecord],
    question: Question,
    grid: &StabilityGrid,
    seed: u64,
) -> Result<Vec<StabilityRow>> {
    check_binary(data)?;
    if matches!(question, Question::SimPair | Question::RankPair) {
        return Err(DivError::InvalidInput(format!(
            "stability sweep needs a whole-set question, got {}",
            question.as_str()
        )));
    }
    let mut per_set: BTreeMap<&str, Vec<i64>> = BTreeMap::new();
    for r in ratings.iter().filter(|r| r.question == question) {
        per_set.entry(r.set_id.as_str()).or_default().push(r.value);
    }
    let mut rows = Vec::new();
    let mut cell = 0u64;
    for &n_sets in &grid.set_counts {
        for &n_ratings in &grid.rating_counts {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(cell);
            cell += 1;
            rows.push(stability_cell(data, &per_set, question, n_sets, n_ratings, &mut rng));
        }
    }
    Ok(rows)
}

fn stability_cell(
    data: &[LabeledSet],
    per_set: &BTreeMap<&str, Vec<i64>>,
    question: Question,
    n_sets: usize,
    n_ratings: usize,
    rng: &mut ChaCha8Rng,
) -> StabilityRow {
    let mut row = StabilityRow {
        n_sets,
        n_ratings,
        rho: None,
        oca: None,
        note: None,
    };
    if n_sets > data.len() || n_ratings == 0 {
        row.note = Some(format!("unavailable: {} sets in data", data.len()));
        return row;
    }
    let chosen: Vec<LabeledSet> = draw_subset(rng, data.len(), n_sets)
        .into_iter()
        .map(|i| data[i].clone())
        .collect();
    let mut scores = Vec::with_capacity(chosen.len());
    for d in &chosen {
        let values = per_set.get(d.id()).map(Vec::as_slice).unwrap_or(&[]);
        if values.len() < n_ratings {
            row.note = Some(format!(
                "unavailable: set {:?} has {} ratings",
                d.id(),
                values.len()
            ));
            return row;
        }
        let picked = draw_subset(rng, values.len(), n_ratings);
        let mean = picked.iter().map(|&i| values[i]).sum::<i64>() as f64 / n_ratings as f64;
        scores.push(MetricScore {
            set_id: d.id().to_owned(),
            metric: format!("{}-hds", question.as_str()),
            score: mean,
        });
    }
    match con_report(&chosen, &scores, &TestOptions::default()) {
        Ok(report) => {
            row.rho = Some(report.rho);
            row.oca = report.oca;
        }
        Err(e) => row.note = Some(e.to_string()),
    }
    row
}

/// Rebalance a binary-labeled dataset so distinct-n carries no class signal:
/// sort by distinct-n (ties by id), cut into consecutive groups of
/// `group_size`, and from each group keep `min(#low, #high)` randomly chosen
/// sets of each class. The last group may be short. Output keeps input
/// order.
pub fn subsample_nuggets(
    data: &[LabeledSet],
    group_size: usize,
    cfg: &NGramConfig,
    seed: u64,
) -> Result<Vec<LabeledSet>> {
    if group_size < 2 {
        return Err(DivError::InvalidInput("group size must be >= 2".into()));
    }
    if data.is_empty() {
        return Ok(Vec::new());
    }
    if uniform_kind(data)? != ParamKind::ContentClass {
        return Err(DivError::InvalidInput(
            "nuggets subsampling needs content_class labels".into(),
        ));
    }
    let scores = score_labeled(&mut DistinctN::new(*cfg), data)?;
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.sort_by(|&a, &b| {
        scores[a]
            .score
            .total_cmp(&scores[b].score)
            .then_with(|| data[a].id().cmp(data[b].id()))
    });
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![false; data.len()];
    for group in order.chunks(group_size) {
        let (high, low): (Vec<usize>, Vec<usize>) =
            group.iter().partition(|&&i| data[i].is_high_class());
        let m = high.len().min(low.len());
        for class in [&low, &high] {
            for pick in draw_subset(&mut rng, class.len(), m) {
                keep[class[pick]] = true;
            }
        }
    }
    Ok(data
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(d, _)| d.clone())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::RatingTarget;
    use crate::synthetic::{generate, linspace, Sweep, SyntheticConfig};
    use approx::assert_abs_diff_eq;

    /// Scores each set with its own label, looked up by id.
    struct ParamEcho(HashMap<String, f64>);

    impl ParamEcho {
        fn of(data: &[LabeledSet]) -> Self {
            Self(data.iter().map(|d| (d.id().to_owned(), d.param_value)).collect())
        }
    }

    impl DiversityMetric for ParamEcho {
        fn name(&self) -> String {
            "echo".into()
        }
        fn score_sets(&mut self, sets: &[&ResponseSet]) -> Result<Vec<f64>> {
            Ok(sets.iter().map(|s| self.0[&s.id]).collect())
        }
    }

    struct Constant;

    impl DiversityMetric for Constant {
        fn name(&self) -> String {
            "constant".into()
        }
        fn score_sets(&mut self, sets: &[&ResponseSet]) -> Result<Vec<f64>> {
            Ok(vec![0.5; sets.len()])
        }
    }

    fn labeled(id: &str, ctx: &str, kind: ParamKind, v: f64) -> LabeledSet {
        LabeledSet::new(ResponseSet::new(id, ctx, ["a b", "c d"]), kind, v)
    }

    fn temp_data(n: usize) -> Vec<LabeledSet> {
        (0..n)
            .map(|i| labeled(&format!("s{i}"), &format!("c{i}"), ParamKind::Temperature, 0.2 + i as f64 * 0.1))
            .collect()
    }

    fn class_data(classes: &[f64]) -> Vec<LabeledSet> {
        classes
            .iter()
            .enumerate()
            .map(|(i, &c)| labeled(&format!("s{i}"), &format!("c{i}"), ParamKind::ContentClass, c))
            .collect()
    }

    #[test]
    fn dec_echo_is_perfect() {
        let data = temp_data(12);
        let r = run_dec_test(&data, &mut ParamEcho::of(&data), &TestOptions::default()).unwrap();
        assert_abs_diff_eq!(r.rho, 1.0);
        assert_eq!(r.n_sets, 12);
        assert!(r.oca.is_none() && r.bootstrap_mean.is_none());
    }

    #[test]
    fn dec_constant_is_degenerate() {
        let data = temp_data(5);
        assert!(matches!(
            run_dec_test(&data, &mut Constant, &TestOptions::default()),
            Err(DivError::Degenerate(_))
        ));
    }

    #[test]
    fn dec_rejects_mixed_and_content_kinds() {
        let mut data = temp_data(4);
        data[2].param_kind = ParamKind::TopP;
        assert!(matches!(
            run_dec_test(&data, &mut Constant, &TestOptions::default()),
            Err(DivError::InvalidInput(_))
        ));
        let binary = class_data(&[0.0, 1.0, 0.0, 1.0]);
        assert!(run_dec_test(&binary, &mut ParamEcho::of(&binary), &TestOptions::default()).is_err());
    }

    #[test]
    fn dec_with_bootstrap() {
        let data = temp_data(30);
        let opts = TestOptions {
            bootstrap: Some(BootstrapConfig { subset_size: 30, repeats: 5, seed: 9 }),
            seed: 9,
        };
        let r = run_dec_test(&data, &mut ParamEcho::of(&data), &opts).unwrap();
        assert_abs_diff_eq!(r.bootstrap_mean.unwrap(), 1.0);
        assert_abs_diff_eq!(r.bootstrap_std.unwrap(), 0.0);
        assert_eq!(r.seed, 9);
    }

    #[test]
    fn con_separated_and_independent() {
        let data = class_data(&[0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let r = run_con_test(&data, &mut ParamEcho::of(&data), &TestOptions::default()).unwrap();
        assert_eq!(r.oca, Some(1.0));
        assert_abs_diff_eq!(r.rho, 1.0);

        let same = PrecomputedScores::new(
            "same",
            [("s0", 0.1), ("s1", 0.2), ("s2", 0.3), ("s3", 0.1), ("s4", 0.2), ("s5", 0.3)]
                .map(|(k, v)| (k.to_string(), v)),
        );
        let r = run_con_test(&data, &mut same.clone(), &TestOptions::default()).unwrap();
        assert_eq!(r.oca, Some(0.5));
        assert_abs_diff_eq!(r.rho, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn con_needs_both_classes() {
        let data = class_data(&[1.0, 1.0, 1.0]);
        assert!(matches!(
            run_con_test(&data, &mut ParamEcho::of(&data), &TestOptions::default()),
            Err(DivError::InvalidInput(_))
        ));
        let temps = temp_data(4);
        assert!(run_con_test(&temps, &mut ParamEcho::of(&temps), &TestOptions::default()).is_err());
    }

    #[test]
    fn con_rho_positive_when_high_ranks_higher() {
        let data = class_data(&[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        let scores = PrecomputedScores::new(
            "m",
            [("s0", 0.1), ("s1", 0.4), ("s2", 0.5), ("s3", 0.6), ("s4", 0.2), ("s5", 0.3)]
                .map(|(k, v)| (k.to_string(), v)),
        );
        // mean rank high = (4+6+3)/3 > low = (1+5+2)/3
        let r = run_con_test(&data, &mut scores.clone(), &TestOptions::default()).unwrap();
        assert!(r.rho > 0.0);
    }

    fn rank_pairs() -> Vec<(LabeledSet, LabeledSet)> {
        (0..6)
            .map(|i| {
                let ctx = format!("ctx{i}");
                (
                    labeled(&format!("a{i}"), &ctx, ParamKind::Temperature, 0.2 + 0.1 * i as f64),
                    labeled(&format!("b{i}"), &ctx, ParamKind::Temperature, 1.0 - 0.05 * i as f64),
                )
            })
            .collect()
    }

    #[test]
    fn rank_echo_and_constant() {
        let pairs = rank_pairs();
        let all: Vec<LabeledSet> = pairs.iter().flat_map(|(a, b)| [a.clone(), b.clone()]).collect();
        let r = run_rank_test(&pairs, &mut ParamEcho::of(&all)).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_abs_diff_eq!(r.rho.unwrap(), 1.0);
        let c = run_rank_test(&pairs, &mut Constant).unwrap();
        assert_eq!(c.accuracy, 0.0);
        assert_eq!(c.rho, None);
    }

    #[test]
    fn rank_rejects_bad_pairs() {
        let mut pairs = rank_pairs();
        pairs[0].1.param_value = pairs[0].0.param_value;
        assert!(run_rank_test(&pairs, &mut Constant).is_err());
        let mut pairs = rank_pairs();
        pairs[1].1.set.context = "elsewhere".into();
        assert!(run_rank_test(&pairs, &mut Constant).is_err());
    }

    #[test]
    fn pairing_by_context() {
        let data = vec![
            labeled("x1", "cx", ParamKind::Temperature, 0.3),
            labeled("y1", "cy", ParamKind::Temperature, 0.3),
            labeled("x2", "cx", ParamKind::Temperature, 0.9),
            labeled("y2", "cy", ParamKind::Temperature, 0.5),
        ];
        let pairs = pair_by_context(&data).unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!((pairs[0].0.id(), pairs[0].1.id()), ("x1", "x2"));
        assert_eq!((pairs[1].0.id(), pairs[1].1.id()), ("y1", "y2"));
        assert!(pair_by_context(&data[..3]).is_err());
    }

    fn abs_rating(set: &str, rater: usize, value: i64) -> RatingRecord {
        RatingRecord {
            set_id: set.into(),
            rater_id: format!("r{rater}"),
            question: Question::Abs,
            target: None,
            value,
        }
    }

    /// Binary data with 10 noisy ratings per set; high sets rate higher on
    /// average.
    fn rated_data(n: usize, seed: u64) -> (Vec<LabeledSet>, Vec<RatingRecord>) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let classes: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
        let data = class_data(&classes);
        let mut ratings = Vec::new();
        for d in &data {
            let center = if d.is_high_class() { 3.6 } else { 2.4 };
            for r in 0..10 {
                let v = (center + rng.gen_range(-2.0..2.0f64)).round().clamp(1.0, 5.0) as i64;
                ratings.push(abs_rating(d.id(), r, v));
            }
        }
        (data, ratings)
    }

    #[test]
    fn stability_full_cell_equals_con_test() {
        let (data, ratings) = rated_data(40, 1);
        let mut hds = PrecomputedScores::from_abs_ratings(&ratings, Question::Abs).unwrap();
        let plain = run_con_test(&data, &mut hds, &TestOptions::default()).unwrap();
        let grid = StabilityGrid { set_counts: vec![40], rating_counts: vec![10] };
        let rows = run_stability(&data, &ratings, Question::Abs, &grid, 3).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].rho, Some(plain.rho));
        assert_eq!(rows[0].oca, plain.oca);
    }

    #[test]
    fn stability_marks_unavailable_cells() {
        let (data, ratings) = rated_data(20, 2);
        let grid = StabilityGrid { set_counts: vec![10, 50], rating_counts: vec![5, 11] };
        let rows = run_stability(&data, &ratings, Question::Abs, &grid, 0).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows[0].rho.is_some());
        assert!(rows[1].note.as_deref().unwrap().starts_with("unavailable"));
        assert!(rows[2].note.is_some() && rows[3].note.is_some());
    }

    fn rho_spread(data: &[LabeledSet], ratings: &[RatingRecord], n_sets: usize, n_ratings: usize) -> f64 {
        let grid = StabilityGrid { set_counts: vec![n_sets], rating_counts: vec![n_ratings] };
        let rhos: Vec<f64> = (0..40)
            .filter_map(|seed| run_stability(data, ratings, Question::Abs, &grid, seed).unwrap()[0].rho)
            .collect();
        let m = rhos.iter().sum::<f64>() / rhos.len() as f64;
        (rhos.iter().map(|r| (r - m).powi(2)).sum::<f64>() / rhos.len() as f64).sqrt()
    }

    #[test]
    fn fewer_ratings_vary_more() {
        let (data, ratings) = rated_data(60, 4);
        let one = rho_spread(&data, &ratings, 60, 1);
        let all = rho_spread(&data, &ratings, 60, 10);
        assert!(one > all, "{one} vs {all}");
        assert_abs_diff_eq!(all, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn more_sets_vary_less() {
        let (data, ratings) = rated_data(200, 5);
        let spreads: Vec<f64> = [20, 50, 100, 200]
            .iter()
            .map(|&n| rho_spread(&data, &ratings, n, 10))
            .collect();
        assert!(spreads.windows(2).all(|w| w[1] <= w[0]), "{spreads:?}");
    }

    #[test]
    fn nuggets_balanced_input_is_kept() {
        let classes: Vec<f64> = (0..20).map(|i| (i % 2) as f64).collect();
        let mut data = class_data(&classes);
        // identical distinct-n everywhere; sorting falls back to id, and
        // every group of 4 holds two of each class
        for d in &mut data {
            d.set.responses = vec!["x y".into(), "x z".into()];
        }
        data.sort_by(|a, b| a.id().cmp(b.id()));
        let out = subsample_nuggets(&data, 4, &NGramConfig::default(), 1).unwrap();
        assert_eq!(out, data);
    }

    #[test]
    fn nuggets_group_takes_minority_count() {
        // one group of 40: 5 low, 35 high -> 5 + 5
        let classes: Vec<f64> = (0..40).map(|i| if i < 5 { 0.0 } else { 1.0 }).collect();
        let data = class_data(&classes);
        let out = subsample_nuggets(&data, 40, &NGramConfig::default(), 3).unwrap();
        assert_eq!(out.len(), 10);
        assert_eq!(out.iter().filter(|d| d.is_high_class()).count(), 5);
    }

    #[test]
    fn nuggets_single_class_group_contributes_nothing() {
        let data = class_data(&[1.0, 1.0, 1.0]);
        assert!(subsample_nuggets(&data, 2, &NGramConfig::default(), 0).unwrap().is_empty());
        assert!(subsample_nuggets(&data, 1, &NGramConfig::default(), 0).is_err());
    }

    /// Two temperature populations relabeled as content classes, so that the
    /// class correlates with distinct-n while the distributions overlap.
    pub(crate) fn correlated_binary(per_class: usize, seed: u64) -> Vec<LabeledSet> {
        let cfg = SyntheticConfig {
            sets_per_value: 1,
            set_size: 5,
            response_length: 6,
            seed,
            ..SyntheticConfig::zipf(60, 1.2)
        };
        let low = generate(&cfg, Sweep::Temperature, &linspace(0.3, 0.8, per_class)).unwrap();
        let high = generate(&SyntheticConfig { seed: seed + 1, ..cfg }, Sweep::Temperature, &linspace(0.5, 1.0, per_class)).unwrap();
        low.into_iter()
            .map(|d| (d, 0.0, "lo"))
            .chain(high.into_iter().map(|d| (d, 1.0, "hi")))
            .map(|(mut d, class, tag)| {
                d.set.id = format!("{tag}-{}", d.set.id);
                d.param_kind = ParamKind::ContentClass;
                d.param_value = class;
                d
            })
            .collect()
    }

    #[test]
    fn nuggets_removes_distinct_n_signal() {
        let data = correlated_binary(150, 21);
        let cfg = NGramConfig::default();
        let before = run_con_test(&data, &mut DistinctN::new(cfg), &TestOptions::default()).unwrap();
        assert!(before.rho > 0.3, "{}", before.rho);
        let out = subsample_nuggets(&data, 40, &cfg, 8).unwrap();
        let highs = out.iter().filter(|d| d.is_high_class()).count();
        assert_eq!(highs * 2, out.len());
        let after = run_con_test(&out, &mut DistinctN::new(cfg), &TestOptions::default()).unwrap();
        assert!(after.rho.abs() < 0.1, "{}", after.rho);
        assert_eq!(out, subsample_nuggets(&data, 40, &cfg, 8).unwrap());
    }

    #[test]
    fn nuggets_groups_overlap() {
        let data = correlated_binary(100, 5);
        let cfg = NGramConfig::default();
        let out = subsample_nuggets(&data, 40, &cfg, 2).unwrap();
        let kept: std::collections::HashSet<&str> = out.iter().map(|d| d.id()).collect();
        let scores = score_labeled(&mut DistinctN::new(cfg), &data).unwrap();
        let mut idx: Vec<usize> = (0..data.len()).collect();
        idx.sort_by(|&a, &b| scores[a].score.total_cmp(&scores[b].score).then(data[a].id().cmp(data[b].id())));
        for group in idx.chunks(40) {
            let kept_scores = |high: bool| -> Vec<f64> {
                group
                    .iter()
                    .filter(|&&i| kept.contains(data[i].id()) && data[i].is_high_class() == high)
                    .map(|&i| scores[i].score)
                    .collect()
            };
            let (lo, hi) = (kept_scores(false), kept_scores(true));
            assert_eq!(lo.len(), hi.len());
            if lo.is_empty() {
                continue;
            }
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            let range = scores[*group.last().unwrap()].score - scores[group[0]].score;
            assert!((mean(&lo) - mean(&hi)).abs() <= range);
        }
    }

    #[test]
    fn sim_hds_metric() {
        let set = ResponseSet::new("s", "c", ["a", "b", "c"]);
        let ratings: Vec<RatingRecord> = [(0, 1, 5), (0, 2, 3), (1, 2, 1)]
            .iter()
            .map(|&(i, j, v)| RatingRecord {
                set_id: "s".into(),
                rater_id: "r".into(),
                question: Question::SimPair,
                target: Some(RatingTarget::Pair([i, j])),
                value: v,
            })
            .collect();
        let mut m = PrecomputedScores::from_sim_ratings(&ratings, &[&set]).unwrap();
        assert_eq!(m.score_sets(&[&set]).unwrap(), vec![-3.0]);
        assert_eq!(m.name(), "sim-hds");
    }

    #[test]
    fn precomputed_missing_id_errors() {
        let mut m = PrecomputedScores::new("p", [("a".to_string(), 1.0)]);
        let b = ResponseSet::new("b", "c", ["x"]);
        assert!(m.score_sets(&[&b]).is_err());
    }

    #[test]
    fn precomputed_from_mixed_records() {
        let recs = vec![
            MetricScore { set_id: "a".into(), metric: "m1".into(), score: 1.0 },
            MetricScore { set_id: "a".into(), metric: "m2".into(), score: 2.0 },
        ];
        assert!(PrecomputedScores::from_records(&recs, None).is_err());
        let mut m = PrecomputedScores::from_records(&recs, Some("m2")).unwrap();
        let a = ResponseSet::new("a", "c", ["x"]);
        assert_eq!(m.score_sets(&[&a]).unwrap(), vec![2.0]);
    }
}
