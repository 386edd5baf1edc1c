//! Data model and JSONL persistence for response sets, diversity labels,
//! human ratings and metric scores.
//!
//! Every file is UTF-8 JSONL, one record per line. Blank lines are skipped.
//! All type invariants are validated at load time; nothing is clamped.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{DivError, Result};
use crate::reduction::negated_mean;

/// Lowest/highest value of the absolute, aspect and pair-similarity scales.
pub const LIKERT_MIN: i64 = 1;
pub const LIKERT_MAX: i64 = 5;

/// Bounds of the set-vs-set ranking scale. Positive values mean the first
/// set is more diverse, negative the second, zero no preference.
pub const RANK_MIN: i64 = -2;
pub const RANK_MAX: i64 = 2;

/// A context together with the responses generated for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseSet {
    pub id: String,
    pub context: String,
    pub responses: Vec<String>,
}

impl ResponseSet {
    pub fn new(
        id: impl Into<String>,
        context: impl Into<String>,
        responses: impl IntoIterator<Item = impl Into<String>>,
    ) -> Self {
        Self {
            id: id.into(),
            context: context.into(),
            responses: responses.into_iter().map(Into::into).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    fn validate(&self, line: usize) -> Result<()> {
        if self.id.is_empty() {
            return Err(DivError::InvalidField {
                line,
                field: "id",
                message: "must be non-empty".into(),
            });
        }
        if self.responses.is_empty() {
            return Err(DivError::InvalidField {
                line,
                field: "responses",
                message: "must contain at least one response".into(),
            });
        }
        if let Some(i) = self.responses.iter().position(|r| r.trim().is_empty()) {
            return Err(DivError::InvalidField {
                line,
                field: "responses",
                message: format!("response {i} is empty"),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Temperature,
    TopP,
    Log10TopK,
    ContentClass,
    Custom,
}

impl ParamKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ParamKind::Temperature => "temperature",
            ParamKind::TopP => "top_p",
            ParamKind::Log10TopK => "log10_top_k",
            ParamKind::ContentClass => "content_class",
            ParamKind::Custom => "custom",
        }
    }
}

/// A response set tagged with the value of the diversity parameter it was
/// produced under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSet {
    #[serde(flatten)]
    pub set: ResponseSet,
    pub param_kind: ParamKind,
    pub param_value: f64,
}

impl LabeledSet {
    pub fn new(set: ResponseSet, param_kind: ParamKind, param_value: f64) -> Self {
        Self {
            set,
            param_kind,
            param_value,
        }
    }

    pub fn id(&self) -> &str {
        &self.set.id
    }

    /// True for the high content-diversity class.
    pub fn is_high_class(&self) -> bool {
        self.param_value == 1.0
    }

    fn validate(&self, line: usize) -> Result<()> {
        self.set.validate(line)?;
        if !self.param_value.is_finite() {
            return Err(DivError::InvalidField {
                line,
                field: "param_value",
                message: "must be finite".into(),
            });
        }
        if self.param_kind == ParamKind::ContentClass
            && self.param_value != 0.0
            && self.param_value != 1.0
        {
            return Err(DivError::InvalidField {
                line,
                field: "param_value",
                message: format!(
                    "content_class must be 0 or 1, got {}",
                    self.param_value
                ),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Question {
    Abs,
    AspForm,
    AspContent,
    SimPair,
    RankPair,
}

impl Question {
    pub fn as_str(self) -> &'static str {
        match self {
            Question::Abs => "abs",
            Question::AspForm => "asp_form",
            Question::AspContent => "asp_content",
            Question::SimPair => "sim_pair",
            Question::RankPair => "rank_pair",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RatingTarget {
    /// Response indices `(i, j)` with `i < j`.
    Pair([usize; 2]),
    /// The second set of a ranking comparison.
    Set(String),
}

/// One human rating.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub set_id: String,
    pub rater_id: String,
    pub question: Question,
    #[serde(default)]
    pub target: Option<RatingTarget>,
    #[serde(deserialize_with = "integral_number")]
    pub value: i64,
}

fn integral_number<'de, D: serde::Deserializer<'de>>(de: D) -> Result<i64, D::Error> {
    let v = f64::deserialize(de)?;
    if v.fract() != 0.0 || !v.is_finite() || v.abs() > i64::MAX as f64 {
        return Err(serde::de::Error::custom(format!(
            "rating value must be an integer, got {v}"
        )));
    }
    Ok(v as i64)
}

impl RatingRecord {
    fn validate(&self, line: usize) -> Result<()> {
        let invalid = |field, message: String| DivError::InvalidField {
            line,
            field,
            message,
        };
        let (lo, hi) = match self.question {
            Question::RankPair => (RANK_MIN, RANK_MAX),
            _ => (LIKERT_MIN, LIKERT_MAX),
        };
        if !(lo..=hi).contains(&self.value) {
            return Err(invalid(
                "value",
                format!(
                    "{} rating {} outside [{lo}, {hi}]",
                    self.question.as_str(),
                    self.value
                ),
            ));
        }
        match (self.question, &self.target) {
            (Question::SimPair, Some(RatingTarget::Pair([i, j]))) if i < j => Ok(()),
            (Question::SimPair, Some(RatingTarget::Pair([i, j]))) => Err(invalid(
                "target",
                format!("pair indices must satisfy i < j, got ({i}, {j})"),
            )),
            (Question::SimPair, _) => {
                Err(invalid("target", "sim_pair needs an [i, j] target".into()))
            }
            (Question::RankPair, Some(RatingTarget::Set(other))) if !other.is_empty() => Ok(()),
            (Question::RankPair, _) => {
                Err(invalid("target", "rank_pair needs a second set id".into()))
            }
            (_, None) => Ok(()),
            (q, Some(_)) => Err(invalid(
                "target",
                format!("{} ratings take no target", q.as_str()),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricScore {
    pub set_id: String,
    pub metric: String,
    pub score: f64,
}

impl MetricScore {
    fn validate(&self, line: usize) -> Result<()> {
        if !self.score.is_finite() {
            return Err(DivError::InvalidField {
                line,
                field: "score",
                message: "must be finite".into(),
            });
        }
        Ok(())
    }
}

/// A record type that can be stored in one of the corpus JSONL schemas.
pub trait Record: Serialize + DeserializeOwned {
    /// The key that must be unique within a file, if any.
    fn unique_key(&self) -> Option<String>;
    fn validate_at(&self, line: usize) -> Result<()>;
}

impl Record for ResponseSet {
    fn unique_key(&self) -> Option<String> {
        Some(self.id.clone())
    }
    fn validate_at(&self, line: usize) -> Result<()> {
        self.validate(line)
    }
}

impl Record for LabeledSet {
    fn unique_key(&self) -> Option<String> {
        Some(self.set.id.clone())
    }
    fn validate_at(&self, line: usize) -> Result<()> {
        self.validate(line)
    }
}

impl Record for RatingRecord {
    fn unique_key(&self) -> Option<String> {
        None
    }
    fn validate_at(&self, line: usize) -> Result<()> {
        self.validate(line)
    }
}

impl Record for MetricScore {
    // A scores file may hold several metrics, but each (set, metric) once.
    fn unique_key(&self) -> Option<String> {
        Some(format!("{}\u{0}{}", self.set_id, self.metric))
    }
    fn validate_at(&self, line: usize) -> Result<()> {
        self.validate(line)
    }
}

/// Parse JSONL records from a reader. Line numbers in errors are 1-based.
pub fn read_jsonl<T: Record, R: BufRead>(reader: R) -> Result<Vec<T>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| DivError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: T = serde_json::from_str(&line).map_err(|e| DivError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        record.validate_at(line_no)?;
        if let Some(key) = record.unique_key() {
            if !seen.insert(key.clone()) {
                let id = key.split('\u{0}').next().unwrap_or_default().to_owned();
                return Err(DivError::DuplicateId { line: line_no, id });
            }
        }
        out.push(record);
    }
    Ok(out)
}

pub fn load_jsonl<T: Record>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| DivError::io(path, e))?;
    read_jsonl(BufReader::new(file))
}

pub fn write_jsonl<T: Serialize, W: Write>(mut writer: W, records: &[T]) -> std::io::Result<()> {
    for record in records {
        serde_json::to_writer(&mut writer, record)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

pub fn save_jsonl<T: Serialize>(path: impl AsRef<Path>, records: &[T]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| DivError::io(path, e))?;
    write_jsonl(BufWriter::new(file), records).map_err(|e| DivError::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schema {
    Sets,
    Labeled,
    Ratings,
    Scores,
}

/// Records of any schema, as returned by [`load_dataset`].
#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    Sets(Vec<ResponseSet>),
    Labeled(Vec<LabeledSet>),
    Ratings(Vec<RatingRecord>),
    Scores(Vec<MetricScore>),
}

impl Dataset {
    pub fn len(&self) -> usize {
        match self {
            Dataset::Sets(v) => v.len(),
            Dataset::Labeled(v) => v.len(),
            Dataset::Ratings(v) => v.len(),
            Dataset::Scores(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn load_dataset(path: impl AsRef<Path>, schema: Schema) -> Result<Dataset> {
    Ok(match schema {
        Schema::Sets => Dataset::Sets(load_jsonl(path)?),
        Schema::Labeled => Dataset::Labeled(load_jsonl(path)?),
        Schema::Ratings => Dataset::Ratings(load_jsonl(path)?),
        Schema::Scores => Dataset::Scores(load_jsonl(path)?),
    })
}

/// Per-set summary of a group of ratings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatingSummary {
    pub mean: f64,
    pub count: usize,
    /// Population standard deviation.
    pub std: f64,
}

impl RatingSummary {
    fn from_values(values: &[i64]) -> Self {
        let count = values.len();
        let mean = values.iter().sum::<i64>() as f64 / count as f64;
        let var = values
            .iter()
            .map(|&v| (v as f64 - mean).powi(2))
            .sum::<f64>()
            / count as f64;
        Self {
            mean,
            count,
            std: var.sqrt(),
        }
    }
}

/// Mean rating per set for a whole-set question (absHDS / aspHDS).
///
/// Sets without ratings are absent from the output.
pub fn aggregate_abs_ratings(
    ratings: &[RatingRecord],
    question: Question,
) -> Result<BTreeMap<String, RatingSummary>> {
    if matches!(question, Question::SimPair | Question::RankPair) {
        return Err(DivError::InvalidInput(format!(
            "{} is not a whole-set question",
            question.as_str()
        )));
    }
    let mut grouped: BTreeMap<String, Vec<i64>> = BTreeMap::new();
    for r in ratings {
        if r.question != question {
            return Err(DivError::InvalidInput(format!(
                "rating of set {:?} is {}, expected {}",
                r.set_id,
                r.question.as_str(),
                question.as_str()
            )));
        }
        grouped.entry(r.set_id.clone()).or_default().push(r.value);
    }
    Ok(grouped
        .into_iter()
        .map(|(id, values)| (id, RatingSummary::from_values(&values)))
        .collect())
}

/// simHDS of one set, together with the pairs nobody rated.
#[derive(Debug, Clone, PartialEq)]
pub struct SimAggregate {
    pub score: f64,
    pub rated_pairs: usize,
    pub unrated_pairs: Vec<(usize, usize)>,
}

/// Mean rating per response pair, then the negated mean over rated pairs.
///
/// Ratings of other sets or other questions are ignored.
pub fn aggregate_sim_ratings(ratings: &[RatingRecord], set: &ResponseSet) -> Result<SimAggregate> {
    let k = set.len();
    let mut per_pair: BTreeMap<(usize, usize), Vec<i64>> = BTreeMap::new();
    for r in ratings
        .iter()
        .filter(|r| r.set_id == set.id && r.question == Question::SimPair)
    {
        let Some(RatingTarget::Pair([i, j])) = r.target else {
            continue;
        };
        if j >= k || i >= j {
            return Err(DivError::InvalidInput(format!(
                "pair ({i}, {j}) out of range for set {:?} with {k} responses",
                set.id
            )));
        }
        per_pair.entry((i, j)).or_default().push(r.value);
    }
    if per_pair.is_empty() {
        return Err(DivError::NoPairRatings(set.id.clone()));
    }
    let pair_means: Vec<f64> = per_pair
        .values()
        .map(|v| RatingSummary::from_values(v).mean)
        .collect();
    let unrated_pairs = (0..k)
        .flat_map(|i| (i + 1..k).map(move |j| (i, j)))
        .filter(|p| !per_pair.contains_key(p))
        .collect();
    Ok(SimAggregate {
        score: negated_mean(&pair_means),
        rated_pairs: pair_means.len(),
        unrated_pairs,
    })
}

/// Mean ranking rating per ordered set pair `(first, second)` (rnkHDS).
///
/// A rating stored as `(b, a)` is folded into `(a, b)` with its sign flipped
/// when `(a, b)` is the orientation seen first.
pub fn aggregate_rank_ratings(
    ratings: &[RatingRecord],
) -> Result<BTreeMap<(String, String), RatingSummary>> {
    let mut grouped: BTreeMap<(String, String), Vec<i64>> = BTreeMap::new();
    for r in ratings {
        let Some(RatingTarget::Set(other)) = (r.question == Question::RankPair)
            .then_some(r.target.as_ref())
            .flatten()
        else {
            return Err(DivError::InvalidInput(format!(
                "rating of set {:?} is not a rank_pair rating",
                r.set_id
            )));
        };
        let reversed = (other.clone(), r.set_id.clone());
        if let Some(values) = grouped.get_mut(&reversed) {
            values.push(-r.value);
        } else {
            grouped
                .entry((r.set_id.clone(), other.clone()))
                .or_default()
                .push(r.value);
        }
    }
    Ok(grouped
        .into_iter()
        .map(|(k, v)| (k, RatingSummary::from_values(&v)))
        .collect())
}
