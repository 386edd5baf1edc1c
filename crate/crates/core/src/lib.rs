//! Text-diversity metrics and a harness for meta-evaluating them.
//!
//! A diversity metric maps a set of responses to a score, higher meaning
//! more diverse. A metric is judged by how well its scores track a
//! controlled diversity parameter:
//!
//! * **dec** test: Spearman correlation with a decoding parameter
//!   (temperature, top-p, log10 top-k), optionally with subset resampling;
//! * **con** test: correlation with a binary content-diversity class, plus
//!   the best single-threshold classifier accuracy;
//! * **rank** test: whether score differences between two sets of the same
//!   context agree in sign with their parameter difference.
//!
//! Built-in metrics are distinct-n and n-gram cosine similarity turned into
//! a diversity score by negating the mean pairwise similarity. Other
//! metrics (neural scorers, precomputed scores) plug in over a JSON-lines
//! subprocess protocol, see [`plugin`].
//!
//! ```
//! use divmeter::corpus::ResponseSet;
//! use divmeter::ngram::{distinct_n, NGramConfig};
//!
//! let set = ResponseSet::new("s1", "How was the game?", ["Great fun!", "Great fun!"]);
//! let cfg = NGramConfig::new(1, 1, true)?;
//! // 3 distinct unigrams ("great", "fun", "!") out of 6
//! assert_eq!(distinct_n(&set, &cfg)?, 0.5);
//! # Ok::<(), divmeter::DivError>(())
//! ```

pub mod cli;
pub mod corpus;
pub mod error;
pub mod harness;
pub mod ngram;
pub mod plugin;
pub mod reduction;
pub mod stats;
pub mod synthetic;

pub use corpus::{LabeledSet, MetricScore, ParamKind, Question, RatingRecord, ResponseSet};
pub use error::{DivError, Result};
pub use harness::DiversityMetric;
pub use stats::TestReport;
