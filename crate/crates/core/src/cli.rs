//! The `divmeter` command line.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::corpus::{
    aggregate_rank_ratings, load_jsonl, write_jsonl, LabeledSet, MetricScore, Question,
    RatingRecord, ResponseSet,
};
use crate::error::{DivError, Result};
use crate::harness::{
    con_report, cos_sim_div, dec_report, pair_by_context, rank_report, run_rank_test,
    run_stability, score_labeled, score_sets, subsample_nuggets, DistinctN, DiversityMetric,
    PrecomputedScores, StabilityGrid, TestOptions,
};
use crate::ngram::NGramConfig;
use crate::plugin::{PluginMetric, PluginMode, PluginSpec};
use crate::stats::BootstrapConfig;
use crate::synthetic::{generate, linspace, Sweep, SyntheticConfig};

#[derive(Debug, Parser)]
#[command(name = "divmeter", version, about = "Text-diversity metrics and their meta-evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score every set in a sets/labeled JSONL file.
    Score(ScoreArgs),
    /// Run a meta-evaluation test over a labeled JSONL file.
    Evaluate(EvaluateArgs),
    /// Rebalance a content-class dataset so distinct-n carries no class signal.
    Nuggets(NuggetsArgs),
    /// Generate a synthetic decoding-parameter sweep.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricName {
    DistinctN,
    CosSimDiv,
    AbsHds,
    AspFormHds,
    AspContentHds,
    SimHds,
    RnkHds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Pairwise,
    Set,
    Precomputed,
}

#[derive(Debug, Clone, Args)]
pub struct MetricArgs {
    #[arg(long, value_enum, default_value = "distinct-n")]
    pub metric: MetricName,
    /// n-gram orders as MIN:MAX.
    #[arg(long = "n", default_value = "1:5", value_parser = parse_range)]
    pub orders: (usize, usize),
    /// Keep case when tokenizing.
    #[arg(long)]
    pub case_sensitive: bool,
    /// External metric: a command line, or a scores file with `--mode precomputed`.
    #[arg(long)]
    pub plugin: Option<String>,
    #[arg(long, value_enum, requires = "plugin")]
    pub mode: Option<ModeArg>,
    /// Metric name reported for plugin scores.
    #[arg(long, default_value = "plugin")]
    pub plugin_name: String,
    /// Per-request plugin timeout in seconds.
    #[arg(long, default_value_t = 60)]
    pub timeout: u64,
    /// Ratings JSONL for human metrics and the stability sweep.
    #[arg(long)]
    pub ratings: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    pub input: PathBuf,
    #[command(flatten)]
    pub metric: MetricArgs,
    /// Output path; stdout when omitted.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TestKind {
    Dec,
    Con,
    Rank,
    Stability,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub test: TestKind,
    #[command(flatten)]
    pub metric: MetricArgs,
    /// Resampling as SUBSET:REPEATS.
    #[arg(long, value_parser = parse_pair)]
    pub bootstrap: Option<(usize, usize)>,
    #[arg(long, env = "DIVMETER_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Per-class score histogram CSV.
    #[arg(long)]
    pub histogram: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
    /// Per-set (param, score) CSV.
    #[arg(long)]
    pub scatter: Option<PathBuf>,
    /// Stability grid: comma-separated set counts.
    #[arg(long, value_delimiter = ',', default_values_t = [50, 100, 150, 200])]
    pub set_counts: Vec<usize>,
    /// Stability grid: comma-separated ratings-per-set counts.
    #[arg(long, value_delimiter = ',', default_values_t = [1, 3, 5, 10])]
    pub rating_counts: Vec<usize>,
    /// Report path; stdout when omitted.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct NuggetsArgs {
    pub input: PathBuf,
    #[arg(long, default_value_t = 40)]
    pub group_size: usize,
    #[arg(long, env = "DIVMETER_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long = "n", default_value = "1:5", value_parser = parse_range)]
    pub orders: (usize, usize),
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepArg {
    Temperature,
    TopP,
    Log10TopK,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value = "temperature")]
    pub sweep: SweepArg,
    /// Sweep values as LO:HI:COUNT, evenly spaced.
    #[arg(long, default_value = "0.2:1.2:100", value_parser = parse_linspace)]
    pub values: (f64, f64, usize),
    #[arg(long, default_value_t = 10)]
    pub sets_per_value: usize,
    #[arg(long, default_value_t = 10)]
    pub set_size: usize,
    #[arg(long, default_value_t = DEFAULT_VOCAB)]
    pub vocab_size: usize,
    /// Zipf exponent of the base logit profile.
    #[arg(long, default_value_t = DEFAULT_SKEW)]
    pub skew: f64,
    #[arg(long, default_value_t = DEFAULT_LENGTH)]
    pub response_length: usize,
    #[arg(long, env = "DIVMETER_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

pub const DEFAULT_VOCAB: usize = 200;
pub const DEFAULT_SKEW: f64 = 1.5;
pub const DEFAULT_LENGTH: usize = 8;

fn parse_range(s: &str) -> std::result::Result<(usize, usize), String> {
    let (lo, hi) = s.split_once(':').unwrap_or((s, s));
    let lo = lo.parse().map_err(|e| format!("bad lower bound: {e}"))?;
    let hi = hi.parse().map_err(|e| format!("bad upper bound: {e}"))?;
    Ok((lo, hi))
}

fn parse_pair(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once(':').ok_or("expected SUBSET:REPEATS")?;
    Ok((
        a.parse().map_err(|e| format!("bad subset size: {e}"))?,
        b.parse().map_err(|e| format!("bad repeat count: {e}"))?,
    ))
}

fn parse_linspace(s: &str) -> std::result::Result<(f64, f64, usize), String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [lo, hi, n] = parts[..] else {
        return Err("expected LO:HI:COUNT".into());
    };
    Ok((
        lo.parse().map_err(|e| format!("bad LO: {e}"))?,
        hi.parse().map_err(|e| format!("bad HI: {e}"))?,
        n.parse().map_err(|e| format!("bad COUNT: {e}"))?,
    ))
}

/// Where a command's main output goes.
fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| DivError::io(p, e))?,
        )),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn out_err(path: Option<&Path>) -> impl Fn(io::Error) -> DivError + '_ {
    move |e| DivError::io(path.unwrap_or(Path::new("<stdout>")), e)
}

fn write_records<T: Serialize>(path: Option<&Path>, records: &[T]) -> Result<()> {
    write_jsonl(open_output(path)?, records).map_err(out_err(path))
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    let mut w = open_output(path)?;
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(io::Error::from)
        .and_then(|_| writeln!(w))
        .and_then(|_| w.flush())
        .map_err(out_err(path))
}

fn load_ratings(args: &MetricArgs) -> Result<Vec<RatingRecord>> {
    let path = args.ratings.as_ref().ok_or_else(|| {
        DivError::InvalidInput(format!("--metric {:?} needs --ratings", args.metric))
    })?;
    load_jsonl(path)
}

/// Build the metric named by the flags. `sets` are needed for simHDS,
/// which reduces over each set's own responses.
pub fn build_metric(args: &MetricArgs, sets: &[&ResponseSet]) -> Result<Box<dyn DiversityMetric>> {
    let cfg = NGramConfig::new(args.orders.0, args.orders.1, !args.case_sensitive)?;
    if let Some(plugin) = &args.plugin {
        let spec = match args.mode.unwrap_or(ModeArg::Pairwise) {
            ModeArg::Precomputed => PluginSpec::score_file(args.plugin_name.clone(), plugin),
            ModeArg::Pairwise => {
                PluginSpec::subprocess(args.plugin_name.clone(), PluginMode::PairwiseSimilarity, plugin)?
            }
            ModeArg::Set => {
                PluginSpec::subprocess(args.plugin_name.clone(), PluginMode::SetDiversity, plugin)?
            }
        };
        return Ok(Box::new(PluginMetric::new(
            spec.with_timeout(Duration::from_secs(args.timeout)),
        )));
    }
    Ok(match args.metric {
        MetricName::DistinctN => Box::new(DistinctN::new(cfg)),
        MetricName::CosSimDiv => Box::new(cos_sim_div(cfg)),
        MetricName::AbsHds => Box::new(PrecomputedScores::from_abs_ratings(&load_ratings(args)?, Question::Abs)?),
        MetricName::AspFormHds => {
            Box::new(PrecomputedScores::from_abs_ratings(&load_ratings(args)?, Question::AspForm)?)
        }
        MetricName::AspContentHds => {
            Box::new(PrecomputedScores::from_abs_ratings(&load_ratings(args)?, Question::AspContent)?)
        }
        MetricName::SimHds => Box::new(PrecomputedScores::from_sim_ratings(&load_ratings(args)?, sets)?),
        MetricName::RnkHds => {
            return Err(DivError::InvalidInput(
                "rnk-hds compares set pairs and is only available to --test rank".into(),
            ))
        }
    })
}

pub fn cmd_score(args: &ScoreArgs) -> Result<()> {
    let sets: Vec<ResponseSet> = load_jsonl(&args.input)?;
    let refs: Vec<&ResponseSet> = sets.iter().collect();
    let mut metric = build_metric(&args.metric, &refs)?;
    let scores = score_sets(&mut metric, &refs)?;
    write_records(args.output.as_deref(), &scores)
}

/// Score histogram rows: `(class, bin, lower, upper, count)`.
pub fn histogram(groups: &[(String, Vec<f64>)], bins: usize) -> Vec<(String, usize, f64, f64, usize)> {
    let bins = bins.max(1);
    let all = groups.iter().flat_map(|(_, v)| v.iter().copied());
    let (min, max) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let width = if max > min { (max - min) / bins as f64 } else { 1.0 };
    let mut rows = Vec::new();
    for (class, values) in groups {
        let mut counts = vec![0usize; bins];
        for v in values {
            let b = (((v - min) / width) as usize).min(bins - 1);
            counts[b] += 1;
        }
        for (b, count) in counts.into_iter().enumerate() {
            let lower = min + width * b as f64;
            rows.push((class.clone(), b, lower, lower + width, count));
        }
    }
    rows
}

fn write_histogram(path: &Path, data: &[LabeledSet], scores: &[MetricScore], bins: usize) -> Result<()> {
    let mut groups: Vec<(String, Vec<f64>)> = Vec::new();
    for (d, s) in data.iter().zip(scores) {
        let class = d.param_value.to_string();
        match groups.iter_mut().find(|(c, _)| *c == class) {
            Some((_, v)) => v.push(s.score),
            None => groups.push((class, vec![s.score])),
        }
    }
    groups.sort_by(|a, b| a.0.cmp(&b.0));
    let mut w = open_output(Some(path))?;
    let write = |w: &mut dyn Write| -> io::Result<()> {
        writeln!(w, "class,bin,lower,upper,count")?;
        for (class, bin, lo, hi, count) in histogram(&groups, bins) {
            writeln!(w, "{class},{bin},{lo},{hi},{count}")?;
        }
        w.flush()
    };
    write(&mut w).map_err(|e| DivError::io(path, e))
}

fn write_scatter(path: &Path, data: &[LabeledSet], scores: &[MetricScore]) -> Result<()> {
    let mut w = open_output(Some(path))?;
    let write = |w: &mut dyn Write| -> io::Result<()> {
        writeln!(w, "set_id,param,score")?;
        for (d, s) in data.iter().zip(scores) {
            writeln!(w, "{},{},{}", csv_field(d.id()), d.param_value, s.score)?;
        }
        w.flush()
    };
    write(&mut w).map_err(|e| DivError::io(path, e))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let data: Vec<LabeledSet> = load_jsonl(&args.input)?;
    let out = args.output.as_deref();
    let opts = TestOptions {
        bootstrap: args.bootstrap.map(|(subset_size, repeats)| BootstrapConfig {
            subset_size,
            repeats,
            seed: args.seed,
        }),
        seed: args.seed,
    };
    match args.test {
        TestKind::Dec | TestKind::Con => {
            let refs: Vec<&ResponseSet> = data.iter().map(|d| &d.set).collect();
            let mut metric = build_metric(&args.metric, &refs)?;
            let scores = score_labeled(&mut metric, &data)?;
            let report = if args.test == TestKind::Dec {
                dec_report(&data, &scores, &opts)?
            } else {
                con_report(&data, &scores, &opts)?
            };
            if let Some(p) = &args.histogram {
                write_histogram(p, &data, &scores, args.bins)?;
            }
            if let Some(p) = &args.scatter {
                write_scatter(p, &data, &scores)?;
            }
            write_json(out, &report)
        }
        TestKind::Rank => {
            let pairs = pair_by_context(&data)?;
            let report = if args.metric.metric == MetricName::RnkHds && args.metric.plugin.is_none() {
                let agg = aggregate_rank_ratings(&load_ratings(&args.metric)?)?;
                let param = |id: &str| {
                    data.iter()
                        .find(|d| d.id() == id)
                        .map(|d| d.param_value)
                        .ok_or_else(|| DivError::InvalidInput(format!("rated set {id:?} not in dataset")))
                };
                let deltas = agg
                    .iter()
                    .map(|((a, b), s)| Ok((param(a)? - param(b)?, s.mean)))
                    .collect::<Result<Vec<_>>>()?;
                rank_report("rnk-hds", &deltas)?
            } else {
                let refs: Vec<&ResponseSet> = data.iter().map(|d| &d.set).collect();
                run_rank_test(&pairs, &mut build_metric(&args.metric, &refs)?)?
            };
            write_json(out, &report)
        }
        TestKind::Stability => {
            let ratings = load_ratings(&args.metric)?;
            let question = match args.metric.metric {
                MetricName::AspFormHds => Question::AspForm,
                MetricName::AspContentHds => Question::AspContent,
                _ => Question::Abs,
            };
            let grid = StabilityGrid {
                set_counts: args.set_counts.clone(),
                rating_counts: args.rating_counts.clone(),
            };
            let rows = run_stability(&data, &ratings, question, &grid, args.seed)?;
            write_json(out, &rows)
        }
    }
}

pub fn cmd_nuggets(args: &NuggetsArgs) -> Result<()> {
    let data: Vec<LabeledSet> = load_jsonl(&args.input)?;
    let cfg = NGramConfig::new(args.orders.0, args.orders.1, true)?;
    let out = subsample_nuggets(&data, args.group_size, &cfg, args.seed)?;
    write_records(args.output.as_deref(), &out)
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let cfg = SyntheticConfig {
        response_length: args.response_length,
        sets_per_value: args.sets_per_value,
        set_size: args.set_size,
        seed: args.seed,
        ..SyntheticConfig::zipf(args.vocab_size, args.skew)
    };
    let sweep = match args.sweep {
        SweepArg::Temperature => Sweep::Temperature,
        SweepArg::TopP => Sweep::TopP,
        SweepArg::Log10TopK => Sweep::Log10TopK,
    };
    let (lo, hi, n) = args.values;
    let data = generate(&cfg, sweep, &linspace(lo, hi, n))?;
    write_records(args.output.as_deref(), &data)
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Score(a) => cmd_score(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Nuggets(a) => cmd_nuggets(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

/// Exit code for an error: 2 for bad input, 1 for runtime failures.
pub fn exit_code(err: &DivError) -> i32 {
    if err.is_validation() {
        2
    } else {
        1
    }
}
