//! Reference plugin for the divmetric/1 protocol, scoring with n-gram
//! cosine similarity.
//!
//! Usage: `divmeter-mock-plugin [--mode pairwise|set] [--n MIN:MAX] [--identity]`
//!
//! `--identity` answers 1.0 to every pair request.

use std::io::{self, BufRead, BufWriter, Write};
use std::process::ExitCode;

use divmeter::corpus::ResponseSet;
use divmeter::ngram::{cosine_similarity, NGramConfig};
use divmeter::plugin::PROTOCOL;
use divmeter::reduction::reduce_to_diversity;
use divmeter::ngram::NGramCosine;
use serde_json::{json, Value};

struct Options {
    set_mode: bool,
    identity: bool,
    cfg: NGramConfig,
}

fn parse_args() -> Result<Options, String> {
    let mut opts = Options {
        set_mode: false,
        identity: false,
        cfg: NGramConfig::default(),
    };
    let mut args = std::env::args().skip(1);
    while let Some(arg) = args.next() {
        match arg.as_str() {
            "--identity" => opts.identity = true,
            "--mode" => match args.next().as_deref() {
                Some("pairwise") => opts.set_mode = false,
                Some("set") => opts.set_mode = true,
                other => return Err(format!("unknown mode {other:?}")),
            },
            "--n" => {
                let spec = args.next().ok_or("--n needs MIN:MAX")?;
                let (lo, hi) = spec.split_once(':').ok_or("--n needs MIN:MAX")?;
                let lo = lo.parse().map_err(|e| format!("{e}"))?;
                let hi = hi.parse().map_err(|e| format!("{e}"))?;
                opts.cfg = NGramConfig::new(lo, hi, true).map_err(|e| e.to_string())?;
            }
            other => return Err(format!("unknown argument {other:?}")),
        }
    }
    Ok(opts)
}

fn answer(opts: &Options, request: &Value) -> Result<f64, String> {
    if opts.set_mode {
        let responses: Vec<String> = serde_json::from_value(request["responses"].clone())
            .map_err(|e| format!("bad responses: {e}"))?;
        let set = ResponseSet::new("", "", responses);
        return reduce_to_diversity(&NGramCosine::new(opts.cfg), &set).map_err(|e| e.to_string());
    }
    if opts.identity {
        return Ok(1.0);
    }
    let a = request["a"].as_str().ok_or("missing a")?;
    let b = request["b"].as_str().ok_or("missing b")?;
    cosine_similarity(a, b, &opts.cfg).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    let opts = match parse_args() {
        Ok(o) => o,
        Err(e) => {
            let _ = writeln!(out, "{}", json!({ "error": e }));
            return ExitCode::FAILURE;
        }
    };
    let mode = if opts.set_mode { "set" } else { "pairwise" };
    let hello = json!({ "protocol": PROTOCOL, "mode": mode, "model": "ngram-cosine" });
    if writeln!(out, "{hello}").and_then(|_| out.flush()).is_err() {
        return ExitCode::FAILURE;
    }
    for line in io::stdin().lock().lines() {
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        let reply = match serde_json::from_str::<Value>(&line) {
            Ok(req) => match answer(&opts, &req) {
                Ok(score) => json!({ "id": req["id"], "score": score }),
                Err(e) => json!({ "id": req["id"], "error": e }),
            },
            Err(e) => json!({ "error": e.to_string() }),
        };
        if writeln!(out, "{reply}").and_then(|_| out.flush()).is_err() {
            break;
        }
    }
    ExitCode::SUCCESS
}
