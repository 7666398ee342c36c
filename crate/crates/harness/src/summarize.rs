//! Cross-run summary of episode streams.
//!
//! Training streams are reduced over their steady-state window: from the
//! first episode of the detected steady window to the end of the run. Streams
//! named `eval_*` or `evaluate` are produced after training and are averaged
//! whole.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use deeprat_core::orchestrator::steady_state_onset;
use serde::Serialize;

use crate::metrics::{num, write_atomic, CsvStream};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SummaryOptions {
    pub window: usize,
    pub tolerance: f64,
}

impl Default for SummaryOptions {
    fn default() -> Self {
        Self {
            window: 200,
            tolerance: 0.02,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub seed: String,
    pub stream: String,
    pub episodes: usize,
    /// `None` when the stream never reached steady state.
    pub onset: Option<usize>,
    pub post_training: bool,
    pub utility: f64,
    pub sum_rate_bps: f64,
    pub qos_satisfaction: f64,
}

impl RunSummary {
    pub fn converged(&self) -> bool {
        self.post_training || self.onset.is_some()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StreamSummary {
    pub stream: String,
    pub runs: usize,
    pub converged_runs: usize,
    pub utility: (f64, f64),
    pub sum_rate_bps: (f64, f64),
    pub qos_satisfaction: (f64, f64),
}

struct Series {
    utility: Vec<f64>,
    sum_rate: Vec<f64>,
    satisfied: Vec<f64>,
    steps: Vec<f64>,
}

fn read_series(path: &Path) -> io::Result<Option<Series>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let h = rdr.headers()?.clone();
    let col = |name: &str| h.iter().position(|c| c == name);
    let (Some(u), Some(r), Some(q), Some(s)) = (
        col("utility"),
        col("sum_rate_bps"),
        col("qos_satisfied_steps"),
        col("steps"),
    ) else {
        return Ok(None);
    };
    let mut out = Series {
        utility: Vec::new(),
        sum_rate: Vec::new(),
        satisfied: Vec::new(),
        steps: Vec::new(),
    };
    let parse = |rec: &csv::StringRecord, i: usize| -> io::Result<f64> {
        rec[i]
            .parse()
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("{}: {e}", path.display())))
    };
    for rec in rdr.records() {
        let rec = rec?;
        out.utility.push(parse(&rec, u)?);
        out.sum_rate.push(parse(&rec, r)?);
        out.satisfied.push(parse(&rec, q)?);
        out.steps.push(parse(&rec, s)?);
    }
    Ok(Some(out))
}

/// Mean taken relative to the first sample, so a constant series maps to
/// itself exactly.
fn mean(v: &[f64]) -> f64 {
    let Some(&first) = v.first() else { return 0.0 };
    first + v.iter().map(|x| x - first).sum::<f64>() / v.len() as f64
}

/// Population mean and standard deviation.
fn mean_std(v: &[f64]) -> (f64, f64) {
    let m = mean(v);
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len().max(1) as f64;
    (m, var.sqrt())
}

fn is_post_training(stream: &str) -> bool {
    stream == "evaluate" || stream.starts_with("eval_")
}

/// Reduces one stream; a run that never converged is averaged over its last
/// window.
pub fn summarize_series(
    seed: &str,
    stream: &str,
    utility: &[f64],
    sum_rate: &[f64],
    satisfied: &[f64],
    steps: &[f64],
    opts: SummaryOptions,
) -> RunSummary {
    let n = utility.len();
    let post_training = is_post_training(stream);
    let onset = if post_training {
        None
    } else {
        steady_state_onset(utility, opts.window, opts.tolerance)
    };
    let from = match (post_training, onset) {
        (true, _) => 0,
        (false, Some(o)) => o - 1,
        (false, None) => n.saturating_sub(opts.window),
    };
    let sat: f64 = satisfied[from..].iter().sum();
    let st: f64 = steps[from..].iter().sum();
    RunSummary {
        seed: seed.to_string(),
        stream: stream.to_string(),
        episodes: n,
        onset,
        post_training,
        utility: mean(&utility[from..]),
        sum_rate_bps: mean(&sum_rate[from..]),
        qos_satisfaction: if st > 0.0 { sat / st } else { 0.0 },
    }
}

/// Summaries of every episode stream under `out/seed_*`, sorted by seed
/// directory then stream name.
pub fn collect(out: &Path, opts: SummaryOptions) -> io::Result<Vec<RunSummary>> {
    let mut dirs: Vec<_> = fs::read_dir(out)?
        .filter_map(Result::ok)
        .filter(|e| e.path().is_dir())
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().into_owned();
            name.strip_prefix("seed_").map(|s| (s.to_string(), e.path()))
        })
        .collect();
    dirs.sort();
    let mut runs = Vec::new();
    for (seed, dir) in dirs {
        let mut files: Vec<_> = fs::read_dir(&dir)?
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        files.sort();
        for f in files {
            let stream = f.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            if let Some(s) = read_series(&f)? {
                if s.utility.is_empty() {
                    continue;
                }
                runs.push(summarize_series(
                    &seed,
                    &stream,
                    &s.utility,
                    &s.sum_rate,
                    &s.satisfied,
                    &s.steps,
                    opts,
                ));
            }
        }
    }
    Ok(runs)
}

/// Cross-seed statistics per stream name.
pub fn aggregate(runs: &[RunSummary]) -> Vec<StreamSummary> {
    let mut by: BTreeMap<&str, Vec<&RunSummary>> = BTreeMap::new();
    for r in runs {
        by.entry(&r.stream).or_default().push(r);
    }
    by.into_iter()
        .map(|(stream, rs)| {
            let pick = |f: fn(&RunSummary) -> f64| mean_std(&rs.iter().map(|r| f(r)).collect::<Vec<_>>());
            StreamSummary {
                stream: stream.to_string(),
                runs: rs.len(),
                converged_runs: rs.iter().filter(|r| r.converged()).count(),
                utility: pick(|r| r.utility),
                sum_rate_bps: pick(|r| r.sum_rate_bps),
                qos_satisfaction: pick(|r| r.qos_satisfaction),
            }
        })
        .collect()
}

/// Published steady-state values, kept for side-by-side comparison.
pub const REFERENCE_UTILITY: [(&str, f64); 5] = [
    ("deeprat", 1.73),
    ("multi_mode", 1.58),
    ("convex", 1.52),
    ("random", 1.33),
    ("fixed", 1.4),
];

pub const REFERENCE_SUM_RATE_BPS: [(&str, f64); 5] = [
    ("deeprat", 4.2e9),
    ("convex", 4.33e9),
    ("multi_mode", 3.86e9),
    ("random", 3.23e9),
    ("fixed", 3.42e9),
];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Ordering {
    pub better: String,
    pub worse: String,
    pub metric: String,
    pub holds: bool,
    /// Relative margin `(better − worse) / |worse|`.
    pub margin: f64,
}

#[derive(Serialize)]
struct Report {
    ordering: Vec<Ordering>,
    reference_utility: BTreeMap<String, f64>,
    reference_sum_rate_bps: BTreeMap<String, f64>,
}

/// DeepRAT against every other evaluated scheme, on utility and sum-rate.
pub fn ordering_flags(streams: &[StreamSummary]) -> Vec<Ordering> {
    let get = |name: &str| streams.iter().find(|s| s.stream == format!("eval_{name}"));
    let Some(ours) = get("deeprat") else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for other in ["multi_mode", "random", "fixed", "convex"] {
        let Some(o) = get(other) else { continue };
        for (metric, a, b) in [
            ("utility", ours.utility.0, o.utility.0),
            ("sum_rate_bps", ours.sum_rate_bps.0, o.sum_rate_bps.0),
        ] {
            out.push(Ordering {
                better: "deeprat".into(),
                worse: other.into(),
                metric: metric.into(),
                holds: a > b,
                margin: if b != 0.0 { (a - b) / b.abs() } else { 0.0 },
            });
        }
    }
    out
}

fn opt_usize(v: Option<usize>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes `summary_runs.csv`, `summary_streams.csv` and `summary.toml`
/// under `out`.
pub fn write_summary(out: &Path, opts: SummaryOptions) -> io::Result<Vec<StreamSummary>> {
    let runs = collect(out, opts)?;
    let header: Vec<String> = [
        "seed",
        "stream",
        "episodes",
        "converged",
        "onset_episode",
        "utility",
        "sum_rate_bps",
        "qos_satisfaction",
    ]
    .map(String::from)
    .to_vec();
    let mut s = CsvStream::create(out, "summary_runs", &header)?;
    for r in &runs {
        s.row(&[
            r.seed.clone(),
            r.stream.clone(),
            r.episodes.to_string(),
            r.converged().to_string(),
            opt_usize(r.onset),
            num(r.utility),
            num(r.sum_rate_bps),
            num(r.qos_satisfaction),
        ])?;
    }
    s.finish()?;

    let streams = aggregate(&runs);
    let header: Vec<String> = [
        "stream",
        "runs",
        "converged_runs",
        "utility_mean",
        "utility_std",
        "sum_rate_bps_mean",
        "sum_rate_bps_std",
        "qos_satisfaction_mean",
        "qos_satisfaction_std",
    ]
    .map(String::from)
    .to_vec();
    let mut s = CsvStream::create(out, "summary_streams", &header)?;
    for x in &streams {
        s.row(&[
            x.stream.clone(),
            x.runs.to_string(),
            x.converged_runs.to_string(),
            num(x.utility.0),
            num(x.utility.1),
            num(x.sum_rate_bps.0),
            num(x.sum_rate_bps.1),
            num(x.qos_satisfaction.0),
            num(x.qos_satisfaction.1),
        ])?;
    }
    s.finish()?;

    let report = Report {
        ordering: ordering_flags(&streams),
        reference_utility: REFERENCE_UTILITY.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        reference_sum_rate_bps: REFERENCE_SUM_RATE_BPS
            .iter()
            .map(|(k, v)| (k.to_string(), *v))
            .collect(),
    };
    let text = toml::to_string(&report).expect("summary serializes");
    write_atomic(&out.join("summary.toml"), text.as_bytes())?;
    Ok(streams)
}
