//! Experiment recipes. Every seed writes into its own `seed_<n>` directory.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use deeprat_core::orchestrator::{
    segment_convergence, steady_state_onset, trailing_mean, EpisodeRecord, Scheme, TrainError,
};
use deeprat_core::{TrainConfig, Trainer};
use log::info;
use serde::Serialize;
use thiserror::Error;

use crate::config::{self, ConfigError, FileConfig};
use crate::metrics::{
    build_id, episode_header, episode_row, num, write_atomic, write_manifest, write_status,
    CsvStream, Manifest, RunMeta, RunState, Status,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum RecipeKind {
    Train,
    Evaluate,
    Baselines,
    Mobility,
    Cdf,
    Sweep,
}

impl RecipeKind {
    pub fn name(self) -> &'static str {
        match self {
            RecipeKind::Train => "train",
            RecipeKind::Evaluate => "evaluate",
            RecipeKind::Baselines => "baselines",
            RecipeKind::Mobility => "mobility",
            RecipeKind::Cdf => "cdf",
            RecipeKind::Sweep => "sweep",
        }
    }
}

/// Command-line overrides applied on top of the configuration file.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Overrides {
    pub episodes: Option<usize>,
    pub shock_period: Option<usize>,
    pub k_inner: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentRecipe {
    pub kind: RecipeKind,
    pub config_path: PathBuf,
    pub out: PathBuf,
    pub seeds: Vec<u64>,
    pub overrides: Overrides,
}

#[derive(Debug, Error)]
pub enum RecipeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Invalid(String),
    #[error("seed {seed}: {source}")]
    Train { seed: u64, source: TrainError },
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
}

impl RecipeError {
    /// 2 for invalid input, 3 for a numeric abort, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            RecipeError::Config(_) | RecipeError::Invalid(_) => 2,
            RecipeError::Train { source, .. } => match source {
                TrainError::Config(_) => 2,
                TrainError::NumericAbort { .. } => 3,
                _ => 1,
            },
            RecipeError::Io { .. } => 1,
        }
    }
}

fn io_at(path: &Path) -> impl Fn(io::Error) -> RecipeError + '_ {
    move |source| RecipeError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Loads the configuration and applies the overrides.
pub fn resolve_config(path: &Path, o: &Overrides) -> Result<(FileConfig, String), RecipeError> {
    let text = fs::read_to_string(path).map_err(io_at(path))?;
    let mut cfg = config::parse(&text, &path.display().to_string())?;
    if let Some(e) = o.episodes {
        cfg.training.episodes = e;
        cfg.training.convergence_window_episodes = cfg.training.convergence_window_episodes.min(e);
    }
    if let Some(p) = o.shock_period {
        cfg.training.shock_period_episodes = p;
    }
    if let Some(k) = o.k_inner {
        cfg.training.k_inner = k;
        cfg.sweep.k_inner = vec![k];
    }
    cfg.validate()?;
    Ok((cfg, text))
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed_{seed}"))
}

/// Runs `recipe` for every seed in order.
pub fn run(recipe: &ExperimentRecipe) -> Result<(), RecipeError> {
    if recipe.seeds.is_empty() {
        return Err(RecipeError::Invalid("at least one seed is required".into()));
    }
    let (cfg, text) = resolve_config(&recipe.config_path, &recipe.overrides)?;
    if recipe.kind == RecipeKind::Mobility {
        let p = cfg.training.shock_period_episodes;
        if p == 0 || cfg.training.episodes % p != 0 {
            return Err(RecipeError::Invalid(
                "mobility needs a shock period that divides the episode count".into(),
            ));
        }
    }
    fs::create_dir_all(&recipe.out).map_err(io_at(&recipe.out))?;
    let build = build_id(&text);
    for &seed in &recipe.seeds {
        let dir = seed_dir(&recipe.out, seed);
        fs::create_dir_all(&dir).map_err(io_at(&dir))?;
        let meta = RunMeta {
            seed,
            recipe: recipe.kind.name().to_string(),
            build: build.clone(),
        };
        let running = Status {
            state: RunState::Running,
            error: None,
        };
        write_status(&dir, &running).map_err(io_at(&dir))?;
        info!("{} seed {seed} -> {}", meta.recipe, dir.display());
        let start = Instant::now();
        match run_seed(recipe.kind, &cfg, &meta, &dir) {
            Ok(streams) => {
                write_manifest(
                    &dir,
                    &Manifest {
                        recipe: meta.recipe.clone(),
                        seed,
                        build: build.clone(),
                        config: recipe.config_path.display().to_string(),
                        episodes: cfg.training.episodes,
                        wall_clock_s: start.elapsed().as_secs_f64(),
                        streams,
                    },
                )
                .map_err(io_at(&dir))?;
                let done = Status {
                    state: RunState::Complete,
                    error: None,
                };
                write_status(&dir, &done).map_err(io_at(&dir))?;
            }
            Err(e) => {
                if let RecipeError::Train {
                    source: TrainError::NumericAbort { dump, .. },
                    ..
                } = &e
                {
                    let _ = write_atomic(&dir.join("abort_dump.json"), dump.as_bytes());
                }
                let aborted = Status {
                    state: RunState::Aborted,
                    error: Some(e.to_string()),
                };
                let _ = write_status(&dir, &aborted);
                return Err(e);
            }
        }
    }
    Ok(())
}

fn trained(
    cfg: &FileConfig,
    meta: &RunMeta,
    dir: &Path,
    name: &str,
) -> Result<(Trainer, Vec<EpisodeRecord>), RecipeError> {
    let config = cfg.train_config(meta.seed)?;
    train_stream(config, meta, dir, name)
}

fn train_stream(
    config: TrainConfig,
    meta: &RunMeta,
    dir: &Path,
    name: &str,
) -> Result<(Trainer, Vec<EpisodeRecord>), RecipeError> {
    let seed = meta.seed;
    let header = episode_header(config.rats(), config.eds());
    let mut stream = CsvStream::create(dir, name, &header).map_err(io_at(dir))?;
    let mut trainer = Trainer::new(config).map_err(|source| RecipeError::Train { seed, source })?;
    let mut write_err = None;
    let episodes = trainer.config.episodes;
    let records = trainer
        .train_with(episodes, |r| {
            if write_err.is_none() {
                write_err = stream.row(&episode_row(meta, Scheme::DeepRat.name(), r)).err();
            }
            if r.episode % 100 == 0 {
                info!("seed {seed} episode {} utility {:.4}", r.episode, r.utility);
            }
        })
        .map_err(|source| RecipeError::Train { seed, source })?;
    if let Some(e) = write_err {
        return Err(io_at(dir)(e));
    }
    stream.finish().map_err(io_at(dir))?;
    Ok((trainer, records))
}

fn write_records(
    dir: &Path,
    name: &str,
    meta: &RunMeta,
    scheme: Scheme,
    records: &[EpisodeRecord],
    rats: usize,
    eds: usize,
) -> Result<(), RecipeError> {
    let mut s = CsvStream::create(dir, name, &episode_header(rats, eds)).map_err(io_at(dir))?;
    for r in records {
        s.row(&episode_row(meta, scheme.name(), r)).map_err(io_at(dir))?;
    }
    s.finish().map_err(io_at(dir))?;
    Ok(())
}

fn evaluate(
    trainer: &Trainer,
    scheme: Scheme,
    episodes: usize,
) -> Result<Vec<EpisodeRecord>, RecipeError> {
    trainer
        .evaluate_scheme(scheme, episodes)
        .map_err(|source| RecipeError::Train {
            seed: trainer.config.seed,
            source,
        })
}

fn run_seed(
    kind: RecipeKind,
    cfg: &FileConfig,
    meta: &RunMeta,
    dir: &Path,
) -> Result<Vec<String>, RecipeError> {
    let (rats, eds) = (cfg.rat.len(), cfg.ed.len());
    let eval_eps = cfg.evaluation.episodes;
    let mut streams = Vec::new();
    match kind {
        RecipeKind::Train => {
            let (trainer, _) = trained(cfg, meta, dir, "train")?;
            streams.push("train".into());
            let ckpt = dir.join("trainer.json");
            trainer.save_checkpoint(&ckpt).map_err(|source| RecipeError::Train {
                seed: meta.seed,
                source,
            })?;
        }
        RecipeKind::Evaluate => {
            let (trainer, _) = trained(cfg, meta, dir, "train")?;
            let records = evaluate(&trainer, Scheme::DeepRat, eval_eps)?;
            write_records(dir, "evaluate", meta, Scheme::DeepRat, &records, rats, eds)?;
            write_share_matrices(dir, &records, rats, eds)?;
            streams.extend(["train", "evaluate", "assignment", "rate_share"].map(String::from));
        }
        RecipeKind::Baselines => {
            let (trainer, _) = trained(cfg, meta, dir, "train")?;
            streams.push("train".into());
            for scheme in Scheme::ALL {
                let records = evaluate(&trainer, scheme, eval_eps)?;
                let name = format!("eval_{}", scheme.name());
                write_records(dir, &name, meta, scheme, &records, rats, eds)?;
                streams.push(name);
            }
        }
        RecipeKind::Cdf => {
            let (trainer, _) = trained(cfg, meta, dir, "train")?;
            let header: Vec<String> = ["seed", "recipe", "build", "scheme", "utility", "cdf"]
                .map(String::from)
                .to_vec();
            let mut s = CsvStream::create(dir, "cdf", &header).map_err(io_at(dir))?;
            for scheme in Scheme::ALL {
                let records = evaluate(&trainer, scheme, eval_eps)?;
                let utilities: Vec<f64> = records.iter().map(|r| r.utility).collect();
                for (u, p) in empirical_cdf(&utilities) {
                    s.row(&[
                        meta.seed.to_string(),
                        meta.recipe.clone(),
                        meta.build.clone(),
                        scheme.name().to_string(),
                        num(u),
                        num(p),
                    ])
                    .map_err(io_at(dir))?;
                }
            }
            s.finish().map_err(io_at(dir))?;
            streams.extend(["train", "cdf"].map(String::from));
        }
        RecipeKind::Mobility => {
            let (trainer, records) = trained(cfg, meta, dir, "mobility")?;
            let c = &trainer.config;
            let period = c.shock_period.expect("checked before the run");
            let utilities: Vec<f64> = records.iter().map(|r| r.utility).collect();
            let (starts, conv) = segment_convergence(
                &utilities,
                period,
                c.convergence_window,
                c.convergence_tolerance,
                c.convergence_smoothing,
            );
            let header: Vec<String> = [
                "seed",
                "recipe",
                "build",
                "segment",
                "start_episode",
                "shocked",
                "convergence_episodes",
                "onset_episodes",
            ]
            .map(String::from)
            .to_vec();
            let mut s = CsvStream::create(dir, "segments", &header).map_err(io_at(dir))?;
            for (k, (start, e)) in starts.iter().zip(&conv).enumerate() {
                let seg = &utilities[start - 1..(start - 1 + period).min(utilities.len())];
                let onset = steady_state_onset(
                    &trailing_mean(seg, c.convergence_smoothing),
                    c.convergence_window,
                    c.convergence_tolerance,
                );
                s.row(&[
                    meta.seed.to_string(),
                    meta.recipe.clone(),
                    meta.build.clone(),
                    k.to_string(),
                    start.to_string(),
                    (k > 0).to_string(),
                    e.map(|v| v.to_string()).unwrap_or_default(),
                    onset.map(|v| v.to_string()).unwrap_or_default(),
                ])
                .map_err(io_at(dir))?;
            }
            s.finish().map_err(io_at(dir))?;
            streams.extend(["mobility", "segments"].map(String::from));
        }
        RecipeKind::Sweep => {
            let header: Vec<String> = [
                "seed",
                "recipe",
                "build",
                "k_inner",
                "convergence_episode",
                "eval_utility",
                "eval_sum_rate_bps",
                "eval_qos_satisfaction",
            ]
            .map(String::from)
            .to_vec();
            let mut rows = Vec::new();
            for &k in &cfg.sweep.k_inner {
                let mut config = cfg.train_config(meta.seed)?;
                config.k_inner = k;
                let name = format!("sweep_k{k}");
                let (trainer, records) = train_stream(config, meta, dir, &name)?;
                streams.push(name);
                let c = &trainer.config;
                let utilities: Vec<f64> = records.iter().map(|r| r.utility).collect();
                let conv = deeprat_core::orchestrator::detect_convergence_smoothed(
                    &utilities,
                    c.convergence_window,
                    c.convergence_tolerance,
                    c.convergence_smoothing,
                );
                let eval = evaluate(&trainer, Scheme::DeepRat, eval_eps)?;
                let n = eval.len() as f64;
                let steps: usize = eval.iter().map(|r| r.steps).sum();
                let ok: usize = eval.iter().map(|r| r.qos_satisfied_steps).sum();
                rows.push(vec![
                    meta.seed.to_string(),
                    meta.recipe.clone(),
                    meta.build.clone(),
                    k.to_string(),
                    conv.map(|v| v.to_string()).unwrap_or_default(),
                    num(eval.iter().map(|r| r.utility).sum::<f64>() / n),
                    num(eval.iter().map(|r| r.sum_rate_bps).sum::<f64>() / n),
                    num(ok as f64 / steps.max(1) as f64),
                ]);
            }
            let mut s = CsvStream::create(dir, "sweep", &header).map_err(io_at(dir))?;
            for r in &rows {
                s.row(r).map_err(io_at(dir))?;
            }
            s.finish().map_err(io_at(dir))?;
            streams.push("sweep".into());
        }
    }
    Ok(streams)
}

/// `(value, P[X ≤ value])` at every sorted sample.
pub fn empirical_cdf(values: &[f64]) -> Vec<(f64, f64)> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.into_iter()
        .enumerate()
        .map(|(i, x)| (x, (i + 1) as f64 / n))
        .collect()
}

/// Percentage of each ED's delivered rate carried by each RAT, from mean
/// link rates; `None` for an ED that received nothing.
pub fn rate_shares(records: &[EpisodeRecord], rats: usize, eds: usize) -> Vec<Option<Vec<f64>>> {
    let mut total = vec![0.0; eds * rats];
    for r in records {
        for (t, v) in total.iter_mut().zip(&r.link_rates_bps) {
            *t += v;
        }
    }
    total
        .chunks(rats)
        .map(|row| {
            let sum: f64 = row.iter().sum();
            (sum > 0.0).then(|| row.iter().map(|v| 100.0 * v / sum).collect())
        })
        .collect()
}

/// Percentage of episodes in which each ED ended up assigned to each RAT.
pub fn assignment_frequency(records: &[EpisodeRecord], rats: usize, eds: usize) -> Vec<Vec<f64>> {
    let n = records.len().max(1) as f64;
    (0..eds)
        .map(|u| {
            (0..rats)
                .map(|l| {
                    let hits = records.iter().filter(|r| r.final_masks[u] >> l & 1 == 1).count();
                    100.0 * hits as f64 / n
                })
                .collect()
        })
        .collect()
}

/// Delivered-rate shares per ED and RAT (percent) from the published table.
pub const REFERENCE_RATE_SHARES: [[f64; 3]; 10] = [
    [0.0, 76.2, 23.1],
    [99.1, 0.36, 0.54],
    [53.0, 30.7, 16.3],
    [76.2, 1.3, 22.5],
    [0.0, 0.0, 100.0],
    [60.1, 39.9, 0.0],
    [0.0, 0.0, 100.0],
    [91.8, 0.0, 8.2],
    [100.0, 0.0, 0.0],
    [0.0, 0.7, 99.3],
];

#[derive(Serialize)]
struct ShareAnnotation {
    note: &'static str,
    reference_rate_share_pct: Vec<Vec<f64>>,
}

fn write_share_matrices(
    dir: &Path,
    records: &[EpisodeRecord],
    rats: usize,
    eds: usize,
) -> Result<(), RecipeError> {
    let mut header = vec!["ed".to_string()];
    header.extend((1..=rats).map(|l| format!("rat{l}_pct")));
    let mut a = CsvStream::create(dir, "assignment", &header).map_err(io_at(dir))?;
    for (u, row) in assignment_frequency(records, rats, eds).iter().enumerate() {
        let mut f = vec![(u + 1).to_string()];
        f.extend(row.iter().map(|v| num(*v)));
        a.row(&f).map_err(io_at(dir))?;
    }
    a.finish().map_err(io_at(dir))?;
    let mut s = CsvStream::create(dir, "rate_share", &header).map_err(io_at(dir))?;
    for (u, row) in rate_shares(records, rats, eds).iter().enumerate() {
        let mut f = vec![(u + 1).to_string()];
        match row {
            Some(row) => f.extend(row.iter().map(|v| num(*v))),
            None => f.extend(std::iter::repeat_n(String::new(), rats)),
        }
        s.row(&f).map_err(io_at(dir))?;
    }
    s.finish().map_err(io_at(dir))?;
    let note = ShareAnnotation {
        note: "published delivered-rate shares, for comparison only",
        reference_rate_share_pct: REFERENCE_RATE_SHARES.iter().map(|r| r.to_vec()).collect(),
    };
    let text = toml::to_string(&note).expect("annotation serializes");
    write_atomic(&dir.join("rate_share_reference.toml"), text.as_bytes()).map_err(io_at(dir))
}
