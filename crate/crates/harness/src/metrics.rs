//! Headered CSV metrics streams, run status and manifest files.
//!
//! A stream is appended to `<name>.csv.partial` and renamed to `<name>.csv`
//! only once complete, so an interrupted run never leaves a file that looks
//! finished.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use deeprat_core::orchestrator::EpisodeRecord;
use serde::{Deserialize, Serialize};

/// Identifies the code that produced a file: crate version plus a hash of
/// the configuration text.
pub fn build_id(config_text: &str) -> String {
    // FNV-1a, 64 bit.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in config_text.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    format!("{}+{:016x}", env!("CARGO_PKG_VERSION"), h)
}

/// Run metadata prefixed to every row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunMeta {
    pub seed: u64,
    pub recipe: String,
    pub build: String,
}

pub struct CsvStream {
    writer: csv::Writer<BufWriter<File>>,
    partial: PathBuf,
    done: PathBuf,
    columns: usize,
}

impl CsvStream {
    pub fn create(dir: &Path, name: &str, header: &[String]) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        let done = dir.join(format!("{name}.csv"));
        let partial = dir.join(format!("{name}.csv.partial"));
        if done.exists() {
            fs::remove_file(&done)?;
        }
        let mut writer = csv::Writer::from_writer(BufWriter::new(File::create(&partial)?));
        writer.write_record(header)?;
        writer.flush()?;
        Ok(Self {
            writer,
            partial,
            done,
            columns: header.len(),
        })
    }

    pub fn row(&mut self, fields: &[String]) -> io::Result<()> {
        assert_eq!(fields.len(), self.columns, "row width must match the header");
        self.writer.write_record(fields)?;
        self.writer.flush()
    }

    /// Flushes and moves the stream to its final name.
    pub fn finish(mut self) -> io::Result<PathBuf> {
        self.writer.flush()?;
        drop(self.writer);
        fs::rename(&self.partial, &self.done)?;
        Ok(self.done)
    }
}

/// Shortest round-trip decimal; refuses non-finite values.
pub fn num(v: f64) -> String {
    assert!(v.is_finite(), "non-finite value reached a metrics file");
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// Fixed column order for episode streams with `rats` RATs and `eds` EDs.
pub fn episode_header(rats: usize, eds: usize) -> Vec<String> {
    let mut h: Vec<String> = [
        "seed",
        "recipe",
        "build",
        "scheme",
        "episode",
        "epsilon",
        "es_reward",
        "es_loss",
        "utility",
        "sum_rate_bps",
        "power_violations",
        "qos_violations",
        "qos_satisfied_steps",
        "steps",
        "shocked",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for l in 1..=rats {
        h.push(format!("rat{l}_reward"));
        h.push(format!("rat{l}_critic_loss"));
    }
    for u in 1..=eds {
        h.push(format!("ed{u}_rate_bps"));
        h.push(format!("ed{u}_rats"));
    }
    h
}

pub fn episode_row(meta: &RunMeta, scheme: &str, r: &EpisodeRecord) -> Vec<String> {
    let mut f = vec![
        meta.seed.to_string(),
        meta.recipe.clone(),
        meta.build.clone(),
        scheme.to_string(),
        r.episode.to_string(),
        num(r.epsilon),
        num(r.es_reward),
        opt(r.es_loss),
        num(r.utility),
        num(r.sum_rate_bps),
        r.power_violations.to_string(),
        r.qos_violations.to_string(),
        r.qos_satisfied_steps.to_string(),
        r.steps.to_string(),
        r.shocked.to_string(),
    ];
    for (rw, loss) in r.rat_rewards.iter().zip(&r.critic_losses) {
        f.push(num(*rw));
        f.push(opt(*loss));
    }
    for (rate, mask) in r.ed_rates_bps.iter().zip(&r.final_masks) {
        f.push(num(*rate));
        f.push(mask.to_string());
    }
    f
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunState {
    Running,
    Complete,
    Aborted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Status {
    pub state: RunState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub fn write_status(dir: &Path, status: &Status) -> io::Result<()> {
    let text = toml::to_string(status).expect("status serializes");
    write_atomic(&dir.join("status.toml"), text.as_bytes())
}

pub fn read_status(dir: &Path) -> Option<Status> {
    toml::from_str(&fs::read_to_string(dir.join("status.toml")).ok()?).ok()
}

/// Per-seed run description. Wall-clock lives here, never in a stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub recipe: String,
    pub seed: u64,
    pub build: String,
    pub config: String,
    pub episodes: usize,
    pub wall_clock_s: f64,
    pub streams: Vec<String>,
}

pub fn write_manifest(dir: &Path, m: &Manifest) -> io::Result<()> {
    let text = toml::to_string(m).expect("manifest serializes");
    write_atomic(&dir.join("manifest.toml"), text.as_bytes())
}

/// Writes via a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("partial");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(tmp, path)
}
