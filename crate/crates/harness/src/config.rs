//! Experiment configuration file: TOML with explicit units in key names.
//!
//! Keys taken from the published tables are required. Everything else has a
//! default, and [`FileConfig::to_toml`] writes every key back out, so a
//! loaded file round-trips to an identical configuration.

use std::fmt;
use std::path::Path;

use deeprat_core::channel::{
    dbm_to_watt, free_space_loss_1m_db, psd_dbm_per_mhz_to_watt_per_hz, Arena, ChannelModel,
    Point, RatRadioProfile,
};
use deeprat_core::ddpg::DdpgConfig;
use deeprat_core::dqn::DqnConfig;
use deeprat_core::env::{ConstraintTerm, EdQosProfile};
use deeprat_core::orchestrator::{ChannelDynamics, PowerBudget};
use deeprat_core::presets::rat_positions;
use deeprat_core::TrainConfig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

impl ConfigError {
    fn invalid(path: impl fmt::Display, message: impl Into<String>) -> Self {
        ConfigError::Invalid {
            path: path.to_string(),
            message: message.into(),
        }
    }

    /// Dotted key path the error refers to.
    pub fn path(&self) -> &str {
        match self {
            ConfigError::Io { path, .. }
            | ConfigError::Parse { path, .. }
            | ConfigError::Invalid { path, .. } => path,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub evaluation: EvaluationSection,
    #[serde(default)]
    pub sweep: SweepSection,
    pub dqn: DqnSection,
    pub ddpg: DdpgSection,
    pub rat: Vec<RatSection>,
    pub ed: Vec<EdSection>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSection {
    pub arena_width_m: f64,
    pub arena_height_m: f64,
    pub speed_min_kmh: f64,
    pub speed_max_kmh: f64,
    pub slot_duration_ms: f64,
    pub normalization_distance_m: f64,
    pub channel_dynamics: ChannelDynamics,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self {
            arena_width_m: 200.0,
            arena_height_m: 200.0,
            speed_min_kmh: 2.0,
            speed_max_kmh: 6.0,
            slot_duration_ms: 1.0,
            normalization_distance_m: 10.0,
            channel_dynamics: ChannelDynamics::PerStep,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub episodes: usize,
    pub k_inner: usize,
    /// Episodes between mobility shocks; 0 disables them.
    pub shock_period_episodes: usize,
    pub convergence_window_episodes: usize,
    pub convergence_tolerance: f64,
    pub convergence_smoothing_episodes: usize,
    pub power_budget: PowerBudget,
    pub constraint_term: ConstraintTerm,
    pub parallel_rats: bool,
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self {
            episodes: 1000,
            k_inner: 1,
            shock_period_episodes: 0,
            convergence_window_episodes: 200,
            convergence_tolerance: 0.02,
            convergence_smoothing_episodes: 1,
            power_budget: PowerBudget::Rescale,
            constraint_term: ConstraintTerm::Signed,
            parallel_rats: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSection {
    pub episodes: usize,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self { episodes: 50 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub k_inner: Vec<usize>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            k_inner: vec![1, 2, 4],
        }
    }
}

fn default_target_sync() -> u64 {
    100
}

fn default_grad_clip() -> f64 {
    1.0
}

fn default_reward_scale() -> f64 {
    1e-3
}

fn default_tau() -> f64 {
    0.005
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DqnSection {
    pub buffer_size: usize,
    pub batch_size: usize,
    pub discount: f64,
    pub hidden_neurons: Vec<usize>,
    pub learning_rate: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay: f64,
    pub eta: f64,
    pub zeta: f64,
    #[serde(default = "default_target_sync")]
    pub target_sync_period_steps: u64,
    /// 0 disables clipping.
    #[serde(default = "default_grad_clip")]
    pub grad_clip_norm: f64,
    #[serde(default = "default_reward_scale")]
    pub reward_scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DdpgSection {
    pub buffer_size: usize,
    pub batch_size: usize,
    pub discount: f64,
    pub actor_hidden_neurons: Vec<usize>,
    pub critic_hidden_neurons: Vec<usize>,
    pub actor_learning_rate: f64,
    pub critic_learning_rate: f64,
    pub ou_theta: f64,
    pub ou_sigma: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub zeta: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    /// 0 disables clipping.
    #[serde(default = "default_grad_clip")]
    pub grad_clip_norm: f64,
    #[serde(default = "default_reward_scale")]
    pub reward_scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum ChannelSection {
    DirectionalMmwave {
        los_exponent: f64,
        nlos_exponent: f64,
    },
    Cost231Urban {
        #[serde(default = "default_base_height")]
        base_height_m: f64,
        #[serde(default = "default_mobile_height")]
        mobile_height_m: f64,
    },
    Exponential {
        exponent: f64,
        /// Defaults to minus the free-space loss at 1 m.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reference_gain_db: Option<f64>,
    },
}

fn default_base_height() -> f64 {
    30.0
}

fn default_mobile_height() -> f64 {
    1.5
}

fn default_multipaths() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatSection {
    pub name: String,
    pub frequency_ghz: f64,
    pub bandwidth_mhz: f64,
    pub max_power_dbm: f64,
    pub noise_psd_dbm_per_mhz: f64,
    pub channel: ChannelSection,
    pub antennas: usize,
    #[serde(default = "default_multipaths")]
    pub multipaths: usize,
    #[serde(default)]
    pub antenna_gain_dbi: f64,
    pub shadowing_db: f64,
    pub price_euro_per_bit: f64,
    /// Site in metres; defaults to a corner of the reference triangle.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position_m: Option<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdSection {
    pub r_min_bps: f64,
    pub alpha: f64,
    pub gamma: f64,
}

/// Parses `text`; `origin` prefixes error paths (usually the file name).
pub fn parse(text: &str, origin: &str) -> Result<FileConfig, ConfigError> {
    let qualify = |p: String| {
        if p.is_empty() || p == "." {
            origin.to_string()
        } else {
            format!("{origin}:{p}")
        }
    };
    let de = toml::Deserializer::parse(text).map_err(|e| ConfigError::Parse {
        path: origin.to_string(),
        message: e.to_string(),
    })?;
    let cfg: FileConfig = serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Parse {
        path: qualify(e.path().to_string()),
        message: e.inner().message().to_string(),
    })?;
    cfg.validate()
        .map_err(|e| ConfigError::invalid(qualify(e.path().to_string()), e.message()))?;
    Ok(cfg)
}

/// Reads and validates a configuration file.
pub fn load(path: &Path) -> Result<FileConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse(&text, &path.display().to_string())
}

impl ConfigError {
    fn message(&self) -> String {
        match self {
            ConfigError::Io { source, .. } => source.to_string(),
            ConfigError::Parse { message, .. } | ConfigError::Invalid { message, .. } => {
                message.clone()
            }
        }
    }
}

fn check(ok: bool, path: impl fmt::Display, message: &str) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError::invalid(path, message))
    }
}

fn positive(v: f64) -> bool {
    v.is_finite() && v > 0.0
}

fn unit(v: f64) -> bool {
    (0.0..=1.0).contains(&v)
}

impl FileConfig {
    /// Range checks with key paths; the remaining invariants are checked by
    /// the core when the configuration is built.
    pub fn validate(&self) -> Result<(), ConfigError> {
        check(
            self.schema_version == SCHEMA_VERSION,
            "schema_version",
            &format!("expected {SCHEMA_VERSION}, found {}", self.schema_version),
        )?;
        let s = &self.scenario;
        check(positive(s.arena_width_m), "scenario.arena_width_m", "must be positive")?;
        check(positive(s.arena_height_m), "scenario.arena_height_m", "must be positive")?;
        check(
            s.speed_min_kmh.is_finite() && s.speed_min_kmh >= 0.0,
            "scenario.speed_min_kmh",
            "must be non-negative",
        )?;
        check(
            s.speed_max_kmh.is_finite() && s.speed_max_kmh >= s.speed_min_kmh,
            "scenario.speed_max_kmh",
            "must be at least speed_min_kmh",
        )?;
        check(
            s.slot_duration_ms.is_finite() && s.slot_duration_ms >= 0.0,
            "scenario.slot_duration_ms",
            "must be non-negative",
        )?;
        check(
            positive(s.normalization_distance_m),
            "scenario.normalization_distance_m",
            "must be positive",
        )?;

        let t = &self.training;
        check(t.episodes >= 1, "training.episodes", "must be at least 1")?;
        check(t.k_inner >= 1, "training.k_inner", "must be at least 1")?;
        check(
            (1..=t.episodes).contains(&t.convergence_window_episodes),
            "training.convergence_window_episodes",
            "must lie in 1..=episodes",
        )?;
        check(
            t.convergence_tolerance.is_finite() && t.convergence_tolerance >= 0.0,
            "training.convergence_tolerance",
            "must be non-negative",
        )?;
        check(
            t.convergence_smoothing_episodes >= 1,
            "training.convergence_smoothing_episodes",
            "must be at least 1",
        )?;
        check(self.evaluation.episodes >= 1, "evaluation.episodes", "must be at least 1")?;
        check(!self.sweep.k_inner.is_empty(), "sweep.k_inner", "must not be empty")?;
        for (i, k) in self.sweep.k_inner.iter().enumerate() {
            check(*k >= 1, format!("sweep.k_inner[{i}]"), "must be at least 1")?;
        }

        let d = &self.dqn;
        check(d.buffer_size >= d.batch_size, "dqn.buffer_size", "must be at least batch_size")?;
        check(d.batch_size >= 1, "dqn.batch_size", "must be at least 1")?;
        check(unit(d.discount), "dqn.discount", "must lie in [0, 1]")?;
        check(positive(d.learning_rate), "dqn.learning_rate", "must be positive")?;
        check(unit(d.epsilon_start), "dqn.epsilon_start", "must lie in [0, 1]")?;
        check(
            unit(d.epsilon_end) && d.epsilon_end <= d.epsilon_start,
            "dqn.epsilon_end",
            "must lie in [0, epsilon_start]",
        )?;
        check(
            d.epsilon_decay.is_finite() && d.epsilon_decay >= 0.0,
            "dqn.epsilon_decay",
            "must be non-negative",
        )?;
        check(d.grad_clip_norm >= 0.0, "dqn.grad_clip_norm", "must be non-negative")?;
        check(positive(d.reward_scale), "dqn.reward_scale", "must be positive")?;
        for (i, n) in d.hidden_neurons.iter().enumerate() {
            check(*n >= 1, format!("dqn.hidden_neurons[{i}]"), "must be at least 1")?;
        }

        let p = &self.ddpg;
        check(p.buffer_size >= p.batch_size, "ddpg.buffer_size", "must be at least batch_size")?;
        check(p.batch_size >= 1, "ddpg.batch_size", "must be at least 1")?;
        check(unit(p.discount), "ddpg.discount", "must lie in [0, 1]")?;
        check(positive(p.actor_learning_rate), "ddpg.actor_learning_rate", "must be positive")?;
        check(positive(p.critic_learning_rate), "ddpg.critic_learning_rate", "must be positive")?;
        check(
            p.ou_theta.is_finite() && p.ou_theta >= 0.0,
            "ddpg.ou_theta",
            "must be non-negative",
        )?;
        check(
            p.ou_sigma.is_finite() && p.ou_sigma >= 0.0,
            "ddpg.ou_sigma",
            "must be non-negative",
        )?;
        check(p.tau > 0.0 && p.tau <= 1.0, "ddpg.tau", "must lie in (0, 1]")?;
        check(p.grad_clip_norm >= 0.0, "ddpg.grad_clip_norm", "must be non-negative")?;
        check(positive(p.reward_scale), "ddpg.reward_scale", "must be positive")?;
        for (i, n) in p.actor_hidden_neurons.iter().enumerate() {
            check(*n >= 1, format!("ddpg.actor_hidden_neurons[{i}]"), "must be at least 1")?;
        }
        for (i, n) in p.critic_hidden_neurons.iter().enumerate() {
            check(*n >= 1, format!("ddpg.critic_hidden_neurons[{i}]"), "must be at least 1")?;
        }

        check(
            (1..=16).contains(&self.rat.len()),
            "rat",
            "need between 1 and 16 RATs",
        )?;
        for (l, r) in self.rat.iter().enumerate() {
            let at = |k: &str| format!("rat[{l}].{k}");
            check(positive(r.frequency_ghz), at("frequency_ghz"), "must be positive")?;
            check(positive(r.bandwidth_mhz), at("bandwidth_mhz"), "must be positive")?;
            check(r.max_power_dbm.is_finite(), at("max_power_dbm"), "must be finite")?;
            check(
                r.noise_psd_dbm_per_mhz.is_finite(),
                at("noise_psd_dbm_per_mhz"),
                "must be finite",
            )?;
            check(r.antennas >= 1, at("antennas"), "must be at least 1")?;
            check(r.multipaths >= 1, at("multipaths"), "must be at least 1")?;
            check(r.antenna_gain_dbi.is_finite(), at("antenna_gain_dbi"), "must be finite")?;
            check(
                r.shadowing_db.is_finite() && r.shadowing_db >= 0.0,
                at("shadowing_db"),
                "must be non-negative",
            )?;
            check(
                r.price_euro_per_bit.is_finite() && r.price_euro_per_bit >= 0.0,
                at("price_euro_per_bit"),
                "must be non-negative",
            )?;
            match &r.channel {
                ChannelSection::DirectionalMmwave {
                    los_exponent,
                    nlos_exponent,
                } => {
                    check(positive(*los_exponent), at("channel.los_exponent"), "must be positive")?;
                    check(
                        positive(*nlos_exponent),
                        at("channel.nlos_exponent"),
                        "must be positive",
                    )?;
                }
                ChannelSection::Cost231Urban {
                    base_height_m,
                    mobile_height_m,
                } => {
                    check(positive(*base_height_m), at("channel.base_height_m"), "must be positive")?;
                    check(
                        positive(*mobile_height_m),
                        at("channel.mobile_height_m"),
                        "must be positive",
                    )?;
                }
                ChannelSection::Exponential {
                    exponent,
                    reference_gain_db,
                } => {
                    check(positive(*exponent), at("channel.exponent"), "must be positive")?;
                    check(
                        reference_gain_db.is_none_or(f64::is_finite),
                        at("channel.reference_gain_db"),
                        "must be finite",
                    )?;
                }
            }
            match r.position_m {
                Some([x, y]) => check(
                    (0.0..=s.arena_width_m).contains(&x) && (0.0..=s.arena_height_m).contains(&y),
                    at("position_m"),
                    "must lie inside the arena",
                )?,
                None => check(
                    l < 3,
                    at("position_m"),
                    "required beyond the third RAT",
                )?,
            }
        }

        check(!self.ed.is_empty(), "ed", "need at least one ED")?;
        for (u, e) in self.ed.iter().enumerate() {
            let at = |k: &str| format!("ed[{u}].{k}");
            check(positive(e.r_min_bps), at("r_min_bps"), "must be positive")?;
            check(unit(e.alpha), at("alpha"), "must lie in [0, 1]")?;
            check(unit(e.gamma), at("gamma"), "must lie in [0, 1]")?;
            check(
                (e.alpha + e.gamma - 1.0).abs() <= 1e-6,
                format!("ed[{u}]"),
                "alpha + gamma must equal 1",
            )?;
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn profiles(&self) -> Vec<RatRadioProfile<f64>> {
        let sites = rat_positions::<f64>();
        self.rat
            .iter()
            .enumerate()
            .map(|(l, r)| RatRadioProfile {
                id: l,
                frequency_ghz: r.frequency_ghz,
                bandwidth_hz: r.bandwidth_mhz * 1e6,
                max_power_w: dbm_to_watt(r.max_power_dbm),
                noise_psd_w_per_hz: psd_dbm_per_mhz_to_watt_per_hz(r.noise_psd_dbm_per_mhz),
                model: match r.channel {
                    ChannelSection::DirectionalMmwave {
                        los_exponent,
                        nlos_exponent,
                    } => ChannelModel::DirectionalMmWave {
                        los_exponent,
                        nlos_exponent,
                    },
                    ChannelSection::Cost231Urban {
                        base_height_m,
                        mobile_height_m,
                    } => ChannelModel::Cost231Urban {
                        base_height_m,
                        mobile_height_m,
                    },
                    ChannelSection::Exponential {
                        exponent,
                        reference_gain_db,
                    } => ChannelModel::ExponentialPathLoss {
                        exponent,
                        reference_gain_db: reference_gain_db
                            .unwrap_or_else(|| -free_space_loss_1m_db(r.frequency_ghz)),
                    },
                },
                n_antennas: r.antennas,
                n_paths: r.multipaths,
                antenna_gain_dbi: r.antenna_gain_dbi,
                shadowing_std_db: r.shadowing_db,
                price_per_bit: r.price_euro_per_bit,
                position: r.position_m.map_or(sites[l], |[x, y]| Point::new(x, y)),
            })
            .collect()
    }

    pub fn qos(&self) -> Vec<EdQosProfile<f64>> {
        self.ed
            .iter()
            .map(|e| EdQosProfile {
                r_min: e.r_min_bps,
                alpha: e.alpha,
                gamma: e.gamma,
            })
            .collect()
    }

    /// Core training configuration for `seed`.
    pub fn train_config(&self, seed: u64) -> Result<TrainConfig, ConfigError> {
        let clip = |c: f64| (c > 0.0).then_some(c);
        let (s, t, d, p) = (&self.scenario, &self.training, &self.dqn, &self.ddpg);
        let config = TrainConfig {
            episodes: t.episodes,
            profiles: self.profiles(),
            qos: self.qos(),
            arena: Arena::new(s.arena_width_m, s.arena_height_m)
                .map_err(|e| ConfigError::invalid("scenario", e.to_string()))?,
            speed_range_kmh: (s.speed_min_kmh, s.speed_max_kmh),
            slot_duration_s: s.slot_duration_ms * 1e-3,
            normalization_distance_m: s.normalization_distance_m,
            dqn: DqnConfig {
                hidden: d.hidden_neurons.clone(),
                learning_rate: d.learning_rate,
                gamma: d.discount,
                buffer_capacity: d.buffer_size,
                batch_size: d.batch_size,
                target_sync_period: d.target_sync_period_steps,
                grad_clip: clip(d.grad_clip_norm),
                epsilon_start: d.epsilon_start,
                epsilon_end: d.epsilon_end,
                epsilon_decay: d.epsilon_decay,
                eta: d.eta,
                zeta: d.zeta,
                reward_scale: d.reward_scale,
            },
            ddpg: DdpgConfig {
                actor_hidden: p.actor_hidden_neurons.clone(),
                critic_hidden: p.critic_hidden_neurons.clone(),
                actor_learning_rate: p.actor_learning_rate,
                critic_learning_rate: p.critic_learning_rate,
                gamma: p.discount,
                buffer_capacity: p.buffer_size,
                batch_size: p.batch_size,
                tau: p.tau,
                ou_theta: p.ou_theta,
                ou_sigma: p.ou_sigma,
                grad_clip: clip(p.grad_clip_norm),
                eta1: p.eta1,
                eta2: p.eta2,
                zeta: p.zeta,
                reward_scale: p.reward_scale,
            },
            k_inner: t.k_inner,
            seed,
            shock_period: (t.shock_period_episodes > 0).then_some(t.shock_period_episodes),
            convergence_window: t.convergence_window_episodes,
            convergence_tolerance: t.convergence_tolerance,
            convergence_smoothing: t.convergence_smoothing_episodes,
            channel_dynamics: s.channel_dynamics,
            power_budget: t.power_budget,
            constraint_term: t.constraint_term,
            parallel_rats: t.parallel_rats,
        };
        config
            .validate()
            .map_err(|e| ConfigError::invalid("training", e.to_string()))?;
        Ok(config)
    }
}
