//! The nested training loop: one ES decision per ED step, followed by the
//! per-RAT power decisions made under that assignment.
//!
//! Per ED step `u` of an episode:
//! 1. fading is redrawn (per [`ChannelDynamics`]);
//! 2. the ES observes, picks a RAT subset for ED `u` and updates row `u`;
//! 3. `k_inner` times: every RAT agent acts, the network is evaluated, each
//!    RAT stores its transition and learns;
//! 4. the ES reward is computed from the final snapshot, the ES transition is
//!    stored and the ES learns.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{kmh_to_mps, Arena, Channel, ChannelError, RatRadioProfile};
use crate::ddpg::{encode_rat_state, rat_observation_len, rat_reward, DdpgAgent, DdpgConfig};
use crate::dqn::{
    action_count, encode_es_state, es_observation_len, es_reward, DqnAgent, DqnConfig,
};
use crate::baselines::{
    convex_power_oracle, fixed_equal_power, multi_mode_assign, random_assign, BaselineKind,
    OracleSettings,
};
use crate::env::{
    evaluate_network, Assignment, ConstraintTerm, EdQosProfile, EnvError, Environment, NetworkSnapshot,
    NormalizationSpec, PowerAlloc,
};
use crate::matrix::LinkMatrix;
use crate::nn::{NnError, Transition};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("non-finite {quantity} at episode {episode}, ED step {step}")]
    NumericAbort {
        episode: usize,
        step: usize,
        quantity: String,
        /// JSON dump of the trainer state just before the failing step.
        dump: Box<String>,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// When small-scale fading and shadowing are redrawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelDynamics {
    /// Before every ED step.
    PerStep,
    /// Once at the start of every episode.
    PerEpisode,
    /// Never; the gains drawn at start-up stay fixed.
    Static,
}

/// How per-RAT power proposals relate to the budget `P_l^max`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerBudget {
    /// Proposals are applied as is; overspending only costs reward.
    Penalty,
    /// A proposal whose sum exceeds the budget is scaled down onto it.
    Rescale,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig<T> {
    pub episodes: usize,
    pub profiles: Vec<RatRadioProfile<T>>,
    pub qos: Vec<EdQosProfile<T>>,
    pub arena: Arena<T>,
    pub speed_range_kmh: (T, T),
    /// Duration of one ED step; positions advance by `U` slots per episode.
    pub slot_duration_s: T,
    /// Distance at which `r_max` is evaluated.
    pub normalization_distance_m: T,
    pub dqn: DqnConfig,
    pub ddpg: DdpgConfig,
    pub k_inner: usize,
    pub seed: u64,
    /// Episodes between mobility shocks; `None` disables shocks.
    pub shock_period: Option<usize>,
    pub convergence_window: usize,
    pub convergence_tolerance: f64,
    /// Trailing moving-average length applied before steady-state detection.
    pub convergence_smoothing: usize,
    pub channel_dynamics: ChannelDynamics,
    pub power_budget: PowerBudget,
    /// Slack treatment in the constraint terms of every reward.
    pub constraint_term: ConstraintTerm,
    /// Run the per-RAT act and learn phases on separate threads.
    pub parallel_rats: bool,
}

impl<T: Scalar> TrainConfig<T> {
    pub fn eds(&self) -> usize {
        self.qos.len()
    }

    pub fn rats(&self) -> usize {
        self.profiles.len()
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.episodes == 0 {
            return bad("episodes must be at least 1".into());
        }
        if self.qos.is_empty() || self.profiles.is_empty() {
            return bad("need at least one ED and one RAT".into());
        }
        if self.rats() > 16 {
            return bad("at most 16 RATs are supported".into());
        }
        for p in &self.profiles {
            p.validate()?;
        }
        for (u, q) in self.qos.iter().enumerate() {
            q.validate(u)?;
        }
        if self.k_inner == 0 {
            return bad("k_inner must be at least 1".into());
        }
        if self.convergence_window == 0 {
            return bad("convergence window must be at least 1".into());
        }
        if self.convergence_window > self.episodes {
            return bad("convergence window exceeds the episode count".into());
        }
        if self.convergence_smoothing == 0 {
            return bad("convergence smoothing must be at least 1".into());
        }
        if !(self.convergence_tolerance >= 0.0) {
            return bad("convergence tolerance must be non-negative".into());
        }
        if let Some(p) = self.shock_period {
            if p == 0 {
                return bad("shock period must be positive".into());
            }
        }
        let (lo, hi) = self.speed_range_kmh;
        if !(lo >= T::zero() && hi >= lo) {
            return bad("speed range must satisfy 0 <= min <= max".into());
        }
        if !(self.slot_duration_s >= T::zero()) {
            return bad("slot duration must be non-negative".into());
        }
        let d = &self.dqn;
        if d.batch_size == 0 || d.batch_size > d.buffer_capacity {
            return bad("dqn batch size must be in 1..=buffer capacity".into());
        }
        if !(0.0..=1.0).contains(&d.gamma) {
            return bad("dqn gamma must lie in [0, 1]".into());
        }
        if !(d.epsilon_end >= 0.0 && d.epsilon_start <= 1.0 && d.epsilon_end <= d.epsilon_start) {
            return bad("epsilon must satisfy 0 <= end <= start <= 1".into());
        }
        let g = &self.ddpg;
        if g.batch_size == 0 || g.batch_size > g.buffer_capacity {
            return bad("ddpg batch size must be in 1..=buffer capacity".into());
        }
        if !(0.0..=1.0).contains(&g.tau) {
            return bad("ddpg tau must lie in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&g.gamma) {
            return bad("ddpg gamma must lie in [0, 1]".into());
        }
        Ok(())
    }
}

/// Per-episode summary. Rates in bit/s, averaged over the episode's ED steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub epsilon: f64,
    pub es_reward: f64,
    pub es_loss: Option<f64>,
    pub rat_rewards: Vec<f64>,
    pub critic_losses: Vec<Option<f64>>,
    pub utility: f64,
    pub sum_rate_bps: f64,
    pub ed_rates_bps: Vec<f64>,
    /// Mean link rates, row-major by ED.
    pub link_rates_bps: Vec<f64>,
    /// Assignment at the end of the episode, as RAT bit masks per ED.
    pub final_masks: Vec<usize>,
    pub power_violations: usize,
    pub qos_violations: usize,
    /// ED steps in which every ED met its minimum rate.
    pub qos_satisfied_steps: usize,
    pub steps: usize,
    /// A mobility shock was applied right before this episode.
    pub shocked: bool,
}

#[derive(Default)]
struct Accumulator {
    es_reward: f64,
    es_loss: (f64, usize),
    rat_rewards: Vec<f64>,
    critic_losses: Vec<(f64, usize)>,
    utility: f64,
    sum_rate: f64,
    ed_rates: Vec<f64>,
    link_rates: Vec<f64>,
    power_violations: usize,
    qos_violations: usize,
    qos_satisfied_steps: usize,
    steps: usize,
}

impl Accumulator {
    fn new(eds: usize, rats: usize) -> Self {
        Self {
            rat_rewards: vec![0.0; rats],
            critic_losses: vec![(0.0, 0); rats],
            ed_rates: vec![0.0; eds],
            link_rates: vec![0.0; eds * rats],
            ..Self::default()
        }
    }

    fn add_snapshot<T: Scalar>(&mut self, s: &NetworkSnapshot<T>) {
        self.utility += s.utility().as_f64();
        self.sum_rate += s.sum_rate().as_f64();
        for (a, r) in self.ed_rates.iter_mut().zip(&s.ed_rates) {
            *a += r.as_f64();
        }
        for (a, r) in self.link_rates.iter_mut().zip(s.link_rates.as_slice()) {
            *a += r.as_f64();
        }
        self.power_violations += s.report.power_violations();
        let q = s.report.qos_violations();
        self.qos_violations += q;
        if q == 0 {
            self.qos_satisfied_steps += 1;
        }
        self.steps += 1;
    }

    fn finish(self, episode: usize, epsilon: f64, final_masks: Vec<usize>, shocked: bool) -> EpisodeRecord {
        let n = self.steps.max(1) as f64;
        let mean = |(s, c): (f64, usize)| (c > 0).then(|| s / c as f64);
        EpisodeRecord {
            episode,
            epsilon,
            es_reward: self.es_reward / n,
            es_loss: mean(self.es_loss),
            rat_rewards: self.rat_rewards.iter().map(|r| r / n).collect(),
            critic_losses: self.critic_losses.into_iter().map(mean).collect(),
            utility: self.utility / n,
            sum_rate_bps: self.sum_rate / n,
            ed_rates_bps: self.ed_rates.iter().map(|r| r / n).collect(),
            link_rates_bps: self.link_rates.iter().map(|r| r / n).collect(),
            final_masks,
            power_violations: self.power_violations,
            qos_violations: self.qos_violations,
            qos_satisfied_steps: self.qos_satisfied_steps,
            steps: self.steps,
            shocked,
        }
    }
}

/// Policy evaluated by [`Trainer::evaluate_scheme`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    DeepRat,
    Baseline(BaselineKind),
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [
        Scheme::DeepRat,
        Scheme::Baseline(BaselineKind::MultiMode),
        Scheme::Baseline(BaselineKind::RandomAssign),
        Scheme::Baseline(BaselineKind::FixedEqualPower),
        Scheme::Baseline(BaselineKind::ConvexOracle),
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::DeepRat => "deeprat",
            Scheme::Baseline(b) => b.name(),
        }
    }
}

/// Counters exposed for loop-structure checks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopCounters {
    pub es_transitions: u64,
    pub rat_iterations: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    Assigned,
    PowersApplied,
}

/// Complete training state: environment, agents, history and RNGs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trainer<T> {
    pub config: TrainConfig<T>,
    env: Environment<T>,
    es: DqnAgent<T>,
    rat_agents: Vec<DdpgAgent<T>>,
    assignment: Assignment,
    powers: PowerAlloc<T>,
    last: Option<NetworkSnapshot<T>>,
    episode: usize,
    counters: LoopCounters,
    rng: ChaCha8Rng,
}

fn seed_for(seed: u64, stream: u64) -> u64 {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r.random()
}

fn finite_or_abort<T: Scalar>(
    v: T,
    quantity: &str,
    episode: usize,
    step: usize,
    dump: impl FnOnce() -> String,
) -> Result<T, TrainError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(TrainError::NumericAbort {
            episode,
            step,
            quantity: quantity.to_string(),
            dump: Box::new(dump()),
        })
    }
}

impl<T: Scalar> Trainer<T> {
    pub fn new(config: TrainConfig<T>) -> Result<Self, TrainError> {
        config.validate()?;
        let (eds, rats) = (config.eds(), config.rats());
        let speeds = (
            kmh_to_mps(config.speed_range_kmh.0),
            kmh_to_mps(config.speed_range_kmh.1),
        );
        let channel = Channel::new(
            config.profiles.clone(),
            config.arena,
            eds,
            speeds,
            seed_for(config.seed, 1),
        )?;
        let norm =
            NormalizationSpec::from_profiles(&config.profiles, config.normalization_distance_m)?;
        let env = Environment::new(channel, config.qos.clone(), norm)?;
        let es = DqnAgent::new(
            es_observation_len(eds, rats),
            rats,
            config.dqn.clone(),
            seed_for(config.seed, 2),
        );
        let rat_agents = (0..rats)
            .map(|l| {
                DdpgAgent::new(
                    l,
                    eds,
                    rat_observation_len(eds),
                    config.profiles[l].max_power_w,
                    config.ddpg.clone(),
                    seed_for(config.seed, 3 + l as u64),
                )
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed_for(config.seed, 0));
        let masks: Vec<usize> = (0..eds)
            .map(|_| rng.random_range(1..=action_count(rats)))
            .collect();
        Ok(Self {
            env,
            es,
            rat_agents,
            assignment: Assignment::from_masks(rats, &masks),
            powers: PowerAlloc::zeros(eds, rats),
            last: None,
            episode: 0,
            counters: LoopCounters::default(),
            rng,
            config,
        })
    }

    pub fn environment(&self) -> &Environment<T> {
        &self.env
    }

    pub fn environment_mut(&mut self) -> &mut Environment<T> {
        &mut self.env
    }

    pub fn es_agent(&self) -> &DqnAgent<T> {
        &self.es
    }

    pub fn rat_agents(&self) -> &[DdpgAgent<T>] {
        &self.rat_agents
    }

    pub fn assignment(&self) -> &Assignment {
        &self.assignment
    }

    pub fn last_snapshot(&self) -> Option<&NetworkSnapshot<T>> {
        self.last.as_ref()
    }

    /// Episodes completed so far.
    pub fn episodes_done(&self) -> usize {
        self.episode
    }

    pub fn counters(&self) -> LoopCounters {
        self.counters
    }

    /// Digest of every network of every agent.
    pub fn network_checksum(&self) -> u64 {
        let mut h = self.es.online().checksum() ^ self.es.target().checksum().rotate_left(7);
        for a in &self.rat_agents {
            h = h.rotate_left(13) ^ a.checksum();
        }
        h
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("trainer state serialises")
    }

    pub fn from_json(s: &str) -> Result<Self, TrainError> {
        serde_json::from_str(s).map_err(|e| TrainError::Checkpoint(e.to_string()))
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<(), TrainError> {
        let tmp = path.with_extension("partial");
        std::fs::write(&tmp, self.to_json())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self, TrainError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Random repositioning of every ED; networks and buffers are kept.
    pub fn apply_mobility_shock(&mut self) {
        self.env.channel.mobility_shock();
    }

    fn next_episode_is_shocked(&self) -> bool {
        matches!(self.config.shock_period, Some(p) if self.episode > 0 && self.episode % p == 0)
    }

    fn begin_episode(&mut self) -> bool {
        let shocked = self.next_episode_is_shocked();
        if shocked {
            self.apply_mobility_shock();
        } else if self.episode > 0 {
            let dt = self.config.slot_duration_s * T::of_usize(self.config.eds());
            if dt > T::zero() {
                self.env.channel.step_mobility(dt);
            }
        }
        if self.config.channel_dynamics == ChannelDynamics::PerEpisode {
            self.env.channel.redraw_fading();
        }
        for a in &mut self.rat_agents {
            a.reset_noise();
        }
        shocked
    }

    fn apply_budget(&self, l: usize, mut p: Vec<T>) -> Vec<T> {
        if self.config.power_budget == PowerBudget::Rescale {
            let cap = self.config.profiles[l].max_power_w;
            let total: T = p.iter().copied().sum();
            if total > cap {
                // A few ulps under the budget so rounding cannot overshoot it.
                let s = cap / total * (T::one() - T::of(4.0) * T::epsilon());
                p.iter_mut().for_each(|x| *x = *x * s);
            }
        }
        p
    }

    /// Runs one training episode.
    pub fn train_episode(&mut self) -> Result<EpisodeRecord, TrainError> {
        let (eds, rats) = (self.config.eds(), self.config.rats());
        let shocked = self.begin_episode();
        let mut acc = Accumulator::new(eds, rats);
        let eta_es = T::of(self.config.dqn.eta);
        let zeta_es = T::of(self.config.dqn.zeta);
        let eta1 = T::of(self.config.ddpg.eta1);
        let eta2 = T::of(self.config.ddpg.eta2);
        let zeta_l = T::of(self.config.ddpg.zeta);
        let mut epsilon = self.es.epsilon().value();
        for u in 0..eds {
            if self.config.channel_dynamics == ChannelDynamics::PerStep {
                self.env.channel.redraw_fading();
            }
            let es_obs =
                encode_es_state(self.last.as_ref(), &self.env.qos, &self.env.norm, eds, rats, u);
            epsilon = self.es.epsilon().value();
            let action = self.es.select_action(&es_obs)?;
            self.assignment.set_row_mask(u, action.mask());
            let mut phase = Phase::Assigned;

            let mut snapshot = None;
            for _ in 0..self.config.k_inner {
                debug_assert_eq!(phase, Phase::Assigned);
                let obs: Vec<Vec<T>> = (0..rats)
                    .map(|l| {
                        encode_rat_state(
                            self.last.as_ref(),
                            &self.assignment,
                            &self.env.qos,
                            &self.env.norm,
                            l,
                        )
                    })
                    .collect();
                let proposals = self.act_all(&obs)?;
                for (l, p) in proposals.iter().enumerate() {
                    let applied = self.apply_budget(l, p.clone());
                    self.powers.set_column(l, &applied);
                }
                phase = Phase::PowersApplied;
                debug_assert_eq!(phase, Phase::PowersApplied);
                let snap = self.env.evaluate(&self.assignment, &self.powers)?;
                let mut rewards = Vec::with_capacity(rats);
                for l in 0..rats {
                    let r = rat_reward(
                        &snap,
                        &self.env.qos,
                        &self.env.norm,
                        self.config.profiles[l].max_power_w,
                        l,
                        eta1,
                        eta2,
                        zeta_l,
                        self.config.constraint_term,
                    );
                    let r = finite_or_abort(r, "RAT reward", self.episode, u, || self.to_json())?;
                    rewards.push(r);
                    acc.rat_rewards[l] += r.as_f64() / self.config.k_inner as f64;
                }
                // Agents learn on their own proposals; the budget rescale is
                // part of the environment they act in.
                let transitions: Vec<(Vec<T>, Vec<T>, T, Vec<T>)> = obs
                    .into_iter()
                    .enumerate()
                    .map(|(l, s)| {
                        let next = encode_rat_state(
                            Some(&snap),
                            &self.assignment,
                            &self.env.qos,
                            &self.env.norm,
                            l,
                        );
                        (s, proposals[l].clone(), rewards[l], next)
                    })
                    .collect();
                let losses = self.learn_all(transitions)?;
                for (l, loss) in losses.into_iter().enumerate() {
                    if let Some(v) = loss {
                        finite_or_abort(v, "critic loss", self.episode, u, || self.to_json())?;
                        acc.critic_losses[l].0 += v.as_f64();
                        acc.critic_losses[l].1 += 1;
                    }
                }
                self.counters.rat_iterations += 1;
                self.last = Some(snap.clone());
                snapshot = Some(snap);
                phase = Phase::Assigned;
            }
            let snap = snapshot.expect("k_inner >= 1");
            debug_assert_eq!(phase, Phase::Assigned);

            let r = es_reward(
                &snap,
                &self.env.qos,
                &self.env.norm,
                eta_es,
                zeta_es,
                self.config.constraint_term,
            );
            let r = finite_or_abort(r, "ES reward", self.episode, u, || self.to_json())?;
            acc.es_reward += r.as_f64();
            let next = encode_es_state(
                Some(&snap),
                &self.env.qos,
                &self.env.norm,
                eds,
                rats,
                (u + 1) % eds,
            );
            self.es.remember(Transition {
                state: es_obs,
                action: action.slot(),
                reward: r,
                next_state: next,
            });
            self.counters.es_transitions += 1;
            if let Some(loss) = self.es.learn()? {
                finite_or_abort(loss, "DQN loss", self.episode, u, || self.to_json())?;
                acc.es_loss.0 += loss.as_f64();
                acc.es_loss.1 += 1;
            }
            acc.add_snapshot(&snap);
        }
        self.episode += 1;
        let masks = (0..eds).map(|u| self.assignment.row_mask(u)).collect();
        Ok(acc.finish(self.episode, epsilon, masks, shocked))
    }

    fn act_all(&mut self, obs: &[Vec<T>]) -> Result<Vec<Vec<T>>, TrainError> {
        if self.config.parallel_rats {
            std::thread::scope(|s| {
                let handles: Vec<_> = self
                    .rat_agents
                    .iter_mut()
                    .zip(obs)
                    .map(|(a, o)| s.spawn(move || a.act(o, true)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("RAT worker").map_err(TrainError::from))
                    .collect()
            })
        } else {
            self.rat_agents
                .iter_mut()
                .zip(obs)
                .map(|(a, o)| a.act(o, true).map_err(TrainError::from))
                .collect()
        }
    }

    fn learn_all(
        &mut self,
        transitions: Vec<(Vec<T>, Vec<T>, T, Vec<T>)>,
    ) -> Result<Vec<Option<T>>, TrainError> {
        fn one<T: Scalar>(
            a: &mut DdpgAgent<T>,
            (s, p, r, n): (Vec<T>, Vec<T>, T, Vec<T>),
        ) -> Result<Option<T>, TrainError> {
            a.remember_watts(s, &p, r, n);
            Ok(a.learn()?.map(|st| st.critic_loss))
        }
        if self.config.parallel_rats {
            std::thread::scope(|s| {
                let handles: Vec<_> = self
                    .rat_agents
                    .iter_mut()
                    .zip(transitions)
                    .map(|(a, t)| s.spawn(move || one(a, t)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("RAT worker"))
                    .collect()
            })
        } else {
            self.rat_agents
                .iter_mut()
                .zip(transitions)
                .map(|(a, t)| one(a, t))
                .collect()
        }
    }

    pub fn train(&mut self, episodes: usize) -> Result<Vec<EpisodeRecord>, TrainError> {
        self.train_with(episodes, |_| {})
    }

    /// Trains, handing each record to `sink` as soon as it exists.
    pub fn train_with(
        &mut self,
        episodes: usize,
        mut sink: impl FnMut(&EpisodeRecord),
    ) -> Result<Vec<EpisodeRecord>, TrainError> {
        let mut out = Vec::with_capacity(episodes);
        for _ in 0..episodes {
            let rec = self.train_episode()?;
            sink(&rec);
            out.push(rec);
        }
        Ok(out)
    }

    /// Greedy ES, noiseless actors, no learning. Runs on a copy of the
    /// environment, so the trainer itself is left untouched.
    pub fn evaluate(&self, episodes: usize) -> Result<Vec<EpisodeRecord>, TrainError> {
        self.evaluate_scheme(Scheme::DeepRat, episodes)
    }

    /// Runs `scheme` for `episodes` episodes on a copy of the environment,
    /// starting from the trainer's current channel and history. No agent
    /// learns; schemes that use power agents query their noiseless actors.
    pub fn evaluate_scheme(
        &self,
        scheme: Scheme,
        episodes: usize,
    ) -> Result<Vec<EpisodeRecord>, TrainError> {
        let (eds, rats) = (self.config.eds(), self.config.rats());
        let mut env = self.env.clone();
        let mut last = self.last.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed_for(self.config.seed, 100));
        let mut assign = match scheme {
            Scheme::DeepRat => self.assignment.clone(),
            Scheme::Baseline(BaselineKind::RandomAssign) => random_assign(eds, rats, &mut rng),
            Scheme::Baseline(BaselineKind::MultiMode) => {
                multi_mode_assign(&self.utility_probe(&env, last.as_ref())?)
            }
            Scheme::Baseline(_) => Assignment::all_ones(eds, rats),
        };
        let mut powers = self.powers.clone();
        let eta = T::of(self.config.dqn.eta);
        let zeta = T::of(self.config.dqn.zeta);
        let mut out = Vec::with_capacity(episodes);
        for e in 0..episodes {
            if e > 0 {
                let dt = self.config.slot_duration_s * T::of_usize(eds);
                if dt > T::zero() {
                    env.channel.step_mobility(dt);
                }
            }
            if self.config.channel_dynamics == ChannelDynamics::PerEpisode {
                env.channel.redraw_fading();
            }
            let mut acc = Accumulator::new(eds, rats);
            for u in 0..eds {
                if self.config.channel_dynamics == ChannelDynamics::PerStep {
                    env.channel.redraw_fading();
                }
                match scheme {
                    Scheme::DeepRat => {
                        let obs =
                            encode_es_state(last.as_ref(), &env.qos, &env.norm, eds, rats, u);
                        assign.set_row_mask(u, self.es.greedy_action(&obs)?.mask());
                    }
                    Scheme::Baseline(BaselineKind::MultiMode) => {
                        let probe = self.utility_probe(&env, last.as_ref())?;
                        assign.set_row_mask(u, multi_mode_assign(&probe).row_mask(u));
                    }
                    Scheme::Baseline(BaselineKind::RandomAssign) => {
                        assign.set_row_mask(u, 1 << rng.random_range(0..rats));
                    }
                    Scheme::Baseline(_) => {}
                }
                let snap = match scheme {
                    Scheme::Baseline(BaselineKind::FixedEqualPower) => {
                        let (a, p) = fixed_equal_power(eds, env.profiles());
                        env.evaluate(&a, &p)?
                    }
                    Scheme::Baseline(BaselineKind::ConvexOracle) => {
                        let r = convex_power_oracle(
                            &assign,
                            env.channel.gains(),
                            env.profiles(),
                            &env.qos,
                            &env.norm,
                            &OracleSettings::default(),
                        );
                        env.evaluate(&assign, &r.powers)?
                    }
                    _ => {
                        let mut snap = None;
                        for _ in 0..self.config.k_inner {
                            for l in 0..rats {
                                let o = encode_rat_state(
                                    last.as_ref(),
                                    &assign,
                                    &env.qos,
                                    &env.norm,
                                    l,
                                );
                                let p = self.apply_budget(l, self.rat_agents[l].act_greedy(&o)?);
                                powers.set_column(l, &p);
                            }
                            let s = env.evaluate(&assign, &powers)?;
                            last = Some(s.clone());
                            snap = Some(s);
                        }
                        snap.expect("k_inner >= 1")
                    }
                };
                last = Some(snap.clone());
                acc.es_reward += es_reward(&snap, &env.qos, &env.norm, eta, zeta, self.config.constraint_term)
                    .as_f64();
                acc.add_snapshot(&snap);
            }
            let masks = (0..eds).map(|u| assign.row_mask(u)).collect();
            out.push(acc.finish(self.episode + e + 1, 0.0, masks, false));
        }
        Ok(out)
    }

    /// Per-link utilities each ED would see on every RAT at the noiseless
    /// actors' powers, using the gains of the previous step.
    fn utility_probe(
        &self,
        env: &Environment<T>,
        last: Option<&NetworkSnapshot<T>>,
    ) -> Result<LinkMatrix<T>, TrainError> {
        let (eds, rats) = (self.config.eds(), self.config.rats());
        let all = Assignment::all_ones(eds, rats);
        let mut powers = PowerAlloc::zeros(eds, rats);
        for l in 0..rats {
            let o = encode_rat_state(last, &all, &env.qos, &env.norm, l);
            powers.set_column(l, &self.apply_budget(l, self.rat_agents[l].act_greedy(&o)?));
        }
        let gains = last.map_or(env.channel.gains(), |s| &s.gains);
        let snap = evaluate_network(&all, &powers, gains, env.profiles(), &env.qos, &env.norm)?;
        Ok(snap.utilities)
    }

    /// Snapshot for an explicit assignment using the noiseless actors under
    /// the current gains.
    pub fn greedy_snapshot(&self, assign: &Assignment) -> Result<NetworkSnapshot<T>, TrainError> {
        let mut powers = PowerAlloc::zeros(self.config.eds(), self.config.rats());
        for l in 0..self.config.rats() {
            let o = encode_rat_state(self.last.as_ref(), assign, &self.env.qos, &self.env.norm, l);
            let p = self.apply_budget(l, self.rat_agents[l].act_greedy(&o)?);
            powers.set_column(l, &p);
        }
        Ok(self.env.evaluate(assign, &powers)?)
    }
}

/// Trailing moving average of length `len` (shorter at the start).
pub fn trailing_mean(series: &[f64], len: usize) -> Vec<f64> {
    let len = len.max(1);
    (0..series.len())
        .map(|i| {
            let w = &series[(i + 1).saturating_sub(len)..=i];
            w.iter().sum::<f64>() / w.len() as f64
        })
        .collect()
}

/// First 1-based episode `e` whose trailing window `[e − window + 1, e]` has
/// `max − min ≤ tol·|mean|`.
pub fn detect_convergence(series: &[f64], window: usize, tol: f64) -> Option<usize> {
    assert!(window >= 1, "window must be at least 1");
    if series.len() < window {
        return None;
    }
    (window..=series.len()).find(|&e| {
        let w = &series[e - window..e];
        let (lo, hi) = w
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
        let mean = w.iter().sum::<f64>() / window as f64;
        hi - lo <= tol * mean.abs()
    })
}

/// First episode of the steady window found by [`detect_convergence`].
pub fn steady_state_onset(series: &[f64], window: usize, tol: f64) -> Option<usize> {
    detect_convergence(series, window, tol).map(|e| e + 1 - window)
}

/// [`detect_convergence`] applied to the trailing moving average.
pub fn detect_convergence_smoothed(
    series: &[f64],
    window: usize,
    tol: f64,
    smoothing: usize,
) -> Option<usize> {
    detect_convergence(&trailing_mean(series, smoothing), window, tol)
}

/// Training trace plus steady-state detection per shock segment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MobilityOutcome {
    pub records: Vec<EpisodeRecord>,
    /// Segment `k` starts at episode `k·period + 1` (1-based).
    pub segment_starts: Vec<usize>,
    /// Episodes from the segment start to steady state, if reached.
    pub convergence: Vec<Option<usize>>,
}

impl MobilityOutcome {
    pub fn initial_convergence(&self) -> Option<usize> {
        self.convergence.first().copied().flatten()
    }

    /// Mean reconvergence length over post-shock segments that converged.
    pub fn mean_reconvergence(&self) -> Option<f64> {
        let v: Vec<usize> = self.convergence.iter().skip(1).flatten().copied().collect();
        (!v.is_empty()).then(|| v.iter().sum::<usize>() as f64 / v.len() as f64)
    }
}

/// Segmented steady-state detection over a utility trace.
pub fn segment_convergence(
    utilities: &[f64],
    period: usize,
    window: usize,
    tol: f64,
    smoothing: usize,
) -> (Vec<usize>, Vec<Option<usize>>) {
    let mut starts = Vec::new();
    let mut conv = Vec::new();
    for (k, seg) in utilities.chunks(period.max(1)).enumerate() {
        starts.push(k * period + 1);
        conv.push(detect_convergence_smoothed(seg, window, tol, smoothing));
    }
    (starts, conv)
}

/// Trains `config.episodes` episodes with a shock every `shock_period`
/// episodes and reports convergence per segment.
pub fn run_mobility_scenario<T: Scalar>(
    config: TrainConfig<T>,
) -> Result<MobilityOutcome, TrainError> {
    let period = config
        .shock_period
        .ok_or_else(|| TrainError::Config("mobility scenario needs a shock period".into()))?;
    if config.episodes % period != 0 {
        return Err(TrainError::Config(
            "shock period must divide the episode count".into(),
        ));
    }
    let mut trainer = Trainer::new(config)?;
    let records = trainer.train(trainer.config.episodes)?;
    let utilities: Vec<f64> = records.iter().map(|r| r.utility).collect();
    let c = &trainer.config;
    let (segment_starts, convergence) = segment_convergence(
        &utilities,
        period,
        c.convergence_window,
        c.convergence_tolerance,
        c.convergence_smoothing,
    );
    Ok(MobilityOutcome {
        records,
        segment_starts,
        convergence,
    })
}

/// Trains a fresh trainer for `config.episodes` episodes.
pub fn train<T: Scalar>(
    config: TrainConfig<T>,
) -> Result<(Trainer<T>, Vec<EpisodeRecord>), TrainError> {
    let mut trainer = Trainer::new(config)?;
    let records = trainer.train(trainer.config.episodes)?;
    Ok((trainer, records))
}
