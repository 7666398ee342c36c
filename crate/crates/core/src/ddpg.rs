//! Per-RAT actor-critic agent allocating downlink power over assigned EDs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::env::{Assignment, ConstraintTerm, EdQosProfile, NetworkSnapshot, NormalizationSpec};
use crate::nn::{
    clip_global_norm, soft_update, AdamConfig, AdamState, DenseNet, NnError, OutputActivation,
    ReplayBuffer, Transition,
};
use crate::scalar::Scalar;

/// Observation length `4U`.
pub fn rat_observation_len(eds: usize) -> usize {
    4 * eds
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DdpgConfig {
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub actor_learning_rate: f64,
    pub critic_learning_rate: f64,
    pub gamma: f64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub tau: f64,
    pub ou_theta: f64,
    pub ou_sigma: f64,
    /// Global-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub eta1: f64,
    pub eta2: f64,
    pub zeta: f64,
    /// Multiplier applied to rewards before they enter the critic target.
    pub reward_scale: f64,
}

impl Default for DdpgConfig {
    fn default() -> Self {
        Self {
            actor_hidden: vec![16, 16],
            critic_hidden: vec![16, 16],
            actor_learning_rate: 5e-4,
            critic_learning_rate: 5e-4,
            gamma: 0.99,
            buffer_capacity: 500,
            batch_size: 16,
            tau: 0.005,
            ou_theta: 0.15,
            ou_sigma: 0.03,
            grad_clip: Some(1.0),
            eta1: 1.0,
            eta2: 1e3,
            zeta: 5e-3,
            reward_scale: 1.0,
        }
    }
}

/// Discrete Ornstein-Uhlenbeck process `x ← x + θ(μ − x) + σ·N(0, 1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OuNoise<T> {
    pub theta: T,
    pub sigma: T,
    pub mu: T,
    state: Vec<T>,
}

impl<T: Scalar> OuNoise<T> {
    pub fn new(dim: usize, theta: T, sigma: T) -> Self {
        Self {
            theta,
            sigma,
            mu: T::zero(),
            state: vec![T::zero(); dim],
        }
    }

    pub fn state(&self) -> &[T] {
        &self.state
    }

    pub fn set_state(&mut self, x: &[T]) {
        self.state.copy_from_slice(x);
    }

    pub fn reset(&mut self) {
        let mu = self.mu;
        self.state.iter_mut().for_each(|x| *x = mu);
    }

    pub fn step<R: rand::Rng + ?Sized>(&mut self, rng: &mut R) -> &[T] {
        for x in self.state.iter_mut() {
            let n: f64 = StandardNormal.sample(rng);
            *x = *x + self.theta * (self.mu - *x) + self.sigma * T::of(n);
        }
        &self.state
    }

    /// Stationary variance `σ²/(2θ − θ²)` of the discrete recursion.
    pub fn stationary_variance(&self) -> T {
        self.sigma * self.sigma / (T::of(2.0) * self.theta - self.theta * self.theta)
    }
}

/// Flattens the observation of RAT `rat`.
///
/// Order: assignment indicator `U_l(t)` (U), `r_min/r_max` (U), this RAT's
/// previous link rates `R_lu(t−1)/r_max` (U), previous per-ED totals
/// `R_u(t−1)/r_max` (U). With no history the last two blocks are zero.
pub fn encode_rat_state<T: Scalar>(
    prev: Option<&NetworkSnapshot<T>>,
    assign: &Assignment,
    qos: &[EdQosProfile<T>],
    norm: &NormalizationSpec<T>,
    rat: usize,
) -> Vec<T> {
    let eds = assign.eds();
    assert!(rat < assign.rats() && qos.len() == eds, "RAT index or QoS table out of range");
    let mut obs = Vec::with_capacity(rat_observation_len(eds));
    obs.extend((0..eds).map(|u| {
        if assign.is_assigned(u, rat) {
            T::one()
        } else {
            T::zero()
        }
    }));
    obs.extend(qos.iter().map(|q| q.r_min / norm.r_max));
    match prev {
        Some(s) => {
            obs.extend((0..eds).map(|u| {
                if assign.is_assigned(u, rat) {
                    s.link_rates.at(u, rat) / norm.r_max
                } else {
                    T::zero()
                }
            }));
            obs.extend(s.ed_rates.iter().map(|r| *r / norm.r_max));
        }
        None => obs.extend(std::iter::repeat_n(T::zero(), 2 * eds)),
    }
    obs
}

/// `η₁·(P − Σ_{u∈U_l} p_lu)/P + η₂·Σ_{u∈U_l}(R_u − R_u^min)/r_max + ζ·Σ_{u∈U_l} 𝕌_lu`,
/// every slack passed through `term`.
#[allow(clippy::too_many_arguments)]
pub fn rat_reward<T: Scalar>(
    snapshot: &NetworkSnapshot<T>,
    qos: &[EdQosProfile<T>],
    norm: &NormalizationSpec<T>,
    max_power_w: T,
    rat: usize,
    eta1: T,
    eta2: T,
    zeta: T,
    term: ConstraintTerm,
) -> T {
    let mut used = T::zero();
    let mut rate_slack = T::zero();
    let mut utility = T::zero();
    for u in snapshot.assignment.eds_of(rat) {
        used += snapshot.powers.at(u, rat);
        rate_slack += term.apply((snapshot.ed_rates[u] - qos[u].r_min) / norm.r_max);
        utility += snapshot.utilities.at(u, rat);
    }
    eta1 * term.apply((max_power_w - used) / max_power_w) + eta2 * rate_slack + zeta * utility
}

/// Stored action is the applied power vector divided by `P_l^max`.
pub type RatTransition<T> = Transition<T, Vec<T>>;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DdpgAgent<T> {
    pub config: DdpgConfig,
    rat: usize,
    eds: usize,
    max_power_w: T,
    actor: DenseNet<T>,
    critic: DenseNet<T>,
    actor_target: DenseNet<T>,
    critic_target: DenseNet<T>,
    actor_adam: AdamState<T>,
    critic_adam: AdamState<T>,
    buffer: ReplayBuffer<RatTransition<T>>,
    noise: OuNoise<T>,
    rng: ChaCha8Rng,
}

/// Result of one learning step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DdpgLearnStats<T> {
    pub critic_loss: T,
    /// Mean critic value of the actor's actions before the actor step.
    pub actor_objective: T,
}

impl<T: Scalar> DdpgAgent<T> {
    /// The observation must carry the assignment indicator in its first
    /// `eds` entries; it masks the actor output inside the learning chain.
    pub fn new(
        rat: usize,
        eds: usize,
        obs_len: usize,
        max_power_w: T,
        config: DdpgConfig,
        seed: u64,
    ) -> Self {
        assert!(obs_len >= eds, "observation shorter than the action mask");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut aw = vec![obs_len];
        aw.extend(&config.actor_hidden);
        aw.push(eds);
        let mut cw = vec![obs_len + eds];
        cw.extend(&config.critic_hidden);
        cw.push(1);
        let actor = DenseNet::new(&aw, OutputActivation::Logistic, &mut rng);
        let critic = DenseNet::new(&cw, OutputActivation::Linear, &mut rng);
        Self {
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor_adam: AdamState::new(
                actor.param_count(),
                AdamConfig::with_learning_rate(config.actor_learning_rate),
            ),
            critic_adam: AdamState::new(
                critic.param_count(),
                AdamConfig::with_learning_rate(config.critic_learning_rate),
            ),
            buffer: ReplayBuffer::new(config.buffer_capacity),
            noise: OuNoise::new(eds, T::of(config.ou_theta), T::of(config.ou_sigma)),
            actor,
            critic,
            rat,
            eds,
            max_power_w,
            config,
            rng,
        }
    }

    pub fn rat(&self) -> usize {
        self.rat
    }

    pub fn max_power_w(&self) -> T {
        self.max_power_w
    }

    pub fn actor(&self) -> &DenseNet<T> {
        &self.actor
    }

    pub fn actor_mut(&mut self) -> &mut DenseNet<T> {
        &mut self.actor
    }

    pub fn critic(&self) -> &DenseNet<T> {
        &self.critic
    }

    pub fn critic_mut(&mut self) -> &mut DenseNet<T> {
        &mut self.critic
    }

    pub fn actor_target(&self) -> &DenseNet<T> {
        &self.actor_target
    }

    pub fn critic_target(&self) -> &DenseNet<T> {
        &self.critic_target
    }

    pub fn buffer(&self) -> &ReplayBuffer<RatTransition<T>> {
        &self.buffer
    }

    pub fn noise(&self) -> &OuNoise<T> {
        &self.noise
    }

    pub fn reset_noise(&mut self) {
        self.noise.reset();
    }

    /// Combined digest of all four networks.
    pub fn checksum(&self) -> u64 {
        [&self.actor, &self.critic, &self.actor_target, &self.critic_target]
            .iter()
            .fold(0u64, |h, n| h.rotate_left(17) ^ n.checksum())
    }

    fn mask_of(&self, obs: &[T]) -> Vec<bool> {
        obs[..self.eds].iter().map(|m| *m > T::zero()).collect()
    }

    /// Power vector in Watt: `P·σ(z)`, plus `P·OU` noise when exploring,
    /// clamped to `[0, P]`, zero for EDs not assigned to this RAT.
    pub fn act(&mut self, obs: &[T], explore: bool) -> Result<Vec<T>, NnError> {
        let mut out = self.actor.forward(obs)?;
        if explore {
            let noise = self.noise.step(&mut self.rng).to_vec();
            for (a, n) in out.iter_mut().zip(noise) {
                *a += n;
            }
        }
        Ok(self.to_watts(obs, out))
    }

    /// Noiseless action; leaves the agent untouched.
    pub fn act_greedy(&self, obs: &[T]) -> Result<Vec<T>, NnError> {
        let out = self.actor.forward(obs)?;
        Ok(self.to_watts(obs, out))
    }

    fn to_watts(&self, obs: &[T], out: Vec<T>) -> Vec<T> {
        let mask = self.mask_of(obs);
        let p = self.max_power_w;
        out.into_iter()
            .zip(mask)
            .map(|(a, on)| {
                if on {
                    (a * p).max(T::zero()).min(p)
                } else {
                    T::zero()
                }
            })
            .collect()
    }

    pub fn remember(&mut self, t: RatTransition<T>) {
        self.buffer.push(t);
    }

    /// Stores a transition whose action is given in Watt.
    pub fn remember_watts(&mut self, state: Vec<T>, powers: &[T], reward: T, next_state: Vec<T>) {
        let p = self.max_power_w;
        self.buffer.push(Transition {
            state,
            action: powers.iter().map(|x| *x / p).collect(),
            reward,
            next_state,
        });
    }

    fn critic_input(obs: &[T], action: &[T]) -> Vec<T> {
        let mut x = Vec::with_capacity(obs.len() + action.len());
        x.extend_from_slice(obs);
        x.extend_from_slice(action);
        x
    }

    /// Masked deterministic policy in normalised units.
    fn policy(&self, net: &DenseNet<T>, obs: &[T]) -> Result<Vec<T>, NnError> {
        let mut a = net.forward(obs)?;
        for (v, on) in a.iter_mut().zip(self.mask_of(obs)) {
            if !on {
                *v = T::zero();
            }
        }
        Ok(a)
    }

    pub fn q_value(&self, obs: &[T], action_normalized: &[T]) -> Result<T, NnError> {
        Ok(self.critic.forward(&Self::critic_input(obs, action_normalized))?[0])
    }

    /// Mean of `Q(s, mask ⊙ μ(s))` over `states` and its gradient with
    /// respect to the actor parameters.
    pub fn actor_objective_gradient(&self, states: &[&[T]]) -> Result<(T, Vec<T>), NnError> {
        let n = T::of_usize(states.len());
        let mut grads = vec![T::zero(); self.actor.param_count()];
        let mut scratch = vec![T::zero(); self.critic.param_count()];
        let mut objective = T::zero();
        for s in states {
            let a_cache = self.actor.forward_cached(s)?;
            let mask = self.mask_of(s);
            let action: Vec<T> = a_cache
                .output()
                .iter()
                .zip(&mask)
                .map(|(v, on)| if *on { *v } else { T::zero() })
                .collect();
            let c_cache = self.critic.forward_cached(&Self::critic_input(s, &action))?;
            objective += c_cache.output()[0];
            let g_in = self.critic.backward(&c_cache, &[T::one() / n], &mut scratch)?;
            let g_action: Vec<T> = g_in[s.len()..]
                .iter()
                .zip(&mask)
                .map(|(g, on)| if *on { *g } else { T::zero() })
                .collect();
            self.actor.backward(&a_cache, &g_action, &mut grads)?;
        }
        Ok((objective / n, grads))
    }

    /// One critic step, one actor step, then soft target updates. Returns
    /// `None` while the buffer holds fewer than one batch.
    pub fn learn(&mut self) -> Result<Option<DdpgLearnStats<T>>, NnError> {
        let batch: Vec<RatTransition<T>> =
            match self.buffer.sample(self.config.batch_size, &mut self.rng) {
                Some(b) => b.into_iter().cloned().collect(),
                None => return Ok(None),
            };
        let n = T::of_usize(batch.len());
        let gamma = T::of(self.config.gamma);
        let scale = T::of(self.config.reward_scale);
        let two = T::of(2.0);

        let mut c_grads = vec![T::zero(); self.critic.param_count()];
        let mut critic_loss = T::zero();
        for tr in &batch {
            let next_a = self.policy(&self.actor_target, &tr.next_state)?;
            let next_q = self
                .critic_target
                .forward(&Self::critic_input(&tr.next_state, &next_a))?[0];
            let y = scale * tr.reward + gamma * next_q;
            let cache = self
                .critic
                .forward_cached(&Self::critic_input(&tr.state, &tr.action))?;
            let err = cache.output()[0] - y;
            critic_loss += err * err;
            self.critic.backward(&cache, &[two * err / n], &mut c_grads)?;
        }
        if let Some(c) = self.config.grad_clip {
            clip_global_norm(&mut c_grads, T::of(c));
        }
        self.critic_adam.step(self.critic.params_mut(), &c_grads)?;

        let states: Vec<&[T]> = batch.iter().map(|t| t.state.as_slice()).collect();
        let (objective, mut a_grads) = self.actor_objective_gradient(&states)?;
        // Ascent on Q through a descent optimiser.
        a_grads.iter_mut().for_each(|g| *g = -*g);
        if let Some(c) = self.config.grad_clip {
            clip_global_norm(&mut a_grads, T::of(c));
        }
        self.actor_adam.step(self.actor.params_mut(), &a_grads)?;

        let tau = T::of(self.config.tau);
        soft_update(&mut self.critic_target, &self.critic, tau)?;
        soft_update(&mut self.actor_target, &self.actor, tau)?;
        Ok(Some(DdpgLearnStats {
            critic_loss: critic_loss / n,
            actor_objective: objective,
        }))
    }
}


#[cfg(test)]
mod toy {
    use super::*;

    fn run(seed: u64) -> (f64, f64) {
        let cfg = DdpgConfig {
            gamma: 0.0,
            ou_sigma: 0.1,
            actor_learning_rate: 2e-3,
            critic_learning_rate: 5e-3,
            buffer_capacity: 500,
            batch_size: 16,
            ..DdpgConfig::default()
        };
        let mut agent = DdpgAgent::<f64>::new(0, 1, 2, 1.0, cfg, seed);
        let n = agent.actor().param_count();
        agent.actor_mut().params_mut()[n - 1] = -1.5;
        let s = vec![1.0, 0.0];
        for _ in 0..2000 {
            let a = agent.act(&s, true).unwrap();
            let r = -(a[0] - 0.5).powi(2);
            agent.remember_watts(s.clone(), &a, r, s.clone());
            agent.learn().unwrap();
        }
        let action = agent.act(&s, false).unwrap()[0];
        let implied = (0..=1000)
            .map(|k| k as f64 / 1000.0)
            .max_by(|x, y| {
                agent.q_value(&s, &[*x]).unwrap().partial_cmp(&agent.q_value(&s, &[*y]).unwrap()).unwrap()
            })
            .unwrap();
        (action, implied)
    }

    #[test]
    fn converges_to_analytic_optimum() {
        for seed in 0..3 {
            let (action, implied) = run(seed);
            assert!((action - 0.5).abs() <= 0.05, "seed {seed}: action {action}");
            assert!((implied - 0.5).abs() <= 0.05, "seed {seed}: critic optimum {implied}");
        }
    }
}
