//! Edge-server agent: chooses the RAT subset of one ED per time step.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Assignment, ConstraintTerm, EdQosProfile, NetworkSnapshot, NormalizationSpec};
use crate::nn::{
    clip_global_norm, hard_update, AdamConfig, AdamState, DenseNet, NnError, OutputActivation,
    ReplayBuffer, Transition,
};
use crate::scalar::Scalar;

/// Number of non-empty RAT subsets, `2^L − 1`.
pub fn action_count(rats: usize) -> usize {
    assert!(rats > 0 && rats < usize::BITS as usize, "unsupported RAT count");
    (1usize << rats) - 1
}

/// Observation length `2UL + U + 3`.
pub fn es_observation_len(eds: usize, rats: usize) -> usize {
    2 * eds * rats + eds + 3
}

/// Non-empty RAT subset; bit `l` of the index selects RAT `l`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SubsetAction {
    index: usize,
}

impl SubsetAction {
    pub fn new(index: usize, rats: usize) -> Option<Self> {
        (index >= 1 && index <= action_count(rats)).then_some(Self { index })
    }

    /// Action for Q-network output slot `slot` (slot = index − 1).
    pub fn from_slot(slot: usize) -> Self {
        Self { index: slot + 1 }
    }

    pub fn from_rats(rats: &[usize]) -> Option<Self> {
        let index = rats.iter().fold(0usize, |m, &l| m | (1 << l));
        (index != 0).then_some(Self { index })
    }

    pub fn index(self) -> usize {
        self.index
    }

    pub fn slot(self) -> usize {
        self.index - 1
    }

    pub fn mask(self) -> usize {
        self.index
    }

    pub fn rats(self) -> Vec<usize> {
        (0..usize::BITS as usize)
            .filter(|l| self.index >> l & 1 == 1)
            .collect()
    }
}

/// `ε(t) = end + (start − end)·exp(−decay·t)`, `t` counted in selections.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay: f64,
    pub steps: u64,
}

impl EpsilonSchedule {
    pub fn new(start: f64, end: f64, decay: f64) -> Self {
        Self {
            start,
            end,
            decay,
            steps: 0,
        }
    }

    pub fn at(&self, t: u64) -> f64 {
        self.end + (self.start - self.end) * (-self.decay * t as f64).exp()
    }

    pub fn value(&self) -> f64 {
        self.at(self.steps)
    }

    pub fn advance(&mut self) {
        self.steps += 1;
    }
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self::new(1.0, 0.005, 5e-4)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DqnConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub gamma: f64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    /// Learn steps between hard target copies.
    pub target_sync_period: u64,
    /// Global-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay: f64,
    pub eta: f64,
    pub zeta: f64,
    /// Multiplier applied to rewards before they enter the Bellman target.
    pub reward_scale: f64,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 128],
            learning_rate: 8e-4,
            gamma: 0.99,
            buffer_capacity: 1000,
            batch_size: 64,
            target_sync_period: 100,
            grad_clip: Some(1.0),
            epsilon_start: 1.0,
            epsilon_end: 0.005,
            epsilon_decay: 5e-4,
            eta: 1e3,
            zeta: 8e-4,
            reward_scale: 1.0,
        }
    }
}

/// Flattens the ES observation for ED `ed` (0-based).
///
/// Order: previous assignment `x(t−1)` (U×L, row-major by ED), previous
/// link rates `R_lu(t−1)/r_max` (U×L), `r_min/r_max` (U), then the local part
/// `(ed+1)/U`, `r_min_ed/r_max`, `R_ed(t−1)/r_max`. With no history every
/// `(t−1)` field is zero.
pub fn encode_es_state<T: Scalar>(
    prev: Option<&NetworkSnapshot<T>>,
    qos: &[EdQosProfile<T>],
    norm: &NormalizationSpec<T>,
    eds: usize,
    rats: usize,
    ed: usize,
) -> Vec<T> {
    assert!(ed < eds && qos.len() == eds, "ED index or QoS table out of range");
    let mut obs = Vec::with_capacity(es_observation_len(eds, rats));
    match prev {
        Some(s) => {
            debug_assert!(s.eds() == eds && s.rats() == rats);
            for u in 0..eds {
                for l in 0..rats {
                    obs.push(if s.assignment.is_assigned(u, l) {
                        T::one()
                    } else {
                        T::zero()
                    });
                }
            }
            obs.extend(s.link_rates.as_slice().iter().map(|r| *r / norm.r_max));
        }
        None => obs.extend(std::iter::repeat_n(T::zero(), 2 * eds * rats)),
    }
    obs.extend(qos.iter().map(|q| q.r_min / norm.r_max));
    obs.push(T::of_usize(ed + 1) / T::of_usize(eds));
    obs.push(qos[ed].r_min / norm.r_max);
    obs.push(prev.map_or(T::zero(), |s| s.ed_rates[ed] / norm.r_max));
    obs
}

/// `η·Σ_u (R_u − R_u^min)/r_max + ζ·Σ_{l,u} x_lu·𝕌_lu`, each ED's slack
/// passed through `term`.
pub fn es_reward<T: Scalar>(
    snapshot: &NetworkSnapshot<T>,
    qos: &[EdQosProfile<T>],
    norm: &NormalizationSpec<T>,
    eta: T,
    zeta: T,
    term: ConstraintTerm,
) -> T {
    let slack: T = snapshot
        .ed_rates
        .iter()
        .zip(qos)
        .map(|(r, q)| term.apply((*r - q.r_min) / norm.r_max))
        .sum();
    eta * slack + zeta * snapshot.utility()
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax<T: Scalar>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub type EsTransition<T> = Transition<T, usize>;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DqnAgent<T> {
    pub config: DqnConfig,
    rats: usize,
    online: DenseNet<T>,
    target: DenseNet<T>,
    adam: AdamState<T>,
    buffer: ReplayBuffer<EsTransition<T>>,
    epsilon: EpsilonSchedule,
    learn_steps: u64,
    rng: ChaCha8Rng,
}

impl<T: Scalar> DqnAgent<T> {
    pub fn new(obs_len: usize, rats: usize, config: DqnConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut widths = vec![obs_len];
        widths.extend(&config.hidden);
        widths.push(action_count(rats));
        let online = DenseNet::new(&widths, OutputActivation::Linear, &mut rng);
        let target = online.clone();
        let adam = AdamState::new(
            online.param_count(),
            AdamConfig::with_learning_rate(config.learning_rate),
        );
        let buffer = ReplayBuffer::new(config.buffer_capacity);
        let epsilon =
            EpsilonSchedule::new(config.epsilon_start, config.epsilon_end, config.epsilon_decay);
        Self {
            config,
            rats,
            online,
            target,
            adam,
            buffer,
            epsilon,
            learn_steps: 0,
            rng,
        }
    }

    pub fn rats(&self) -> usize {
        self.rats
    }

    pub fn online(&self) -> &DenseNet<T> {
        &self.online
    }

    pub fn online_mut(&mut self) -> &mut DenseNet<T> {
        &mut self.online
    }

    pub fn target(&self) -> &DenseNet<T> {
        &self.target
    }

    pub fn buffer(&self) -> &ReplayBuffer<EsTransition<T>> {
        &self.buffer
    }

    pub fn epsilon(&self) -> &EpsilonSchedule {
        &self.epsilon
    }

    pub fn epsilon_mut(&mut self) -> &mut EpsilonSchedule {
        &mut self.epsilon
    }

    pub fn learn_steps(&self) -> u64 {
        self.learn_steps
    }

    pub fn q_values(&self, obs: &[T]) -> Result<Vec<T>, NnError> {
        self.online.forward(obs)
    }

    pub fn greedy_action(&self, obs: &[T]) -> Result<SubsetAction, NnError> {
        Ok(SubsetAction::from_slot(argmax(&self.q_values(obs)?)))
    }

    /// ε-greedy choice at the current schedule value; advances the schedule.
    pub fn select_action(&mut self, obs: &[T]) -> Result<SubsetAction, NnError> {
        let eps = self.epsilon.value();
        self.epsilon.advance();
        if self.rng.random::<f64>() < eps {
            let n = action_count(self.rats);
            Ok(SubsetAction::from_slot(self.rng.random_range(0..n)))
        } else {
            self.greedy_action(obs)
        }
    }

    pub fn remember(&mut self, t: EsTransition<T>) {
        self.buffer.push(t);
    }

    /// One minibatch step on the mean squared TD error. Returns `None` while
    /// the buffer holds fewer than one batch.
    pub fn learn(&mut self) -> Result<Option<T>, NnError> {
        let batch = match self.buffer.sample(self.config.batch_size, &mut self.rng) {
            Some(b) => b,
            None => return Ok(None),
        };
        let n = T::of_usize(batch.len());
        let gamma = T::of(self.config.gamma);
        let scale = T::of(self.config.reward_scale);
        let two = T::of(2.0);
        let mut grads = vec![T::zero(); self.online.param_count()];
        let mut loss = T::zero();
        for tr in &batch {
            let next_q = self.target.forward(&tr.next_state)?;
            let best = next_q.iter().copied().fold(T::neg_infinity(), T::max);
            let y = scale * tr.reward + gamma * best;
            let cache = self.online.forward_cached(&tr.state)?;
            let err = cache.output()[tr.action] - y;
            loss += err * err;
            let mut g_out = vec![T::zero(); self.online.output_width()];
            g_out[tr.action] = two * err / n;
            self.online.backward(&cache, &g_out, &mut grads)?;
        }
        drop(batch);
        if let Some(c) = self.config.grad_clip {
            clip_global_norm(&mut grads, T::of(c));
        }
        self.adam.step(self.online.params_mut(), &grads)?;
        self.learn_steps += 1;
        if self.learn_steps % self.config.target_sync_period.max(1) == 0 {
            hard_update(&mut self.target, &self.online)?;
        }
        Ok(Some(loss / n))
    }
}

/// Convenience for tests and baselines: row masks of an assignment as actions.
pub fn actions_of(assign: &Assignment) -> Vec<Option<SubsetAction>> {
    (0..assign.eds())
        .map(|u| SubsetAction::new(assign.row_mask(u), assign.rats()))
        .collect()
}
