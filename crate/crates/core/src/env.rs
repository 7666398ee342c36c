//! Rates, monetary cost, link utilities and the constraint set of the joint
//! assignment / power problem, plus the per-step network snapshot.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{
    link_gain, Channel, ChannelError, EdPosition, LinkFading, RatRadioProfile,
};
use crate::matrix::LinkMatrix;
use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("link rate requested for a RAT with no assigned EDs")]
    EmptyRat,
    #[error("ED {0} has no RAT assigned")]
    IncompleteAssignment(usize),
    #[error("shape mismatch: {0}")]
    Shape(&'static str),
    #[error("ED {ed}: {reason}")]
    InvalidQos { ed: usize, reason: &'static str },
    #[error("normalization references must be positive and finite")]
    InvalidNormalization,
    #[error(transparent)]
    Channel(#[from] ChannelError),
}

/// How a reward's constraint terms count a constraint's slack.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintTerm {
    /// The slack itself: surplus is rewarded, shortfall punished.
    #[default]
    Signed,
    /// Only shortfall counts, as `min(slack, 0)`.
    ViolationOnly,
}

impl ConstraintTerm {
    pub fn apply<T: Scalar>(self, slack: T) -> T {
        match self {
            ConstraintTerm::Signed => slack,
            ConstraintTerm::ViolationOnly => slack.min(T::zero()),
        }
    }
}

/// Binary RAT-ED assignment `x_lu`, rows are EDs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    x: LinkMatrix<bool>,
}

impl Assignment {
    pub fn empty(eds: usize, rats: usize) -> Self {
        Self {
            x: LinkMatrix::filled(eds, rats, false),
        }
    }

    pub fn all_ones(eds: usize, rats: usize) -> Self {
        Self {
            x: LinkMatrix::filled(eds, rats, true),
        }
    }

    /// Builds an assignment from one RAT bitmask per ED (bit `l` ⇒ RAT `l`).
    pub fn from_masks(rats: usize, masks: &[usize]) -> Self {
        let mut a = Self::empty(masks.len(), rats);
        for (u, &m) in masks.iter().enumerate() {
            a.set_row_mask(u, m);
        }
        a
    }

    pub fn eds(&self) -> usize {
        self.x.eds()
    }

    pub fn rats(&self) -> usize {
        self.x.rats()
    }

    #[inline]
    pub fn is_assigned(&self, u: usize, l: usize) -> bool {
        self.x.at(u, l)
    }

    pub fn set(&mut self, u: usize, l: usize, on: bool) {
        self.x.set(u, l, on);
    }

    pub fn set_row_mask(&mut self, u: usize, mask: usize) {
        for l in 0..self.rats() {
            self.x.set(u, l, mask & (1 << l) != 0);
        }
    }

    pub fn row_mask(&self, u: usize) -> usize {
        (0..self.rats())
            .filter(|&l| self.is_assigned(u, l))
            .fold(0, |m, l| m | (1 << l))
    }

    /// `U_l`: EDs served by RAT `l`.
    pub fn eds_of(&self, l: usize) -> Vec<usize> {
        (0..self.eds()).filter(|&u| self.is_assigned(u, l)).collect()
    }

    /// `L_u`: RATs serving ED `u`.
    pub fn rats_of(&self, u: usize) -> Vec<usize> {
        (0..self.rats()).filter(|&l| self.is_assigned(u, l)).collect()
    }

    pub fn count_on(&self, l: usize) -> usize {
        (0..self.eds()).filter(|&u| self.is_assigned(u, l)).count()
    }

    /// C1: every ED has at least one RAT.
    pub fn is_complete(&self) -> bool {
        (0..self.eds()).all(|u| self.row_mask(u) != 0)
    }

    pub fn matrix(&self) -> &LinkMatrix<bool> {
        &self.x
    }
}

/// Downlink powers `p_lu` in Watt.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerAlloc<T> {
    p: LinkMatrix<T>,
}

impl<T: Scalar> PowerAlloc<T> {
    pub fn zeros(eds: usize, rats: usize) -> Self {
        Self {
            p: LinkMatrix::filled(eds, rats, T::zero()),
        }
    }

    pub fn from_matrix(p: LinkMatrix<T>) -> Self {
        Self { p }
    }

    #[inline]
    pub fn at(&self, u: usize, l: usize) -> T {
        self.p.at(u, l)
    }

    pub fn set(&mut self, u: usize, l: usize, v: T) {
        self.p.set(u, l, v);
    }

    /// Writes RAT `l`'s power vector (one entry per ED).
    pub fn set_column(&mut self, l: usize, powers: &[T]) {
        assert_eq!(powers.len(), self.p.eds());
        for (u, &v) in powers.iter().enumerate() {
            self.p.set(u, l, v);
        }
    }

    pub fn column(&self, l: usize) -> Vec<T> {
        self.p.column(l)
    }

    pub fn matrix(&self) -> &LinkMatrix<T> {
        &self.p
    }

    /// Copy with `p_lu = 0` wherever `x_lu = 0`.
    pub fn masked(&self, assign: &Assignment) -> Self {
        let p = LinkMatrix::from_fn(self.p.eds(), self.p.rats(), |u, l| {
            if assign.is_assigned(u, l) {
                self.at(u, l)
            } else {
                T::zero()
            }
        });
        Self { p }
    }

    pub fn rat_total(&self, l: usize) -> T {
        (0..self.p.eds()).map(|u| self.at(u, l)).sum()
    }
}

/// QoS demand and rate/cost preference of one ED.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdQosProfile<T> {
    /// `R_u^min`, bit/s.
    pub r_min: T,
    pub alpha: T,
    pub gamma: T,
}

impl<T: Scalar> EdQosProfile<T> {
    pub fn new(ed: usize, r_min: T, alpha: T, gamma: T) -> Result<Self, EnvError> {
        let q = Self {
            r_min,
            alpha,
            gamma,
        };
        q.validate(ed)?;
        Ok(q)
    }

    pub fn validate(&self, ed: usize) -> Result<(), EnvError> {
        let unit = |v: T| v >= T::zero() && v <= T::one();
        if !(self.r_min.is_finite() && self.r_min > T::zero()) {
            return Err(EnvError::InvalidQos {
                ed,
                reason: "r_min must be positive",
            });
        }
        if !(unit(self.alpha) && unit(self.gamma)) {
            return Err(EnvError::InvalidQos {
                ed,
                reason: "alpha and gamma must lie in [0, 1]",
            });
        }
        if (self.alpha + self.gamma - T::one()).abs() > T::of(1e-6) {
            return Err(EnvError::InvalidQos {
                ed,
                reason: "alpha + gamma must equal 1",
            });
        }
        Ok(())
    }
}

/// Reference maxima used to normalise rates and costs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationSpec<T> {
    pub r_max: T,
    pub c_max: T,
}

impl<T: Scalar> NormalizationSpec<T> {
    pub fn new(r_max: T, c_max: T) -> Result<Self, EnvError> {
        let ok = |v: T| v.is_finite() && v > T::zero();
        if ok(r_max) && ok(c_max) {
            Ok(Self { r_max, c_max })
        } else {
            Err(EnvError::InvalidNormalization)
        }
    }

    /// Sole-occupancy full-power rate at `reference_distance_m` (LOS, no
    /// fading), maximised over RATs; `c_max = max_l ε_l · r_max`.
    pub fn from_profiles(
        profiles: &[RatRadioProfile<T>],
        reference_distance_m: T,
    ) -> Result<Self, EnvError> {
        let mut r_max = T::zero();
        let mut eps_max = T::zero();
        for p in profiles {
            let ed = EdPosition {
                x: p.position.x + reference_distance_m,
                y: p.position.y,
                speed_mps: T::zero(),
            };
            let g = link_gain(p, &ed, &LinkFading::unit());
            let r = link_rate(p.bandwidth_hz, 1, g, p.max_power_w, p.noise_psd_w_per_hz)?;
            r_max = r_max.max(r);
            eps_max = eps_max.max(p.price_per_bit);
        }
        let c_max = if eps_max > T::zero() {
            eps_max * r_max
        } else {
            T::one()
        };
        Self::new(r_max, c_max)
    }
}

/// Shannon rate of one link when the RAT bandwidth is shared equally by
/// `assigned_count` EDs.
pub fn link_rate<T: Scalar>(
    bandwidth_hz: T,
    assigned_count: usize,
    gain: T,
    power_w: T,
    noise_psd: T,
) -> Result<T, EnvError> {
    if assigned_count == 0 {
        return Err(EnvError::EmptyRat);
    }
    let share = bandwidth_hz / T::of_usize(assigned_count);
    Ok(share * (T::one() + gain * power_w / (share * noise_psd)).log2())
}

/// Monetary cost in Euro/s of receiving `rate` bit/s at `price` Euro/bit.
#[inline]
pub fn monetary_cost<T: Scalar>(price_per_bit: T, rate: T) -> T {
    price_per_bit * rate
}

/// Weighted, normalised rate-minus-cost utility of one link.
#[inline]
pub fn link_utility<T: Scalar>(
    qos: &EdQosProfile<T>,
    rate: T,
    cost: T,
    norm: &NormalizationSpec<T>,
) -> T {
    qos.alpha * (rate / norm.r_max) - qos.gamma * (cost / norm.c_max)
}

/// Per-constraint slacks of one network configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport<T> {
    /// C1 per ED.
    pub multi_homing: Vec<bool>,
    /// C2 per RAT: `P_l^max - Σ_u x_lu p_lu`, Watt.
    pub power_slack: Vec<T>,
    /// C3 per ED: `R_u - R_u^min`, bit/s.
    pub qos_slack: Vec<T>,
    /// C4: every power non-negative.
    pub non_negative: bool,
    pub feasible: bool,
}

impl<T: Scalar> ConstraintReport<T> {
    pub fn power_violations(&self) -> usize {
        self.power_slack.iter().filter(|s| **s < T::zero()).count()
    }

    pub fn qos_violations(&self) -> usize {
        self.qos_slack.iter().filter(|s| **s < T::zero()).count()
    }
}

/// Everything observable about the network after one step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSnapshot<T> {
    pub assignment: Assignment,
    /// Applied powers (zero on unassigned links).
    pub powers: PowerAlloc<T>,
    pub gains: LinkMatrix<T>,
    pub snr: LinkMatrix<T>,
    pub link_rates: LinkMatrix<T>,
    pub ed_rates: Vec<T>,
    pub costs: LinkMatrix<T>,
    pub utilities: LinkMatrix<T>,
    pub report: ConstraintReport<T>,
}

impl<T: Scalar> NetworkSnapshot<T> {
    pub fn eds(&self) -> usize {
        self.ed_rates.len()
    }

    pub fn rats(&self) -> usize {
        self.link_rates.rats()
    }

    pub fn sum_rate(&self) -> T {
        self.ed_rates.iter().copied().sum()
    }

    pub fn utility(&self) -> T {
        network_utility(&self.assignment, self)
    }
}

/// Objective of the joint problem: `Σ_l Σ_u x_lu 𝕌_lu`.
pub fn network_utility<T: Scalar>(assign: &Assignment, snapshot: &NetworkSnapshot<T>) -> T {
    let mut total = T::zero();
    for u in 0..assign.eds() {
        for l in 0..assign.rats() {
            if assign.is_assigned(u, l) {
                total += snapshot.utilities.at(u, l);
            }
        }
    }
    total
}

/// Evaluates constraints C1-C4 for `assign`/`powers` against the rates in `snapshot`.
pub fn check_constraints<T: Scalar>(
    assign: &Assignment,
    powers: &PowerAlloc<T>,
    snapshot: &NetworkSnapshot<T>,
    qos: &[EdQosProfile<T>],
    profiles: &[RatRadioProfile<T>],
) -> ConstraintReport<T> {
    let eds = assign.eds();
    let rats = assign.rats();
    let multi_homing: Vec<bool> = (0..eds).map(|u| assign.row_mask(u) != 0).collect();
    let power_slack: Vec<T> = (0..rats)
        .map(|l| {
            let used: T = (0..eds)
                .filter(|&u| assign.is_assigned(u, l))
                .map(|u| powers.at(u, l))
                .sum();
            let cap = profiles[l].max_power_w;
            // Overshoot within the rounding bound of the sum counts as on budget.
            let bound = T::of_usize(eds) * T::epsilon() * cap;
            let slack = cap - used;
            if slack < T::zero() && -slack <= bound {
                T::zero()
            } else {
                slack
            }
        })
        .collect();
    let qos_slack: Vec<T> = (0..eds)
        .map(|u| snapshot.ed_rates[u] - qos[u].r_min)
        .collect();
    let non_negative = powers.matrix().as_slice().iter().all(|&p| p >= T::zero());
    let feasible = non_negative
        && multi_homing.iter().all(|&c| c)
        && power_slack.iter().all(|&s| s >= T::zero())
        && qos_slack.iter().all(|&s| s >= T::zero());
    ConstraintReport {
        multi_homing,
        power_slack,
        qos_slack,
        non_negative,
        feasible,
    }
}

/// Pure snapshot computation for given gains. Powers on unassigned links are
/// zeroed first; a RAT without EDs produces no rate.
pub fn evaluate_network<T: Scalar>(
    assign: &Assignment,
    powers: &PowerAlloc<T>,
    gains: &LinkMatrix<T>,
    profiles: &[RatRadioProfile<T>],
    qos: &[EdQosProfile<T>],
    norm: &NormalizationSpec<T>,
) -> Result<NetworkSnapshot<T>, EnvError> {
    let (eds, rats) = (assign.eds(), assign.rats());
    if !(powers.matrix().eds() == eds && powers.matrix().rats() == rats) {
        return Err(EnvError::Shape("powers vs assignment"));
    }
    if !(gains.eds() == eds && gains.rats() == rats) {
        return Err(EnvError::Shape("gains vs assignment"));
    }
    if profiles.len() != rats || qos.len() != eds {
        return Err(EnvError::Shape("profiles/qos vs assignment"));
    }
    let applied = powers.masked(assign);
    let counts: Vec<usize> = (0..rats).map(|l| assign.count_on(l)).collect();
    let zero = LinkMatrix::filled(eds, rats, T::zero());
    let mut snr = zero.clone();
    let mut link_rates = zero.clone();
    let mut costs = zero.clone();
    let mut utilities = zero;
    let mut ed_rates = vec![T::zero(); eds];
    for u in 0..eds {
        for l in 0..rats {
            if !assign.is_assigned(u, l) {
                continue;
            }
            let prof = &profiles[l];
            let share = prof.bandwidth_hz / T::of_usize(counts[l]);
            let g = gains.at(u, l);
            let p = applied.at(u, l);
            let rate = link_rate(prof.bandwidth_hz, counts[l], g, p, prof.noise_psd_w_per_hz)?;
            let cost = monetary_cost(prof.price_per_bit, rate);
            snr.set(u, l, g * p / (share * prof.noise_psd_w_per_hz));
            link_rates.set(u, l, rate);
            costs.set(u, l, cost);
            utilities.set(u, l, link_utility(&qos[u], rate, cost, norm));
            ed_rates[u] += rate;
        }
    }
    let mut snapshot = NetworkSnapshot {
        assignment: assign.clone(),
        powers: applied,
        gains: gains.clone(),
        snr,
        link_rates,
        ed_rates,
        costs,
        utilities,
        report: ConstraintReport {
            multi_homing: Vec::new(),
            power_slack: Vec::new(),
            qos_slack: Vec::new(),
            non_negative: true,
            feasible: false,
        },
    };
    // C2/C4 are judged on the powers as proposed, not the masked copy.
    snapshot.report = check_constraints(assign, powers, &snapshot, qos, profiles);
    Ok(snapshot)
}

/// Channel plus the static problem data (QoS profiles, normalisation).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Environment<T> {
    pub channel: Channel<T>,
    pub qos: Vec<EdQosProfile<T>>,
    pub norm: NormalizationSpec<T>,
}

impl<T: Scalar> Environment<T> {
    pub fn new(
        channel: Channel<T>,
        qos: Vec<EdQosProfile<T>>,
        norm: NormalizationSpec<T>,
    ) -> Result<Self, EnvError> {
        if qos.len() != channel.eds().len() {
            return Err(EnvError::Shape("qos profiles vs EDs"));
        }
        for (u, q) in qos.iter().enumerate() {
            q.validate(u)?;
        }
        Ok(Self { channel, qos, norm })
    }

    pub fn eds(&self) -> usize {
        self.qos.len()
    }

    pub fn rats(&self) -> usize {
        self.channel.profiles().len()
    }

    pub fn profiles(&self) -> &[RatRadioProfile<T>] {
        self.channel.profiles()
    }

    /// Snapshot under the current gains, without touching the channel.
    pub fn evaluate(
        &self,
        assign: &Assignment,
        powers: &PowerAlloc<T>,
    ) -> Result<NetworkSnapshot<T>, EnvError> {
        evaluate_network(
            assign,
            powers,
            self.channel.gains(),
            self.channel.profiles(),
            &self.qos,
            &self.norm,
        )
    }

    /// Draws new fading, then evaluates. Requires a complete assignment.
    pub fn step(
        &mut self,
        assign: &Assignment,
        powers: &PowerAlloc<T>,
    ) -> Result<NetworkSnapshot<T>, EnvError> {
        if let Some(u) = (0..assign.eds()).find(|&u| assign.row_mask(u) == 0) {
            return Err(EnvError::IncompleteAssignment(u));
        }
        self.channel.redraw_fading();
        self.evaluate(assign, powers)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{ChannelModel, Point};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn flat_profile(id: usize, bandwidth: f64, pmax: f64, eps: f64) -> RatRadioProfile<f64> {
        RatRadioProfile {
            id,
            frequency_ghz: 2.4,
            bandwidth_hz: bandwidth,
            max_power_w: pmax,
            noise_psd_w_per_hz: 1e-15,
            model: ChannelModel::ExponentialPathLoss {
                exponent: 2.0,
                reference_gain_db: 0.0,
            },
            n_antennas: 1,
            n_paths: 1,
            antenna_gain_dbi: 0.0,
            shadowing_std_db: 0.0,
            price_per_bit: eps,
            position: Point::new(0.0, 0.0),
        }
    }

    fn norm() -> NormalizationSpec<f64> {
        NormalizationSpec::new(1e6, 1.0).unwrap()
    }

    #[test]
    fn rate_examples() {
        assert_eq!(link_rate::<f64>(1e6, 1, 1e-9, 0.0, 1e-15).unwrap(), 0.0);
        let r = link_rate::<f64>(1e6, 1, 1e-9, 1.0, 1e-15).unwrap();
        assert!((r - 1e6).abs() < 1e-6);
        let r2 = link_rate::<f64>(1e6, 2, 1e-9, 1.0, 1e-15).unwrap();
        assert!((r2 / 792_481.250_360_578_1 - 1.0).abs() < 1e-6);
        assert_eq!(link_rate::<f64>(1e6, 0, 1e-9, 1.0, 1e-15), Err(EnvError::EmptyRat));
    }

    #[test]
    fn cost_examples() {
        assert_eq!(monetary_cost(0.0, 5e8), 0.0);
        assert_eq!(monetary_cost(1e-6, 1e6), 1.0);
        assert!((monetary_cost::<f64>(9e-6, 1e9) - 9000.0).abs() < 1e-9);
    }

    #[test]
    fn utility_examples() {
        let n = NormalizationSpec::new(2e8, 1800.0).unwrap();
        let pure_rate = EdQosProfile::new(0, 1.0, 1.0, 0.0).unwrap();
        assert_eq!(link_utility(&pure_rate, 2e8, 123.0, &n), 1.0);
        let pure_cost = EdQosProfile::new(4, 1.37e4, 0.0, 1.0).unwrap();
        assert_eq!(link_utility(&pure_cost, 5.0, 1800.0, &n), -1.0);
        let mixed = EdQosProfile::new(0, 8.3e4, 0.4, 0.6).unwrap();
        let u: f64 = link_utility(&mixed, 1e8, 360.0, &n);
        assert!((u - 0.08).abs() < 1e-15);
    }

    #[test]
    fn qos_validation() {
        assert!(EdQosProfile::new(0, 1e4, 0.4, 0.5).is_err());
        assert!(EdQosProfile::new(0, 0.0, 0.5, 0.5).is_err());
        assert!(EdQosProfile::new(0, 1e4, -0.5, 1.5).is_err());
    }

    #[test]
    fn empty_assignment_has_zero_utility() {
        let profiles = vec![flat_profile(0, 1e6, 1.0, 0.0)];
        let qos = vec![EdQosProfile::new(0, 1.0, 1.0, 0.0).unwrap()];
        let a = Assignment::empty(1, 1);
        let s = evaluate_network(
            &a,
            &PowerAlloc::zeros(1, 1),
            &LinkMatrix::filled(1, 1, 1.0),
            &profiles,
            &qos,
            &norm(),
        )
        .unwrap();
        assert_eq!(network_utility(&a, &s), 0.0);
        assert_eq!(s.ed_rates, vec![0.0]);
    }

    #[test]
    fn single_link_composition_identity() {
        let profiles = vec![flat_profile(0, 1e6, 2.0, 1e-6)];
        let qos = vec![EdQosProfile::new(0, 1e5, 0.4, 0.6).unwrap()];
        let a = Assignment::all_ones(1, 1);
        let mut p = PowerAlloc::zeros(1, 1);
        p.set(0, 0, 0.5);
        let g = 3e-9;
        let n = NormalizationSpec::new(2e6, 4.0).unwrap();
        let s = evaluate_network(&a, &p, &LinkMatrix::filled(1, 1, g), &profiles, &qos, &n).unwrap();
        let r = link_rate::<f64>(1e6, 1, g, 0.5, 1e-15).unwrap();
        let c = monetary_cost(1e-6, r);
        assert_eq!(s.link_rates.at(0, 0), r);
        assert_eq!(s.costs.at(0, 0), c);
        assert_eq!(s.utilities.at(0, 0), link_utility(&qos[0], r, c, &n));
        assert_eq!(s.utility(), s.utilities.at(0, 0));
    }

    #[test]
    fn doubling_occupancy_halves_prefactor() {
        let profiles = vec![flat_profile(0, 1e6, 2.0, 0.0)];
        let qos = vec![EdQosProfile::new(0, 1.0, 1.0, 0.0).unwrap(); 2];
        let gains = LinkMatrix::filled(2, 1, 1e-9);
        let mut p = PowerAlloc::zeros(2, 1);
        p.set(0, 0, 1.0);
        p.set(1, 0, 1.0);
        let alone = Assignment::from_masks(1, &[1, 0]);
        let shared = Assignment::from_masks(1, &[1, 1]);
        let s1 = evaluate_network(&alone, &p, &gains, &profiles, &qos, &norm()).unwrap();
        let s2 = evaluate_network(&shared, &p, &gains, &profiles, &qos, &norm()).unwrap();
        let pre1 = s1.link_rates.at(0, 0) / (1.0 + s1.snr.at(0, 0)).log2();
        let pre2 = s2.link_rates.at(0, 0) / (1.0 + s2.snr.at(0, 0)).log2();
        assert!((pre1 / pre2 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_power_violates_qos_only() {
        let profiles = vec![flat_profile(0, 1e6, 1.0, 0.0), flat_profile(1, 2e6, 1.0, 0.0)];
        let qos = vec![EdQosProfile::new(0, 1e3, 0.5, 0.5).unwrap(); 3];
        let a = Assignment::all_ones(3, 2);
        let p = PowerAlloc::zeros(3, 2);
        let s = evaluate_network(&a, &p, &LinkMatrix::filled(3, 2, 1e-9), &profiles, &qos, &norm())
            .unwrap();
        let rep = &s.report;
        assert!(rep.multi_homing.iter().all(|&c| c));
        assert!(rep.power_slack.iter().all(|&s| s >= 0.0));
        assert!(rep.non_negative);
        assert_eq!(rep.qos_violations(), 3);
        assert!(!rep.feasible);
    }

    #[test]
    fn exhausted_budget_is_feasible_boundary() {
        let profiles = vec![flat_profile(0, 1e6, 1.0, 0.0)];
        let qos = vec![EdQosProfile::new(0, 1.0, 1.0, 0.0).unwrap(); 2];
        let a = Assignment::all_ones(2, 1);
        let mut p = PowerAlloc::zeros(2, 1);
        p.set(0, 0, 0.25);
        p.set(1, 0, 0.75);
        let s = evaluate_network(&a, &p, &LinkMatrix::filled(2, 1, 1e-9), &profiles, &qos, &norm())
            .unwrap();
        assert_eq!(s.report.power_slack, vec![0.0]);
        assert!(s.report.feasible);
    }

    #[test]
    fn unassigned_power_is_zeroed() {
        let profiles = vec![flat_profile(0, 1e6, 1.0, 0.0), flat_profile(1, 1e6, 1.0, 0.0)];
        let qos = vec![EdQosProfile::new(0, 1.0, 1.0, 0.0).unwrap()];
        let a = Assignment::from_masks(2, &[0b01]);
        let mut p = PowerAlloc::zeros(1, 2);
        p.set(0, 0, 0.5);
        p.set(0, 1, 0.7);
        let s = evaluate_network(&a, &p, &LinkMatrix::filled(1, 2, 1e-9), &profiles, &qos, &norm())
            .unwrap();
        assert_eq!(s.powers.at(0, 1), 0.0);
        assert_eq!(s.link_rates.at(0, 1), 0.0);
        assert_eq!(s.report.power_slack[1], 1.0);
    }

    struct Instance {
        profiles: Vec<RatRadioProfile<f64>>,
        qos: Vec<EdQosProfile<f64>>,
        assign: Assignment,
        powers: PowerAlloc<f64>,
        gains: LinkMatrix<f64>,
        norm: NormalizationSpec<f64>,
    }

    fn random_instance(rng: &mut ChaCha8Rng, eds: usize, rats: usize) -> Instance {
        let profiles: Vec<_> = (0..rats)
            .map(|l| {
                flat_profile(
                    l,
                    rng.random_range(1e6..2e8),
                    rng.random_range(1.0..20.0),
                    rng.random_range(0.0..1e-5),
                )
            })
            .collect();
        let qos: Vec<_> = (0..eds)
            .map(|u| {
                let a = rng.random_range(0.0..1.0);
                EdQosProfile::new(u, rng.random_range(1e4..1e5), a, 1.0 - a).unwrap()
            })
            .collect();
        let masks: Vec<usize> = (0..eds).map(|_| rng.random_range(0..(1 << rats))).collect();
        let assign = Assignment::from_masks(rats, &masks);
        let powers = PowerAlloc::from_matrix(LinkMatrix::from_fn(eds, rats, |_, l| {
            rng.random_range(0.0..0.4) * profiles[l].max_power_w
        }));
        let gains = LinkMatrix::from_fn(eds, rats, |_, _| 10f64.powf(rng.random_range(-12.0..-7.0)));
        Instance {
            profiles,
            qos,
            assign,
            powers,
            gains,
            norm: NormalizationSpec::new(4e8, 3600.0).unwrap(),
        }
    }

    #[test]
    fn network_utility_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let inst = random_instance(&mut rng, 10, 3);
            let s = evaluate_network(
                &inst.assign,
                &inst.powers,
                &inst.gains,
                &inst.profiles,
                &inst.qos,
                &inst.norm,
            )
            .unwrap();
            // Straight-line recomputation from the rate and utility definitions.
            let mut expected = 0.0;
            for l in 0..3 {
                let n = (0..10).filter(|&u| inst.assign.is_assigned(u, l)).count();
                for u in 0..10 {
                    if !inst.assign.is_assigned(u, l) {
                        continue;
                    }
                    let w = inst.profiles[l].bandwidth_hz / n as f64;
                    let r = w
                        * (1.0
                            + inst.gains.at(u, l) * inst.powers.at(u, l)
                                / (w * inst.profiles[l].noise_psd_w_per_hz))
                            .log2();
                    let c = inst.profiles[l].price_per_bit * r;
                    expected += inst.qos[u].alpha * r / inst.norm.r_max
                        - inst.qos[u].gamma * c / inst.norm.c_max;
                }
            }
            let got = network_utility(&inst.assign, &s);
            assert!((got - expected).abs() <= 1e-12 * expected.abs().max(1.0));
        }
    }

    #[test]
    fn constraint_report_matches_direct_checks() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut seen_feasible = 0;
        for i in 0..500 {
            let mut inst = random_instance(&mut rng, 4, 3);
            if i % 2 == 0 {
                // Push some instances over budget or into negative powers.
                let u = rng.random_range(0..4);
                let l = rng.random_range(0..3);
                let v = if rng.random_bool(0.5) { -0.1 } else { 50.0 };
                inst.powers.set(u, l, v);
            }
            let s = evaluate_network(
                &inst.assign,
                &inst.powers,
                &inst.gains,
                &inst.profiles,
                &inst.qos,
                &inst.norm,
            )
            .unwrap();
            let mut ok = true;
            for u in 0..4 {
                let served: usize = (0..3).map(|l| inst.assign.is_assigned(u, l) as usize).sum();
                ok &= served >= 1;
                let rate: f64 = (0..3)
                    .map(|l| {
                        if inst.assign.is_assigned(u, l) {
                            s.link_rates.at(u, l)
                        } else {
                            0.0
                        }
                    })
                    .sum();
                ok &= rate >= inst.qos[u].r_min;
            }
            for l in 0..3 {
                let used: f64 = (0..4)
                    .map(|u| {
                        if inst.assign.is_assigned(u, l) {
                            inst.powers.at(u, l)
                        } else {
                            0.0
                        }
                    })
                    .sum();
                ok &= used <= inst.profiles[l].max_power_w;
            }
            for u in 0..4 {
                for l in 0..3 {
                    ok &= inst.powers.at(u, l) >= 0.0;
                }
            }
            assert_eq!(s.report.feasible, ok);
            seen_feasible += ok as usize;
        }
        assert!(seen_feasible > 0);
    }

    proptest! {
        #[test]
        fn sum_rate_is_masked_link_sum(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let inst = random_instance(&mut rng, 6, 3);
            let s = evaluate_network(&inst.assign, &inst.powers, &inst.gains, &inst.profiles, &inst.qos, &inst.norm).unwrap();
            for u in 0..6 {
                let mut r = 0.0;
                for l in 0..3 {
                    if inst.assign.is_assigned(u, l) {
                        r += s.link_rates.at(u, l);
                    } else {
                        prop_assert_eq!(s.link_rates.at(u, l), 0.0);
                        prop_assert_eq!(s.utilities.at(u, l), 0.0);
                    }
                }
                prop_assert_eq!(s.ed_rates[u], r);
            }
            prop_assert!(s.link_rates.as_slice().iter().all(|&r| r >= 0.0));
            prop_assert!(s.costs.as_slice().iter().all(|&c| c >= 0.0));
        }

        #[test]
        fn utility_is_linear_in_rate_and_cost(
            alpha in 0.0f64..1.0, r in 0.0f64..1e9, c in 0.0f64..1e4, dr in -1e8f64..1e8, dc in -1e3f64..1e3
        ) {
            let q = EdQosProfile::new(0, 1.0, alpha, 1.0 - alpha).unwrap();
            let n = NormalizationSpec::new(4e8, 3600.0).unwrap();
            let base = link_utility(&q, r, c, &n);
            let moved = link_utility(&q, r + dr, c + dc, &n);
            let predicted = base + alpha / n.r_max * dr - (1.0 - alpha) / n.c_max * dc;
            prop_assert!((moved - predicted).abs() < 1e-9);
        }
    }

    #[test]
    fn rate_is_increasing_and_concave_in_power() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..1000 {
            let w = rng.random_range(1e5..2e8);
            let n = rng.random_range(1..10);
            let g = 10f64.powf(rng.random_range(-12.0..-6.0));
            let s2 = 10f64.powf(rng.random_range(-16.0..-14.0));
            let pmax = rng.random_range(0.1..20.0);
            let h = pmax / 64.0;
            let grid: Vec<f64> = (0..=64)
                .map(|k| link_rate(w, n, g, k as f64 * h, s2).unwrap())
                .collect();
            for k in 1..grid.len() {
                assert!(grid[k] > grid[k - 1]);
            }
            for k in 1..grid.len() - 1 {
                let second = grid[k + 1] - 2.0 * grid[k] + grid[k - 1];
                assert!(second <= 1e-9 * grid[k].abs().max(1.0), "{second}");
            }
        }
    }

    #[test]
    fn normalization_from_profiles_uses_sole_occupancy() {
        let profiles = vec![flat_profile(0, 1e6, 1.0, 2e-6), flat_profile(1, 4e6, 1.0, 1e-6)];
        let n = NormalizationSpec::from_profiles(&profiles, 10.0).unwrap();
        // g(10 m) = 1e-2 for the unit-reference exponential model.
        let r0: f64 = 1e6 * (1.0f64 + 1e-2 / (1e6 * 1e-15)).log2();
        let r1: f64 = 4e6 * (1.0f64 + 1e-2 / (4e6 * 1e-15)).log2();
        assert!((n.r_max - r0.max(r1)).abs() < 1e-6 * n.r_max);
        assert!((n.c_max - 2e-6 * n.r_max).abs() < 1e-12 * n.c_max);
    }

    #[test]
    fn step_rejects_incomplete_assignment() {
        use crate::channel::{Arena, Channel};
        let channel = Channel::new(
            vec![flat_profile(0, 1e6, 1.0, 0.0)],
            Arena::new(200.0, 200.0).unwrap(),
            2,
            (0.5, 1.5),
            1,
        )
        .unwrap();
        let qos = vec![EdQosProfile::new(0, 1.0, 1.0, 0.0).unwrap(); 2];
        let mut env = Environment::new(channel, qos, norm()).unwrap();
        let a = Assignment::from_masks(1, &[1, 0]);
        assert_eq!(
            env.step(&a, &PowerAlloc::zeros(2, 1)).unwrap_err(),
            EnvError::IncompleteAssignment(1)
        );
    }
}
