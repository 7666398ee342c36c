//! Comparison schemes: single-RAT greedy and random assignment, all-RAT
//! equal power, and a full-CSI power-allocation oracle.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::RatRadioProfile;
use crate::env::{Assignment, EdQosProfile, NormalizationSpec, PowerAlloc};
use crate::matrix::LinkMatrix;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    MultiMode,
    RandomAssign,
    FixedEqualPower,
    ConvexOracle,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 4] = [
        BaselineKind::MultiMode,
        BaselineKind::RandomAssign,
        BaselineKind::FixedEqualPower,
        BaselineKind::ConvexOracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::MultiMode => "multi_mode",
            BaselineKind::RandomAssign => "random",
            BaselineKind::FixedEqualPower => "fixed",
            BaselineKind::ConvexOracle => "convex",
        }
    }
}

/// Each ED on the single RAT with the largest utility estimate; the lowest
/// RAT index wins ties.
pub fn multi_mode_assign<T: Scalar>(utility_estimates: &LinkMatrix<T>) -> Assignment {
    let (eds, rats) = (utility_estimates.eds(), utility_estimates.rats());
    let masks: Vec<usize> = (0..eds)
        .map(|u| {
            let row = utility_estimates.row(u);
            let mut best = 0;
            for l in 1..rats {
                if row[l] > row[best] {
                    best = l;
                }
            }
            1 << best
        })
        .collect();
    Assignment::from_masks(rats, &masks)
}

/// Each ED on one uniformly drawn RAT.
pub fn random_assign<R: Rng + ?Sized>(eds: usize, rats: usize, rng: &mut R) -> Assignment {
    let masks: Vec<usize> = (0..eds).map(|_| 1 << rng.random_range(0..rats)).collect();
    Assignment::from_masks(rats, &masks)
}

/// Every ED on every RAT, each RAT splitting its budget equally.
pub fn fixed_equal_power<T: Scalar>(
    eds: usize,
    profiles: &[RatRadioProfile<T>],
) -> (Assignment, PowerAlloc<T>) {
    assert!(eds >= 1, "need at least one ED");
    let rats = profiles.len();
    let powers = LinkMatrix::from_fn(eds, rats, |_, l| {
        profiles[l].max_power_w / T::of_usize(eds)
    });
    (Assignment::all_ones(eds, rats), PowerAlloc::from_matrix(powers))
}

/// Euclidean projection onto `{q ≥ 0, Σq ≤ 1}`.
pub fn project_capped_simplex(v: &[f64]) -> Vec<f64> {
    let clipped: Vec<f64> = v.iter().map(|x| x.max(0.0)).collect();
    if clipped.iter().sum::<f64>() <= 1.0 {
        return clipped;
    }
    let mut s = v.to_vec();
    s.sort_by(|a, b| b.partial_cmp(a).expect("finite input"));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, x) in s.iter().enumerate() {
        cum += x;
        let t = (cum - 1.0) / (i + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleSettings {
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Keep the objective value of every accepted iterate.
    pub record_trace: bool,
}

impl Default for OracleSettings {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            max_iterations: 100_000,
            record_trace: false,
        }
    }
}

/// Outcome of one RAT's solve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatSolve {
    pub iterations: usize,
    /// `‖q − Π(q + ∇f/‖∇f‖∞)‖∞` at the returned point, `q = p/P`.
    pub kkt_residual: f64,
    pub converged: bool,
    pub trace: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleResult<T> {
    pub powers: PowerAlloc<T>,
    /// `Σ 𝕌_lu` at `powers`.
    pub objective: f64,
    pub per_rat: Vec<RatSolve>,
}

impl<T> OracleResult<T> {
    /// False if any RAT hit the iteration limit before the tolerance.
    pub fn converged(&self) -> bool {
        self.per_rat.iter().all(|r| r.converged)
    }
}

/// One RAT's separable objective `f(q) = Σ_u c_u·a·log2(1 + b_u·q_u)` with
/// `q = p/P`, `a = W/n`, `b_u = g_u·P/(a·N0)` and `c_u` the utility weight of
/// the link's rate.
#[derive(Clone, Debug, PartialEq)]
pub struct RatProblem {
    pub share_hz: f64,
    pub coeff: Vec<f64>,
    pub snr_at_full_power: Vec<f64>,
}

impl RatProblem {
    pub fn value(&self, q: &[f64]) -> f64 {
        q.iter()
            .zip(&self.coeff)
            .zip(&self.snr_at_full_power)
            .map(|((q, c), b)| c * self.share_hz * (b * q).ln_1p() / std::f64::consts::LN_2)
            .sum()
    }

    pub fn gradient(&self, q: &[f64]) -> Vec<f64> {
        q.iter()
            .zip(&self.coeff)
            .zip(&self.snr_at_full_power)
            .map(|((q, c), b)| c * self.share_hz * b / ((1.0 + b * q) * std::f64::consts::LN_2))
            .collect()
    }

    pub fn kkt_residual(&self, q: &[f64]) -> f64 {
        let g = self.gradient(q);
        let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            return 0.0;
        }
        let step: Vec<f64> = q.iter().zip(&g).map(|(q, g)| q + g / scale).collect();
        project_capped_simplex(&step)
            .iter()
            .zip(q)
            .fold(0.0f64, |m, (p, q)| m.max((p - q).abs()))
    }

    /// Spectral projected gradient ascent with Armijo backtracking, so the
    /// objective never decreases between accepted iterates.
    pub fn solve(&self, settings: &OracleSettings) -> (Vec<f64>, RatSolve) {
        let n = self.coeff.len();
        let mut q = project_capped_simplex(&vec![1.0 / n.max(1) as f64; n]);
        let mut f = self.value(&q);
        let mut g = self.gradient(&q);
        let mut trace = Vec::new();
        if settings.record_trace {
            trace.push(f);
        }
        let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut alpha = if gmax > 0.0 { 1.0 / gmax } else { 1.0 };
        let mut iterations = 0;
        let mut residual = self.kkt_residual(&q);
        while residual >= settings.tolerance && iterations < settings.max_iterations {
            iterations += 1;
            let trial: Vec<f64> = q.iter().zip(&g).map(|(q, g)| q + alpha * g).collect();
            let target = project_capped_simplex(&trial);
            let d: Vec<f64> = target.iter().zip(&q).map(|(t, q)| t - q).collect();
            let slope: f64 = d.iter().zip(&g).map(|(d, g)| d * g).sum();
            if slope <= 0.0 {
                break;
            }
            let mut t = 1.0;
            let (next, f_next) = loop {
                let cand: Vec<f64> = q.iter().zip(&d).map(|(q, d)| q + t * d).collect();
                let fc = self.value(&cand);
                if fc >= f + 1e-4 * t * slope || t < 1e-20 {
                    break (cand, fc);
                }
                t *= 0.5;
            };
            if f_next < f {
                break;
            }
            let g_next = self.gradient(&next);
            // Barzilai-Borwein step for ascent: s·s / −(s·y).
            let s: Vec<f64> = next.iter().zip(&q).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = g_next.iter().zip(&g).map(|(a, b)| a - b).collect();
            let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
            let ss: f64 = s.iter().map(|a| a * a).sum();
            alpha = if sy < 0.0 { (ss / -sy).clamp(1e-30, 1e30) } else { 1e30 };
            q = next;
            f = f_next;
            g = g_next;
            if settings.record_trace {
                trace.push(f);
            }
            residual = self.kkt_residual(&q);
        }
        let converged = residual < settings.tolerance;
        (
            q,
            RatSolve {
                iterations,
                kkt_residual: residual,
                converged,
                trace,
            },
        )
    }
}

/// Builds RAT `l`'s problem under assignment `assign` and true gains.
pub fn rat_problem<T: Scalar>(
    assign: &Assignment,
    gains: &LinkMatrix<T>,
    profile: &RatRadioProfile<T>,
    rat: usize,
    qos: &[EdQosProfile<T>],
    norm: &NormalizationSpec<T>,
) -> (Vec<usize>, RatProblem) {
    let eds = assign.eds_of(rat);
    let share = profile.bandwidth_hz.as_f64() / eds.len().max(1) as f64;
    let noise = share * profile.noise_psd_w_per_hz.as_f64();
    let pmax = profile.max_power_w.as_f64();
    let coeff = eds
        .iter()
        .map(|&u| {
            qos[u].alpha.as_f64() / norm.r_max.as_f64()
                - qos[u].gamma.as_f64() * profile.price_per_bit.as_f64() / norm.c_max.as_f64()
        })
        .collect();
    let snr = eds
        .iter()
        .map(|&u| gains.at(u, rat).as_f64() * pmax / noise)
        .collect();
    (
        eds,
        RatProblem {
            share_hz: share,
            coeff,
            snr_at_full_power: snr,
        },
    )
}

/// Maximises `Σ 𝕌_lu` over powers for a fixed assignment, RAT by RAT.
///
/// Links whose utility weight is not positive lose utility with every Watt,
/// so they get zero power and are left out of the concave program.
pub fn convex_power_oracle<T: Scalar>(
    assign: &Assignment,
    gains: &LinkMatrix<T>,
    profiles: &[RatRadioProfile<T>],
    qos: &[EdQosProfile<T>],
    norm: &NormalizationSpec<T>,
    settings: &OracleSettings,
) -> OracleResult<T> {
    let (n_eds, rats) = (assign.eds(), assign.rats());
    let mut powers = PowerAlloc::zeros(n_eds, rats);
    let mut objective = 0.0;
    let mut per_rat = Vec::with_capacity(rats);
    for (l, profile) in profiles.iter().enumerate() {
        let (eds, full) = rat_problem(assign, gains, profile, l, qos, norm);
        let keep: Vec<usize> = (0..eds.len()).filter(|&i| full.coeff[i] > 0.0).collect();
        let sub = RatProblem {
            share_hz: full.share_hz,
            coeff: keep.iter().map(|&i| full.coeff[i]).collect(),
            snr_at_full_power: keep.iter().map(|&i| full.snr_at_full_power[i]).collect(),
        };
        let (q, solve) = if keep.is_empty() {
            (
                Vec::new(),
                RatSolve {
                    iterations: 0,
                    kkt_residual: 0.0,
                    converged: true,
                    trace: Vec::new(),
                },
            )
        } else {
            sub.solve(settings)
        };
        if !solve.converged {
            log::warn!(
                "power oracle for RAT {l} stopped after {} iterations, residual {:.3e}",
                solve.iterations,
                solve.kkt_residual
            );
        }
        let pmax = profile.max_power_w;
        for (k, &i) in keep.iter().enumerate() {
            powers.set(eds[i], l, T::of(q[k]) * pmax);
        }
        objective += sub.value(&q);
        per_rat.push(solve);
    }
    OracleResult {
        powers,
        objective,
        per_rat,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn multi_mode_examples() {
        let dominant = LinkMatrix::from_fn(4, 3, |_, l| if l == 1 { 1.0 } else { 0.1 });
        let a = multi_mode_assign(&dominant);
        assert!((0..4).all(|u| a.row_mask(u) == 0b010));
        let tie = LinkMatrix::from_fn(3, 2, |_, _| 0.5);
        let a = multi_mode_assign(&tie);
        assert!((0..3).all(|u| a.row_mask(u) == 0b001));
    }

    #[test]
    fn multi_mode_matches_row_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let m = LinkMatrix::from_fn(6, 3, |_, _| rng.random_range(-1.0..1.0));
            let a = multi_mode_assign(&m);
            for u in 0..6 {
                let mut best = 0;
                let mut bv = f64::NEG_INFINITY;
                for l in 0..3 {
                    if m.at(u, l) > bv {
                        bv = m.at(u, l);
                        best = l;
                    }
                }
                assert_eq!(a.rats_of(u), vec![best]);
            }
        }
    }

    #[test]
    fn random_assignment_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_assign(5, 1, &mut rng);
        assert!((0..5).all(|u| a.row_mask(u) == 1));
        let mut counts = [0usize; 3];
        let n = 10_000;
        for _ in 0..n {
            let a = random_assign(1, 3, &mut rng);
            assert_eq!(a.rats_of(0).len(), 1);
            counts[a.rats_of(0)[0]] += 1;
        }
        let p = 1.0 / 3.0;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * p).abs() < 3.0 * sd);
        }
    }

    #[test]
    fn projection_is_feasible_and_nearest() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..300 {
            let v: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..2.0)).collect();
            let p = project_capped_simplex(&v);
            assert!(p.iter().all(|x| *x >= 0.0));
            assert!(p.iter().sum::<f64>() <= 1.0 + 1e-12);
            let d = |x: &[f64]| x.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            let best = d(&p);
            let k = 60;
            for i in 0..=k {
                for j in 0..=k - i {
                    for m in 0..=k - i - j {
                        let c = [i as f64 / k as f64, j as f64 / k as f64, m as f64 / k as f64];
                        assert!(d(&c) >= best - 1e-12);
                    }
                }
            }
        }
    }
    fn problem(rng: &mut ChaCha8Rng, n: usize) -> RatProblem {
        RatProblem {
            share_hz: rng.random_range(1e6..5e7),
            coeff: (0..n).map(|_| rng.random_range(1e-10..5e-9)).collect(),
            snr_at_full_power: (0..n).map(|_| 10f64.powf(rng.random_range(-3.0..4.0))).collect(),
        }
    }

    #[test]
    fn symmetric_links_split_equally() {
        let p = RatProblem { share_hz: 1e7, coeff: vec![1e-9; 2], snr_at_full_power: vec![50.0; 2] };
        let (q, s) = p.solve(&OracleSettings::default());
        assert!(s.converged);
        assert!((q[0] - 0.5).abs() < 1e-9 && (q[1] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn matches_two_link_water_filling() {
        for (b1, b2) in [(10.0, 40.0), (1.0, 3.0), (100.0, 0.5), (0.2, 0.25)] {
            let p = RatProblem { share_hz: 2e7, coeff: vec![3e-9; 2], snr_at_full_power: vec![b1, b2] };
            let (q, _) = p.solve(&OracleSettings::default());
            let q1 = ((1.0 + 1.0 / b2 - 1.0 / b1) / 2.0f64).clamp(0.0, 1.0);
            let want = [q1, 1.0 - q1];
            for k in 0..2 {
                assert!((q[k] - want[k]).abs() <= 1e-4 * want[k].max(1e-3), "{q:?} vs {want:?}");
            }
        }
    }

    #[test]
    fn kkt_stationarity_and_monotone_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let settings = OracleSettings { record_trace: true, ..OracleSettings::default() };
        for _ in 0..100 {
            let n = rng.random_range(1..=10);
            let p = problem(&mut rng, n);
            let (q, s) = p.solve(&settings);
            assert!(s.converged && s.kkt_residual < 1e-5, "{s:?}");
            assert!(s.trace.windows(2).all(|w| w[1] >= w[0]));
            assert!(q.iter().all(|x| *x >= 0.0) && q.iter().sum::<f64>() <= 1.0 + 1e-12);
            let g = p.gradient(&q);
            let lambda = q.iter().zip(&g).filter(|(q, _)| **q > 1e-9).map(|(_, g)| *g).fold(0.0, f64::max);
            for (qi, gi) in q.iter().zip(&g) {
                if *qi > 1e-9 {
                    assert!((gi - lambda).abs() <= 1e-5 * lambda, "active gradients differ");
                } else {
                    assert!(*gi <= lambda * (1.0 + 1e-5));
                }
            }
        }
    }

    #[test]
    fn fixed_equal_power_splits_budget() {
        let profiles = crate::presets::reference_profiles::<f64>();
        let (a, p) = fixed_equal_power(10, &profiles);
        assert!((0..10).all(|u| a.row_mask(u) == 0b111));
        let pw = crate::channel::dbm_to_watt(43.0f64);
        assert!((p.at(0, 0) - pw / 10.0).abs() < 1e-15);
        assert!((p.at(3, 0) - 1.995262314968879).abs() < 1e-12);
        for l in 0..3 {
            let total: f64 = (0..10).map(|u| p.at(u, l)).sum();
            assert!((total - profiles[l].max_power_w).abs() <= 1e-12 * total);
        }
    }
}
