//! Propagation models, small-scale fading and ED mobility.
//!
//! Three path-loss families are supported:
//!
//! * `DirectionalMmWave`: free-space loss at 1 m plus `10·n·log10(d)` with a
//!   LOS or NLOS exponent, and a beam-steering array gain of
//!   `10·log10(n_antennas) + antenna_gain` dBi assuming perfect alignment.
//!   LOS links see Rician fading (K = 10 dB), NLOS links Rayleigh fading.
//! * `Cost231Urban`: COST-231 Hata with the medium-city mobile-antenna
//!   correction and `C_m = 0`, plus the same array gain. Rayleigh fading.
//! * `ExponentialPathLoss`: `g_ref · d^(-n)` with Rayleigh fading.
//!
//! Shadowing is a zero-mean log-normal draw (std in dB) applied to every model.
//! Distances below one metre are clamped.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::LinkMatrix;
use crate::scalar::Scalar;

const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// Rician K-factor for mmWave LOS links, linear (10 dB).
const RICIAN_K: f64 = 10.0;
/// Decay length of the LOS probability `exp(-d / 141.4 m)`.
pub const LOS_DECAY_M: f64 = 141.4;
pub const MIN_DISTANCE_M: f64 = 1.0;

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("RAT {rat}: {field} must be {requirement}")]
    InvalidProfile {
        rat: usize,
        field: &'static str,
        requirement: &'static str,
    },
    #[error("unknown channel model `{0}`")]
    UnknownModel(String),
    #[error("arena dimensions must be positive")]
    InvalidArena,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point<T> {
    pub x: T,
    pub y: T,
}

impl<T: Scalar> Point<T> {
    pub fn new(x: T, y: T) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point<T>) -> T {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Rectangular area `[0, width] × [0, height]` in metres.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Arena<T> {
    pub width: T,
    pub height: T,
}

impl<T: Scalar> Arena<T> {
    pub fn new(width: T, height: T) -> Result<Self, ChannelError> {
        if !(width > T::zero() && height > T::zero()) {
            return Err(ChannelError::InvalidArena);
        }
        Ok(Self { width, height })
    }

    pub fn contains(&self, p: &Point<T>) -> bool {
        p.x >= T::zero() && p.x <= self.width && p.y >= T::zero() && p.y <= self.height
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ChannelModel<T> {
    DirectionalMmWave {
        los_exponent: T,
        nlos_exponent: T,
    },
    Cost231Urban {
        base_height_m: T,
        mobile_height_m: T,
    },
    ExponentialPathLoss {
        exponent: T,
        /// Gain at the 1 m reference distance, dB.
        reference_gain_db: T,
    },
}

impl<T> ChannelModel<T> {
    pub fn name(&self) -> &'static str {
        match self {
            ChannelModel::DirectionalMmWave { .. } => "directional_mmwave",
            ChannelModel::Cost231Urban { .. } => "cost231_urban",
            ChannelModel::ExponentialPathLoss { .. } => "exponential",
        }
    }

    fn uses_rician_los(&self) -> bool {
        matches!(self, ChannelModel::DirectionalMmWave { .. })
    }
}

/// Physical and economic parameters of one radio access technology.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatRadioProfile<T> {
    pub id: usize,
    pub frequency_ghz: T,
    pub bandwidth_hz: T,
    pub max_power_w: T,
    pub noise_psd_w_per_hz: T,
    pub model: ChannelModel<T>,
    pub n_antennas: usize,
    /// Multipath count; informational, fading is drawn in closed form.
    pub n_paths: usize,
    pub antenna_gain_dbi: T,
    pub shadowing_std_db: T,
    /// Price ε_l in Euro per bit.
    pub price_per_bit: T,
    pub position: Point<T>,
}

impl<T: Scalar> RatRadioProfile<T> {
    pub fn validate(&self) -> Result<(), ChannelError> {
        let bad = |field, requirement| ChannelError::InvalidProfile {
            rat: self.id,
            field,
            requirement,
        };
        let positive = |v: T| v.is_finite() && v > T::zero();
        if !positive(self.frequency_ghz) {
            return Err(bad("frequency_ghz", "positive"));
        }
        if !positive(self.bandwidth_hz) {
            return Err(bad("bandwidth", "positive"));
        }
        if !positive(self.max_power_w) {
            return Err(bad("max_power", "positive"));
        }
        if !positive(self.noise_psd_w_per_hz) {
            return Err(bad("noise_psd", "positive"));
        }
        if !(self.price_per_bit.is_finite() && self.price_per_bit >= T::zero()) {
            return Err(bad("price_per_bit", "non-negative"));
        }
        if !(self.shadowing_std_db.is_finite() && self.shadowing_std_db >= T::zero()) {
            return Err(bad("shadowing_std_db", "non-negative"));
        }
        if self.n_antennas == 0 {
            return Err(bad("n_antennas", "at least 1"));
        }
        if !self.antenna_gain_dbi.is_finite() {
            return Err(bad("antenna_gain_dbi", "finite"));
        }
        match &self.model {
            ChannelModel::DirectionalMmWave {
                los_exponent,
                nlos_exponent,
            } => {
                if !(positive(*los_exponent) && positive(*nlos_exponent)) {
                    return Err(bad("pathloss_exponents", "positive"));
                }
            }
            ChannelModel::Cost231Urban {
                base_height_m,
                mobile_height_m,
            } => {
                if !(positive(*base_height_m) && positive(*mobile_height_m)) {
                    return Err(bad("antenna heights", "positive"));
                }
            }
            ChannelModel::ExponentialPathLoss {
                exponent,
                reference_gain_db,
            } => {
                if !(positive(*exponent) && reference_gain_db.is_finite()) {
                    return Err(bad("pathloss_exponents", "positive"));
                }
            }
        }
        Ok(())
    }

    /// Beam-steering plus element gain in dB.
    pub fn array_gain_db(&self) -> T {
        T::of(10.0) * T::of_usize(self.n_antennas).log10() + self.antenna_gain_dbi
    }

    /// Deterministic large-scale path loss (dB) at distance `d` metres.
    pub fn path_loss_db(&self, d: T, los: bool) -> T {
        let d = d.max(T::of(MIN_DISTANCE_M));
        let ten = T::of(10.0);
        match &self.model {
            ChannelModel::DirectionalMmWave {
                los_exponent,
                nlos_exponent,
            } => {
                let n = if los { *los_exponent } else { *nlos_exponent };
                free_space_loss_1m_db(self.frequency_ghz) + ten * n * d.log10()
            }
            ChannelModel::Cost231Urban {
                base_height_m,
                mobile_height_m,
            } => cost231_hata_db(self.frequency_ghz, d, *base_height_m, *mobile_height_m),
            ChannelModel::ExponentialPathLoss {
                exponent,
                reference_gain_db,
            } => ten * *exponent * d.log10() - *reference_gain_db,
        }
    }
}

/// Free-space loss at 1 m: `20·log10(4π f / c)`.
pub fn free_space_loss_1m_db<T: Scalar>(frequency_ghz: T) -> T {
    let f = frequency_ghz.as_f64() * 1e9;
    T::of(20.0 * (4.0 * PI * f / SPEED_OF_LIGHT).log10())
}

/// COST-231 Hata urban path loss in dB, medium-city correction.
pub fn cost231_hata_db<T: Scalar>(frequency_ghz: T, d_m: T, base_h: T, mobile_h: T) -> T {
    let f_mhz = frequency_ghz * T::of(1e3);
    let lf = f_mhz.log10();
    let a_hm = (T::of(1.1) * lf - T::of(0.7)) * mobile_h - (T::of(1.56) * lf - T::of(0.8));
    let d_km = d_m / T::of(1e3);
    T::of(46.3) + T::of(33.9) * lf - T::of(13.82) * base_h.log10() - a_hm
        + (T::of(44.9) - T::of(6.55) * base_h.log10()) * d_km.log10()
}

pub fn dbm_to_watt<T: Scalar>(dbm: T) -> T {
    T::of(10.0).powf(dbm / T::of(10.0)) * T::of(1e-3)
}

pub fn psd_dbm_per_mhz_to_watt_per_hz<T: Scalar>(v: T) -> T {
    dbm_to_watt(v) * T::of(1e-6)
}

pub fn db_to_linear<T: Scalar>(db: T) -> T {
    T::of(10.0).powf(db / T::of(10.0))
}

/// Per-link random state for one time step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkFading<T> {
    /// Small-scale power gain `|h|²`.
    pub power_gain: T,
    pub shadowing_db: T,
    pub los: bool,
}

impl<T: Scalar> LinkFading<T> {
    /// No fading, no shadowing, LOS.
    pub fn unit() -> Self {
        Self {
            power_gain: T::one(),
            shadowing_db: T::zero(),
            los: true,
        }
    }
}

pub type FadingState<T> = LinkMatrix<LinkFading<T>>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdPosition<T> {
    pub x: T,
    pub y: T,
    pub speed_mps: T,
}

impl<T: Scalar> EdPosition<T> {
    pub fn point(&self) -> Point<T> {
        Point::new(self.x, self.y)
    }
}

/// Linear power gain of one RAT-ED link.
pub fn link_gain<T: Scalar>(
    profile: &RatRadioProfile<T>,
    ed: &EdPosition<T>,
    fading: &LinkFading<T>,
) -> T {
    let d = profile.position.distance(&ed.point());
    let gain_db = profile.array_gain_db() - profile.path_loss_db(d, fading.los) + fading.shadowing_db;
    db_to_linear(gain_db) * fading.power_gain
}

fn complex_gaussian_power<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let a: f64 = StandardNormal.sample(rng);
    let b: f64 = StandardNormal.sample(rng);
    0.5 * (a * a + b * b)
}

/// Draws fading and shadowing for one link.
pub fn draw_link_fading<T: Scalar, R: Rng + ?Sized>(
    profile: &RatRadioProfile<T>,
    los: bool,
    rng: &mut R,
) -> LinkFading<T> {
    let shadow: f64 = StandardNormal.sample(rng);
    let power_gain = if los && profile.model.uses_rician_los() {
        let phase = rng.random_range(0.0..2.0 * PI);
        let los_amp = (RICIAN_K / (RICIAN_K + 1.0)).sqrt();
        let scatter = (1.0 / (RICIAN_K + 1.0)).sqrt();
        let a: f64 = StandardNormal.sample(rng);
        let b: f64 = StandardNormal.sample(rng);
        let re = los_amp * phase.cos() + scatter * a * std::f64::consts::FRAC_1_SQRT_2;
        let im = los_amp * phase.sin() + scatter * b * std::f64::consts::FRAC_1_SQRT_2;
        re * re + im * im
    } else {
        complex_gaussian_power(rng)
    };
    LinkFading {
        power_gain: T::of(power_gain),
        shadowing_db: T::of(shadow * profile.shadowing_std_db.as_f64()),
        los,
    }
}

/// Moves `ed` by `speed·dt` along `heading` (radians), reflecting at the walls.
pub fn advance<T: Scalar>(ed: &mut EdPosition<T>, heading: T, dt: T, arena: &Arena<T>) {
    let step = ed.speed_mps * dt;
    ed.x = reflect(ed.x + step * heading.cos(), arena.width);
    ed.y = reflect(ed.y + step * heading.sin(), arena.height);
}

fn reflect<T: Scalar>(v: T, hi: T) -> T {
    let period = hi + hi;
    let mut m = v % period;
    if m < T::zero() {
        m += period;
    }
    if m > hi {
        period - m
    } else {
        m
    }
}

/// One mobility step: every ED moves `speed·dt` in a uniformly random direction.
pub fn step_mobility<T: Scalar, R: Rng + ?Sized>(
    eds: &mut [EdPosition<T>],
    dt: T,
    arena: &Arena<T>,
    rng: &mut R,
) {
    assert!(dt > T::zero(), "mobility step needs dt > 0");
    for ed in eds.iter_mut() {
        let heading = T::of(rng.random_range(0.0..2.0 * PI));
        advance(ed, heading, dt, arena);
    }
}

/// Teleports every ED uniformly into the arena and redraws its speed.
pub fn mobility_shock<T: Scalar, R: Rng + ?Sized>(
    eds: &mut [EdPosition<T>],
    arena: &Arena<T>,
    speed_range_mps: (T, T),
    rng: &mut R,
) {
    for ed in eds.iter_mut() {
        *ed = random_position(arena, speed_range_mps, rng);
    }
}

pub fn random_position<T: Scalar, R: Rng + ?Sized>(
    arena: &Arena<T>,
    (lo, hi): (T, T),
    rng: &mut R,
) -> EdPosition<T> {
    let x = rng.random::<f64>() * arena.width.as_f64();
    let y = rng.random::<f64>() * arena.height.as_f64();
    let speed = if hi > lo {
        rng.random_range(lo.as_f64()..hi.as_f64())
    } else {
        lo.as_f64()
    };
    EdPosition {
        x: T::of(x),
        y: T::of(y),
        speed_mps: T::of(speed),
    }
}

pub fn kmh_to_mps<T: Scalar>(v: T) -> T {
    v / T::of(3.6)
}

/// LOS probability `exp(-d / 141.4 m)`.
pub fn los_probability<T: Scalar>(d: T) -> T {
    (-d / T::of(LOS_DECAY_M)).exp()
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent generator for link `(u, l)` at fading step `step`.
///
/// Depends only on its arguments, so links can be drawn in any order or in
/// parallel with identical results.
pub fn link_rng(seed: u64, step: u64, u: usize, l: usize) -> ChaCha8Rng {
    let h = splitmix64(seed ^ splitmix64(step ^ splitmix64(((u as u64) << 32) | l as u64)));
    ChaCha8Rng::seed_from_u64(h)
}

/// Time-varying channel between all RATs and EDs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Channel<T> {
    profiles: Vec<RatRadioProfile<T>>,
    arena: Arena<T>,
    speed_range_mps: (T, T),
    eds: Vec<EdPosition<T>>,
    los: LinkMatrix<bool>,
    fading: FadingState<T>,
    gains: LinkMatrix<T>,
    fading_seed: u64,
    fading_step: u64,
    mobility_rng: ChaCha8Rng,
}

impl<T: Scalar> Channel<T> {
    /// Places `n_eds` EDs uniformly, draws LOS flags and the first fading state.
    pub fn new(
        profiles: Vec<RatRadioProfile<T>>,
        arena: Arena<T>,
        n_eds: usize,
        speed_range_mps: (T, T),
        seed: u64,
    ) -> Result<Self, ChannelError> {
        for p in &profiles {
            p.validate()?;
        }
        let mut mobility_rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ 0x6D6F_6269));
        let eds = (0..n_eds)
            .map(|_| random_position(&arena, speed_range_mps, &mut mobility_rng))
            .collect();
        let rats = profiles.len();
        let mut channel = Self {
            profiles,
            arena,
            speed_range_mps,
            eds,
            los: LinkMatrix::filled(n_eds, rats, true),
            fading: LinkMatrix::filled(n_eds, rats, LinkFading::unit()),
            gains: LinkMatrix::filled(n_eds, rats, T::zero()),
            fading_seed: splitmix64(seed ^ 0x6661_6469),
            fading_step: 0,
            mobility_rng,
        };
        channel.redraw_los();
        channel.redraw_fading();
        Ok(channel)
    }

    pub fn profiles(&self) -> &[RatRadioProfile<T>] {
        &self.profiles
    }

    pub fn eds(&self) -> &[EdPosition<T>] {
        &self.eds
    }

    pub fn set_eds(&mut self, eds: Vec<EdPosition<T>>) {
        assert_eq!(eds.len(), self.eds.len());
        self.eds = eds;
        self.redraw_los();
        self.recompute_gains();
    }

    pub fn arena(&self) -> &Arena<T> {
        &self.arena
    }

    pub fn gains(&self) -> &LinkMatrix<T> {
        &self.gains
    }

    pub fn los(&self) -> &LinkMatrix<bool> {
        &self.los
    }

    pub fn fading(&self) -> &FadingState<T> {
        &self.fading
    }

    pub fn fading_step(&self) -> u64 {
        self.fading_step
    }

    fn redraw_los(&mut self) {
        let (n_eds, rats) = (self.eds.len(), self.profiles.len());
        for u in 0..n_eds {
            for l in 0..rats {
                let d = self.profiles[l].position.distance(&self.eds[u].point());
                let p = los_probability(d).as_f64();
                let los = self.mobility_rng.random::<f64>() < p;
                self.los.set(u, l, los);
            }
        }
    }

    /// Draws a fresh fading state and recomputes all gains.
    pub fn redraw_fading(&mut self) {
        self.fading = self.fading_at(self.fading_step);
        self.fading_step += 1;
        self.recompute_gains();
    }

    /// Fading state of step `step` (pure in the channel seed and LOS flags).
    pub fn fading_at(&self, step: u64) -> FadingState<T> {
        LinkMatrix::from_fn(self.eds.len(), self.profiles.len(), |u, l| {
            let mut rng = link_rng(self.fading_seed, step, u, l);
            draw_link_fading(&self.profiles[l], self.los.at(u, l), &mut rng)
        })
    }

    /// Same as [`Channel::fading_at`], drawing each RAT's links on its own thread.
    pub fn fading_at_parallel(&self, step: u64) -> FadingState<T> {
        let n = self.eds.len();
        let columns: Vec<Vec<LinkFading<T>>> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..self.profiles.len())
                .map(|l| {
                    s.spawn(move || {
                        (0..n)
                            .map(|u| {
                                let mut rng = link_rng(self.fading_seed, step, u, l);
                                draw_link_fading(&self.profiles[l], self.los.at(u, l), &mut rng)
                            })
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("fading worker")).collect()
        });
        LinkMatrix::from_fn(n, self.profiles.len(), |u, l| columns[l][u])
    }

    fn recompute_gains(&mut self) {
        let gains = LinkMatrix::from_fn(self.eds.len(), self.profiles.len(), |u, l| {
            link_gain(&self.profiles[l], &self.eds[u], self.fading.get(u, l))
        });
        self.gains = gains;
    }

    /// Advances every ED by one mobility step of `dt` seconds.
    pub fn step_mobility(&mut self, dt: T) {
        step_mobility(&mut self.eds, dt, &self.arena, &mut self.mobility_rng);
        self.recompute_gains();
    }

    /// Random repositioning of all EDs; LOS flags are redrawn.
    pub fn mobility_shock(&mut self) {
        mobility_shock(
            &mut self.eds,
            &self.arena,
            self.speed_range_mps,
            &mut self.mobility_rng,
        );
        self.redraw_los();
        self.recompute_gains();
    }

    /// Freezes the current gains: fading no longer changes on redraw.
    pub fn static_gains(&self) -> LinkMatrix<T> {
        self.gains.clone()
    }
}
