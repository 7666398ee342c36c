//! The reference three-RAT, ten-ED scenario and its default hyperparameters.

use crate::channel::{
    dbm_to_watt, free_space_loss_1m_db, psd_dbm_per_mhz_to_watt_per_hz, Arena, ChannelModel,
    Point, RatRadioProfile,
};
use crate::ddpg::DdpgConfig;
use crate::dqn::DqnConfig;
use crate::env::{ConstraintTerm, EdQosProfile};
use crate::orchestrator::{ChannelDynamics, PowerBudget, TrainConfig};
use crate::scalar::Scalar;

pub const ARENA_SIDE_M: f64 = 200.0;
/// Side of the equilateral triangle on which the RATs sit.
pub const RAT_SPACING_M: f64 = 100.0;

/// RAT sites: an equilateral triangle centred in the arena.
pub fn rat_positions<T: Scalar>() -> [Point<T>; 3] {
    let h = RAT_SPACING_M * 3f64.sqrt() / 2.0;
    let y0 = (ARENA_SIDE_M - h) / 2.0;
    let x0 = (ARENA_SIDE_M - RAT_SPACING_M) / 2.0;
    [
        Point::new(T::of(x0), T::of(y0)),
        Point::new(T::of(x0 + RAT_SPACING_M), T::of(y0)),
        Point::new(T::of(ARENA_SIDE_M / 2.0), T::of(y0 + h)),
    ]
}

/// 5G mmWave, 4G LTE and 3G radio profiles.
pub fn reference_profiles<T: Scalar>() -> Vec<RatRadioProfile<T>> {
    let pos = rat_positions::<T>();
    let noise = psd_dbm_per_mhz_to_watt_per_hz(T::of(-57.0));
    vec![
        RatRadioProfile {
            id: 0,
            frequency_ghz: T::of(28.0),
            bandwidth_hz: T::of(200e6),
            max_power_w: dbm_to_watt(T::of(43.0)),
            noise_psd_w_per_hz: noise,
            model: ChannelModel::DirectionalMmWave {
                los_exponent: T::of(2.0),
                nlos_exponent: T::of(4.0),
            },
            n_antennas: 4,
            n_paths: 4,
            antenna_gain_dbi: T::of(3.0),
            shadowing_std_db: T::of(3.1),
            price_per_bit: T::of(9e-6),
            position: pos[0],
        },
        RatRadioProfile {
            id: 1,
            frequency_ghz: T::of(6.0),
            bandwidth_hz: T::of(40e6),
            max_power_w: dbm_to_watt(T::of(40.0)),
            noise_psd_w_per_hz: noise,
            model: ChannelModel::Cost231Urban {
                base_height_m: T::of(30.0),
                mobile_height_m: T::of(1.5),
            },
            n_antennas: 4,
            n_paths: 4,
            antenna_gain_dbi: T::of(11.0),
            shadowing_std_db: T::of(3.0),
            price_per_bit: T::of(6e-6),
            position: pos[1],
        },
        RatRadioProfile {
            id: 2,
            frequency_ghz: T::of(2.4),
            bandwidth_hz: T::of(27e6),
            max_power_w: dbm_to_watt(T::of(42.0)),
            noise_psd_w_per_hz: noise,
            model: ChannelModel::ExponentialPathLoss {
                exponent: T::of(2.0),
                reference_gain_db: -free_space_loss_1m_db(T::of(2.4)),
            },
            n_antennas: 1,
            n_paths: 1,
            antenna_gain_dbi: T::zero(),
            shadowing_std_db: T::of(1.8),
            price_per_bit: T::of(1e-6),
            position: pos[2],
        },
    ]
}

/// `(r_min bit/s, α, γ)` for the ten reference EDs.
pub const REFERENCE_QOS: [(f64, f64, f64); 10] = [
    (8.3e4, 0.4, 0.6),
    (8.49e4, 0.3, 0.7),
    (1.17e4, 0.2, 0.8),
    (4.78e4, 0.2, 0.8),
    (1.37e4, 0.0, 1.0),
    (1.43e4, 0.5, 0.5),
    (6.1e4, 0.4, 0.6),
    (1.58e4, 0.6, 0.4),
    (8.93e4, 0.6, 0.4),
    (7.24e4, 0.1, 0.9),
];

pub fn reference_qos<T: Scalar>() -> Vec<EdQosProfile<T>> {
    REFERENCE_QOS
        .iter()
        .enumerate()
        .map(|(u, &(r, a, g))| {
            EdQosProfile::new(u, T::of(r), T::of(a), T::of(g)).expect("reference QoS is valid")
        })
        .collect()
}

/// Full reference training configuration for `seed`.
pub fn reference_config<T: Scalar>(seed: u64) -> TrainConfig<T> {
    TrainConfig {
        episodes: 1000,
        profiles: reference_profiles(),
        qos: reference_qos(),
        arena: Arena::new(T::of(ARENA_SIDE_M), T::of(ARENA_SIDE_M)).expect("positive arena"),
        speed_range_kmh: (T::of(2.0), T::of(6.0)),
        slot_duration_s: T::of(1e-3),
        normalization_distance_m: T::of(10.0),
        dqn: DqnConfig {
            reward_scale: 1e-3,
            ..DqnConfig::default()
        },
        ddpg: DdpgConfig {
            reward_scale: 1e-3,
            ..DdpgConfig::default()
        },
        k_inner: 1,
        seed,
        shock_period: None,
        convergence_window: 200,
        convergence_tolerance: 0.02,
        convergence_smoothing: 1,
        channel_dynamics: ChannelDynamics::PerStep,
        power_budget: PowerBudget::Rescale,
        constraint_term: ConstraintTerm::Signed,
        parallel_rats: false,
    }
}
