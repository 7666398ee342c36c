use deeprat_core::channel::Point;
use deeprat_core::orchestrator::run_mobility_scenario;
use deeprat_core::presets::{reference_config, reference_profiles, reference_qos};
use deeprat_core::{TrainConfig, Trainer};

fn short(seed: u64, episodes: usize) -> TrainConfig {
    let mut c = reference_config(seed);
    c.episodes = episodes;
    c.convergence_window = episodes.min(2);
    c
}

fn two_by_two(seed: u64, episodes: usize) -> TrainConfig {
    let mut c = short(seed, episodes);
    c.profiles = reference_profiles()[..2].to_vec();
    c.qos = reference_qos()[..2].to_vec();
    c.dqn.hidden = vec![16];
    c.dqn.batch_size = 8;
    c.ddpg.batch_size = 8;
    c
}

#[test]
fn one_episode_stores_one_es_transition_per_ed() {
    for k in [1, 3] {
        let mut c = short(5, 1);
        c.k_inner = k;
        let mut t = Trainer::new(c).unwrap();
        t.train(1).unwrap();
        let n = t.counters();
        assert_eq!(n.es_transitions, 10);
        assert_eq!(n.rat_iterations, 10 * k as u64);
        assert_eq!(t.es_agent().buffer().len(), 10);
        for a in t.rat_agents() {
            assert_eq!(a.buffer().len(), 10 * k);
        }
    }
}

#[test]
fn same_seed_gives_identical_records() {
    let run = || {
        let mut t = Trainer::new(short(11, 12)).unwrap();
        serde_json::to_string(&t.train(12).unwrap()).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn different_seeds_diverge() {
    let mut a = Trainer::new(short(1, 3)).unwrap();
    let mut b = Trainer::new(short(2, 3)).unwrap();
    assert_ne!(a.train(3).unwrap(), b.train(3).unwrap());
}

#[test]
fn parallel_rat_agents_match_serial_bit_for_bit() {
    let run = |parallel| {
        let mut c = short(3, 10);
        c.parallel_rats = parallel;
        let mut t = Trainer::new(c).unwrap();
        let recs = t.train(10).unwrap();
        (serde_json::to_string(&recs).unwrap(), t.network_checksum())
    };
    assert_eq!(run(false), run(true));
}

#[test]
fn checkpoint_resume_reproduces_uninterrupted_run() {
    let dir = std::env::temp_dir().join(format!("deeprat-ckpt-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("trainer.json");

    let mut full = Trainer::new(short(9, 16)).unwrap();
    let reference = full.train(16).unwrap();

    let mut first = Trainer::new(short(9, 16)).unwrap();
    let mut resumed_records = first.train(7).unwrap();
    first.save_checkpoint(&path).unwrap();
    drop(first);
    let mut second = Trainer::load_checkpoint(&path).unwrap();
    resumed_records.extend(second.train(9).unwrap());

    assert_eq!(
        serde_json::to_string(&reference).unwrap(),
        serde_json::to_string(&resumed_records).unwrap()
    );
    assert_eq!(full.network_checksum(), second.network_checksum());
    assert!(!path.with_extension("partial").exists());
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn evaluation_leaves_every_network_untouched() {
    let mut t = Trainer::new(short(4, 20)).unwrap();
    t.train(20).unwrap();
    let before = (t.network_checksum(), t.to_json());
    let recs = t.evaluate(3).unwrap();
    assert_eq!(recs.len(), 3);
    assert_eq!(before, (t.network_checksum(), t.to_json()));
}

#[test]
fn evaluation_is_repeatable() {
    let mut t = Trainer::new(short(8, 5)).unwrap();
    t.train(5).unwrap();
    assert_eq!(t.evaluate(2).unwrap(), t.evaluate(2).unwrap());
}

#[test]
fn records_are_finite_and_sized() {
    let mut t = Trainer::new(short(6, 4)).unwrap();
    for r in t.train(4).unwrap() {
        assert!(r.utility.is_finite() && r.sum_rate_bps.is_finite());
        assert_eq!(r.ed_rates_bps.len(), 10);
        assert_eq!(r.rat_rewards.len(), 3);
        assert_eq!(r.link_rates_bps.len(), 30);
        assert_eq!(r.steps, 10);
        assert!(r.final_masks.iter().all(|m| (1..8).contains(m)));
    }
}

#[test]
fn invalid_config_is_rejected_before_training() {
    let mut c = short(1, 10);
    c.convergence_window = 11;
    assert!(Trainer::new(c.clone()).is_err());
    c.convergence_window = 0;
    assert!(Trainer::new(c).is_err());
    let mut c = short(1, 10);
    c.k_inner = 0;
    assert!(Trainer::new(c).is_err());
}

fn positions(t: &Trainer) -> Vec<Point<f64>> {
    t.environment().channel.eds().iter().map(|e| e.point()).collect()
}

#[test]
fn shock_lands_right_before_episode_1001() {
    let mut c = two_by_two(2, 1001);
    c.shock_period = Some(1000);
    let mut t = Trainer::new(c).unwrap();
    let mut prev = positions(&t);
    for e in 1..=1001 {
        let r = t.train_episode().unwrap();
        let now = positions(&t);
        let jump = prev
            .iter()
            .zip(&now)
            .map(|(a, b)| a.distance(b))
            .fold(0.0, f64::max);
        assert_eq!(r.episode, e);
        assert_eq!(r.shocked, e == 1001, "episode {e}");
        if e != 1001 {
            assert!(jump < 0.1, "episode {e} moved {jump} m");
        }
        prev = now;
    }
}

#[test]
fn mobility_scenario_reports_one_result_per_segment() {
    let mut c = two_by_two(3, 30);
    c.shock_period = Some(10);
    let out = run_mobility_scenario(c).unwrap();
    assert_eq!(out.records.len(), 30);
    assert_eq!(out.segment_starts, vec![1, 11, 21]);
    assert_eq!(out.convergence.len(), 3);
    let shocked: Vec<usize> = out.records.iter().filter(|r| r.shocked).map(|r| r.episode).collect();
    assert_eq!(shocked, vec![11, 21]);
}

#[test]
fn mobility_scenario_needs_a_dividing_period() {
    let mut c = two_by_two(3, 30);
    c.shock_period = None;
    assert!(run_mobility_scenario(c.clone()).is_err());
    c.shock_period = Some(7);
    assert!(run_mobility_scenario(c).is_err());
}
