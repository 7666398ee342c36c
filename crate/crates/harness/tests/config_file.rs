use std::path::PathBuf;

use deeprat_core::presets::reference_config;
use deeprat_harness::config::{self, parse, ConfigError};

fn paper_path() -> PathBuf {
    PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../paper.cfg"))
}

fn paper_text() -> String {
    std::fs::read_to_string(paper_path()).unwrap()
}

fn error_of(text: &str) -> ConfigError {
    parse(text, "test.cfg").expect_err("configuration should be rejected")
}

#[test]
fn paper_cfg_encodes_the_parameter_tables() {
    let cfg = config::load(&paper_path()).unwrap();
    assert_eq!(cfg.rat.len(), 3);
    assert_eq!(cfg.ed.len(), 10);
    let profiles = cfg.profiles();
    assert_eq!(profiles[0].bandwidth_hz, 2e8);
    assert_eq!(profiles[0].price_per_bit, 9e-6);
    assert_eq!(profiles[1].price_per_bit, 6e-6);
    assert_eq!(profiles[2].price_per_bit, 1e-6);
    let ed5 = cfg.qos()[4];
    assert_eq!((ed5.alpha, ed5.gamma, ed5.r_min), (0.0, 1.0, 1.37e4));
    assert_eq!(cfg.dqn.hidden_neurons, vec![256, 128]);
    assert_eq!(cfg.ddpg.batch_size, 16);
}

#[test]
fn paper_cfg_builds_the_reference_scenario() {
    let cfg = config::load(&paper_path()).unwrap();
    assert_eq!(cfg.train_config(7).unwrap(), reference_config::<f64>(7));
}

#[test]
fn omitted_modelling_keys_take_their_defaults() {
    let text = paper_text();
    let strip = |t: &str, section: &str| -> String {
        let start = t.find(section).unwrap();
        let end = start + t[start + 1..].find("\n[").unwrap() + 1;
        format!("{}{}", &t[..start], &t[end..])
    };
    let mut minimal = text.clone();
    for s in ["[scenario]", "[training]", "[evaluation]", "[sweep]"] {
        minimal = strip(&minimal, s);
    }
    let minimal = minimal
        .lines()
        .filter(|l| {
            !["target_sync_period_steps", "grad_clip_norm", "reward_scale", "tau =", "position_m"]
                .iter()
                .any(|k| l.starts_with(k))
        })
        .collect::<Vec<_>>()
        .join("\n");
    assert!(!minimal.contains("reward_scale"));
    let a = parse(&minimal, "minimal.cfg").unwrap();
    let b = parse(&text, "paper.cfg").unwrap();
    assert_eq!(a.train_config(1).unwrap(), b.train_config(1).unwrap());
}

#[test]
fn alpha_plus_gamma_must_be_one() {
    let text = paper_text().replacen("alpha = 0.0\ngamma = 1.0", "alpha = 0.1\ngamma = 1.0", 1);
    let e = error_of(&text);
    assert_eq!(e.path(), "test.cfg:ed[4]");
    assert!(e.to_string().contains("alpha + gamma must equal 1"), "{e}");
}

#[test]
fn unknown_key_is_reported_with_its_section() {
    let text = paper_text().replacen("[dqn]\n", "[dqn]\nlearning_rat = 1.0\n", 1);
    let e = error_of(&text);
    assert_eq!(e.path(), "test.cfg:dqn.learning_rat");
    assert!(e.to_string().contains("unknown field"), "{e}");
}

#[test]
fn missing_required_key_is_reported() {
    let text = paper_text().replacen("eta2 = 1e3\n", "", 1);
    let e = error_of(&text);
    assert_eq!(e.path(), "test.cfg:ddpg");
    assert!(e.to_string().contains("eta2"), "{e}");
}

#[test]
fn out_of_range_values_name_their_key() {
    let text = paper_text().replacen("bandwidth_mhz = 40.0", "bandwidth_mhz = -40.0", 1);
    assert_eq!(error_of(&text).path(), "test.cfg:rat[1].bandwidth_mhz");
    let text = paper_text().replacen("discount = 0.99", "discount = 1.5", 1);
    assert_eq!(error_of(&text).path(), "test.cfg:dqn.discount");
    let text = paper_text().replacen("model = \"exponential\"", "model = \"free_space\"", 1);
    assert!(error_of(&text).path().starts_with("test.cfg:rat[2].channel"));
}

#[test]
fn schema_version_must_match() {
    let text = paper_text().replacen("schema_version = 1", "schema_version = 2", 1);
    let e = error_of(&text);
    assert_eq!(e.path(), "test.cfg:schema_version");
}

#[test]
fn paper_cfg_round_trips() {
    let a = config::load(&paper_path()).unwrap();
    let text = a.to_toml();
    let b = parse(&text, "round-trip").unwrap();
    assert_eq!(a, b);
    assert_eq!(text, b.to_toml());
    assert_eq!(a.train_config(3).unwrap(), b.train_config(3).unwrap());
}
