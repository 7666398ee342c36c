use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use deeprat_harness::metrics::{num, read_status, CsvStream, RunState};
use deeprat_harness::recipes::{self, seed_dir, ExperimentRecipe, Overrides, RecipeKind};
use deeprat_harness::summarize::{self, SummaryOptions};

fn paper_text() -> String {
    fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../paper.cfg")).unwrap()
}

/// Reference scenario shrunk to a few episodes with small networks.
fn tiny_config(dir: &Path) -> PathBuf {
    let text = paper_text()
        .replace("hidden_neurons = [256, 128]", "hidden_neurons = [16]")
        .replace("[evaluation]\n# Greedy evaluation episodes after training.\nepisodes = 50", "[evaluation]\nepisodes = 3")
        .replace("k_inner = [1, 2, 4]", "k_inner = [1, 2]")
        .replacen("batch_size = 64", "batch_size = 8", 1);
    assert!(text.contains("episodes = 3"));
    let path = dir.join("tiny.cfg");
    fs::write(&path, text).unwrap();
    path
}

fn recipe(kind: RecipeKind, config: &Path, out: &Path, episodes: usize) -> ExperimentRecipe {
    ExperimentRecipe {
        kind,
        config_path: config.to_path_buf(),
        out: out.to_path_buf(),
        seeds: vec![4],
        overrides: Overrides {
            episodes: Some(episodes),
            ..Overrides::default()
        },
    }
}

fn read_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let h = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|x| x.unwrap().iter().map(String::from).collect())
        .collect();
    (h, rows)
}

#[test]
fn train_writes_complete_streams_and_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let out = tmp.path().join("out");
    recipes::run(&recipe(RecipeKind::Train, &cfg, &out, 4)).unwrap();
    let dir = seed_dir(&out, 4);
    let (h, rows) = read_rows(&dir.join("train.csv"));
    assert_eq!(&h[..5], ["seed", "recipe", "build", "scheme", "episode"]);
    assert_eq!(h.len(), 15 + 2 * 3 + 2 * 10);
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r[0] == "4" && r[1] == "train" && r.len() == h.len()));
    assert!(!dir.join("train.csv.partial").exists());
    assert!(dir.join("trainer.json").exists());
    assert!(dir.join("manifest.toml").exists());
    assert_eq!(read_status(&dir).unwrap().state, RunState::Complete);
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for out in [&a, &b] {
        recipes::run(&recipe(RecipeKind::Baselines, &cfg, out, 3)).unwrap();
    }
    let (da, db) = (seed_dir(&a, 4), seed_dir(&b, 4));
    let mut names: Vec<_> = fs::read_dir(&da)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .filter(|n| n.to_string_lossy().ends_with(".csv"))
        .collect();
    names.sort();
    assert_eq!(names.len(), 6);
    for n in names {
        assert_eq!(fs::read(da.join(&n)).unwrap(), fs::read(db.join(&n)).unwrap(), "{n:?}");
    }
}

#[test]
fn rate_share_rows_sum_to_one_hundred() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let out = tmp.path().join("out");
    recipes::run(&recipe(RecipeKind::Evaluate, &cfg, &out, 3)).unwrap();
    let dir = seed_dir(&out, 4);
    for name in ["rate_share.csv", "assignment.csv"] {
        let (h, rows) = read_rows(&dir.join(name));
        assert_eq!(h, ["ed", "rat1_pct", "rat2_pct", "rat3_pct"]);
        assert_eq!(rows.len(), 10);
        for r in &rows {
            let v: Vec<f64> = r[1..].iter().map(|x| x.parse().unwrap()).collect();
            assert!(v.iter().all(|x| (0.0..=100.0).contains(x)));
            if name == "rate_share.csv" {
                assert!((v.iter().sum::<f64>() - 100.0).abs() <= 0.01, "{r:?}");
            }
        }
    }
    assert!(dir.join("rate_share_reference.toml").exists());
}

#[test]
fn cdf_is_monotone_within_unit_interval() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let out = tmp.path().join("out");
    recipes::run(&recipe(RecipeKind::Cdf, &cfg, &out, 2)).unwrap();
    let (_, rows) = read_rows(&seed_dir(&out, 4).join("cdf.csv"));
    assert_eq!(rows.len(), 5 * 3);
    for scheme in rows.chunks(3) {
        let u: Vec<f64> = scheme.iter().map(|r| r[4].parse().unwrap()).collect();
        let p: Vec<f64> = scheme.iter().map(|r| r[5].parse().unwrap()).collect();
        assert!(u.windows(2).all(|w| w[0] <= w[1]));
        assert!(p.windows(2).all(|w| w[0] <= w[1]));
        assert!(p.iter().all(|x| (0.0..=1.0).contains(x)));
        assert_eq!(*p.last().unwrap(), 1.0);
    }
}

#[test]
fn empirical_cdf_examples() {
    let c = recipes::empirical_cdf(&[3.0, 1.0, 2.0, 2.0]);
    assert_eq!(c, vec![(1.0, 0.25), (2.0, 0.5), (2.0, 0.75), (3.0, 1.0)]);
}

#[test]
fn mobility_reports_every_segment() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let out = tmp.path().join("out");
    let mut r = recipe(RecipeKind::Mobility, &cfg, &out, 6);
    r.overrides.shock_period = Some(2);
    recipes::run(&r).unwrap();
    let dir = seed_dir(&out, 4);
    let (h, rows) = read_rows(&dir.join("mobility.csv"));
    let shocked = h.iter().position(|c| c == "shocked").unwrap();
    let flags: Vec<&str> = rows.iter().map(|r| r[shocked].as_str()).collect();
    assert_eq!(flags, ["false", "false", "true", "false", "true", "false"]);
    let (_, seg) = read_rows(&dir.join("segments.csv"));
    let starts: Vec<&str> = seg.iter().map(|r| r[4].as_str()).collect();
    assert_eq!(starts, ["1", "3", "5"]);
}

#[test]
fn mobility_without_shock_period_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let err = recipes::run(&recipe(RecipeKind::Mobility, &cfg, &tmp.path().join("o"), 4)).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn sweep_visits_every_k() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let out = tmp.path().join("out");
    recipes::run(&recipe(RecipeKind::Sweep, &cfg, &out, 2)).unwrap();
    let dir = seed_dir(&out, 4);
    let (_, rows) = read_rows(&dir.join("sweep.csv"));
    let ks: Vec<&str> = rows.iter().map(|r| r[3].as_str()).collect();
    assert_eq!(ks, ["1", "2"]);
    assert!(dir.join("sweep_k1.csv").exists() && dir.join("sweep_k2.csv").exists());
}

#[test]
fn unfinished_stream_never_looks_complete() {
    let tmp = tempfile::tempdir().unwrap();
    let header = vec!["a".to_string(), "b".to_string()];
    let mut s = CsvStream::create(tmp.path(), "run", &header).unwrap();
    s.row(&["1".into(), "2".into()]).unwrap();
    drop(s);
    assert!(tmp.path().join("run.csv.partial").exists());
    assert!(!tmp.path().join("run.csv").exists());
}

#[test]
#[should_panic(expected = "non-finite")]
fn non_finite_values_are_refused() {
    num(f64::NAN);
}

fn write_constant_run(out: &Path, seed: u64, utility: f64, episodes: usize) {
    let dir = out.join(format!("seed_{seed}"));
    fs::create_dir_all(&dir).unwrap();
    let mut text = String::from("episode,utility,sum_rate_bps,qos_satisfied_steps,steps\n");
    for e in 1..=episodes {
        text += &format!("{e},{utility},1000000,10,10\n");
    }
    fs::write(dir.join("train.csv"), text).unwrap();
}

#[test]
fn summary_of_constant_run_is_that_constant() {
    let tmp = tempfile::tempdir().unwrap();
    write_constant_run(tmp.path(), 1, 0.37, 300);
    let streams = summarize::write_summary(tmp.path(), SummaryOptions::default()).unwrap();
    assert_eq!(streams.len(), 1);
    let s = &streams[0];
    assert_eq!(s.utility, (0.37, 0.0));
    assert_eq!(s.sum_rate_bps.0, 1e6);
    assert_eq!(s.qos_satisfaction.0, 1.0);
    assert_eq!(s.converged_runs, 1);
    let (_, rows) = read_rows(&tmp.path().join("summary_runs.csv"));
    assert_eq!(rows[0][3], "true");
    assert_eq!(rows[0][4], "1");
}

#[test]
fn summary_aggregates_across_seeds_and_flags_ordering() {
    let tmp = tempfile::tempdir().unwrap();
    write_constant_run(tmp.path(), 1, 0.2, 250);
    write_constant_run(tmp.path(), 2, 0.4, 250);
    for (seed, ours, theirs) in [(1, "0.5", "0.3"), (2, "0.7", "0.3")] {
        let dir = tmp.path().join(format!("seed_{seed}"));
        for (name, u) in [("eval_deeprat", ours), ("eval_random", theirs)] {
            let text = format!("episode,utility,sum_rate_bps,qos_satisfied_steps,steps\n1,{u},5,1,2\n");
            fs::write(dir.join(format!("{name}.csv")), text).unwrap();
        }
    }
    let streams = summarize::write_summary(tmp.path(), SummaryOptions::default()).unwrap();
    let train = streams.iter().find(|s| s.stream == "train").unwrap();
    assert!((train.utility.0 - 0.3).abs() < 1e-15);
    assert!((train.utility.1 - 0.1).abs() < 1e-15);
    let flags = summarize::ordering_flags(&streams);
    let u = flags.iter().find(|f| f.worse == "random" && f.metric == "utility").unwrap();
    assert!(u.holds);
    assert!((u.margin - 1.0).abs() < 1e-12);
    let report = fs::read_to_string(tmp.path().join("summary.toml")).unwrap();
    assert!(report.contains("deeprat = 1.73"));
}

#[test]
fn summary_marks_runs_that_never_settle() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("seed_1");
    fs::create_dir_all(&dir).unwrap();
    let mut text = String::from("episode,utility,sum_rate_bps,qos_satisfied_steps,steps\n");
    for e in 1..=300 {
        text += &format!("{e},{},1,0,10\n", e as f64);
    }
    fs::write(dir.join("train.csv"), text).unwrap();
    summarize::write_summary(tmp.path(), SummaryOptions::default()).unwrap();
    let (_, rows) = read_rows(&tmp.path().join("summary_runs.csv"));
    assert_eq!(rows[0][3], "false");
    assert_eq!(rows[0][4], "");
}

#[test]
fn cli_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let bin = env!("CARGO_BIN_EXE_deeprat");
    let out = tmp.path().join("cli");
    let ok = Command::new(bin)
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .args(["--seeds", "1,2", "--episodes", "2"])
        .env("DEEPRAT_LOG", "warn")
        .status()
        .unwrap();
    assert_eq!(ok.code(), Some(0));
    assert!(seed_dir(&out, 1).join("train.csv").exists());
    assert!(seed_dir(&out, 2).join("train.csv").exists());

    let bad = tmp.path().join("bad.cfg");
    fs::write(&bad, paper_text().replacen("alpha = 0.4", "alpha = 0.7", 1)).unwrap();
    let invalid = Command::new(bin)
        .args(["train", "--config"])
        .arg(&bad)
        .arg("--out")
        .arg(&out)
        .args(["--seeds", "1"])
        .env("DEEPRAT_LOG", "off")
        .status()
        .unwrap();
    assert_eq!(invalid.code(), Some(2));
}
