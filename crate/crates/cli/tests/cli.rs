use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn lbmha(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lbmha")).args(args).env_remove("LBMHA_WORKERS").output().unwrap()
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn csv_rows(p: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(p)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

/// Small corpus shared by the score-based tests.
fn corpus(tmp: &TempDir) -> PathBuf {
    let dir = tmp.path().join("corpus");
    let out = lbmha(&["synth", "--seed", "3", "--param", "n-counties=4", "--param", "weeks=3", "-o", &s(&dir)]);
    assert!(out.status.success(), "{}", stderr(&out));
    dir
}

#[test]
fn score_writes_outputs_and_manifest() {
    let tmp = TempDir::new().unwrap();
    let c = corpus(&tmp);
    let out_dir = tmp.path().join("score");
    let out = lbmha(&[
        "score",
        "--posts",
        &s(&c.join("posts.jsonl")),
        "--lexicon",
        &s(&c.join("lexicon.csv")),
        "--ut",
        "50",
        "-o",
        &s(&out_dir),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).contains("Corpus summary"));
    // 4 counties of 60 users over 3 weeks all clear UT 50.
    assert_eq!(csv_rows(&out_dir.join("region_cells.csv")).len(), 12);
    assert_eq!(csv_rows(&out_dir.join("user_scores.csv")).len(), 4 * 60 * 3);
    let manifest = std::fs::read_to_string(out_dir.join("run_manifest.txt")).unwrap();
    assert!(manifest.contains("command score"));
    assert!(manifest.contains("config_hash "));
    assert_eq!(manifest.matches("sha256=").count(), 2);
}

#[test]
fn empty_posts_is_a_user_error() {
    let tmp = TempDir::new().unwrap();
    let c = corpus(&tmp);
    let empty = tmp.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let out = lbmha(&["score", "--posts", &s(&empty), "--lexicon", &s(&c.join("lexicon.csv")), "-o", &s(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("no posts after filtering"));
}

#[test]
fn missing_inputs_and_bad_config() {
    let tmp = TempDir::new().unwrap();
    let c = corpus(&tmp);
    let posts = s(&c.join("posts.jsonl"));
    let lex = s(&c.join("lexicon.csv"));
    let out = lbmha(&["adapt", "--source", &posts, "--target", &posts, "--lexicon", &lex, "--names", "/no/such/names.txt"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("names"));

    let cfg = tmp.path().join("run.cfg");
    std::fs::write(&cfg, "ut = 50\nfrobnicate = 1\n").unwrap();
    let out = lbmha(&["--config", &s(&cfg), "score", "--posts", &posts, "--lexicon", &lex]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("frobnicate"));

    let out = lbmha(&["--config", "/no/such.cfg", "score"]);
    assert_eq!(out.status.code(), Some(2));

    let out = lbmha(&["synth", "--kind", "panel"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("--seed"));
}

#[test]
fn config_file_with_flag_override() {
    let tmp = TempDir::new().unwrap();
    let c = corpus(&tmp);
    let cfg = tmp.path().join("run.cfg");
    std::fs::write(
        &cfg,
        format!("# score run\nposts = {}\nlexicon = {}\nut = 500\n", s(&c.join("posts.jsonl")), s(&c.join("lexicon.csv"))),
    )
    .unwrap();
    let a = tmp.path().join("a");
    let out = lbmha(&["--config", &s(&cfg), "-o", &s(&a), "score"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(csv_rows(&a.join("region_cells.csv")).is_empty());
    let b = tmp.path().join("b");
    let out = lbmha(&["--config", &s(&cfg), "-o", &s(&b), "score", "--ut", "10"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(csv_rows(&b.join("region_cells.csv")).len(), 12);
}

#[test]
fn reliability_grid_and_sweep() {
    let tmp = TempDir::new().unwrap();
    let c = corpus(&tmp);
    let sd = tmp.path().join("score");
    let out = lbmha(&[
        "score",
        "--posts",
        &s(&c.join("posts.jsonl")),
        "--lexicon",
        &s(&c.join("lexicon.csv")),
        "-o",
        &s(&sd),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let rd = tmp.path().join("rel");
    let out = lbmha(&[
        "reliability",
        "--seed",
        "1",
        "--user-scores",
        &s(&sd.join("user_scores.csv")),
        "--levels",
        "county",
        "--units",
        "week",
        "--ut",
        "50,200",
        "-o",
        &s(&rd),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let grid = csv_rows(&rd.join("reliability_grid.csv"));
    assert_eq!(grid.len(), 1);
    assert_eq!(grid[0][6], "12");
    let sweep = csv_rows(&rd.join("reliability_sweep.csv"));
    assert_eq!(sweep.len(), 2);
    assert_eq!(sweep[1][3], "NA");

    let out = lbmha(&[
        "reliability",
        "--seed",
        "1",
        "--user-scores",
        &s(&sd.join("user_scores.csv")),
        "--min-users",
        "1000",
        "--ut",
        "1000",
        "-o",
        &s(&rd),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("insufficient users"));
}

#[test]
fn adapt_identical_corpora_keeps_everything() {
    let tmp = TempDir::new().unwrap();
    let c = corpus(&tmp);
    let names = tmp.path().join("names.txt");
    std::fs::write(&names, "alice\nbob\n").unwrap();
    let posts = s(&c.join("posts.jsonl"));
    let ad = tmp.path().join("adapt");
    let out = lbmha(&[
        "adapt",
        "--source",
        &posts,
        "--target",
        &posts,
        "--lexicon",
        &s(&c.join("lexicon.csv")),
        "--names",
        &s(&names),
        "-o",
        &s(&ad),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let audit = csv_rows(&ad.join("adapt_audit.csv"));
    assert!(audit.iter().all(|r| r[8] == "true" && r[9] == "kept"));
    let base = std::fs::read_to_string(c.join("lexicon.csv")).unwrap();
    let adapted = std::fs::read_to_string(ad.join("adapted_lexicon.csv")).unwrap();
    assert_eq!(base.lines().count(), adapted.lines().count());
}

#[test]
fn analyze_fixed_effects_recovers_planted_slope() {
    let tmp = TempDir::new().unwrap();
    let p = tmp.path().join("panel");
    assert!(lbmha(&["synth", "--kind", "panel", "--seed", "4", "-o", &s(&p)]).status.success());
    let fe = tmp.path().join("fe");
    let out = lbmha(&[
        "analyze",
        "fixed-effects",
        "--language",
        &s(&p.join("panel_language.csv")),
        "--survey",
        &s(&p.join("panel_survey.csv")),
        "--se",
        "cluster",
        "-o",
        &s(&fe),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let rows = csv_rows(&fe.join("fixed_effects.csv"));
    let beta: f64 = rows[0][1].parse().unwrap();
    // Region cells are written with 6 decimals, which is ample here.
    assert!((beta - 0.7).abs() < 0.02, "beta {beta}");
    assert_eq!(rows[0][7], "cluster");
    assert!(std::fs::read_to_string(fe.join("fixed_effects.txt")).unwrap().contains("beta"));
}

#[test]
fn analyze_external_self_correlation() {
    let tmp = TempDir::new().unwrap();
    let c = corpus(&tmp);
    let sd = tmp.path().join("score");
    let out = lbmha(&["score", "--posts", &s(&c.join("posts.jsonl")), "--lexicon", &s(&c.join("lexicon.csv")), "-o", &s(&sd)]);
    assert!(out.status.success());
    let mut sums: std::collections::BTreeMap<String, (f64, f64)> = Default::default();
    for r in csv_rows(&sd.join("region_cells.csv")) {
        let e = sums.entry(r[1].clone()).or_default();
        e.0 += r[4].parse::<f64>().unwrap();
        e.1 += 1.0;
    }
    let mut criteria = String::from("county_fips,variable,value\n");
    for (fips, (sum, n)) in &sums {
        criteria.push_str(&format!("{fips},self,{}\n", sum / n));
    }
    let cpath = tmp.path().join("criteria.csv");
    std::fs::write(&cpath, criteria).unwrap();
    let ed = tmp.path().join("ext");
    let out = lbmha(&[
        "analyze",
        "external",
        "--language",
        &s(&sd.join("region_cells.csv")),
        "--criteria",
        &s(&cpath),
        "-o",
        &s(&ed),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let rows = csv_rows(&ed.join("external_correlations.csv"));
    let r: f64 = rows[0][2].parse().unwrap();
    assert!((r - 1.0).abs() < 1e-9);
}

#[test]
fn analyze_events_planted_and_constant() {
    let tmp = TempDir::new().unwrap();
    let ev = tmp.path().join("ev");
    assert!(lbmha(&["synth", "--kind", "events", "--seed", "6", "--param", "year=2019", "-o", &s(&ev)]).status.success());
    let series = s(&ev.join("event_series.csv"));
    let events = s(&ev.join("events.csv"));
    let ad = tmp.path().join("a");
    let args = ["analyze", "events", "--seed", "1", "--language", &series, "--events", &events, "--bootstrap-iterations", "2000"];
    let out = lbmha(&[&args[..], &["-o", &s(&ad)]].concat());
    assert!(out.status.success(), "{}", stderr(&out));
    let rows = csv_rows(&ad.join("event_effects.csv"));
    let d: f64 = rows[0][2].parse().unwrap();
    let lo: f64 = rows[0][3].parse().unwrap();
    assert!(d > 1.0 && lo > 0.0, "d {d} lower {lo}");
    assert_eq!(rows[0][11], "symmetric");

    let flat = tmp.path().join("flat.csv");
    let mut text = String::from("region_level,region_code,iso_year,iso_week,dep,anx,n_users,provenance\n");
    for w in 1..=52 {
        text.push_str(&format!("nation,US,2019,{w},2.000000,2.000000,100,observed\n"));
    }
    std::fs::write(&flat, text).unwrap();
    let out = lbmha(&["analyze", "events", "--seed", "1", "--language", &s(&flat), "--events", &events, "-o", &s(&ad)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("undefined effect size"));

    let out = lbmha(&["analyze", "events", "--language", &series, "--events", &events]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for (dir, workers) in [(&a, "1"), (&b, "3")] {
        let out = lbmha(&["synth", "--kind", "scores", "--seed", "8", "--param", "n-counties=10", "--workers", workers, "-o", &s(dir)]);
        assert!(out.status.success());
    }
    for f in ["user_scores.csv", "run_manifest.txt"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}
