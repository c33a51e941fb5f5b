use std::collections::BTreeMap;

use lbmha::adapt::{adapt_pipeline, corpus_stats, AdaptParams, FilterReason, NameList};
use lbmha::scoring::{Lexicon, Outcome};

const N: usize = 10;

type Column = [f64; N];

fn alt(v: f64) -> Column {
    std::array::from_fn(|i| if i % 2 == 0 { v } else { 0.0 })
}

fn all(v: f64) -> Column {
    [v; N]
}

fn first(v: f64) -> Column {
    std::array::from_fn(|i| if i == 0 { v } else { 0.0 })
}

fn users(columns: &[(&str, Column)]) -> Vec<BTreeMap<String, f64>> {
    (0..N)
        .map(|i| columns.iter().filter(|(_, c)| c[i] > 0.0).map(|(t, c)| (t.to_string(), c[i])).collect())
        .collect()
}

fn source() -> Vec<BTreeMap<String, f64>> {
    users(&[
        ("calm", all(0.01)),
        ("sleep", alt(0.0625)),
        ("worry", alt(0.04)),
        ("lonely", alt(0.0625)),
        ("sad", first(0.05)),
        ("lol", all(0.01)),
        ("hopeless", alt(0.0625)),
        ("nervous", alt(0.0625)),
        ("anxious", alt(0.0625)),
        ("john", all(0.02)),
    ])
}

fn target() -> Vec<BTreeMap<String, f64>> {
    users(&[
        ("calm", all(0.01)),
        ("sleep", alt(0.0625)),
        ("worry", all(0.024)),
        ("lonely", all(0.046875)),
        ("sad", all(0.05)),
        ("hopeless", first(0.3125)),
        ("nervous", all(0.028125)),
        ("anxious", all(0.0265625)),
        ("john", all(0.02)),
    ])
}

fn base_lexicon() -> Lexicon {
    let terms = ["calm", "sleep", "worry", "lonely", "sad", "lol", "hopeless", "nervous", "anxious", "john"];
    let weights = BTreeMap::from([(
        Outcome::Dep,
        terms.iter().enumerate().map(|(i, t)| (t.to_string(), 0.1 * i as f64)).collect(),
    )]);
    Lexicon::new("base", weights, BTreeMap::from([(Outcome::Dep, 1.0)])).unwrap()
}

fn run() -> lbmha::adapt::Adapted {
    let src = corpus_stats(&source()).unwrap();
    let tgt = corpus_stats(&target()).unwrap();
    adapt_pipeline(&src, &tgt, &base_lexicon(), &NameList::new(["John"]), AdaptParams::default()).unwrap()
}

#[test]
fn survivor_set_and_reasons() {
    let adapted = run();
    let survivors: Vec<&str> = adapted.survivors().collect();
    assert_eq!(survivors, ["anxious", "calm", "hopeless", "nervous", "sleep", "worry"]);
    let reasons: BTreeMap<&str, FilterReason> = adapted.decisions.iter().map(|d| (d.term.as_str(), d.reason)).collect();
    assert_eq!(reasons["lonely"], FilterReason::Frequency);
    assert_eq!(reasons["sad"], FilterReason::Usage);
    assert_eq!(reasons["lol"], FilterReason::Usage);
    assert_eq!(reasons["john"], FilterReason::Name);
    let lex = adapted.lexicon.unwrap();
    assert_eq!(lex.name, "base-adapted");
    assert_eq!(lex.len(), 6);
    assert_eq!(lex.weight("worry", Outcome::Dep), Some(0.2));
    assert_eq!(lex.intercept(Outcome::Dep), Some(1.0));
}

#[test]
fn boundary_values_are_exact() {
    let adapted = run();
    let by_term: BTreeMap<&str, _> = adapted.decisions.iter().map(|d| (d.term.as_str(), d)).collect();
    // One source user against every target user: ratio exactly 10.
    assert_eq!(by_term["sad"].log_usage_ratio, Some(1.0));
    assert!(!by_term["sad"].kept);
    // (0.024 - 0.02) / 0.02 rounds to exactly 0.2.
    assert_eq!(by_term["worry"].freq_d, Some(0.2));
    assert!(by_term["worry"].kept);
    assert_eq!(by_term["lonely"].freq_d, Some(0.5));
    assert_eq!(by_term["lol"].log_usage_ratio, None);
    assert!((by_term["hopeless"].log_usage_ratio.unwrap() - 0.2f64.log10()).abs() < 1e-15);
}

#[test]
fn identical_corpora_keep_vocabulary() {
    let src = corpus_stats(&source()).unwrap();
    let adapted = adapt_pipeline(&src, &src, &base_lexicon(), &NameList::default(), AdaptParams::default()).unwrap();
    assert_eq!(adapted.survivors().count(), 10);
}
