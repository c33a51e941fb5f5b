use lbmha::analysis::{event_study, mark_event_weeks, BootstrapMethod};
use lbmha::scoring::Outcome;
use lbmha::synth::{generate_event_series, EventSeriesConfig};
use lbmha::{Error, TimeCell};

fn cfg(seed: u64, shock_sd: f64) -> EventSeriesConfig {
    EventSeriesConfig {
        year: 2019,
        base_level: 2.5,
        sigma: 0.02,
        event_weeks: vec![6, 15, 24, 33, 45],
        shock_sd,
        seed,
    }
}

#[test]
fn planted_shocks_are_detected() {
    let (series, calendar) = generate_event_series(&cfg(1, 3.0)).unwrap();
    let weeks = mark_event_weeks(&calendar);
    assert_eq!(weeks.len(), 5);
    let r = event_study(&series, &weeks, Outcome::Dep, 2000, 7, BootstrapMethod::Studentized).unwrap();
    assert!(r.cohens_d > 1.0);
    assert!(r.ci95.0 > 0.0);
    assert_eq!((r.n_event_weeks, r.n_nonevent_weeks), (5, 46));
}

#[test]
fn event_weeks_cover_date_and_next_day() {
    let (_, calendar) = generate_event_series(&cfg(1, 0.0)).unwrap();
    let weeks = mark_event_weeks(&calendar);
    assert!(weeks.contains(&TimeCell::week(2019, 6).unwrap()));
    assert!(!weeks.contains(&TimeCell::week(2019, 7).unwrap()));
}

#[test]
fn constant_series_has_undefined_effect() {
    let series: Vec<_> = (1..=52).map(|w| (TimeCell::week(2019, w).unwrap(), 2.0)).collect();
    let (_, calendar) = generate_event_series(&cfg(1, 0.0)).unwrap();
    let err = event_study(&series, &mark_event_weeks(&calendar), Outcome::Dep, 100, 1, BootstrapMethod::Percentile);
    assert!(matches!(err, Err(Error::UndefinedEffect(_))));
}

#[test]
fn bootstrap_is_seed_deterministic() {
    let (series, calendar) = generate_event_series(&cfg(2, 1.0)).unwrap();
    let weeks = mark_event_weeks(&calendar);
    let a = event_study(&series, &weeks, Outcome::Dep, 500, 3, BootstrapMethod::Studentized).unwrap();
    let b = event_study(&series, &weeks, Outcome::Dep, 500, 3, BootstrapMethod::Studentized).unwrap();
    assert_eq!(a, b);
}
