use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use clap::{Args, Subcommand};
use lbmha::aggregate::{adjust_baseline, rollup_nation, BaselineMode, RegionCell};
use lbmha::analysis::{
    event_study, external_correlations, join_panel, mark_event_weeks, pooled_ols, survey_gate, within_fixed_effects,
    BootstrapMethod, EventCalendar, EventStudyResult, SeKind, DEFAULT_BOOTSTRAP_ITERATIONS, SURVEY_RELIABILITY_STANDARD,
};
use lbmha::formats;
use lbmha::reliability::{DEFAULT_REPEATS, MIN_SPLIT_HALF_USERS};
use lbmha::scoring::Outcome;
use lbmha::seed::derive_seed;
use lbmha::{Error, RegionCode, RegionLevel, Result, TimeCell, TimeUnit};

use super::{load_cells, open, opt, overlay, Run};
use crate::config::Settings;

#[derive(Subcommand, Debug)]
pub enum AnalyzeCommand {
    /// Within-county regression of survey scores on language scores.
    FixedEffects(FixedEffectsArgs),
    /// Correlate county means with external criteria.
    External(ExternalArgs),
    /// Effect of calendar events on weekly changes.
    Events(EventsArgs),
}

#[derive(Args, Debug)]
pub struct FixedEffectsArgs {
    /// Region cells written by `score`.
    #[arg(long)]
    language: Option<String>,
    /// Survey aggregates per county-week.
    #[arg(long)]
    survey: Option<String>,
    /// Respondent-level survey data; counties failing the reliability gate are dropped.
    #[arg(long)]
    microdata: Option<String>,
    /// none, matched-week or annual-mean.
    #[arg(long)]
    baseline: Option<String>,
    /// Prior-period region cells used by the baseline.
    #[arg(long)]
    baseline_cells: Option<String>,
    /// homoskedastic or cluster.
    #[arg(long)]
    se: Option<String>,
    #[arg(long)]
    outcome: Option<String>,
    #[arg(long)]
    survey_threshold: Option<f64>,
    #[arg(long)]
    min_respondents: Option<usize>,
}

#[derive(Args, Debug)]
pub struct ExternalArgs {
    #[arg(long)]
    language: Option<String>,
    /// county_fips, variable, value.
    #[arg(long)]
    criteria: Option<String>,
    #[arg(long)]
    outcome: Option<String>,
}

#[derive(Args, Debug)]
pub struct EventsArgs {
    #[arg(long)]
    language: Option<String>,
    /// date, label.
    #[arg(long)]
    events: Option<String>,
    /// Year of the weekly series; defaults to the year of the first event.
    #[arg(long)]
    year: Option<i32>,
    /// national or county.
    #[arg(long)]
    scope: Option<String>,
    #[arg(long)]
    outcome: Option<String>,
    #[arg(long)]
    bootstrap_iterations: Option<usize>,
    /// symmetric, studentized or percentile.
    #[arg(long)]
    bootstrap_method: Option<String>,
}

pub fn run(settings: Settings, cmd: AnalyzeCommand) -> Result<()> {
    match cmd {
        AnalyzeCommand::FixedEffects(a) => fixed_effects(settings, a),
        AnalyzeCommand::External(a) => external(settings, a),
        AnalyzeCommand::Events(a) => events(settings, a),
    }
}

fn fixed_effects(mut settings: Settings, a: FixedEffectsArgs) -> Result<()> {
    overlay(
        &mut settings,
        vec![
            ("language", a.language),
            ("survey", a.survey),
            ("microdata", a.microdata),
            ("baseline", a.baseline),
            ("baseline-cells", a.baseline_cells),
            ("se", a.se),
            ("outcome", a.outcome),
            ("survey-threshold", opt(&a.survey_threshold)),
            ("min-respondents", opt(&a.min_respondents)),
        ],
    );
    const KEYS: &[&str] = &[
        "language",
        "survey",
        "microdata",
        "baseline",
        "baseline-cells",
        "se",
        "outcome",
        "survey-threshold",
        "min-respondents",
    ];
    let mut run = Run::new("analyze fixed-effects", settings, KEYS)?;
    let s = &run.settings;
    let outcome: Outcome = s.get_or("outcome", Outcome::Dep)?;
    let baseline = match s.raw("baseline").unwrap_or("none") {
        "none" => None,
        other => Some(other.parse::<BaselineMode>()?),
    };
    let se = match s.raw("se").unwrap_or("homoskedastic") {
        "homoskedastic" => SeKind::Homoskedastic,
        "cluster" => SeKind::ClusterRobust,
        other => return Err(Error::Config(format!("unknown se '{other}' (homoskedastic or cluster)"))),
    };
    let threshold: f64 = s.get_or("survey-threshold", SURVEY_RELIABILITY_STANDARD)?;
    let min_respondents: usize = s.get_or("min-respondents", MIN_SPLIT_HALF_USERS)?;

    let language_path = run.required("language")?;
    let survey_path = run.required("survey")?;
    let microdata_path = run.input("microdata")?;
    let baseline_path = match baseline {
        Some(_) => Some(run.required("baseline-cells")?),
        None => None,
    };

    let mut cells = load_cells(&language_path)?;
    if let (Some(mode), Some(p)) = (baseline, &baseline_path) {
        cells = adjust_baseline(&cells, &load_cells(p)?, mode);
    }
    let mut survey = formats::read_survey(open(&survey_path)?)?;
    if let Some(p) = &microdata_path {
        let seed = run.settings.seed()?;
        let responses = formats::read_survey_microdata(open(p)?)?;
        let kept = survey_gate(&responses, threshold, DEFAULT_REPEATS, min_respondents, seed)?;
        let before = survey.len();
        survey.retain(|r| kept.contains(&r.region));
        log::info!("survey reliability gate kept {} of {} rows", survey.len(), before);
    }

    let language: BTreeMap<(RegionCode, TimeCell), f64> =
        cells.iter().map(|c| ((c.region.clone(), c.cell), c.value(outcome))).collect();
    let survey_map: BTreeMap<(RegionCode, TimeCell), f64> =
        survey.iter().map(|r| ((r.region.clone(), r.cell), r.value)).collect();
    let panel = join_panel(&language, &survey_map);
    if panel.is_empty() {
        return Err(Error::NoContent("no region-week appears in both the language cells and the survey".into()));
    }
    let fe = within_fixed_effects(&panel, se)?;
    let pooled = pooled_ols(&panel).ok().map(|p| p.0);

    let mut w = run.create("fixed_effects.csv")?;
    writeln!(w, "outcome,beta,std_err,t,p,n_obs,n_entities,se_kind,pooled_slope")?;
    writeln!(
        w,
        "{},{},{},{},{},{},{},{},{}",
        outcome,
        fe.beta,
        fe.std_err,
        fe.t_stat,
        fe.p_value,
        fe.n_obs,
        fe.n_entities,
        match se {
            SeKind::Homoskedastic => "homoskedastic",
            SeKind::ClusterRobust => "cluster",
        },
        pooled.map_or_else(|| "NA".to_string(), |p| p.to_string())
    )?;
    w.flush()?;
    let report = format!(
        "Fixed effects ({outcome}, county and week panel)\n{:>10} {:>10} {:>8} {:>10} {:>6} {:>9}\n{:>10.4} {:>10.4} {:>8.2} {:>10.3e} {:>6} {:>9}\n",
        "beta", "se", "t", "p", "n", "counties", fe.beta, fe.std_err, fe.t_stat, fe.p_value, fe.n_obs, fe.n_entities
    );
    run.write_text("fixed_effects.txt", &report)?;
    print!("{report}");
    run.finish()
}

fn external(mut settings: Settings, a: ExternalArgs) -> Result<()> {
    overlay(&mut settings, vec![("language", a.language), ("criteria", a.criteria), ("outcome", a.outcome)]);
    let mut run = Run::new("analyze external", settings, &["language", "criteria", "outcome"])?;
    let outcome: Outcome = run.settings.get_or("outcome", Outcome::Dep)?;
    let cells = load_cells(&run.required("language")?)?;
    let criteria = formats::read_criteria(open(&run.required("criteria")?)?)?;

    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for c in cells.iter().filter(|c| c.region.level() == RegionLevel::County) {
        let e = sums.entry(c.region.code().to_string()).or_insert((0.0, 0));
        e.0 += c.value(outcome);
        e.1 += 1;
    }
    let means: BTreeMap<String, f64> = sums.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect();
    let results = external_correlations(&means, &criteria);
    if results.is_empty() {
        return Err(Error::NoContent("no criterion variable could be correlated with the county scores".into()));
    }
    let mut w = run.create("external_correlations.csv")?;
    writeln!(w, "variable,outcome,r,p,n")?;
    let mut report = format!("External correlations ({outcome})\n{:<24} {:>8} {:>10} {:>6}\n", "variable", "r", "p", "n");
    for (var, c) in &results {
        writeln!(w, "{var},{outcome},{},{},{}", c.r, c.p_value, c.n)?;
        report.push_str(&format!("{var:<24} {:>8.3} {:>10.3e} {:>6}\n", c.r, c.p_value, c.n));
    }
    w.flush()?;
    run.write_text("external_correlations.txt", &report)?;
    print!("{report}");
    run.finish()
}

fn weekly_series(cells: &[RegionCell], year: i32, outcome: Outcome) -> Vec<(TimeCell, f64)> {
    cells
        .iter()
        .filter(|c| c.cell.unit == TimeUnit::Week && c.cell.iso_year == year)
        .map(|c| (c.cell, c.value(outcome)))
        .collect()
}

fn events(mut settings: Settings, a: EventsArgs) -> Result<()> {
    overlay(
        &mut settings,
        vec![
            ("language", a.language),
            ("events", a.events),
            ("year", opt(&a.year)),
            ("scope", a.scope),
            ("outcome", a.outcome),
            ("bootstrap-iterations", opt(&a.bootstrap_iterations)),
            ("bootstrap-method", a.bootstrap_method),
        ],
    );
    const KEYS: &[&str] =
        &["language", "events", "year", "scope", "outcome", "bootstrap-iterations", "bootstrap-method"];
    let mut run = Run::new("analyze events", settings, KEYS)?;
    let s = &run.settings;
    let seed = s.seed()?;
    let outcome: Outcome = s.get_or("outcome", Outcome::Dep)?;
    let n_iter: usize = s.get_or("bootstrap-iterations", DEFAULT_BOOTSTRAP_ITERATIONS)?;
    let method: BootstrapMethod = s.get_or("bootstrap-method", BootstrapMethod::default())?;
    let national = match s.raw("scope").unwrap_or("national") {
        "national" => true,
        "county" => false,
        other => return Err(Error::Config(format!("unknown scope '{other}' (national or county)"))),
    };
    let year: Option<i32> = s.get("year")?;
    if n_iter == 0 {
        return Err(Error::Config("bootstrap-iterations must be positive".into()));
    }

    let cells = load_cells(&run.required("language")?)?;
    let dates = formats::read_events(open(&run.required("events")?)?)?;
    let year = match year.or_else(|| dates.first().map(|(d, _)| chrono::Datelike::year(d))) {
        Some(y) => y,
        None => return Err(Error::NoContent("event calendar is empty".into())),
    };
    let calendar = EventCalendar::new(year, dates)?;
    let event_weeks = mark_event_weeks(&calendar);

    let mut results: Vec<(String, EventStudyResult)> = Vec::new();
    if national {
        let nation: Vec<RegionCell> = if cells.iter().all(|c| c.region.level() == RegionLevel::Nation) {
            cells
        } else {
            rollup_nation(&cells.into_iter().filter(|c| c.region.level() == RegionLevel::County).collect::<Vec<_>>())
        };
        let series = weekly_series(&nation, year, outcome);
        results.push(("US".to_string(), event_study(&series, &event_weeks, outcome, n_iter, seed, method)?));
    } else {
        let mut by_region: BTreeMap<RegionCode, Vec<RegionCell>> = BTreeMap::new();
        for c in cells {
            by_region.entry(c.region.clone()).or_default().push(c);
        }
        let mut skipped = BTreeSet::new();
        for (region, cs) in by_region {
            let series = weekly_series(&cs, year, outcome);
            match event_study(&series, &event_weeks, outcome, n_iter, derive_seed(seed, region.code()), method) {
                Ok(r) => results.push((region.code().to_string(), r)),
                Err(e) if e.is_user_error() => {
                    log::warn!("{region}: {e}");
                    skipped.insert(region);
                }
                Err(e) => return Err(e),
            }
        }
        if results.is_empty() {
            return Err(Error::NoContent("no county has a usable weekly series".into()));
        }
        if !skipped.is_empty() {
            log::info!("{} counties skipped", skipped.len());
        }
    }

    let mut w = run.create("event_effects.csv")?;
    writeln!(
        w,
        "region,outcome,cohens_d,d_ci_low,d_ci_high,mean_diff,md_ci_low,md_ci_high,n_event_weeks,n_nonevent_weeks,n_bootstrap,method"
    )?;
    let mut report = format!(
        "Event study ({outcome}, {year}, {} bootstrap)\n{:<8} {:>8} {:>18} {:>6} {:>6}\n",
        method, "region", "d", "95% CI", "event", "other"
    );
    for (region, r) in &results {
        writeln!(
            w,
            "{region},{},{},{},{},{},{},{},{},{},{},{}",
            r.outcome,
            r.cohens_d,
            r.ci95.0,
            r.ci95.1,
            r.mean_diff,
            r.mean_diff_ci.0,
            r.mean_diff_ci.1,
            r.n_event_weeks,
            r.n_nonevent_weeks,
            r.n_bootstrap,
            r.method
        )?;
        let ci = format!("[{:.3}, {:.3}]", r.ci95.0, r.ci95.1);
        report.push_str(&format!(
            "{region:<8} {:>8.3} {ci:>18} {:>6} {:>6}\n",
            r.cohens_d, r.n_event_weeks, r.n_nonevent_weeks
        ));
    }
    w.flush()?;
    run.write_text("event_effects.txt", &report)?;
    print!("{report}");
    run.finish()
}
