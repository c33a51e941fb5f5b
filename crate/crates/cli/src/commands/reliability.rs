use std::io::Write;

use clap::Args;
use lbmha::formats;
use lbmha::reliability::{cell_rsr, reliability_grid, sweep_from_cells, GridParams, SweepParams, DEFAULT_REPEATS, MIN_SPLIT_HALF_USERS};
use lbmha::scoring::Outcome;
use lbmha::{Error, RegionLevel, Result, TimeUnit};

use super::{open, opt, overlay, Run};
use crate::config::Settings;

const KEYS: &[&str] = &["user-scores", "mapping", "levels", "units", "ut", "repeats", "min-users", "outcome"];

#[derive(Args, Debug)]
pub struct ReliabilityArgs {
    /// User scores written by `score`.
    #[arg(long)]
    user_scores: Option<String>,
    #[arg(long)]
    mapping: Option<String>,
    /// Comma-separated region levels for the grid.
    #[arg(long)]
    levels: Option<String>,
    /// Comma-separated time units for the grid.
    #[arg(long)]
    units: Option<String>,
    /// Comma-separated user thresholds for the sweep.
    #[arg(long)]
    ut: Option<String>,
    /// Split-half repeats per cell in the sweep.
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    min_users: Option<usize>,
    /// dep or anx.
    #[arg(long)]
    outcome: Option<String>,
}

pub fn run(mut settings: Settings, a: ReliabilityArgs) -> Result<()> {
    overlay(
        &mut settings,
        vec![
            ("user-scores", a.user_scores),
            ("mapping", a.mapping),
            ("levels", a.levels),
            ("units", a.units),
            ("ut", a.ut),
            ("repeats", opt(&a.repeats)),
            ("min-users", opt(&a.min_users)),
            ("outcome", a.outcome),
        ],
    );
    let mut run = Run::new("reliability", settings, KEYS)?;
    let s = &run.settings;
    let seed = s.seed()?;
    let levels: Vec<RegionLevel> = s.list("levels", "county,state,nation")?;
    let units: Vec<TimeUnit> = s.list("units", "year,quarter,month,week,day")?;
    let uts: Vec<usize> = s.list("ut", "10,25,50,100,200")?;
    let outcome: Outcome = s.get_or("outcome", Outcome::Dep)?;
    let min_users: usize = s.get_or("min-users", MIN_SPLIT_HALF_USERS)?;
    let repeats: usize = s.get_or("repeats", DEFAULT_REPEATS)?;
    if repeats == 0 || uts.is_empty() {
        return Err(Error::Config("repeats and the ut list must be non-empty".into()));
    }

    let scores_path = run.required("user-scores")?;
    let mapping_path = run.input("mapping")?;
    let scores = formats::read_user_scores(open(&scores_path)?)?;
    if scores.is_empty() {
        return Err(Error::NoContent(format!("no user scores in {}", scores_path.display())));
    }
    let mapping = mapping_path.as_ref().map(|p| formats::read_mapping(open(p)?)).transpose()?;

    let grid = reliability_grid(
        &scores,
        mapping.as_ref(),
        &levels,
        &units,
        &GridParams { min_users, outcome, seed, keep_per_pair: false },
    )?;
    let sweep_params = SweepParams { n_repeats: repeats, seed, outcome, min_users };
    let cells = cell_rsr(&scores, &sweep_params)?;
    let sweep = sweep_from_cells(&cells, &uts);

    if grid.reports().next().is_none() && sweep.iter().all(|p| p.mean_r.is_none()) {
        let largest = largest_cell(&scores);
        return Err(Error::InsufficientUsers { required: min_users.max(uts.iter().copied().min().unwrap_or(0)), actual: largest });
    }

    let mut w = run.create("reliability_grid.csv")?;
    formats::write_reliability_grid(&mut w, &grid, min_users)?;
    w.flush()?;
    let (level, unit) = (scores[0].region.level(), scores[0].cell.unit);
    let mut w = run.create("reliability_sweep.csv")?;
    formats::write_ut_sweep(&mut w, level, unit, &sweep)?;
    w.flush()?;

    println!("{:<8} {:<8} {:>8} {:>8}", "level", "unit", "mean_R", "pairs");
    for ((l, u), r) in &grid.cells {
        match r {
            Some(r) => println!("{:<8} {:<8} {:>8.3} {:>8}", l.as_str(), u.to_string(), r.mean_r, r.n_pairs),
            None => println!("{:<8} {:<8} {:>8} {:>8}", l.as_str(), u.to_string(), "NA", 0),
        }
    }
    println!("{:<8} {:>8} {:>8}", "ut", "mean_R", "cells");
    for p in &sweep {
        let m = p.mean_r.map_or_else(|| "NA".to_string(), |m| format!("{m:.3}"));
        println!("{:<8} {:>8} {:>8}", p.ut, m, p.n_cells);
    }
    run.finish()
}

fn largest_cell(scores: &[lbmha::scoring::UserScore]) -> usize {
    let mut counts = std::collections::BTreeMap::new();
    for s in scores {
        *counts.entry((&s.region, s.cell)).or_insert(0usize) += 1;
    }
    counts.into_values().max().unwrap_or(0)
}
