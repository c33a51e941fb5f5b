use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, Days, NaiveDate};
use rand::Rng;
use rayon::prelude::*;

use crate::cell::{TimeCell, TimeUnit};
use crate::error::{Error, Result};
use crate::scoring::Outcome;
use crate::seed::{derive_seed_indexed, rng};
use crate::stats::{mean, pop_std, quantile_sorted, sample_var};

pub const DEFAULT_BOOTSTRAP_ITERATIONS: usize = 10_000;

/// Week-over-week percent change, z-scored with the population mean and
/// standard deviation. A series of length n yields n - 1 values; zero
/// spread yields all zeros.
pub fn zscored_pct_change(series: &[f64]) -> Result<Vec<f64>> {
    if series.len() < 3 {
        return Err(Error::InvalidParameter(format!("need at least 3 weeks, got {}", series.len())));
    }
    if let Some(v) = series.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::Domain(format!("percent change undefined for value {v}")));
    }
    let p: Vec<f64> = series.windows(2).map(|w| (w[1] - w[0]) / w[0]).collect();
    let m = mean(&p);
    let sd = pop_std(&p);
    if sd == 0.0 {
        return Ok(vec![0.0; p.len()]);
    }
    Ok(p.iter().map(|x| (x - m) / sd).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EventCalendar {
    year: i32,
    events: Vec<(NaiveDate, String)>,
}

impl EventCalendar {
    pub fn new(year: i32, events: Vec<(NaiveDate, String)>) -> Result<Self> {
        if let Some((d, label)) = events.iter().find(|(d, _)| d.year() != year) {
            return Err(Error::Validation(format!("event '{label}' on {d} is outside {year}")));
        }
        Ok(EventCalendar { year, events })
    }

    pub fn year(&self) -> i32 {
        self.year
    }

    pub fn events(&self) -> &[(NaiveDate, String)] {
        &self.events
    }
}

/// ISO weeks containing each event date or the day after it.
pub fn mark_event_weeks(calendar: &EventCalendar) -> BTreeSet<TimeCell> {
    calendar
        .events
        .iter()
        .flat_map(|(d, _)| [*d, *d + Days::new(1)])
        .map(|d| TimeCell::from_date(d, TimeUnit::Week))
        .collect()
}

fn pooled_sd(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    (((na - 1.0) * sample_var(a) + (nb - 1.0) * sample_var(b)) / (na + nb - 2.0)).sqrt()
}

/// `(mean_event - mean_nonevent) / s_pooled` with the Bessel-corrected
/// pooled standard deviation.
pub fn event_cohens_d(event: &[f64], nonevent: &[f64]) -> Result<f64> {
    if event.len() < 2 || nonevent.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "need 2+ event and non-event weeks, got {} and {}",
            event.len(),
            nonevent.len()
        )));
    }
    let s = pooled_sd(event, nonevent);
    if s == 0.0 {
        return Err(Error::UndefinedEffect("pooled variance is zero".into()));
    }
    Ok((mean(event) - mean(nonevent)) / s)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum BootstrapMethod {
    /// Symmetric bootstrap-t: `md +- q * se` with `q` the 95th percentile of
    /// `|t*|` and a Welch standard error.
    #[default]
    Symmetric,
    /// Equal-tailed bootstrap-t with a Welch standard error.
    Studentized,
    /// 2.5th / 97.5th percentiles of the resampled statistic.
    Percentile,
}

impl BootstrapMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            BootstrapMethod::Symmetric => "symmetric",
            BootstrapMethod::Studentized => "studentized",
            BootstrapMethod::Percentile => "percentile",
        }
    }
}

impl fmt::Display for BootstrapMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BootstrapMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "symmetric" => Ok(BootstrapMethod::Symmetric),
            "studentized" => Ok(BootstrapMethod::Studentized),
            "percentile" => Ok(BootstrapMethod::Percentile),
            _ => Err(Error::Config(format!("unknown bootstrap method '{s}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BootstrapCi {
    pub mean_diff: f64,
    pub mean_diff_ci: (f64, f64),
    /// Interval for Cohen's d; `None` when the observed pooled SD is zero
    /// (studentized) or no resample had spread (percentile).
    pub d_ci: Option<(f64, f64)>,
    pub n_iter: usize,
    pub method: BootstrapMethod,
}

fn resample<R: Rng>(pool: &[f64], rng: &mut R) -> Vec<f64> {
    (0..pool.len()).map(|_| pool[rng.random_range(0..pool.len())]).collect()
}

fn welch_se(a: &[f64], b: &[f64]) -> f64 {
    (sample_var(a) / a.len() as f64 + sample_var(b) / b.len() as f64).sqrt()
}

fn ci(mut xs: Vec<f64>) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    Some((quantile_sorted(&xs, 0.025), quantile_sorted(&xs, 0.975)))
}

/// Resample each pool with replacement at its own size. Iteration `i` uses
/// a seed derived from `(seed, i)`, so results do not depend on threading.
pub fn bootstrap_ci(
    event: &[f64],
    nonevent: &[f64],
    n_iter: usize,
    seed: u64,
    method: BootstrapMethod,
) -> Result<BootstrapCi> {
    if event.is_empty() || nonevent.is_empty() {
        return Err(Error::InvalidParameter("bootstrap pools must be nonempty".into()));
    }
    if n_iter == 0 {
        return Err(Error::InvalidParameter("bootstrap needs at least 1 iteration".into()));
    }
    let md = mean(event) - mean(nonevent);
    // (mean difference, Welch SE, pooled SD) per iteration.
    let draws: Vec<(f64, f64, f64)> = (0..n_iter)
        .into_par_iter()
        .map(|i| {
            let mut r = rng(derive_seed_indexed(seed, i as u64));
            let a = resample(event, &mut r);
            let b = resample(nonevent, &mut r);
            let sp = if a.len() + b.len() > 2 { pooled_sd(&a, &b) } else { 0.0 };
            (mean(&a) - mean(&b), welch_se(&a, &b), sp)
        })
        .collect();
    let (mean_diff_ci, d_ci) = match method {
        BootstrapMethod::Percentile => {
            let mds = draws.iter().map(|d| d.0).collect();
            let ds = draws.iter().filter(|d| d.2 > 0.0).map(|d| d.0 / d.2).collect();
            (ci(mds).expect("n_iter > 0"), ci(ds))
        }
        BootstrapMethod::Studentized | BootstrapMethod::Symmetric => {
            let se = welch_se(event, nonevent);
            let ts: Vec<f64> = draws.iter().filter(|d| d.1 > 0.0).map(|d| (d.0 - md) / d.1).collect();
            let md_ci = if se == 0.0 || ts.is_empty() {
                (md, md)
            } else if method == BootstrapMethod::Symmetric {
                let mut abs: Vec<f64> = ts.iter().map(|t| t.abs()).collect();
                abs.sort_by(f64::total_cmp);
                let q = quantile_sorted(&abs, 0.95);
                (md - q * se, md + q * se)
            } else {
                let (lo, hi) = ci(ts).expect("nonempty");
                (md - hi * se, md - lo * se)
            };
            let sp = if event.len() + nonevent.len() > 2 { pooled_sd(event, nonevent) } else { 0.0 };
            let d_ci = (sp > 0.0).then(|| (md_ci.0 / sp, md_ci.1 / sp));
            (md_ci, d_ci)
        }
    };
    Ok(BootstrapCi { mean_diff: md, mean_diff_ci, d_ci, n_iter, method })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EventStudyResult {
    pub outcome: Outcome,
    pub cohens_d: f64,
    pub ci95: (f64, f64),
    pub mean_diff: f64,
    pub mean_diff_ci: (f64, f64),
    pub n_event_weeks: usize,
    pub n_nonevent_weeks: usize,
    pub n_bootstrap: usize,
    pub method: BootstrapMethod,
}

/// Cohen's d between event and non-event weeks of the z-scored percent
/// change of a consecutive weekly series, with a bootstrap interval. The
/// change for week t compares t with t - 1.
pub fn event_study(
    series: &[(TimeCell, f64)],
    event_weeks: &BTreeSet<TimeCell>,
    outcome: Outcome,
    n_iter: usize,
    seed: u64,
    method: BootstrapMethod,
) -> Result<EventStudyResult> {
    let mut series = series.to_vec();
    series.sort_by_key(|(c, _)| *c);
    if let Some((c, _)) = series.iter().find(|(c, _)| c.unit != TimeUnit::Week) {
        return Err(Error::InvalidParameter(format!("event study needs weekly cells, got {c}")));
    }
    if let Some(w) = series.windows(2).find(|w| w[1].0.ordinal() != w[0].0.ordinal() + 1) {
        return Err(Error::InvalidParameter(format!("series is not consecutive between {} and {}", w[0].0, w[1].0)));
    }
    let values: Vec<f64> = series.iter().map(|(_, v)| *v).collect();
    let z = zscored_pct_change(&values)?;
    let (mut event, mut nonevent) = (Vec::new(), Vec::new());
    for ((cell, _), v) in series[1..].iter().zip(z) {
        if event_weeks.contains(cell) { event.push(v) } else { nonevent.push(v) }
    }
    let cohens_d = event_cohens_d(&event, &nonevent)?;
    let boot = bootstrap_ci(&event, &nonevent, n_iter, seed, method)?;
    Ok(EventStudyResult {
        outcome,
        cohens_d,
        ci95: boot.d_ci.unwrap_or((cohens_d, cohens_d)),
        mean_diff: boot.mean_diff,
        mean_diff_ci: boot.mean_diff_ci,
        n_event_weeks: event.len(),
        n_nonevent_weeks: nonevent.len(),
        n_bootstrap: n_iter,
        method,
    })
}
