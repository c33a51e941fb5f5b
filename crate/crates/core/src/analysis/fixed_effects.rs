use std::collections::{BTreeMap, BTreeSet};

use crate::cell::{RegionCode, TimeCell};
use crate::error::{Error, Result};
use crate::stats::t_two_sided_p;

#[derive(Clone, Debug, PartialEq)]
pub struct PanelObservation {
    pub region: RegionCode,
    pub cell: TimeCell,
    /// Language-based score.
    pub x: f64,
    /// Survey score.
    pub y: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SeKind {
    #[default]
    Homoskedastic,
    /// Clustered by entity, CR1 small-sample factor, G - 1 degrees of freedom.
    ClusterRobust,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FixedEffectsResult {
    pub beta: f64,
    pub std_err: f64,
    pub t_stat: f64,
    pub p_value: f64,
    pub n_obs: usize,
    pub n_entities: usize,
}

/// Inner join of language and survey values on (region, cell).
pub fn join_panel(
    language: &BTreeMap<(RegionCode, TimeCell), f64>,
    survey: &BTreeMap<(RegionCode, TimeCell), f64>,
) -> Vec<PanelObservation> {
    language
        .iter()
        .filter_map(|((region, cell), &x)| {
            survey.get(&(region.clone(), *cell)).map(|&y| PanelObservation { region: region.clone(), cell: *cell, x, y })
        })
        .collect()
}

fn validate(panel: &[PanelObservation]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for o in panel {
        if !(o.x.is_finite() && o.y.is_finite()) {
            return Err(Error::Validation(format!("non-finite panel value at {} {}", o.region, o.cell)));
        }
        if !seen.insert((&o.region, o.cell)) {
            return Err(Error::Validation(format!("duplicate panel observation {} {}", o.region, o.cell)));
        }
    }
    Ok(())
}

/// Within (entity-demeaned) estimator of the slope of y on x.
pub fn within_fixed_effects(panel: &[PanelObservation], se: SeKind) -> Result<FixedEffectsResult> {
    validate(panel)?;
    let mut groups: BTreeMap<&RegionCode, Vec<&PanelObservation>> = BTreeMap::new();
    for o in panel {
        groups.entry(&o.region).or_default().push(o);
    }
    let g = groups.len();
    if g < 2 {
        return Err(Error::InvalidParameter(format!("fixed effects need at least 2 entities, got {g}")));
    }
    let n = panel.len();
    if n < g + 2 {
        return Err(Error::InvalidParameter(format!("{n} observations leave no residual degrees of freedom for {g} entities")));
    }
    let demeaned: Vec<Vec<(f64, f64)>> = groups
        .values()
        .map(|obs| {
            let k = obs.len() as f64;
            let mx = obs.iter().map(|o| o.x).sum::<f64>() / k;
            let my = obs.iter().map(|o| o.y).sum::<f64>() / k;
            obs.iter().map(|o| (o.x - mx, o.y - my)).collect()
        })
        .collect();
    let all = demeaned.iter().flatten();
    let sxx: f64 = all.clone().map(|(x, _)| x * x).sum();
    let sxy: f64 = all.clone().map(|(x, y)| x * y).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateRegressor("no within-entity variation in x".into()));
    }
    let beta = sxy / sxx;
    let (var, df) = match se {
        SeKind::Homoskedastic => {
            let sse: f64 = all.map(|(x, y)| (y - beta * x).powi(2)).sum();
            let df = (n - g - 1) as f64;
            (sse / df / sxx, df)
        }
        SeKind::ClusterRobust => {
            let meat: f64 =
                demeaned.iter().map(|grp| grp.iter().map(|(x, y)| x * (y - beta * x)).sum::<f64>().powi(2)).sum();
            let (gf, nf) = (g as f64, n as f64);
            let factor = gf / (gf - 1.0) * (nf - 1.0) / (nf - 2.0);
            (factor * meat / (sxx * sxx), gf - 1.0)
        }
    };
    let std_err = var.sqrt();
    let t_stat = if std_err > 0.0 {
        beta / std_err
    } else if beta == 0.0 {
        0.0
    } else {
        beta.signum() * f64::INFINITY
    };
    Ok(FixedEffectsResult { beta, std_err, t_stat, p_value: t_two_sided_p(t_stat, df), n_obs: n, n_entities: g })
}

/// Ordinary least squares of y on x ignoring entities: (slope, intercept).
pub fn pooled_ols(panel: &[PanelObservation]) -> Result<(f64, f64)> {
    let n = panel.len() as f64;
    let mx = panel.iter().map(|o| o.x).sum::<f64>() / n;
    let my = panel.iter().map(|o| o.y).sum::<f64>() / n;
    let sxx: f64 = panel.iter().map(|o| (o.x - mx).powi(2)).sum();
    if panel.is_empty() || sxx == 0.0 {
        return Err(Error::DegenerateRegressor("no variation in x".into()));
    }
    let slope = panel.iter().map(|o| (o.x - mx) * (o.y - my)).sum::<f64>() / sxx;
    Ok((slope, my - slope * mx))
}
