use std::collections::BTreeMap;

use log::warn;

use crate::error::{Error, Result};
use crate::stats::t_two_sided_p;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correlation {
    pub r: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Pearson product-moment correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::InvalidParameter(format!("length mismatch: {} vs {}", xs.len(), ys.len())));
    }
    if xs.len() < 3 {
        return Err(Error::UndefinedCorrelation(format!("need at least 3 pairs, got {}", xs.len())));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson r with a two-sided t-test p-value on n - 2 degrees of freedom.
pub fn pearson_test(xs: &[f64], ys: &[f64]) -> Result<Correlation> {
    let r = pearson(xs, ys)?;
    let n = xs.len();
    let df = (n - 2) as f64;
    let p_value = if r.abs() == 1.0 { 0.0 } else { t_two_sided_p(r * (df / (1.0 - r * r)).sqrt(), df) };
    Ok(Correlation { r, p_value, n })
}

/// Correlate region scores with each criterion variable over the regions
/// having both. Variables with fewer than 3 overlapping regions, or with no
/// variance, are skipped with a warning.
pub fn external_correlations(
    scores: &BTreeMap<String, f64>,
    criteria: &BTreeMap<String, BTreeMap<String, f64>>,
) -> BTreeMap<String, Correlation> {
    let mut by_var: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (region, vars) in criteria {
        let Some(&s) = scores.get(region) else { continue };
        for (var, &v) in vars {
            let e = by_var.entry(var).or_default();
            e.0.push(s);
            e.1.push(v);
        }
    }
    let mut out = BTreeMap::new();
    for (var, (xs, ys)) in by_var {
        match pearson_test(&xs, &ys) {
            Ok(c) => {
                out.insert(var.to_string(), c);
            }
            Err(e) => warn!("skipping criterion '{var}' ({} regions): {e}", xs.len()),
        }
    }
    out
}
