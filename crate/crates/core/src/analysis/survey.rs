use std::collections::{BTreeMap, BTreeSet};

use log::info;

use crate::cell::{RegionCode, TimeCell};
use crate::error::Result;
use crate::reliability::rsr_with_min;
use crate::seed::derive_seed;

/// Aggregate survey value for one region-cell.
#[derive(Clone, Debug, PartialEq)]
pub struct SurveyRow {
    pub region: RegionCode,
    pub cell: TimeCell,
    pub value: f64,
    pub n_respondents: usize,
}

/// One respondent's answer, for the survey-side reliability gate.
#[derive(Clone, Debug, PartialEq)]
pub struct SurveyResponse {
    pub region: RegionCode,
    pub cell: TimeCell,
    pub respondent_id: String,
    pub value: f64,
}

pub const SURVEY_RELIABILITY_STANDARD: f64 = 0.7;

/// Regions whose every cell reaches `threshold` repeated split-half
/// reliability. A cell with fewer than `min_respondents` cannot be checked
/// and fails its region.
pub fn survey_gate(
    responses: &[SurveyResponse],
    threshold: f64,
    n_repeats: usize,
    min_respondents: usize,
    seed: u64,
) -> Result<BTreeSet<RegionCode>> {
    let mut cells: BTreeMap<&RegionCode, BTreeMap<TimeCell, Vec<f64>>> = BTreeMap::new();
    for r in responses {
        cells.entry(&r.region).or_default().entry(r.cell).or_default().push(r.value);
    }
    let mut kept = BTreeSet::new();
    for (region, by_cell) in cells {
        let mut ok = true;
        for (cell, vals) in &by_cell {
            if vals.len() < min_respondents.max(2) {
                ok = false;
                break;
            }
            let r = rsr_with_min(vals, n_repeats, derive_seed(seed, &format!("{region}|{cell}")), min_respondents)?;
            if r < threshold {
                ok = false;
                break;
            }
        }
        if ok {
            kept.insert(region.clone());
        } else {
            info!("survey region {region} fails the {threshold} reliability standard");
        }
    }
    Ok(kept)
}
