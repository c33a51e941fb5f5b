//! Region-by-time aggregation: weighted means, user thresholds, super-county
//! binning, gap dropping, interpolation, baseline adjustment and rollups.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::cell::{iso_weeks_in_year, RegionCode, RegionLevel, TimeCell, TimeUnit};
use crate::error::{Error, Result};
use crate::mapping::RegionMapping;
use crate::scoring::{Outcome, UserScore};

/// The two standard user thresholds.
pub const UT_PRESETS: [usize; 2] = [50, 200];
pub const DEFAULT_MAX_GAP: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Observed,
    Interpolated,
    Super,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Observed => "observed",
            Provenance::Interpolated => "interpolated",
            Provenance::Super => "super",
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "observed" => Ok(Provenance::Observed),
            "interpolated" => Ok(Provenance::Interpolated),
            "super" => Ok(Provenance::Super),
            other => Err(Error::Format(format!("unknown provenance '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegionCell {
    pub region: RegionCode,
    pub cell: TimeCell,
    pub dep: f64,
    pub anx: f64,
    pub n_users: usize,
    pub sum_weights: f64,
    pub provenance: Provenance,
}

impl RegionCell {
    pub fn value(&self, outcome: Outcome) -> f64 {
        match outcome {
            Outcome::Dep => self.dep,
            Outcome::Anx => self.anx,
        }
    }
}

/// A state-level pool of counties that individually failed the user threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct SuperRegion {
    pub state: RegionCode,
    pub member_counties: BTreeSet<RegionCode>,
    pub cell: TimeCell,
}

/// Post-stratified weighted mean of one region-cell's user scores.
///
/// Users are reduced in `user_id` order so the result is bit-identical for
/// any input permutation.
pub fn aggregate_cell(scores: &[UserScore]) -> Result<RegionCell> {
    let first = scores.first().ok_or(Error::EmptyCell)?;
    if scores.iter().any(|s| s.region != first.region || s.cell != first.cell) {
        return Err(Error::InvalidParameter("aggregate_cell given scores from several cells".into()));
    }
    let mut ordered: Vec<&UserScore> = scores.iter().collect();
    ordered.sort_by(|a, b| {
        a.user_id
            .cmp(&b.user_id)
            .then(a.dep.total_cmp(&b.dep))
            .then(a.anx.total_cmp(&b.anx))
            .then(a.weight.total_cmp(&b.weight))
    });
    let (mut sw, mut sd, mut sa) = (0.0, 0.0, 0.0);
    for s in ordered {
        sw += s.weight;
        sd += s.weight * s.dep;
        sa += s.weight * s.anx;
    }
    Ok(RegionCell {
        region: first.region.clone(),
        cell: first.cell,
        dep: sd / sw,
        anx: sa / sw,
        n_users: scores.len(),
        sum_weights: sw,
        provenance: Provenance::Observed,
    })
}

/// Aggregate every (region, cell) present in `scores`, sorted by region then cell.
pub fn aggregate_all(scores: &[UserScore]) -> Vec<RegionCell> {
    let mut groups: BTreeMap<(&RegionCode, TimeCell), Vec<UserScore>> = BTreeMap::new();
    for s in scores {
        groups.entry((&s.region, s.cell)).or_default().push(s.clone());
    }
    let groups: Vec<Vec<UserScore>> = groups.into_values().collect();
    groups
        .par_iter()
        .map(|g| aggregate_cell(g).expect("groups are nonempty and homogeneous"))
        .collect()
}

/// Split cells into those with at least `ut` users and the rest.
pub fn apply_user_threshold(cells: Vec<RegionCell>, ut: usize) -> Result<(Vec<RegionCell>, Vec<RegionCell>)> {
    if ut == 0 {
        return Err(Error::InvalidParameter("user threshold must be at least 1".into()));
    }
    Ok(cells.into_iter().partition(|c| c.n_users >= ut))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SuperWeighting {
    /// Weight member counties by their reporting users.
    #[default]
    Users,
    /// Weight by summed post-stratification weights.
    Weights,
}

#[derive(Clone, Debug, Default)]
pub struct SuperBinning {
    pub cells: Vec<RegionCell>,
    pub regions: Vec<SuperRegion>,
    /// State-cells whose pooled users still fell short of the threshold.
    pub dropped: usize,
}

/// Pool sub-threshold county cells into state-level super counties.
pub fn bin_super_counties(
    rejected: &[RegionCell],
    mapping: &RegionMapping,
    ut: usize,
    weighting: SuperWeighting,
) -> Result<SuperBinning> {
    let mut unmapped = BTreeSet::new();
    let mut groups: BTreeMap<(RegionCode, TimeCell), Vec<&RegionCell>> = BTreeMap::new();
    for c in rejected {
        if c.region.level() != RegionLevel::County {
            return Err(Error::InvalidParameter(format!("super-binning expects county cells, got {}", c.region)));
        }
        match mapping.county(c.region.code()) {
            Some(info) => groups.entry((RegionCode::state(info.state.clone())?, c.cell)).or_default().push(c),
            None => {
                unmapped.insert(c.region.code().to_string());
            }
        }
    }
    if !unmapped.is_empty() {
        return Err(Error::UnmappedCounties(unmapped.into_iter().collect()));
    }

    let mut out = SuperBinning::default();
    for ((state, cell), mut members) in groups {
        members.sort_by(|a, b| a.region.cmp(&b.region));
        let n_users: usize = members.iter().map(|c| c.n_users).sum();
        if n_users < ut {
            out.dropped += 1;
            continue;
        }
        let weight = |c: &RegionCell| match weighting {
            SuperWeighting::Users => c.n_users as f64,
            SuperWeighting::Weights => c.sum_weights,
        };
        let (mut w, mut d, mut a, mut sw) = (0.0, 0.0, 0.0, 0.0);
        for c in &members {
            w += weight(c);
            d += weight(c) * c.dep;
            a += weight(c) * c.anx;
            sw += c.sum_weights;
        }
        out.regions.push(SuperRegion {
            state: state.clone(),
            member_counties: members.iter().map(|c| c.region.clone()).collect(),
            cell,
        });
        out.cells.push(RegionCell {
            region: state,
            cell,
            dep: d / w,
            anx: a / w,
            n_users,
            sum_weights: sw,
            provenance: Provenance::Super,
        });
    }
    if out.dropped > 0 {
        log::info!("{} super-county cells below the user threshold were dropped", out.dropped);
    }
    Ok(out)
}

/// One region's cells keyed by time.
pub type Series = BTreeMap<TimeCell, RegionCell>;

pub fn group_series(cells: impl IntoIterator<Item = RegionCell>) -> BTreeMap<RegionCode, Series> {
    let mut out: BTreeMap<RegionCode, Series> = BTreeMap::new();
    for c in cells {
        out.entry(c.region.clone()).or_default().insert(c.cell, c);
    }
    out
}

fn single_unit<'a>(cells: impl Iterator<Item = &'a TimeCell>) -> Result<Option<TimeUnit>> {
    let units: BTreeSet<TimeUnit> = cells.map(|c| c.unit).collect();
    match units.len() {
        0 => Ok(None),
        1 => Ok(units.into_iter().next()),
        _ => Err(Error::InvalidParameter("series mixes time units".into())),
    }
}

/// Longest run of consecutive missing periods in `[first, last]`.
pub fn longest_gap(series: &Series, first: i64, last: i64) -> usize {
    let mut longest = 0;
    let mut prev = first - 1;
    for ord in series.keys().map(TimeCell::ordinal).filter(|o| (first..=last).contains(o)) {
        longest = longest.max((ord - prev - 1) as usize);
        prev = ord;
    }
    longest.max((last - prev) as usize)
}

/// Remove regions that miss `max_gap` or more consecutive periods.
///
/// The covered span is the first-to-last period over all regions, so a
/// region that starts reporting late can be dropped for its leading gap.
/// Returns the surviving series and the dropped regions.
pub fn drop_gap_regions(
    series: BTreeMap<RegionCode, Series>,
    max_gap: usize,
) -> Result<(BTreeMap<RegionCode, Series>, Vec<RegionCode>)> {
    if max_gap == 0 {
        return Err(Error::InvalidParameter("max_gap must be at least 1".into()));
    }
    single_unit(series.values().flat_map(|s| s.keys()))?;
    let ords: Vec<i64> = series.values().flat_map(|s| s.keys().map(TimeCell::ordinal)).collect();
    let (Some(&first), Some(&last)) = (ords.iter().min(), ords.iter().max()) else {
        return Ok((series, Vec::new()));
    };
    let mut dropped = Vec::new();
    let kept = series
        .into_iter()
        .filter(|(region, s)| {
            let keep = longest_gap(s, first, last) < max_gap;
            if !keep {
                dropped.push(region.clone());
            }
            keep
        })
        .collect();
    Ok((kept, dropped))
}

/// Linearly fill interior missing periods of one region's series.
///
/// Observed values are untouched; leading and trailing gaps stay missing.
/// With fewer than two observed periods the series is returned as is.
pub fn interpolate_missing(series: &Series) -> Result<Series> {
    let Some(unit) = single_unit(series.keys())? else {
        return Ok(series.clone());
    };
    let observed: Vec<&RegionCell> = series.values().filter(|c| c.provenance != Provenance::Interpolated).collect();
    if observed.len() < 2 {
        if let Some(c) = observed.first() {
            log::warn!("{}: fewer than two observed periods, nothing to interpolate", c.region);
        }
        return Ok(series.clone());
    }
    let mut out = series.clone();
    for pair in observed.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let (ta, tb) = (a.cell.ordinal(), b.cell.ordinal());
        for t in ta + 1..tb {
            let cell = TimeCell::from_ordinal(unit, t)?;
            if out.get(&cell).is_some_and(|c| c.provenance != Provenance::Interpolated) {
                continue;
            }
            let frac = (t - ta) as f64 / (tb - ta) as f64;
            out.insert(
                cell,
                RegionCell {
                    region: a.region.clone(),
                    cell,
                    dep: a.dep + (b.dep - a.dep) * frac,
                    anx: a.anx + (b.anx - a.anx) * frac,
                    n_users: 0,
                    sum_weights: 0.0,
                    provenance: Provenance::Interpolated,
                },
            );
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum BaselineMode {
    /// Subtract the baseline value at the same week (or period) index.
    #[default]
    MatchedWeek,
    /// Subtract the region's mean over all baseline periods.
    AnnualMean,
}

impl FromStr for BaselineMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "matched-week" | "matched_week" => Ok(BaselineMode::MatchedWeek),
            "annual-mean" | "annual_mean" => Ok(BaselineMode::AnnualMean),
            other => Err(Error::Config(format!("unknown baseline mode '{other}'"))),
        }
    }
}

/// Subtract a prior-period baseline from `current`, region by region.
///
/// Regions or periods without baseline data are dropped. In matched-week
/// mode ISO week 53 falls back to week 52 when none of the region's baseline
/// years has a week 53.
pub fn adjust_baseline(current: &[RegionCell], baseline: &[RegionCell], mode: BaselineMode) -> Vec<RegionCell> {
    let mut base: BTreeMap<&RegionCode, BTreeMap<(TimeUnit, u32), Vec<&RegionCell>>> = BTreeMap::new();
    for c in baseline {
        base.entry(&c.region).or_default().entry((c.cell.unit, c.cell.index)).or_default().push(c);
    }
    let mean = |cells: &[&RegionCell]| {
        let n = cells.len() as f64;
        (cells.iter().map(|c| c.dep).sum::<f64>() / n, cells.iter().map(|c| c.anx).sum::<f64>() / n)
    };

    let mut out = Vec::new();
    for c in current {
        let Some(b) = base.get(&c.region) else { continue };
        let reference = match mode {
            BaselineMode::AnnualMean => {
                let all: Vec<&RegionCell> = b.values().flatten().copied().collect();
                Some(mean(&all))
            }
            BaselineMode::MatchedWeek => {
                let key = (c.cell.unit, c.cell.index);
                match b.get(&key) {
                    Some(cells) => Some(mean(cells)),
                    None if c.cell.unit == TimeUnit::Week && c.cell.index == 53 => {
                        let years: BTreeSet<i32> = b.values().flatten().map(|x| x.cell.iso_year).collect();
                        if years.iter().all(|&y| iso_weeks_in_year(y) == 52) {
                            b.get(&(TimeUnit::Week, 52)).map(|cells| mean(cells))
                        } else {
                            None
                        }
                    }
                    None => None,
                }
            }
        };
        if let Some((bd, ba)) = reference {
            out.push(RegionCell { dep: c.dep - bd, anx: c.anx - ba, ..c.clone() });
        }
    }
    if out.is_empty() && !current.is_empty() {
        log::warn!("baseline adjustment produced no cells: no region/period overlap with the baseline");
    }
    out
}

/// User-weighted mean of county cells (or state super cells) per target
/// region and period.
pub fn rollup(cells: &[RegionCell], mapping: &RegionMapping, target: RegionLevel) -> Result<Vec<RegionCell>> {
    let mut unmapped = BTreeSet::new();
    let mut groups: BTreeMap<(RegionCode, TimeCell), Vec<&RegionCell>> = BTreeMap::new();
    for c in cells {
        match mapping.parent(&c.region, target) {
            Ok(Some(parent)) => groups.entry((parent, c.cell)).or_default().push(c),
            Ok(None) => {
                return Err(Error::InvalidParameter(format!("cannot roll {} up to {target}", c.region)));
            }
            Err(Error::UnmappedCounties(v)) => unmapped.extend(v),
            Err(e) => return Err(e),
        }
    }
    if !unmapped.is_empty() {
        return Err(Error::UnmappedCounties(unmapped.into_iter().collect()));
    }
    Ok(groups.into_iter().map(|((region, cell), members)| combine(region, cell, members)).collect())
}

/// Nation-level rollup, which needs no mapping table.
pub fn rollup_nation(cells: &[RegionCell]) -> Vec<RegionCell> {
    let mut groups: BTreeMap<TimeCell, Vec<&RegionCell>> = BTreeMap::new();
    for c in cells {
        groups.entry(c.cell).or_default().push(c);
    }
    groups.into_iter().map(|(cell, members)| combine(RegionCode::nation(), cell, members)).collect()
}

fn combine(region: RegionCode, cell: TimeCell, mut members: Vec<&RegionCell>) -> RegionCell {
    members.sort_by(|a, b| a.region.cmp(&b.region));
    let n_users: usize = members.iter().map(|c| c.n_users).sum();
    let weight = |c: &RegionCell| if n_users > 0 { c.n_users as f64 } else { 1.0 };
    let (mut w, mut d, mut a) = (0.0, 0.0, 0.0);
    for c in &members {
        w += weight(c);
        d += weight(c) * c.dep;
        a += weight(c) * c.anx;
    }
    let provs: BTreeSet<Provenance> = members.iter().map(|c| c.provenance).collect();
    let provenance = if provs.len() == 1 { *provs.iter().next().unwrap() } else { Provenance::Observed };
    RegionCell {
        region,
        cell,
        dep: d / w,
        anx: a / w,
        n_users,
        sum_weights: members.iter().map(|c| c.sum_weights).sum(),
        provenance,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapping::CountyInfo;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn week(w: u32) -> TimeCell {
        TimeCell::week(2020, w).unwrap()
    }

    fn us(user: &str, dep: f64, weight: f64) -> UserScore {
        UserScore {
            user_id: user.into(),
            region: RegionCode::county("36061").unwrap(),
            cell: week(10),
            dep,
            anx: dep + 1.0,
            weight,
        }
    }

    fn rc(fips: &str, w: u32, dep: f64, n_users: usize) -> RegionCell {
        RegionCell {
            region: RegionCode::county(fips).unwrap(),
            cell: week(w),
            dep,
            anx: dep,
            n_users,
            sum_weights: n_users as f64,
            provenance: Provenance::Observed,
        }
    }

    fn mapping() -> RegionMapping {
        let mut m = RegionMapping::new();
        let info = |s: &str, r: &str| CountyInfo { state: s.into(), census_region: r.into(), msa: None };
        m.insert("36001", info("NY", "Northeast")).unwrap();
        m.insert("36003", info("NY", "Northeast")).unwrap();
        m.insert("06001", info("CA", "West")).unwrap();
        m
    }

    #[test]
    fn weighted_means() {
        assert_eq!(aggregate_cell(&[us("a", 2.0, 1.0), us("b", 3.0, 1.0)]).unwrap().dep, 2.5);
        assert_eq!(aggregate_cell(&[us("a", 2.0, 3.0), us("b", 4.0, 1.0)]).unwrap().dep, 2.5);
        let single = aggregate_cell(&[us("a", 1.7, 2.0)]).unwrap();
        assert_eq!((single.dep, single.n_users), (1.7, 1));
        assert!(matches!(aggregate_cell(&[]), Err(Error::EmptyCell)));
    }

    #[test]
    fn threshold_boundaries() {
        let (k, r) = apply_user_threshold(vec![rc("36001", 1, 2.0, 49), rc("36003", 1, 2.0, 50)], 50).unwrap();
        assert_eq!((k.len(), r.len()), (1, 1));
        assert_eq!(k[0].n_users, 50);
        let (k, _) = apply_user_threshold(vec![rc("36001", 1, 2.0, 1)], 1).unwrap();
        assert_eq!(k.len(), 1);
    }

    #[test]
    fn super_binning_examples() {
        let m = mapping();
        let out = bin_super_counties(&[rc("36001", 1, 2.0, 40), rc("36003", 1, 3.0, 30)], &m, 50, SuperWeighting::Users).unwrap();
        assert_eq!(out.cells.len(), 1);
        assert_eq!(out.cells[0].n_users, 70);
        assert_relative_eq!(out.cells[0].dep, 170.0 / 70.0, epsilon = 1e-12);
        assert_eq!(out.cells[0].region.code(), "NY");
        assert_eq!(out.cells[0].provenance, Provenance::Super);
        assert_eq!(out.regions[0].member_counties.len(), 2);

        let out = bin_super_counties(&[rc("36001", 1, 2.0, 10), rc("36003", 1, 3.0, 10)], &m, 50, SuperWeighting::Users).unwrap();
        assert!(out.cells.is_empty());
        assert_eq!(out.dropped, 1);

        let out = bin_super_counties(&[rc("36001", 1, 2.0, 60)], &m, 50, SuperWeighting::Users).unwrap();
        assert_eq!((out.cells[0].dep, out.cells[0].n_users), (2.0, 60));
    }

    #[test]
    fn super_binning_reports_unmapped() {
        let err = bin_super_counties(&[rc("01001", 1, 2.0, 4), rc("02001", 1, 2.0, 4)], &mapping(), 50, SuperWeighting::Users).unwrap_err();
        match err {
            Error::UnmappedCounties(v) => assert_eq!(v, ["01001", "02001"]),
            e => panic!("{e}"),
        }
    }

    fn series(weeks: &[(u32, f64)]) -> Series {
        weeks.iter().map(|&(w, d)| (week(w), rc("36001", w, d, 10))).collect()
    }

    #[test]
    fn gap_dropping() {
        let full: Vec<(u32, f64)> = (1..=20).map(|w| (w, 2.0)).collect();
        let missing10: Vec<(u32, f64)> = (1..=20).filter(|w| !(5..=14).contains(w)).map(|w| (w, 2.0)).collect();
        let missing9: Vec<(u32, f64)> = (1..=20).filter(|w| !(5..=13).contains(w)).map(|w| (w, 2.0)).collect();
        let mut map = BTreeMap::new();
        map.insert(RegionCode::county("36001").unwrap(), series(&full));
        map.insert(RegionCode::county("36003").unwrap(), series(&missing10));
        map.insert(RegionCode::county("06001").unwrap(), series(&missing9));
        let (kept, dropped) = drop_gap_regions(map, 10).unwrap();
        assert_eq!(dropped, [RegionCode::county("36003").unwrap()]);
        assert_eq!(kept.len(), 2);
    }

    #[test]
    fn interpolation_examples() {
        let filled = interpolate_missing(&series(&[(1, 2.0), (4, 3.5)])).unwrap();
        assert_eq!(filled.len(), 4);
        assert_relative_eq!(filled[&week(2)].dep, 2.5, epsilon = 1e-12);
        assert_relative_eq!(filled[&week(3)].dep, 3.0, epsilon = 1e-12);
        assert_eq!(filled[&week(2)].provenance, Provenance::Interpolated);
        assert_eq!(filled[&week(2)].n_users, 0);

        let dense = series(&[(1, 2.0), (2, 2.2), (3, 2.4)]);
        assert_eq!(interpolate_missing(&dense).unwrap(), dense);
        assert_eq!(interpolate_missing(&series(&[(1, 2.0), (3, 2.0)])).unwrap()[&week(2)].dep, 2.0);
        let lone = series(&[(5, 1.0)]);
        assert_eq!(interpolate_missing(&lone).unwrap(), lone);
    }

    #[test]
    fn interpolation_across_year_boundary() {
        let a = RegionCell { cell: TimeCell::week(2020, 52).unwrap(), ..rc("36001", 1, 1.0, 5) };
        let b = RegionCell { cell: TimeCell::week(2021, 2).unwrap(), ..rc("36001", 1, 4.0, 5) };
        let s: Series = [(a.cell, a), (b.cell, b)].into_iter().collect();
        let filled = interpolate_missing(&s).unwrap();
        // 2020 has 53 ISO weeks: W53 and 2021-W01 lie between.
        assert_eq!(filled.len(), 4);
        assert_relative_eq!(filled[&TimeCell::week(2020, 53).unwrap()].dep, 2.0, epsilon = 1e-12);
    }

    fn cell_in(year: i32, w: u32, dep: f64) -> RegionCell {
        RegionCell { cell: TimeCell::week(year, w).unwrap(), ..rc("36001", 1, dep, 100) }
    }

    #[test]
    fn baseline_modes() {
        let cur = [cell_in(2020, 10, 3.0)];
        let base = [cell_in(2019, 10, 2.5), cell_in(2019, 11, 1.5)];
        let adj = adjust_baseline(&cur, &base, BaselineMode::MatchedWeek);
        assert_relative_eq!(adj[0].dep, 0.5, epsilon = 1e-12);
        let adj = adjust_baseline(&cur, &base, BaselineMode::AnnualMean);
        assert_relative_eq!(adj[0].dep, 1.0, epsilon = 1e-12);

        let constant: Vec<_> = (1..=52).map(|w| cell_in(2019, w, 2.0)).collect();
        let cur: Vec<_> = (1..=53).map(|w| cell_in(2020, w, 2.0 + w as f64)).collect();
        let adj = adjust_baseline(&cur, &constant, BaselineMode::AnnualMean);
        assert!(adj.iter().all(|c| (c.dep - c.cell.index as f64).abs() < 1e-12));
        // Week 53 maps to 2019 week 52.
        let adj = adjust_baseline(&cur, &constant, BaselineMode::MatchedWeek);
        assert_eq!(adj.len(), 53);

        let other = [RegionCell { region: RegionCode::county("06001").unwrap(), ..cell_in(2019, 10, 2.0) }];
        assert!(adjust_baseline(&cur, &other, BaselineMode::MatchedWeek).is_empty());
    }

    #[test]
    fn rollup_examples() {
        let m = mapping();
        let out = rollup(&[rc("36001", 1, 2.0, 100), rc("36003", 1, 3.0, 100)], &m, RegionLevel::State).unwrap();
        assert_relative_eq!(out[0].dep, 2.5, epsilon = 1e-12);
        let out = rollup(&[rc("36001", 1, 2.0, 100)], &m, RegionLevel::Nation).unwrap();
        assert_eq!((out[0].dep, out[0].region.code()), (2.0, "US"));
        let out = rollup(&[rc("36001", 1, 2.0, 100), rc("36003", 1, 3.0, 300)], &m, RegionLevel::Nation).unwrap();
        assert_relative_eq!(out[0].dep, 2.75, epsilon = 1e-12);
        let err = rollup(&[rc("99001", 1, 2.0, 1)], &m, RegionLevel::State).unwrap_err();
        assert!(matches!(err, Error::UnmappedCounties(v) if v == ["99001"]));
    }

    proptest! {
        #[test]
        fn aggregation_is_permutation_invariant(
            rows in prop::collection::vec((0.0f64..5.0, 0.1f64..10.0), 1..30),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            let scores: Vec<UserScore> = rows.iter().enumerate().map(|(i, &(d, w))| us(&format!("u{i}"), d, w)).collect();
            let mut shuffled = scores.clone();
            shuffled.shuffle(&mut crate::seed::rng(seed));
            let a = aggregate_cell(&scores).unwrap();
            let b = aggregate_cell(&shuffled).unwrap();
            prop_assert_eq!(a.dep.to_bits(), b.dep.to_bits());
            prop_assert_eq!(a.anx.to_bits(), b.anx.to_bits());
        }

        #[test]
        fn threshold_partitions(users in prop::collection::vec(1usize..300, 0..30), ut in 1usize..300) {
            let cells: Vec<RegionCell> = users.iter().enumerate().map(|(i, &n)| rc("36001", (i % 52) as u32 + 1, 2.0, n)).collect();
            let (k, r) = apply_user_threshold(cells.clone(), ut).unwrap();
            prop_assert_eq!(k.len() + r.len(), cells.len());
            prop_assert!(k.iter().all(|c| c.n_users >= ut));
            prop_assert!(r.iter().all(|c| c.n_users < ut));
        }

        #[test]
        fn super_binning_conserves_mass(rows in prop::collection::vec((1usize..49, 0.0f64..5.0, 0usize..3), 1..20)) {
            let fips = ["36001", "36003", "06001"];
            let mut cells = Vec::new();
            for (i, &(n, d, f)) in rows.iter().enumerate() {
                cells.push(RegionCell { cell: week((i % 3) as u32 + 1), ..rc(fips[f], 1, d, n) });
            }
            cells.sort_by(|a, b| (&a.region, a.cell).cmp(&(&b.region, b.cell)));
            cells.dedup_by(|a, b| a.region == b.region && a.cell == b.cell);
            let out = bin_super_counties(&cells, &mapping(), 50, SuperWeighting::Users).unwrap();
            for (sc, sr) in out.cells.iter().zip(&out.regions) {
                let members: Vec<&RegionCell> = cells.iter().filter(|c| c.cell == sr.cell && sr.member_counties.contains(&c.region)).collect();
                let total: f64 = members.iter().map(|c| c.n_users as f64 * c.dep).sum();
                let emitted = sc.n_users as f64 * sc.dep;
                prop_assert!((emitted - total).abs() <= 1e-9 * total.abs().max(1e-300));
            }
        }

        #[test]
        fn interpolation_bounded_and_preserving(vals in prop::collection::vec(prop::option::of(0.0f64..5.0), 2..30)) {
            let pts: Vec<(u32, f64)> = vals.iter().enumerate().filter_map(|(i, v)| v.map(|v| (i as u32 + 1, v))).collect();
            let s = series(&pts);
            let filled = interpolate_missing(&s).unwrap();
            for (cell, c) in &s {
                prop_assert_eq!(&filled[cell], c);
            }
            for w in pts.windows(2) {
                let (lo, hi) = (w[0].1.min(w[1].1), w[0].1.max(w[1].1));
                for k in w[0].0 + 1..w[1].0 {
                    let v = filled[&week(k)].dep;
                    prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
                }
            }
        }

        #[test]
        fn self_baseline_is_zero(vals in prop::collection::vec(0.0f64..5.0, 1..52)) {
            let cells: Vec<RegionCell> = vals.iter().enumerate().map(|(i, &v)| rc("36001", i as u32 + 1, v, 10)).collect();
            let adj = adjust_baseline(&cells, &cells, BaselineMode::MatchedWeek);
            prop_assert_eq!(adj.len(), cells.len());
            prop_assert!(adj.iter().all(|c| c.dep == 0.0 && c.anx == 0.0));
        }
    }
}
