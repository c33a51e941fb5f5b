//! Split-half reliability, repeated split-half reliability (RSR), resolution
//! grids, user-threshold sweeps and one-way ICCs.
//!
//! Split-half reliability is `R = 1 - |mean_a - mean_b| / sd(a ∪ b)` with the
//! population standard deviation of the pooled sample. The absolute value
//! matters: without it, signed differences average to roughly zero and RSR
//! would sit near 1 regardless of noise.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::cell::{RegionCode, RegionLevel, TimeCell, TimeUnit};
use crate::error::{Error, Result};
use crate::mapping::RegionMapping;
use crate::scoring::{Outcome, UserScore};
use crate::seed::{derive_seed, rng};
use crate::stats::{mean, pop_std, sample_std};

pub const MIN_SPLIT_HALF_USERS: usize = 20;
pub const DEFAULT_REPEATS: usize = 100;
const Z_95: f64 = 1.96;

/// Reliability of an explicit split into halves `a` and `b`.
pub fn r_from_halves(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InsufficientUsers { required: 2, actual: a.len() + b.len() });
    }
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    if pooled.iter().all(|v| *v == pooled[0]) {
        // Constant scores: rounding in the means must not read as disagreement.
        return Ok(1.0);
    }
    let sd = pop_std(&pooled);
    Ok(1.0 - (mean(a) - mean(b)).abs() / sd)
}

fn split_once<R: Rng>(scores: &[f64], order: &mut [usize], rng: &mut R) -> f64 {
    order.shuffle(rng);
    let half = scores.len() / 2;
    let a: Vec<f64> = order[..half].iter().map(|&i| scores[i]).collect();
    let b: Vec<f64> = order[half..].iter().map(|&i| scores[i]).collect();
    r_from_halves(&a, &b).expect("both halves nonempty")
}

fn check_users(n: usize, min_users: usize) -> Result<()> {
    if n < min_users.max(2) {
        return Err(Error::InsufficientUsers { required: min_users.max(2), actual: n });
    }
    Ok(())
}

/// One seeded random split into halves whose sizes differ by at most one.
pub fn split_half_r(scores: &[f64], seed: u64) -> Result<f64> {
    rsr(scores, 1, seed)
}

/// Mean split-half reliability over `n_repeats` seeded partitions.
pub fn rsr(scores: &[f64], n_repeats: usize, seed: u64) -> Result<f64> {
    rsr_with_min(scores, n_repeats, seed, MIN_SPLIT_HALF_USERS)
}

pub fn rsr_with_min(scores: &[f64], n_repeats: usize, seed: u64, min_users: usize) -> Result<f64> {
    check_users(scores.len(), min_users)?;
    if n_repeats == 0 {
        return Err(Error::InvalidParameter("n_repeats must be at least 1".into()));
    }
    let mut rng = rng(seed);
    let mut order: Vec<usize> = (0..scores.len()).collect();
    let total: f64 = (0..n_repeats).map(|_| split_once(scores, &mut order, &mut rng)).sum();
    Ok(total / n_repeats as f64)
}

fn pair_seed(seed: u64, region: &RegionCode, cell: &TimeCell) -> u64 {
    derive_seed(seed, &format!("{region}|{cell}"))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReliabilityReport {
    pub level: RegionLevel,
    pub unit: TimeUnit,
    pub mean_r: f64,
    pub n_pairs: usize,
    pub std_err: f64,
    pub per_pair: Option<BTreeMap<String, f64>>,
}

/// Reliability by (region level, time unit). Cells with no qualifying
/// space-time pair are `None`. Iteration order is coarse to fine.
#[derive(Clone, Debug, Default)]
pub struct ReliabilityGrid {
    pub cells: BTreeMap<(RegionLevel, TimeUnit), Option<ReliabilityReport>>,
}

impl ReliabilityGrid {
    pub fn get(&self, level: RegionLevel, unit: TimeUnit) -> Option<&ReliabilityReport> {
        self.cells.get(&(level, unit)).and_then(Option::as_ref)
    }

    pub fn reports(&self) -> impl Iterator<Item = &ReliabilityReport> {
        self.cells.values().flatten()
    }

    /// Levels as columns and units as rows, both coarse to fine.
    pub fn levels(&self) -> Vec<RegionLevel> {
        let mut v: Vec<_> = self.cells.keys().map(|k| k.0).collect();
        v.dedup();
        v.sort();
        v.dedup();
        v
    }

    pub fn units(&self) -> Vec<TimeUnit> {
        let mut v: Vec<_> = self.cells.keys().map(|k| k.1).collect();
        v.sort();
        v.dedup();
        v
    }
}

#[derive(Clone, Debug)]
pub struct GridParams {
    pub min_users: usize,
    pub outcome: Outcome,
    pub seed: u64,
    pub keep_per_pair: bool,
}

impl GridParams {
    pub fn new(seed: u64) -> Self {
        GridParams { min_users: MIN_SPLIT_HALF_USERS, outcome: Outcome::Dep, seed, keep_per_pair: false }
    }
}

/// Per-user scores regrouped at a coarser resolution. A user with several
/// finer records in one target cell is represented by their mean.
fn regroup(
    scores: &[UserScore],
    mapping: Option<&RegionMapping>,
    level: RegionLevel,
    unit: TimeUnit,
    outcome: Outcome,
) -> Result<Option<BTreeMap<(RegionCode, TimeCell), Vec<f64>>>> {
    let mut users: UserTotals<'_> = BTreeMap::new();
    let mut unmapped = std::collections::BTreeSet::new();
    for s in scores {
        let Some(cell) = s.cell.coarsen(unit) else { return Ok(None) };
        let region = if s.region.level() == level {
            s.region.clone()
        } else if level == RegionLevel::Nation {
            RegionCode::nation()
        } else {
            let Some(m) = mapping else { return Ok(None) };
            match m.parent(&s.region, level) {
                Ok(Some(r)) => r,
                Ok(None) => return Ok(None),
                Err(Error::UnmappedCounties(v)) => {
                    unmapped.extend(v);
                    continue;
                }
                Err(e) => return Err(e),
            }
        };
        let e = users.entry((region, cell)).or_default().entry(&s.user_id).or_insert((0.0, 0));
        e.0 += s.value(outcome);
        e.1 += 1;
    }
    if !unmapped.is_empty() {
        return Err(Error::UnmappedCounties(unmapped.into_iter().collect()));
    }
    Ok(Some(
        users
            .into_iter()
            .map(|(k, per_user)| (k, per_user.into_values().map(|(s, n)| s / n as f64).collect()))
            .collect(),
    ))
}

/// Average split-half reliability across every qualifying space-time pair,
/// for each requested (level, unit). Scores should carry county and day
/// precision so every coarser cell can be derived.
pub fn reliability_grid(
    scores: &[UserScore],
    mapping: Option<&RegionMapping>,
    levels: &[RegionLevel],
    units: &[TimeUnit],
    params: &GridParams,
) -> Result<ReliabilityGrid> {
    let mut grid = ReliabilityGrid::default();
    for &level in levels {
        for &unit in units {
            let report = match regroup(scores, mapping, level, unit, params.outcome)? {
                None => None,
                Some(groups) => {
                    let pairs: Vec<_> = groups.into_iter().filter(|(_, v)| v.len() >= params.min_users).collect();
                    let rs: Vec<(String, f64)> = pairs
                        .par_iter()
                        .map(|((region, cell), vals)| {
                            let r = rsr_with_min(vals, 1, pair_seed(params.seed, region, cell), params.min_users)?;
                            Ok((format!("{region}|{cell}"), r))
                        })
                        .collect::<Result<_>>()?;
                    summarize(level, unit, rs, params.keep_per_pair)
                }
            };
            grid.cells.insert((level, unit), report);
        }
    }
    Ok(grid)
}

fn summarize(level: RegionLevel, unit: TimeUnit, rs: Vec<(String, f64)>, keep: bool) -> Option<ReliabilityReport> {
    if rs.is_empty() {
        return None;
    }
    let vals: Vec<f64> = rs.iter().map(|(_, r)| *r).collect();
    Some(ReliabilityReport {
        level,
        unit,
        mean_r: mean(&vals),
        n_pairs: vals.len(),
        std_err: sample_std(&vals) / (vals.len() as f64).sqrt(),
        per_pair: keep.then(|| rs.into_iter().collect()),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct UtSweepPoint {
    pub ut: usize,
    /// `None` when no cell reaches the threshold.
    pub mean_r: Option<f64>,
    pub ci95: Option<(f64, f64)>,
    pub n_cells: usize,
}

#[derive(Clone, Debug)]
pub struct SweepParams {
    pub n_repeats: usize,
    pub seed: u64,
    pub outcome: Outcome,
    /// Minimum users for a split-half to be computed at all.
    pub min_users: usize,
}

impl SweepParams {
    pub fn new(seed: u64) -> Self {
        SweepParams { n_repeats: DEFAULT_REPEATS, seed, outcome: Outcome::Dep, min_users: MIN_SPLIT_HALF_USERS }
    }
}

type UserTotals<'a> = BTreeMap<(RegionCode, TimeCell), BTreeMap<&'a str, (f64, usize)>>;

/// Per-cell RSR for all (region, cell) groups with at least `min_users`.
/// Returned in (region, cell) order with the cell's user count.
pub fn cell_rsr(scores: &[UserScore], params: &SweepParams) -> Result<Vec<(RegionCode, TimeCell, usize, f64)>> {
    let mut groups: UserTotals<'_> = BTreeMap::new();
    for s in scores {
        let e = groups.entry((s.region.clone(), s.cell)).or_default().entry(&s.user_id).or_insert((0.0, 0));
        e.0 += s.value(params.outcome);
        e.1 += 1;
    }
    let cells: Vec<((RegionCode, TimeCell), Vec<f64>)> = groups
        .into_iter()
        .map(|(k, u)| (k, u.into_values().map(|(s, n)| s / n as f64).collect::<Vec<f64>>()))
        .filter(|(_, v)| v.len() >= params.min_users.max(2))
        .collect();
    cells
        .par_iter()
        .map(|((region, cell), vals)| {
            let r = rsr_with_min(vals, params.n_repeats, pair_seed(params.seed, region, cell), params.min_users)?;
            Ok((region.clone(), *cell, vals.len(), r))
        })
        .collect()
}

/// Mean RSR over cells with at least `ut` users, for each threshold.
pub fn ut_sweep(scores: &[UserScore], ut_values: &[usize], params: &SweepParams) -> Result<Vec<UtSweepPoint>> {
    let cells = cell_rsr(scores, params)?;
    Ok(sweep_from_cells(&cells, ut_values))
}

pub fn sweep_from_cells(cells: &[(RegionCode, TimeCell, usize, f64)], ut_values: &[usize]) -> Vec<UtSweepPoint> {
    ut_values
        .iter()
        .map(|&ut| {
            let rs: Vec<f64> = cells.iter().filter(|c| c.2 >= ut).map(|c| c.3).collect();
            if rs.is_empty() {
                return UtSweepPoint { ut, mean_r: None, ci95: None, n_cells: 0 };
            }
            let m = mean(&rs);
            let se = sample_std(&rs) / (rs.len() as f64).sqrt();
            UtSweepPoint { ut, mean_r: Some(m), ci95: Some((m - Z_95 * se, m + Z_95 * se)), n_cells: rs.len() }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IccResult {
    pub icc1: f64,
    pub icc2: f64,
    pub msb: f64,
    pub msw: f64,
    pub mean_group_size: f64,
    pub n_groups: usize,
}

/// One-way ANOVA intraclass correlations.
///
/// `ICC1 = (MSB - MSW) / (MSB + (k - 1) MSW)` with `k` the mean group size,
/// and `ICC2 = k ICC1 / (1 + (k - 1) ICC1)`, the Spearman-Brown step-up to
/// the group mean.
pub fn icc<K>(groups: &BTreeMap<K, Vec<f64>>) -> Result<IccResult> {
    let n_groups = groups.len();
    if n_groups < 2 {
        return Err(Error::InvalidParameter(format!("ICC needs at least 2 groups, got {n_groups}")));
    }
    if let Some(small) = groups.values().find(|g| g.len() < 2) {
        return Err(Error::InvalidParameter(format!("ICC needs 2+ members per group, found {}", small.len())));
    }
    let n_total: usize = groups.values().map(Vec::len).sum();
    let grand = groups.values().flatten().sum::<f64>() / n_total as f64;
    let (mut ssb, mut ssw) = (0.0, 0.0);
    for g in groups.values() {
        let m = mean(g);
        ssb += g.len() as f64 * (m - grand) * (m - grand);
        ssw += g.iter().map(|x| (x - m) * (x - m)).sum::<f64>();
    }
    let msb = ssb / (n_groups - 1) as f64;
    let msw = ssw / (n_total - n_groups) as f64;
    if msb == 0.0 {
        let what = if msw == 0.0 { "all scores identical" } else { "group means identical" };
        return Err(Error::UndefinedVariance(format!("between-group mean square is zero ({what})")));
    }
    let k = n_total as f64 / n_groups as f64;
    let icc1 = (msb - msw) / (msb + (k - 1.0) * msw);
    let icc2 = k * icc1 / (1.0 + (k - 1.0) * icc1);
    Ok(IccResult { icc1, icc2, msb, msw, mean_group_size: k, n_groups })
}
