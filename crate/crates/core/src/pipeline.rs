//! The end-to-end scoring run: filter, group, score, weight, aggregate,
//! threshold, super-bin, gap-drop and interpolate, plus the corpus and
//! county-time descriptives that accompany it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use chrono::Datelike;
use log::{info, warn};
use rayon::prelude::*;

use crate::aggregate::{
    aggregate_all, apply_user_threshold, bin_super_counties, drop_gap_regions, group_series, interpolate_missing,
    RegionCell, SuperRegion, SuperWeighting, DEFAULT_MAX_GAP, UT_PRESETS,
};
use crate::cell::{RegionLevel, TimeUnit};
use crate::error::{Error, Result};
use crate::ingest::{apply_upt, filter_posts_sharded, group_posts, FilterStats, Post};
use crate::mapping::RegionMapping;
use crate::scoring::{attach_weight, extract_features, raw_score, Lexicon, LexiconMode, UserCellFeatures, UserScore, WeightTable, WeightingMode};
use crate::stats::{mean, sample_std};

pub const DEFAULT_MIN_POSTS: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreParams {
    pub unit: TimeUnit,
    pub min_posts: usize,
    pub ut: usize,
    pub max_gap: usize,
    pub lexicon_mode: LexiconMode,
    pub weighting: WeightingMode,
    pub super_weighting: SuperWeighting,
    pub interpolate: bool,
    /// User-partitioned shards for filtering; does not affect results.
    pub shards: usize,
}

impl Default for ScoreParams {
    fn default() -> Self {
        ScoreParams {
            unit: TimeUnit::Week,
            min_posts: DEFAULT_MIN_POSTS,
            ut: UT_PRESETS[0],
            max_gap: DEFAULT_MAX_GAP,
            lexicon_mode: LexiconMode::Sparse,
            weighting: WeightingMode::Normalized,
            super_weighting: SuperWeighting::Users,
            interpolate: true,
            shards: 1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ScoreOutput {
    pub user_scores: Vec<UserScore>,
    /// Reported region cells: counties passing the threshold, state super
    /// counties, and interpolated fills, sorted by region then cell.
    pub cells: Vec<RegionCell>,
    pub super_regions: Vec<SuperRegion>,
    pub dropped_regions: Vec<String>,
    pub filter_stats: FilterStats,
    pub descriptives: Descriptives,
}

/// Score a post stream into user scores and reported region cells.
pub fn run_score(
    posts: Vec<Post>,
    lexicon: &Lexicon,
    weights: &WeightTable,
    mapping: Option<&RegionMapping>,
    params: &ScoreParams,
) -> Result<ScoreOutput> {
    let (kept, filter_stats) = filter_posts_sharded(posts, params.shards.max(1));
    if kept.is_empty() {
        return Err(Error::NoContent("no posts after filtering".into()));
    }
    let (grouped, skipped) = group_posts(kept, params.unit);
    if skipped > 0 {
        warn!("{skipped} posts had out-of-range timestamps");
    }
    let grouped = apply_upt(grouped, params.min_posts)?;
    if grouped.is_empty() {
        return Err(Error::NoContent(format!("no user has {} or more posts in any {}", params.min_posts, params.unit)));
    }
    let posts_used: Vec<&Post> = grouped.values().flatten().collect();
    let features = extract_features(&grouped);
    let scored: Vec<Option<UserScore>> = features
        .par_iter()
        .map(|f| match raw_score(f, lexicon, params.lexicon_mode) {
            Ok(raw) => Ok(Some(attach_weight(raw, weights, params.weighting))),
            Err(Error::NoContent(_)) => Ok(None),
            Err(e) => Err(e),
        })
        .collect::<Result<_>>()?;
    let empty = scored.iter().filter(|s| s.is_none()).count();
    if empty > 0 {
        info!("{empty} user-cells had no tokens and were not scored");
    }
    let user_scores: Vec<UserScore> = scored.into_iter().flatten().collect();

    let observed = aggregate_all(&user_scores);
    let descriptives = Descriptives::compute(&posts_used, &features, &observed, mapping, params.unit);
    let (mut cells, rejected) = apply_user_threshold(observed, params.ut)?;
    let mut super_regions = Vec::new();
    if let Some(m) = mapping {
        let counties: Vec<RegionCell> = rejected.into_iter().filter(|c| c.region.level() == RegionLevel::County).collect();
        let binned = bin_super_counties(&counties, m, params.ut, params.super_weighting)?;
        cells.extend(binned.cells);
        super_regions = binned.regions;
    }

    let (series, dropped) = drop_gap_regions(group_series(cells), params.max_gap)?;
    if !dropped.is_empty() {
        info!("{} regions dropped for gaps of {} or more periods", dropped.len(), params.max_gap);
    }
    let mut cells = Vec::new();
    for s in series.values() {
        let s = if params.interpolate { interpolate_missing(s)? } else { s.clone() };
        cells.extend(s.into_values());
    }
    Ok(ScoreOutput {
        user_scores,
        cells,
        super_regions,
        dropped_regions: dropped.iter().map(ToString::to_string).collect(),
        filter_stats,
        descriptives,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    fn of(xs: &[f64]) -> Self {
        if xs.is_empty() {
            return MeanSd { mean: f64::NAN, sd: f64::NAN };
        }
        MeanSd { mean: mean(xs), sd: sample_std(xs) }
    }

    fn show(self, digits: usize) -> String {
        if self.mean.is_nan() {
            return "NA".to_string();
        }
        format!("{:.*} ({:.*})", digits, self.mean, digits, self.sd)
    }
}

/// Corpus totals and per-user activity.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CorpusSummary {
    pub tokens: u64,
    pub posts: usize,
    pub unique_words: usize,
    pub users: usize,
    pub counties: usize,
    pub posts_per_user_year: MeanSd,
    pub posts_per_user_period: MeanSd,
    pub users_per_county: MeanSd,
}

/// County-period cells meeting one user threshold.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ThresholdSummary {
    /// `None` for the unthresholded row.
    pub ut: Option<usize>,
    pub county_periods: usize,
    pub counties: usize,
    pub states: usize,
    pub users_per_county_period: MeanSd,
    pub dep: MeanSd,
    pub anx: MeanSd,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Descriptives {
    pub unit: Option<TimeUnit>,
    pub corpus: CorpusSummary,
    pub thresholds: Vec<ThresholdSummary>,
}

impl Descriptives {
    fn compute(
        posts: &[&Post],
        features: &[UserCellFeatures],
        observed: &[RegionCell],
        mapping: Option<&RegionMapping>,
        unit: TimeUnit,
    ) -> Self {
        let mut per_year: BTreeMap<(&str, i32), usize> = BTreeMap::new();
        let mut per_period: BTreeMap<(&str, &crate::cell::RegionCode, crate::cell::TimeCell), usize> = BTreeMap::new();
        let mut county_users: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        for p in posts {
            *per_year.entry((&p.user_id, p.timestamp.year())).or_default() += 1;
            county_users.entry(p.region.code()).or_default().insert(&p.user_id);
        }
        let mut words = BTreeSet::new();
        let mut tokens = 0;
        for f in features {
            per_period.insert((&f.user_id, &f.region, f.cell), f.n_posts);
            tokens += f.total_tokens;
            words.extend(f.counts.keys());
        }
        let users: BTreeSet<&str> = posts.iter().map(|p| p.user_id.as_str()).collect();
        let counts = |it: Vec<usize>| MeanSd::of(&it.into_iter().map(|c| c as f64).collect::<Vec<_>>());
        let corpus = CorpusSummary {
            tokens,
            posts: posts.len(),
            unique_words: words.len(),
            users: users.len(),
            counties: county_users.len(),
            posts_per_user_year: counts(per_year.into_values().collect()),
            posts_per_user_period: counts(per_period.into_values().collect()),
            users_per_county: counts(county_users.values().map(BTreeSet::len).collect()),
        };

        let county_cells: Vec<&RegionCell> =
            observed.iter().filter(|c| c.region.level() == RegionLevel::County).collect();
        let state_of = |fips: &str| -> String {
            mapping.and_then(|m| m.county(fips)).map_or_else(|| fips[..2].to_string(), |i| i.state.clone())
        };
        let thresholds = UT_PRESETS
            .iter()
            .rev()
            .map(|&ut| Some(ut))
            .chain([None])
            .map(|ut| {
                let sel: Vec<&&RegionCell> = county_cells.iter().filter(|c| ut.is_none_or(|u| c.n_users >= u)).collect();
                let counties: BTreeSet<&str> = sel.iter().map(|c| c.region.code()).collect();
                let states: BTreeSet<String> = counties.iter().map(|f| state_of(f)).collect();
                let col = |f: fn(&RegionCell) -> f64| MeanSd::of(&sel.iter().map(|c| f(c)).collect::<Vec<_>>());
                ThresholdSummary {
                    ut,
                    county_periods: sel.len(),
                    counties: counties.len(),
                    states: states.len(),
                    users_per_county_period: col(|c| c.n_users as f64),
                    dep: col(|c| c.dep),
                    anx: col(|c| c.anx),
                }
            })
            .collect();
        Descriptives { unit: Some(unit), corpus, thresholds }
    }

    /// Plain-text report: corpus summary, then county-period statistics for
    /// each user threshold and the unthresholded data.
    pub fn render(&self) -> String {
        let unit = self.unit.map_or("period".to_string(), |u| u.to_string());
        let c = &self.corpus;
        let ms = |m: MeanSd| m.show(2);
        let mut s = String::new();
        let _ = writeln!(s, "Corpus summary");
        let _ = writeln!(s, "{:<32}{:>16}", "statistic", "value");
        for (k, v) in [
            ("tokens", c.tokens.to_string()),
            ("posts", c.posts.to_string()),
            ("unique words", c.unique_words.to_string()),
            ("users", c.users.to_string()),
            ("counties", c.counties.to_string()),
            ("posts per user-year mean (SD)", ms(c.posts_per_user_year)),
            (&format!("posts per user-{unit} mean (SD)"), ms(c.posts_per_user_period)),
            ("users per county mean (SD)", ms(c.users_per_county)),
        ] {
            let _ = writeln!(s, "{k:<32}{v:>16}");
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "County-{unit} summary");
        let label = |t: &ThresholdSummary| t.ut.map_or("Full".to_string(), |u| format!("UT {u}"));
        let _ = write!(s, "{:<32}", "statistic");
        for t in &self.thresholds {
            let _ = write!(s, "{:>16}", label(t));
        }
        let _ = writeln!(s);
        let rows: [(String, fn(&ThresholdSummary) -> String); 6] = [
            (format!("county-{unit}s"), |t| t.county_periods.to_string()),
            ("distinct counties".into(), |t| t.counties.to_string()),
            ("distinct states".into(), |t| t.states.to_string()),
            (format!("users per county-{unit} mean (SD)"), |t| t.users_per_county_period.show(2)),
            ("depression mean (SD)".into(), |t| t.dep.show(3)),
            ("anxiety mean (SD)".into(), |t| t.anx.show(3)),
        ];
        for (name, f) in rows {
            let _ = write!(s, "{name:<32}");
            for t in &self.thresholds {
                let _ = write!(s, "{:>16}", f(t));
            }
            let _ = writeln!(s);
        }
        s
    }
}
