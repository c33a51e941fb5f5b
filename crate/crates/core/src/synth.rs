//! Seeded synthetic data with planted ground truth: message corpora whose
//! lexicon scores are known exactly, per-user score panels for reliability
//! work, regression panels, and weekly series with event shocks.
//!
//! Generation is single-threaded and draws from one seeded stream, so a
//! fixed seed reproduces every byte.

use std::collections::{BTreeMap, HashSet};

use chrono::{Days, Duration, NaiveDate, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::analysis::{EventCalendar, PanelObservation};
use crate::cell::{RegionCode, TimeCell, TimeUnit};
use crate::error::{Error, Result};
use crate::ingest::Post;
use crate::mapping::{CountyInfo, RegionMapping};
use crate::scoring::{anscombe, Lexicon, Outcome, UserScore};
use crate::seed::rng;

/// (state FIPS, postal code, census region).
const STATES: [(&str, &str, &str); 12] = [
    ("01", "AL", "South"),
    ("04", "AZ", "West"),
    ("06", "CA", "West"),
    ("08", "CO", "West"),
    ("12", "FL", "South"),
    ("13", "GA", "South"),
    ("17", "IL", "Midwest"),
    ("26", "MI", "Midwest"),
    ("36", "NY", "Northeast"),
    ("39", "OH", "Midwest"),
    ("42", "PA", "Northeast"),
    ("48", "TX", "South"),
];

pub const DEP_TERM: &str = "dsig";
pub const ANX_TERM: &str = "asig";

/// Signal-term relative frequency mapped to the top of the score range.
const MAX_SIGNAL_FREQ: f64 = 0.4;
const SCORE_LOW: f64 = 0.5;
const SCORE_HIGH: f64 = 4.5;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_counties: usize,
    /// Inclusive range of users per county.
    pub users_per_county: (usize, usize),
    pub weeks: usize,
    pub start_year: i32,
    pub start_week: u32,
    /// Number of distinct out-of-lexicon filler tokens.
    pub vocab_size: usize,
    pub tokens_per_user_week: usize,
    /// Inclusive range of posts per user-week.
    pub posts_per_user_week: (usize, usize),
    /// Inclusive range of latent scores.
    pub latent_range: (f64, f64),
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_counties: 20,
            users_per_county: (60, 60),
            weeks: 10,
            start_year: 2020,
            start_week: 1,
            vocab_size: 500,
            tokens_per_user_week: 120,
            posts_per_user_week: (3, 6),
            latent_range: (1.0, 4.0),
            noise_sigma: 0.0,
            seed: 0,
        }
    }
}

/// The lexicon every synthetic corpus is scored with: one signal term per
/// outcome, zero-weighted for the other outcome. A signal frequency in
/// `[0, 0.4]` maps linearly in Anscombe space onto scores `[0.5, 4.5]`.
pub fn signal_lexicon() -> Lexicon {
    let w = (SCORE_HIGH - SCORE_LOW) / (anscombe_ok(MAX_SIGNAL_FREQ) - anscombe_ok(0.0));
    let b = SCORE_LOW - w * anscombe_ok(0.0);
    let weights = BTreeMap::from([
        (Outcome::Dep, BTreeMap::from([(DEP_TERM.to_string(), w), (ANX_TERM.to_string(), 0.0)])),
        (Outcome::Anx, BTreeMap::from([(DEP_TERM.to_string(), 0.0), (ANX_TERM.to_string(), w)])),
    ]);
    Lexicon::new("synthetic-signal", weights, BTreeMap::from([(Outcome::Dep, b), (Outcome::Anx, b)]))
        .expect("static lexicon is valid")
}

fn anscombe_ok(x: f64) -> f64 {
    anscombe(x).expect("nonnegative")
}

/// Inverse of the signal mapping, quantized to whole tokens.
struct Emitter {
    weight: f64,
    intercept: f64,
    tokens: usize,
    max_count: usize,
}

impl Emitter {
    fn new(tokens: usize) -> Self {
        let lex = signal_lexicon();
        Emitter {
            weight: lex.weight(DEP_TERM, Outcome::Dep).expect("signal term"),
            intercept: lex.intercept(Outcome::Dep).expect("intercept"),
            tokens,
            max_count: (MAX_SIGNAL_FREQ * tokens as f64).floor() as usize,
        }
    }

    /// Score of a user-week with `count` signal tokens, computed the way the
    /// scorer does.
    fn score(&self, count: usize) -> f64 {
        let freq = count as f64 / self.tokens as f64;
        self.intercept + anscombe_ok(freq) * self.weight
    }

    fn count_for(&self, target: f64) -> usize {
        let root = (target - self.intercept) / self.weight / 2.0;
        let freq = root * root - 0.375;
        ((freq * self.tokens as f64).round().max(1.0) as usize).min(self.max_count)
    }

    fn range(&self) -> (f64, f64) {
        (self.score(1), self.score(self.max_count))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TruthRow {
    pub user_id: String,
    pub region: RegionCode,
    pub cell: TimeCell,
    pub dep: f64,
    pub anx: f64,
}

#[derive(Clone, Debug)]
pub struct SynthCorpus {
    pub posts: Vec<Post>,
    pub truth: Vec<TruthRow>,
    pub lexicon: Lexicon,
    pub mapping: RegionMapping,
}

fn check_range(name: &str, (lo, hi): (usize, usize), min: usize) -> Result<()> {
    if lo < min || lo > hi {
        return Err(Error::Config(format!("{name} range {lo}..={hi} invalid (minimum {min})")));
    }
    Ok(())
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_counties == 0 || self.weeks == 0 || self.vocab_size == 0 {
            return Err(Error::Config("n_counties, weeks and vocab_size must be positive".into()));
        }
        check_range("users_per_county", self.users_per_county, 1)?;
        check_range("posts_per_user_week", self.posts_per_user_week, 1)?;
        if self.n_counties > STATES.len() * 499 {
            return Err(Error::Config(format!("at most {} synthetic counties", STATES.len() * 499)));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::Config(format!("noise_sigma must be >= 0, got {}", self.noise_sigma)));
        }
        // Two signal blocks plus at least one filler per post.
        let max_signal = 2 * (MAX_SIGNAL_FREQ * self.tokens_per_user_week as f64).floor() as usize;
        if self.tokens_per_user_week < max_signal + self.posts_per_user_week.1 || self.tokens_per_user_week < 10 {
            return Err(Error::Config(format!(
                "tokens_per_user_week {} too small for {} posts",
                self.tokens_per_user_week, self.posts_per_user_week.1
            )));
        }
        let (lo, hi) = self.latent_range;
        let (min, max) = Emitter::new(self.tokens_per_user_week).range();
        if !(lo <= hi && lo >= min && hi <= max) {
            return Err(Error::Config(format!(
                "latent range [{lo}, {hi}] outside the achievable [{min:.4}, {max:.4}]"
            )));
        }
        TimeCell::week(self.start_year, self.start_week)?;
        Ok(())
    }

    fn weeks(&self) -> Result<Vec<TimeCell>> {
        let first = TimeCell::week(self.start_year, self.start_week)?.ordinal();
        (0..self.weeks as i64).map(|i| TimeCell::from_ordinal(TimeUnit::Week, first + i)).collect()
    }
}

/// County FIPS codes and their mapping, spread across a fixed state table.
pub fn synthetic_counties(n: usize) -> Result<(Vec<String>, RegionMapping)> {
    let mut mapping = RegionMapping::new();
    let mut fips = Vec::with_capacity(n);
    for i in 0..n {
        let (st, postal, region) = STATES[i % STATES.len()];
        let code = format!("{st}{:03}", 2 * (i / STATES.len()) + 1);
        mapping.insert(
            &code,
            CountyInfo { state: postal.to_string(), census_region: region.to_string(), msa: None },
        )?;
        fips.push(code);
    }
    Ok((fips, mapping))
}

fn split_sizes(total: usize, parts: usize) -> Vec<usize> {
    (0..parts).map(|i| total / parts + usize::from(i < total % parts)).collect()
}

/// Posts whose pipeline scores reproduce planted per-user-week truth.
///
/// Each user-week gets a latent depression and anxiety score drawn uniformly
/// from `latent_range`. The emitted token mix targets the latent score plus
/// Gaussian noise; the truth file records the score of the noise-free
/// emission, so at zero noise the pipeline reproduces truth to rounding.
pub fn generate_corpus(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let mut rng = rng(cfg.seed);
    let emitter = Emitter::new(cfg.tokens_per_user_week);
    let (lo, hi) = emitter.range();
    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let (fips, mapping) = synthetic_counties(cfg.n_counties)?;
    let weeks = cfg.weeks()?;
    let filler: Vec<String> = (0..cfg.vocab_size).map(|i| format!("f{i:04}")).collect();

    let mut posts = Vec::new();
    let mut truth = Vec::new();
    for county in &fips {
        let region = RegionCode::county(county.clone())?;
        let n_users = rng.random_range(cfg.users_per_county.0..=cfg.users_per_county.1);
        for u in 0..n_users {
            let user_id = format!("{county}-{u:04}");
            let mut texts = HashSet::new();
            for &cell in &weeks {
                let mut counts = [0usize; 2];
                let mut truth_scores = [0.0; 2];
                for k in 0..2 {
                    let latent = rng.random_range(cfg.latent_range.0..=cfg.latent_range.1);
                    let eps = if cfg.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                    truth_scores[k] = emitter.score(emitter.count_for(latent));
                    counts[k] = emitter.count_for((latent + eps).clamp(lo, hi));
                }
                truth.push(TruthRow {
                    user_id: user_id.clone(),
                    region: region.clone(),
                    cell,
                    dep: truth_scores[0],
                    anx: truth_scores[1],
                });
                let n_posts = rng.random_range(cfg.posts_per_user_week.0..=cfg.posts_per_user_week.1);
                let bodies = emit_posts(&mut rng, &filler, counts, cfg.tokens_per_user_week, n_posts, &mut texts);
                let monday = cell.first_day();
                for (k, text) in bodies.into_iter().enumerate() {
                    let secs = rng.random_range(0..7 * 86_400);
                    let ts = Utc.from_utc_datetime(&monday.and_hms_opt(0, 0, 0).expect("midnight"))
                        + Duration::seconds(secs);
                    posts.push(Post {
                        message_id: format!("{user_id}-{cell}-{k}"),
                        user_id: user_id.clone(),
                        timestamp: ts,
                        text,
                        region: region.clone(),
                        lang: Some("en".into()),
                        is_repost: Some(false),
                    });
                }
            }
        }
    }
    Ok(SynthCorpus { posts, truth, lexicon: signal_lexicon(), mapping })
}

/// Shuffle signal and filler tokens into `n_posts` bodies, each holding at
/// least one filler and none repeating an earlier body of the same user.
fn emit_posts(
    rng: &mut ChaCha8Rng,
    filler: &[String],
    counts: [usize; 2],
    total: usize,
    n_posts: usize,
    seen: &mut HashSet<String>,
) -> Vec<String> {
    let n_filler = total - counts[0] - counts[1];
    loop {
        let fillers: Vec<&str> = (0..n_filler).map(|_| filler[rng.random_range(0..filler.len())].as_str()).collect();
        let mut rest: Vec<&str> = std::iter::repeat_n(DEP_TERM, counts[0])
            .chain(std::iter::repeat_n(ANX_TERM, counts[1]))
            .chain(fillers[n_posts..].iter().copied())
            .collect();
        rest.shuffle(rng);
        let mut rest = rest.into_iter();
        let bodies: Vec<String> = split_sizes(total - n_posts, n_posts)
            .into_iter()
            .zip(&fillers[..n_posts])
            .map(|(size, first)| {
                let mut words = vec![*first];
                words.extend(rest.by_ref().take(size));
                words.shuffle(rng);
                words.join(" ")
            })
            .collect();
        let unique: HashSet<&String> = bodies.iter().collect();
        if unique.len() == bodies.len() && bodies.iter().all(|b| !seen.contains(b)) {
            seen.extend(bodies.iter().cloned());
            return bodies;
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreSynthConfig {
    pub n_counties: usize,
    pub weeks: usize,
    /// Users per county-week, drawn log-uniformly from this inclusive range.
    pub users_per_cell: (usize, usize),
    /// County true means are drawn uniformly from this range.
    pub mean_range: (f64, f64),
    pub user_sigma: f64,
    pub seed: u64,
}

impl Default for ScoreSynthConfig {
    fn default() -> Self {
        ScoreSynthConfig {
            n_counties: 100,
            weeks: 8,
            users_per_cell: (10, 400),
            mean_range: (1.0, 4.0),
            user_sigma: 0.5,
            seed: 0,
        }
    }
}

/// County-week user scores around a per-county true mean with Gaussian
/// per-user noise. Both outcomes carry the same value.
pub fn generate_user_scores(cfg: &ScoreSynthConfig) -> Result<Vec<UserScore>> {
    if cfg.n_counties == 0 || cfg.weeks == 0 {
        return Err(Error::Config("n_counties and weeks must be positive".into()));
    }
    check_range("users_per_cell", cfg.users_per_cell, 1)?;
    if !(cfg.user_sigma.is_finite() && cfg.user_sigma >= 0.0) || cfg.mean_range.0 > cfg.mean_range.1 {
        return Err(Error::Config("invalid noise or mean range".into()));
    }
    let mut rng = rng(cfg.seed);
    let noise = Normal::new(0.0, cfg.user_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let (fips, _) = synthetic_counties(cfg.n_counties)?;
    let first = TimeCell::week(2020, 1)?.ordinal();
    let (ln_lo, ln_hi) = ((cfg.users_per_cell.0 as f64).ln(), (cfg.users_per_cell.1 as f64 + 1.0).ln());
    let mut out = Vec::new();
    for county in &fips {
        let region = RegionCode::county(county.clone())?;
        let mu = rng.random_range(cfg.mean_range.0..=cfg.mean_range.1);
        for w in 0..cfg.weeks as i64 {
            let cell = TimeCell::from_ordinal(TimeUnit::Week, first + w)?;
            let n = (rng.random_range(ln_lo..ln_hi).exp().floor() as usize).clamp(cfg.users_per_cell.0, cfg.users_per_cell.1);
            for u in 0..n {
                let v = if cfg.user_sigma > 0.0 { mu + noise.sample(&mut rng) } else { mu };
                out.push(UserScore {
                    user_id: format!("{county}-{u:04}"),
                    region: region.clone(),
                    cell,
                    dep: v,
                    anx: v,
                    weight: 1.0,
                });
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PanelConfig {
    pub n_entities: usize,
    pub n_periods: usize,
    pub beta: f64,
    pub entity_effect_scale: f64,
    /// Entity effects proportional to the entity's mean x rather than independent.
    pub confound: bool,
    pub noise: f64,
    pub seed: u64,
}

/// `y = beta * x + alpha_entity + eps` with `x = mu_entity + N(0, 1)`.
/// Confounded effects are `scale * mu_entity`, which pushes the pooled
/// slope towards `beta + scale / 2`.
pub fn generate_panel(cfg: &PanelConfig) -> Result<Vec<PanelObservation>> {
    if cfg.n_entities < 2 || cfg.n_periods < 2 {
        return Err(Error::Config("panel needs at least 2 entities and 2 periods".into()));
    }
    if cfg.n_entities > 89_999 {
        return Err(Error::Config("too many entities for county codes".into()));
    }
    if !(cfg.noise.is_finite() && cfg.noise >= 0.0) {
        return Err(Error::Config(format!("noise must be >= 0, got {}", cfg.noise)));
    }
    let mut rng = rng(cfg.seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let first = TimeCell::week(2020, 1)?.ordinal();
    let mut out = Vec::with_capacity(cfg.n_entities * cfg.n_periods);
    for e in 0..cfg.n_entities {
        let region = RegionCode::county(format!("{:05}", 10_001 + e))?;
        let mu: f64 = std_normal.sample(&mut rng);
        let alpha = cfg.entity_effect_scale * if cfg.confound { mu } else { std_normal.sample(&mut rng) };
        for t in 0..cfg.n_periods as i64 {
            let x = mu + std_normal.sample(&mut rng);
            let eps = cfg.noise * std_normal.sample(&mut rng);
            out.push(PanelObservation {
                region: region.clone(),
                cell: TimeCell::from_ordinal(TimeUnit::Week, first + t)?,
                x,
                y: cfg.beta * x + alpha + eps,
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EventSeriesConfig {
    /// ISO year of the 52 generated weeks.
    pub year: i32,
    pub base_level: f64,
    /// Standard deviation of the week-over-week fractional change.
    pub sigma: f64,
    /// ISO weeks receiving a shock; weeks 2..=52 carry a change value.
    pub event_weeks: Vec<u32>,
    /// Shock size in units of `sigma`; zero plants no effect.
    pub shock_sd: f64,
    pub seed: u64,
}

/// Weekly national series whose fractional changes are `N(0, sigma)` plus
/// `shock_sd * sigma` in event weeks, and a calendar placing each event on
/// the Wednesday of its week.
pub fn generate_event_series(cfg: &EventSeriesConfig) -> Result<(Vec<(TimeCell, f64)>, EventCalendar)> {
    let n_weeks = crate::cell::iso_weeks_in_year(cfg.year);
    if let Some(w) = cfg.event_weeks.iter().find(|w| !(2..=n_weeks).contains(*w)) {
        return Err(Error::Config(format!("event week {w} outside 2..={n_weeks}")));
    }
    if !(cfg.sigma > 0.0 && cfg.sigma < 0.2 && cfg.base_level > 0.0) {
        return Err(Error::Config("need base_level > 0 and 0 < sigma < 0.2".into()));
    }
    let mut rng = rng(cfg.seed);
    let noise = Normal::new(0.0, cfg.sigma).expect("positive sigma");
    let mut level = cfg.base_level;
    let mut series = Vec::with_capacity(n_weeks as usize);
    for w in 1..=n_weeks {
        if w > 1 {
            let shock = if cfg.event_weeks.contains(&w) { cfg.shock_sd * cfg.sigma } else { 0.0 };
            level *= 1.0 + noise.sample(&mut rng) + shock;
        }
        series.push((TimeCell::week(cfg.year, w)?, level));
    }
    let events = cfg
        .event_weeks
        .iter()
        .map(|&w| {
            let wed = TimeCell::week(cfg.year, w)?.first_day() + Days::new(2);
            Ok((wed, format!("event-w{w:02}")))
        })
        .collect::<Result<Vec<(NaiveDate, String)>>>()?;
    Ok((series, EventCalendar::new(cfg.year, events)?))
}
