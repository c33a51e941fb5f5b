//! Lexicon scoring of user-cell token counts.
//!
//! A user-cell score is `intercept + sum_w anscombe(count_w / total) * weight_w`,
//! clipped to `[0, 5]`. Post-stratification weights travel alongside the score
//! and are applied as a normalized weighted mean during aggregation, unless
//! [`WeightingMode::Multiply`] is selected.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::cell::{RegionCode, TimeCell};
use crate::error::{Error, Result};
use crate::ingest::{CellKey, GroupedPosts};
use crate::tokenize::tokenize;

pub const SCORE_MIN: f64 = 0.0;
pub const SCORE_MAX: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Outcome {
    Dep,
    Anx,
}

impl Outcome {
    pub const ALL: [Outcome; 2] = [Outcome::Dep, Outcome::Anx];

    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Dep => "DEP",
            Outcome::Anx => "ANX",
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Outcome {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "DEP" | "DEP_SCORE" | "DEPRESSION" => Ok(Outcome::Dep),
            "ANX" | "ANX_SCORE" | "ANXIETY" => Ok(Outcome::Anx),
            other => Err(Error::Validation(format!("unknown outcome '{other}'"))),
        }
    }
}

/// `2 * sqrt(x + 3/8)`.
pub fn anscombe(x: f64) -> Result<f64> {
    if x.is_nan() || x < 0.0 {
        return Err(Error::Domain(format!("anscombe transform needs x >= 0, got {x}")));
    }
    Ok(2.0 * (x + 0.375).sqrt())
}

fn anscombe_unchecked(x: f64) -> f64 {
    2.0 * (x + 0.375).sqrt()
}

pub fn clip_score(x: f64) -> f64 {
    x.clamp(SCORE_MIN, SCORE_MAX)
}

/// Per-outcome term weights and intercepts.
#[derive(Clone, Debug, PartialEq)]
pub struct Lexicon {
    pub name: String,
    weights: BTreeMap<Outcome, BTreeMap<String, f64>>,
    intercepts: BTreeMap<Outcome, f64>,
}

impl Lexicon {
    /// Build and validate: at least one term, lowercase terms, and the same
    /// vocabulary for every declared outcome. Missing intercepts are zero.
    pub fn new(
        name: impl Into<String>,
        weights: BTreeMap<Outcome, BTreeMap<String, f64>>,
        intercepts: BTreeMap<Outcome, f64>,
    ) -> Result<Self> {
        let mut outcomes = weights.keys();
        let first = outcomes.next().ok_or_else(|| Error::Validation("lexicon has no terms".into()))?;
        let vocab = &weights[first];
        if vocab.is_empty() {
            return Err(Error::Validation("lexicon has no terms".into()));
        }
        for (outcome, terms) in &weights {
            if terms.len() != vocab.len() || terms.keys().zip(vocab.keys()).any(|(a, b)| a != b) {
                return Err(Error::Validation(format!(
                    "outcome {outcome} does not weight the same terms as {first}"
                )));
            }
            for (t, w) in terms {
                if t.is_empty() || *t != t.to_lowercase() {
                    return Err(Error::Validation(format!("lexicon term '{t}' is not lowercase")));
                }
                if !w.is_finite() {
                    return Err(Error::Validation(format!("non-finite weight for '{t}'")));
                }
            }
        }
        for (o, i) in &intercepts {
            if !weights.contains_key(o) {
                return Err(Error::Validation(format!("intercept for undeclared outcome {o}")));
            }
            if !i.is_finite() {
                return Err(Error::Validation(format!("non-finite intercept for {o}")));
            }
        }
        let mut intercepts = intercepts;
        for o in weights.keys() {
            intercepts.entry(*o).or_insert(0.0);
        }
        Ok(Lexicon { name: name.into(), weights, intercepts })
    }

    pub fn outcomes(&self) -> impl Iterator<Item = Outcome> + '_ {
        self.weights.keys().copied()
    }

    pub fn has_outcome(&self, outcome: Outcome) -> bool {
        self.weights.contains_key(&outcome)
    }

    pub fn terms(&self) -> impl Iterator<Item = &String> {
        self.weights.values().next().into_iter().flat_map(|m| m.keys())
    }

    pub fn len(&self) -> usize {
        self.weights.values().next().map_or(0, BTreeMap::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, term: &str) -> bool {
        self.weights.values().next().is_some_and(|m| m.contains_key(term))
    }

    pub fn weight(&self, term: &str, outcome: Outcome) -> Option<f64> {
        self.weights.get(&outcome)?.get(term).copied()
    }

    pub fn intercept(&self, outcome: Outcome) -> Option<f64> {
        self.intercepts.get(&outcome).copied()
    }

    fn outcome_weights(&self, outcome: Outcome) -> Result<&BTreeMap<String, f64>> {
        self.weights
            .get(&outcome)
            .ok_or_else(|| Error::Validation(format!("lexicon '{}' has no {outcome} weights", self.name)))
    }

    /// Same lexicon restricted to `keep`; returns an error if nothing survives.
    pub fn restricted_to<'a>(&self, keep: impl IntoIterator<Item = &'a str>) -> Result<Lexicon> {
        let keep: std::collections::BTreeSet<&str> = keep.into_iter().collect();
        let weights = self
            .weights
            .iter()
            .map(|(o, m)| (*o, m.iter().filter(|(t, _)| keep.contains(t.as_str())).map(|(t, w)| (t.clone(), *w)).collect()))
            .collect();
        Lexicon::new(self.name.clone(), weights, self.intercepts.clone())
    }
}

/// How zero-count lexicon terms enter the sum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LexiconMode {
    /// Terms the user never used contribute nothing.
    #[default]
    Sparse,
    /// Every lexicon term contributes, zero counts as `anscombe(0) * weight`.
    Dense,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UserCellFeatures {
    pub user_id: String,
    pub region: RegionCode,
    pub cell: TimeCell,
    pub counts: BTreeMap<String, u64>,
    /// All tokens emitted, including out-of-lexicon ones.
    pub total_tokens: u64,
    pub n_posts: usize,
}

impl UserCellFeatures {
    pub fn from_texts<'a>(key: &CellKey, texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut counts = BTreeMap::new();
        let mut total = 0u64;
        let mut n_posts = 0;
        for text in texts {
            n_posts += 1;
            for tok in tokenize(text) {
                total += 1;
                *counts.entry(tok).or_insert(0) += 1;
            }
        }
        UserCellFeatures {
            user_id: key.user_id.clone(),
            region: key.region.clone(),
            cell: key.cell,
            counts,
            total_tokens: total,
            n_posts,
        }
    }

    pub fn relative_frequency(&self, term: &str) -> f64 {
        self.counts.get(term).map_or(0.0, |&c| c as f64 / self.total_tokens as f64)
    }
}

/// Token counts for every group, tokenized in parallel; output keeps key order.
pub fn extract_features(grouped: &GroupedPosts) -> Vec<UserCellFeatures> {
    let groups: Vec<_> = grouped.iter().collect();
    groups
        .par_iter()
        .map(|(key, posts)| UserCellFeatures::from_texts(key, posts.iter().map(|p| p.text.as_str())))
        .collect()
}

/// Unclipped linear score `intercept + sum anscombe(freq) * weight`.
pub fn linear_score(f: &UserCellFeatures, lex: &Lexicon, outcome: Outcome, mode: LexiconMode) -> Result<f64> {
    if f.total_tokens == 0 {
        return Err(Error::NoContent(format!("user {} has no tokens in {}", f.user_id, f.cell)));
    }
    let weights = lex.outcome_weights(outcome)?;
    let total = f.total_tokens as f64;
    let mut sum = 0.0;
    match mode {
        LexiconMode::Sparse => {
            for (term, &count) in &f.counts {
                if let Some(w) = weights.get(term) {
                    sum += anscombe_unchecked(count as f64 / total) * w;
                }
            }
        }
        LexiconMode::Dense => {
            for (term, w) in weights {
                let c = f.counts.get(term).copied().unwrap_or(0);
                sum += anscombe_unchecked(c as f64 / total) * w;
            }
        }
    }
    Ok(lex.intercepts[&outcome] + sum)
}

pub fn score_user_cell(f: &UserCellFeatures, lex: &Lexicon, outcome: Outcome, mode: LexiconMode) -> Result<f64> {
    linear_score(f, lex, outcome, mode).map(clip_score)
}

/// Unclipped depression and anxiety scores for one user-cell, before weighting.
#[derive(Clone, Debug, PartialEq)]
pub struct RawScore {
    pub user_id: String,
    pub region: RegionCode,
    pub cell: TimeCell,
    pub dep: f64,
    pub anx: f64,
}

pub fn raw_score(f: &UserCellFeatures, lex: &Lexicon, mode: LexiconMode) -> Result<RawScore> {
    Ok(RawScore {
        user_id: f.user_id.clone(),
        region: f.region.clone(),
        cell: f.cell,
        dep: linear_score(f, lex, Outcome::Dep, mode)?,
        anx: linear_score(f, lex, Outcome::Anx, mode)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UserScore {
    pub user_id: String,
    pub region: RegionCode,
    pub cell: TimeCell,
    pub dep: f64,
    pub anx: f64,
    pub weight: f64,
}

impl UserScore {
    pub fn value(&self, outcome: Outcome) -> f64 {
        match outcome {
            Outcome::Dep => self.dep,
            Outcome::Anx => self.anx,
        }
    }
}

/// Post-stratification weights keyed by (user, time cell).
#[derive(Clone, Debug)]
pub struct WeightTable {
    weights: BTreeMap<(String, TimeCell), f64>,
    default_weight: f64,
}

impl WeightTable {
    pub fn new(default_weight: f64) -> Result<Self> {
        check_weight(default_weight, "default")?;
        Ok(WeightTable { weights: BTreeMap::new(), default_weight })
    }

    pub fn insert(&mut self, user_id: impl Into<String>, cell: TimeCell, weight: f64) -> Result<()> {
        let user_id = user_id.into();
        check_weight(weight, &format!("{user_id} {cell}"))?;
        self.weights.insert((user_id, cell), weight);
        Ok(())
    }

    pub fn get(&self, user_id: &str, cell: TimeCell) -> f64 {
        // BTreeMap<(String, _)> cannot be probed with &str without allocating.
        self.weights.get(&(user_id.to_string(), cell)).copied().unwrap_or(self.default_weight)
    }

    pub fn default_weight(&self) -> f64 {
        self.default_weight
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

impl Default for WeightTable {
    fn default() -> Self {
        WeightTable { weights: BTreeMap::new(), default_weight: 1.0 }
    }
}

fn check_weight(w: f64, what: &str) -> Result<()> {
    if w.is_finite() && w > 0.0 {
        Ok(())
    } else {
        Err(Error::Validation(format!("weight for {what} must be finite and > 0, got {w}")))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum WeightingMode {
    /// Carry the weight with the clipped score for a weighted mean later.
    #[default]
    Normalized,
    /// Multiply the linear score by the weight, then clip; the carried
    /// weight becomes 1 so aggregation does not weight twice.
    Multiply,
}

pub fn attach_weight(s: RawScore, table: &WeightTable, mode: WeightingMode) -> UserScore {
    let w = table.get(&s.user_id, s.cell);
    let (dep, anx, weight) = match mode {
        WeightingMode::Normalized => (clip_score(s.dep), clip_score(s.anx), w),
        WeightingMode::Multiply => (clip_score(s.dep * w), clip_score(s.anx * w), 1.0),
    };
    UserScore { user_id: s.user_id, region: s.region, cell: s.cell, dep, anx, weight }
}
