//! Lexicon domain adaptation: usage and frequency filters between a source
//! and a target corpus, a name-list drop, and PCA + ridge retraining.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scoring::{anscombe, Lexicon, Outcome, UserCellFeatures};

pub const USAGE_BOUND: f64 = 1.0;
pub const FREQUENCY_BOUND: f64 = 0.2;
pub const RIDGE_ALPHA: f64 = 0.001;
pub const PCA_COMPONENTS: usize = 500;

const FREQ_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TermStats {
    pub mean_freq: f64,
    pub std_freq: f64,
    pub usage: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusStats {
    pub n_users: usize,
    pub vocab: BTreeMap<String, TermStats>,
}

impl CorpusStats {
    /// Terms absent from the corpus have zero frequency, spread and usage.
    pub fn term(&self, term: &str) -> TermStats {
        self.vocab.get(term).copied().unwrap_or_default()
    }
}

/// Pool each user's token counts across cells into one relative-frequency
/// record per user, in user-id order.
pub fn user_frequencies(features: &[UserCellFeatures]) -> Vec<BTreeMap<String, f64>> {
    let mut per_user: BTreeMap<&str, (BTreeMap<&str, u64>, u64)> = BTreeMap::new();
    for f in features {
        let e = per_user.entry(&f.user_id).or_default();
        for (t, c) in &f.counts {
            *e.0.entry(t).or_insert(0) += c;
        }
        e.1 += f.total_tokens;
    }
    per_user
        .into_values()
        .filter(|(_, total)| *total > 0)
        .map(|(counts, total)| counts.into_iter().map(|(t, c)| (t.to_string(), c as f64 / total as f64)).collect())
        .collect()
}

/// Per-term mean relative frequency (zeros included for non-users),
/// population standard deviation, and fraction of users with a nonzero value.
pub fn corpus_stats(users: &[BTreeMap<String, f64>]) -> Result<CorpusStats> {
    if users.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut values: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (i, u) in users.iter().enumerate() {
        let mut sum = 0.0;
        for (t, &v) in u {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Validation(format!("user {i}: invalid relative frequency {v} for '{t}'")));
            }
            sum += v;
            if v > 0.0 {
                values.entry(t).or_default().push(v);
            }
        }
        if sum > 1.0 + FREQ_SUM_TOLERANCE {
            return Err(Error::Validation(format!("user {i}: relative frequencies sum to {sum}")));
        }
    }
    let n = users.len() as f64;
    let entries: Vec<(&str, Vec<f64>)> = values.into_iter().collect();
    let vocab = entries
        .par_iter()
        .map(|(t, vals)| {
            let zeros = n - vals.len() as f64;
            if zeros == 0.0 && vals.iter().all(|v| *v == vals[0]) {
                // Avoid rounding residue in the mean producing a spurious spread.
                return (t.to_string(), TermStats { mean_freq: vals[0], std_freq: 0.0, usage: 1.0 });
            }
            let mean = vals.iter().sum::<f64>() / n;
            let ss = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() + zeros * mean * mean;
            let stats = TermStats { mean_freq: mean, std_freq: (ss / n).sqrt(), usage: vals.len() as f64 / n };
            (t.to_string(), stats)
        })
        .collect();
    Ok(CorpusStats { n_users: users.len(), vocab })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum FilterReason {
    Kept,
    Usage,
    Frequency,
    Name,
}

impl FilterReason {
    pub fn as_str(self) -> &'static str {
        match self {
            FilterReason::Kept => "kept",
            FilterReason::Usage => "usage",
            FilterReason::Frequency => "frequency",
            FilterReason::Name => "name",
        }
    }
}

impl fmt::Display for FilterReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FilterReason {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kept" => Ok(FilterReason::Kept),
            "usage" => Ok(FilterReason::Usage),
            "frequency" => Ok(FilterReason::Frequency),
            "name" => Ok(FilterReason::Name),
            _ => Err(Error::Format(format!("unknown filter reason '{s}'"))),
        }
    }
}

/// One term's adaptation audit record.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterDecision {
    pub term: String,
    pub usage_source: f64,
    pub usage_target: f64,
    /// `log10(u_T / u_S)`; `None` when either usage is zero.
    pub log_usage_ratio: Option<f64>,
    pub freq_source: f64,
    pub freq_target: f64,
    pub std_source: f64,
    /// `(f_T - f_S) / sigma_S`; `None` when `sigma_S` is zero.
    pub freq_d: Option<f64>,
    pub kept: bool,
    pub reason: FilterReason,
}

impl FilterDecision {
    fn new(term: &str, source: &CorpusStats, target: &CorpusStats) -> Self {
        let s = source.term(term);
        let t = target.term(term);
        let log_usage_ratio = (s.usage > 0.0 && t.usage > 0.0).then(|| (t.usage / s.usage).log10());
        let freq_d = (s.std_freq > 0.0).then(|| (t.mean_freq - s.mean_freq) / s.std_freq);
        FilterDecision {
            term: term.to_string(),
            usage_source: s.usage,
            usage_target: t.usage,
            log_usage_ratio,
            freq_source: s.mean_freq,
            freq_target: t.mean_freq,
            std_source: s.std_freq,
            freq_d,
            kept: true,
            reason: FilterReason::Kept,
        }
    }

    fn exclude(mut self, reason: FilterReason) -> Self {
        self.kept = false;
        self.reason = reason;
        self
    }

    fn passes_usage(&self, bound: f64) -> bool {
        self.log_usage_ratio.is_some_and(|l| -bound < l && l < bound)
    }

    fn passes_frequency(&self, bound: f64) -> bool {
        match self.freq_d {
            Some(d) => (-bound..=bound).contains(&d),
            None => self.freq_target == self.freq_source,
        }
    }
}

/// Keep a term iff `-bound < log10(u_T / u_S) < bound`. Zero usage on
/// either side excludes.
pub fn usage_filter<'a>(
    source: &CorpusStats,
    target: &CorpusStats,
    terms: impl IntoIterator<Item = &'a str>,
    bound: f64,
) -> Vec<FilterDecision> {
    terms
        .into_iter()
        .map(|t| {
            let d = FilterDecision::new(t, source, target);
            if d.passes_usage(bound) { d } else { d.exclude(FilterReason::Usage) }
        })
        .collect()
}

/// Keep a term iff `-bound <= (f_T - f_S) / sigma_S <= bound`. With
/// `sigma_S = 0` the term survives only if the mean frequencies are equal.
pub fn frequency_filter<'a>(
    source: &CorpusStats,
    target: &CorpusStats,
    terms: impl IntoIterator<Item = &'a str>,
    bound: f64,
) -> Vec<FilterDecision> {
    terms
        .into_iter()
        .map(|t| {
            let d = FilterDecision::new(t, source, target);
            if d.passes_frequency(bound) { d } else { d.exclude(FilterReason::Frequency) }
        })
        .collect()
}

/// Names to remove from an adapted vocabulary, compared exactly and in
/// lowercase.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NameList(BTreeSet<String>);

impl NameList {
    pub fn new<S: AsRef<str>>(names: impl IntoIterator<Item = S>) -> Self {
        NameList(
            names.into_iter().map(|n| n.as_ref().trim().to_lowercase()).filter(|n| !n.is_empty()).collect(),
        )
    }

    /// One name per line; blank lines are ignored.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read name list {}: {e}", path.display())))?;
        Ok(NameList::new(text.lines()))
    }

    pub fn contains(&self, term: &str) -> bool {
        self.0.contains(term)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Terms exactly matching a name are excluded; the decision carries no
/// corpus metrics.
pub fn drop_names<'a>(terms: impl IntoIterator<Item = &'a str>, names: &NameList) -> Vec<FilterDecision> {
    let empty = CorpusStats { n_users: 0, vocab: BTreeMap::new() };
    terms
        .into_iter()
        .map(|t| {
            let d = FilterDecision::new(t, &empty, &empty);
            if names.contains(t) { d.exclude(FilterReason::Name) } else { d }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdaptParams {
    pub usage_bound: f64,
    pub frequency_bound: f64,
}

impl Default for AdaptParams {
    fn default() -> Self {
        AdaptParams { usage_bound: USAGE_BOUND, frequency_bound: FREQUENCY_BOUND }
    }
}

#[derive(Clone, Debug)]
pub struct Adapted {
    /// `None` when every term was filtered out.
    pub lexicon: Option<Lexicon>,
    /// One record per base-lexicon term, in term order. Excluded terms carry
    /// the first filter that removed them.
    pub decisions: Vec<FilterDecision>,
}

impl Adapted {
    pub fn survivors(&self) -> impl Iterator<Item = &str> {
        self.decisions.iter().filter(|d| d.kept).map(|d| d.term.as_str())
    }
}

/// Usage filter, then frequency filter, then name drop over the base
/// lexicon's vocabulary.
pub fn adapt_pipeline(
    source: &CorpusStats,
    target: &CorpusStats,
    base: &Lexicon,
    names: &NameList,
    params: AdaptParams,
) -> Result<Adapted> {
    let missing: Vec<&str> = base
        .terms()
        .map(String::as_str)
        .filter(|t| !source.vocab.contains_key(*t) && !target.vocab.contains_key(*t))
        .collect();
    if !missing.is_empty() {
        warn!("{} lexicon terms occur in neither corpus (e.g. '{}')", missing.len(), missing[0]);
    }
    let decisions: Vec<FilterDecision> = base
        .terms()
        .map(|t| {
            let d = FilterDecision::new(t, source, target);
            if !d.passes_usage(params.usage_bound) {
                d.exclude(FilterReason::Usage)
            } else if !d.passes_frequency(params.frequency_bound) {
                d.exclude(FilterReason::Frequency)
            } else if names.contains(t) {
                d.exclude(FilterReason::Name)
            } else {
                d
            }
        })
        .collect();
    let keep: Vec<&str> = decisions.iter().filter(|d| d.kept).map(|d| d.term.as_str()).collect();
    let lexicon = if keep.is_empty() {
        warn!("domain adaptation removed every lexicon term");
        None
    } else {
        let mut lex = base.restricted_to(keep)?;
        lex.name = format!("{}-adapted", base.name);
        Some(lex)
    };
    Ok(Adapted { lexicon, decisions })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RidgeFit {
    pub weights: Vec<f64>,
    pub intercept: f64,
    /// Components actually used after rank reduction.
    pub k_used: usize,
}

/// Center the columns of `x` (no scaling), keep the top `k` principal
/// components, solve ridge regression in component space and map the
/// coefficients back to per-column weights.
pub fn pca_ridge(x: &DMatrix<f64>, y: &[f64], alpha: f64, k: usize) -> Result<RidgeFit> {
    let (n, m) = x.shape();
    if n != y.len() {
        return Err(Error::InvalidParameter(format!("{n} feature rows but {} targets", y.len())));
    }
    if n == 0 || m == 0 {
        return Err(Error::InvalidParameter("empty feature matrix".into()));
    }
    if k == 0 {
        return Err(Error::InvalidParameter("k_components must be at least 1".into()));
    }
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Error::InvalidParameter(format!("ridge alpha must be finite and >= 0, got {alpha}")));
    }
    if y.iter().any(|v| !v.is_finite()) || x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite features or targets".into()));
    }
    let col_means: Vec<f64> = (0..m).map(|j| x.column(j).mean()).collect();
    let mut xc = x.clone();
    for (j, mu) in col_means.iter().enumerate() {
        xc.column_mut(j).add_scalar_mut(-mu);
    }
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));

    let svd = xc.svd(true, true);
    let u = svd.u.as_ref().expect("left singular vectors requested");
    let v_t = svd.v_t.as_ref().expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let s_max = order.first().map_or(0.0, |&i| svd.singular_values[i]);
    let tol = s_max * n.max(m) as f64 * f64::EPSILON;
    let rank = order.iter().filter(|&&i| svd.singular_values[i] > tol).count();
    let k_used = if k > rank {
        warn!("k_components {k} exceeds feature rank {rank}; using {rank}");
        rank
    } else {
        k
    };

    let mut w = DVector::zeros(m);
    for &i in &order[..k_used] {
        let s = svd.singular_values[i];
        let gamma = s * u.column(i).dot(&yc) / (s * s + alpha);
        w += v_t.row(i).transpose() * gamma;
    }
    let intercept = y_mean - w.iter().zip(&col_means).map(|(a, b)| a * b).sum::<f64>();
    Ok(RidgeFit { weights: w.iter().copied().collect(), intercept, k_used })
}

/// User-by-term matrix of Anscombe-transformed relative frequencies.
pub fn feature_matrix(users: &[BTreeMap<String, f64>], terms: &[String]) -> Result<DMatrix<f64>> {
    let mut x = DMatrix::zeros(users.len(), terms.len());
    for (i, u) in users.iter().enumerate() {
        for (j, t) in terms.iter().enumerate() {
            x[(i, j)] = anscombe(u.get(t).copied().unwrap_or(0.0))?;
        }
    }
    Ok(x)
}

/// Refit per-term weights for every outcome in `targets` against a shared
/// user-by-term feature matrix.
pub fn retrain_lexicon(
    name: &str,
    terms: &[String],
    features: &DMatrix<f64>,
    targets: &BTreeMap<Outcome, Vec<f64>>,
    alpha: f64,
    k: usize,
) -> Result<Lexicon> {
    if features.ncols() != terms.len() {
        return Err(Error::InvalidParameter(format!(
            "{} terms but {} feature columns",
            terms.len(),
            features.ncols()
        )));
    }
    let mut weights = BTreeMap::new();
    let mut intercepts = BTreeMap::new();
    for (&outcome, y) in targets {
        let fit = pca_ridge(features, y, alpha, k)?;
        weights.insert(outcome, terms.iter().cloned().zip(fit.weights).collect());
        intercepts.insert(outcome, fit.intercept);
    }
    Lexicon::new(name, weights, intercepts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn users(rows: &[&[(&str, f64)]]) -> Vec<BTreeMap<String, f64>> {
        rows.iter().map(|r| r.iter().map(|(t, v)| (t.to_string(), *v)).collect()).collect()
    }

    #[test]
    fn corpus_stats_examples() {
        let s = corpus_stats(&users(&[&[("a", 0.5)], &[("b", 0.5)]])).unwrap();
        assert_eq!(s.term("a"), TermStats { mean_freq: 0.25, std_freq: 0.25, usage: 0.5 });

        let s = corpus_stats(&users(&[&[("a", 0.1)], &[("a", 0.1)], &[("a", 0.3)], &[("a", 0.3)]])).unwrap();
        let a = s.term("a");
        assert_relative_eq!(a.mean_freq, 0.2, epsilon = 1e-15);
        assert_relative_eq!(a.std_freq, 0.1, epsilon = 1e-15);
        assert_eq!(a.usage, 1.0);

        let s = corpus_stats(&users(&[&[("a", 0.2)], &[("a", 0.2)], &[("a", 0.2)]])).unwrap();
        assert_eq!((s.term("a").std_freq, s.term("a").usage), (0.0, 1.0));

        assert!(matches!(corpus_stats(&[]), Err(Error::EmptyCorpus)));
        assert!(corpus_stats(&users(&[&[("a", 0.7), ("b", 0.7)]])).is_err());
    }

    fn stats(rows: &[(&str, f64, f64, f64)]) -> CorpusStats {
        CorpusStats {
            n_users: 100,
            vocab: rows
                .iter()
                .map(|&(t, f, s, u)| (t.to_string(), TermStats { mean_freq: f, std_freq: s, usage: u }))
                .collect(),
        }
    }

    #[test]
    fn usage_boundaries() {
        let src = stats(&[("ten", 0.1, 0.1, 0.02), ("same", 0.1, 0.1, 0.3), ("gone", 0.1, 0.1, 0.0)]);
        let tgt = stats(&[("ten", 0.1, 0.1, 0.2), ("same", 0.1, 0.1, 0.3), ("gone", 0.1, 0.1, 0.5)]);
        let d = usage_filter(&src, &tgt, ["ten", "same", "gone"], USAGE_BOUND);
        assert_eq!(d[0].log_usage_ratio, Some(1.0));
        assert_eq!(d[0].reason, FilterReason::Usage);
        assert!(d[1].kept);
        assert_eq!((d[2].reason, d[2].log_usage_ratio), (FilterReason::Usage, None));
    }

    #[test]
    fn frequency_boundaries() {
        let src = stats(&[("a", 1.0e-4, 1.0e-4, 0.5), ("edge", 0.1, 0.5, 0.5), ("flat", 0.1, 0.0, 0.5), ("flat2", 0.1, 0.0, 0.5)]);
        let tgt = stats(&[("a", 1.1e-4, 0.0, 0.5), ("edge", 0.2, 0.0, 0.5), ("flat", 0.1, 0.0, 0.5), ("flat2", 0.2, 0.0, 0.5)]);
        let d = frequency_filter(&src, &tgt, ["a", "edge", "flat", "flat2"], FREQUENCY_BOUND);
        assert_relative_eq!(d[0].freq_d.unwrap(), 0.1, epsilon = 1e-12);
        assert!(d[0].kept);
        assert_eq!(d[1].freq_d, Some(0.2));
        assert!(d[1].kept);
        assert!(d[2].kept);
        assert_eq!(d[3].reason, FilterReason::Frequency);
    }

    #[test]
    fn frequency_filter_is_asymmetric() {
        let s = stats(&[("t", 0.10, 0.5, 0.5)]);
        let t = stats(&[("t", 0.15, 0.05, 0.5)]);
        assert!(frequency_filter(&s, &t, ["t"], 0.2)[0].kept);
        assert!(!frequency_filter(&t, &s, ["t"], 0.2)[0].kept);
    }

    #[test]
    fn names_exact_match() {
        let names = NameList::new(["Emma", "noah", "olivia", "liam", ""]);
        assert_eq!(names.len(), 4);
        let d = drop_names(["emma", "emmanuel", "sad"], &names);
        assert_eq!(d.iter().map(|d| d.kept).collect::<Vec<_>>(), [false, true, true]);
        assert_eq!(d[0].reason, FilterReason::Name);
        assert!(drop_names(["emma"], &NameList::default())[0].kept);
        assert!(matches!(NameList::load(Path::new("/nonexistent/names.txt")), Err(Error::Config(_))));
    }

    fn planted(n: usize, m: usize, w: &[f64], b: f64) -> (DMatrix<f64>, Vec<f64>) {
        let x = DMatrix::from_fn(n, m, |i, j| ((i * 7 + j * 13) % 11) as f64 / 3.0 + ((i * j) as f64).sin());
        let y = (0..n).map(|i| b + (0..m).map(|j| w[j] * x[(i, j)]).sum::<f64>()).collect();
        (x, y)
    }

    #[test]
    fn ridge_recovers_planted_weights() {
        let w = [0.5, -1.25, 2.0];
        let (x, y) = planted(12, 3, &w, 0.75);
        let fit = pca_ridge(&x, &y, 1e-9, 3).unwrap();
        for (a, b) in fit.weights.iter().zip(w) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
        assert!((fit.intercept - 0.75).abs() < 1e-6);
    }

    #[test]
    fn ridge_degenerate_targets_and_limits() {
        let (x, _) = planted(10, 4, &[0.0; 4], 0.0);
        let fit = pca_ridge(&x, &[3.0; 10], 0.001, 4).unwrap();
        assert!(fit.weights.iter().all(|w| w.abs() < 1e-12));
        assert_relative_eq!(fit.intercept, 3.0, epsilon = 1e-12);

        let (x, y) = planted(10, 4, &[1.0, 2.0, 3.0, 4.0], 1.0);
        let fit = pca_ridge(&x, &y, 1e9, 4).unwrap();
        assert!(fit.weights.iter().all(|w| w.abs() < 1e-6));
    }

    #[test]
    fn ridge_reduces_k_to_rank() {
        // Third column duplicates the first.
        let x = DMatrix::from_fn(8, 3, |i, j| if j == 1 { (i * i) as f64 } else { i as f64 });
        let y: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let fit = pca_ridge(&x, &y, 1e-9, 3).unwrap();
        assert_eq!(fit.k_used, 2);
        assert!(pca_ridge(&x, &y, 0.0, 0).is_err());
        assert!(pca_ridge(&x, &y[..7], 0.0, 1).is_err());
    }

    #[test]
    fn adapt_identity_on_identical_corpora() {
        let u = users(&[&[("a", 0.2), ("b", 0.1)], &[("a", 0.1), ("c", 0.3)], &[("b", 0.4)]]);
        let s = corpus_stats(&u).unwrap();
        let lex = Lexicon::new(
            "base",
            BTreeMap::from([(Outcome::Dep, BTreeMap::from([("a".into(), 1.0), ("b".into(), 2.0), ("c".into(), 3.0)]))]),
            BTreeMap::new(),
        )
        .unwrap();
        let out = adapt_pipeline(&s, &s, &lex, &NameList::default(), AdaptParams::default()).unwrap();
        assert_eq!(out.survivors().collect::<Vec<_>>(), ["a", "b", "c"]);
        assert_eq!(out.lexicon.unwrap().len(), 3);
    }

    proptest! {
        #[test]
        fn usage_filter_symmetric(us in 0.0f64..1.0, ut in 0.0f64..1.0) {
            let s = stats(&[("t", 0.1, 0.1, us)]);
            let t = stats(&[("t", 0.1, 0.1, ut)]);
            prop_assert_eq!(
                usage_filter(&s, &t, ["t"], 1.0)[0].kept,
                usage_filter(&t, &s, ["t"], 1.0)[0].kept
            );
        }

        #[test]
        fn corpus_stats_invariants(rows in prop::collection::vec(prop::collection::vec(0u32..5, 4), 1..20)) {
            let recs: Vec<BTreeMap<String, f64>> = rows
                .iter()
                .map(|r| {
                    let total: u32 = r.iter().sum::<u32>().max(1);
                    r.iter().enumerate().map(|(j, &c)| (format!("t{j}"), c as f64 / total as f64)).collect()
                })
                .collect();
            let s = corpus_stats(&recs).unwrap();
            for t in s.vocab.values() {
                prop_assert!((0.0..=1.0).contains(&t.usage));
                prop_assert!(t.std_freq >= 0.0);
            }
        }
    }
}
