//! Message parsing, inclusion filters, and (user, region, time-cell) keys.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, BufReader, Read};
use std::str::FromStr;

use chrono::{DateTime, Datelike, NaiveDate, NaiveDateTime, Utc};
use rayon::prelude::*;
use serde_json::Value;

use crate::cell::{RegionCode, TimeCell, TimeUnit};
use crate::error::{Error, Result};
use crate::seed::fnv1a;

#[derive(Clone, Debug, PartialEq)]
pub struct Post {
    pub message_id: String,
    pub user_id: String,
    pub timestamp: DateTime<Utc>,
    pub text: String,
    pub region: RegionCode,
    pub lang: Option<String>,
    pub is_repost: Option<bool>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputFormat {
    Jsonl,
    Csv,
}

impl FromStr for InputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "jsonl" | "json" | "ndjson" => Ok(InputFormat::Jsonl),
            "csv" => Ok(InputFormat::Csv),
            other => Err(Error::Format(format!("unknown input format '{other}'"))),
        }
    }
}

impl InputFormat {
    /// Guess from a file extension; anything that is not `.csv` is JSONL.
    pub fn from_path(path: &std::path::Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => InputFormat::Csv,
            _ => InputFormat::Jsonl,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParseOutcome {
    pub posts: Vec<Post>,
    /// Non-blank records seen, well-formed or not.
    pub records: usize,
    pub malformed: usize,
}

/// Parse a JSONL or CSV message stream.
///
/// Malformed records (bad timestamp, missing field, invalid FIPS, duplicate
/// message id) are skipped and counted. More than half of the records being
/// malformed is treated as a format mismatch.
pub fn parse_posts<R: Read>(source: R, format: InputFormat) -> Result<ParseOutcome> {
    let mut out = ParseOutcome::default();
    let mut seen_ids = HashSet::new();
    let mut accept = |rec: std::result::Result<Post, String>, out: &mut ParseOutcome| {
        out.records += 1;
        match rec {
            Ok(p) if seen_ids.insert(p.message_id.clone()) => out.posts.push(p),
            Ok(p) => {
                log::debug!("record {}: duplicate message id {}", out.records, p.message_id);
                out.malformed += 1;
            }
            Err(msg) => {
                log::debug!("record {}: {msg}", out.records);
                out.malformed += 1;
            }
        }
    };

    match format {
        InputFormat::Jsonl => {
            for line in BufReader::new(source).lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                accept(post_from_json(&line), &mut out);
            }
        }
        InputFormat::Csv => {
            let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(source);
            let headers = rdr.headers().map_err(csv_fatal)?.clone();
            let col = |name: &str| headers.iter().position(|h| h.trim() == name);
            let required = ["message_id", "user_id", "timestamp", "text", "county_fips"];
            let mut idx = HashMap::new();
            for name in required {
                let i = col(name).ok_or_else(|| Error::Format(format!("CSV header lacks column '{name}'")))?;
                idx.insert(name, i);
            }
            let lang_ix = col("lang");
            let repost_ix = col("is_repost");
            for rec in rdr.records() {
                let rec = match rec {
                    Ok(r) => r,
                    Err(e) if matches!(e.kind(), csv::ErrorKind::Utf8 { .. } | csv::ErrorKind::Io(_)) => {
                        return Err(csv_fatal(e));
                    }
                    Err(e) => {
                        accept(Err(e.to_string()), &mut out);
                        continue;
                    }
                };
                let get = |name: &str| rec.get(idx[name]).map(str::to_string);
                let fields = RawFields {
                    message_id: get("message_id"),
                    user_id: get("user_id"),
                    timestamp: get("timestamp"),
                    text: get("text"),
                    county_fips: get("county_fips"),
                    lang: lang_ix.and_then(|i| rec.get(i)).map(str::to_string),
                    is_repost: match repost_ix.and_then(|i| rec.get(i)).map(str::trim) {
                        None | Some("") => Ok(None),
                        Some(v) => parse_bool(v).map(Some),
                    },
                };
                accept(fields.build(), &mut out);
            }
        }
    }

    if out.records > 0 && out.malformed * 2 > out.records {
        return Err(Error::Format(format!(
            "{} of {} records malformed; input does not look like {:?}",
            out.malformed, out.records, format
        )));
    }
    if out.malformed > 0 {
        log::warn!("skipped {} malformed records of {}", out.malformed, out.records);
    }
    Ok(out)
}

fn csv_fatal(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{other:?}"))),
    }
}

struct RawFields {
    message_id: Option<String>,
    user_id: Option<String>,
    timestamp: Option<String>,
    text: Option<String>,
    county_fips: Option<String>,
    lang: Option<String>,
    is_repost: std::result::Result<Option<bool>, String>,
}

impl RawFields {
    fn build(self) -> std::result::Result<Post, String> {
        let message_id = nonempty(self.message_id, "message_id")?;
        let user_id = nonempty(self.user_id, "user_id")?;
        let ts = nonempty(self.timestamp, "timestamp")?;
        let timestamp = parse_timestamp(&ts).ok_or_else(|| format!("unparseable timestamp '{ts}'"))?;
        let text = self.text.ok_or("missing text")?;
        let fips = nonempty(self.county_fips, "county_fips")?;
        let region = RegionCode::county(pad_fips(&fips)).map_err(|e| e.to_string())?;
        let lang = self.lang.map(|l| l.trim().to_ascii_lowercase()).filter(|l| !l.is_empty());
        Ok(Post { message_id, user_id, timestamp, text, region, lang, is_repost: self.is_repost? })
    }
}

fn nonempty(v: Option<String>, name: &str) -> std::result::Result<String, String> {
    match v {
        Some(s) if !s.trim().is_empty() => Ok(s.trim().to_string()),
        _ => Err(format!("missing {name}")),
    }
}

fn pad_fips(s: &str) -> String {
    let s = s.trim();
    if !s.is_empty() && s.len() < 5 && s.bytes().all(|b| b.is_ascii_digit()) {
        format!("{s:0>5}")
    } else {
        s.to_string()
    }
}

fn parse_bool(v: &str) -> std::result::Result<bool, String> {
    match v.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "t" => Ok(true),
        "false" | "0" | "no" | "f" => Ok(false),
        other => Err(format!("invalid boolean '{other}'")),
    }
}

fn json_scalar(v: Option<&Value>) -> Option<String> {
    match v? {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn post_from_json(line: &str) -> std::result::Result<Post, String> {
    let v: Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let obj = v.as_object().ok_or("record is not a JSON object")?;
    let is_repost = match obj.get("is_repost") {
        None | Some(Value::Null) => Ok(None),
        Some(Value::Bool(b)) => Ok(Some(*b)),
        Some(Value::String(s)) if s.trim().is_empty() => Ok(None),
        Some(Value::String(s)) => parse_bool(s).map(Some),
        Some(Value::Number(n)) => parse_bool(&n.to_string()).map(Some),
        Some(other) => Err(format!("invalid is_repost {other}")),
    };
    RawFields {
        message_id: json_scalar(obj.get("message_id")),
        user_id: json_scalar(obj.get("user_id")),
        timestamp: json_scalar(obj.get("timestamp")),
        text: obj.get("text").and_then(Value::as_str).map(str::to_string),
        county_fips: json_scalar(obj.get("county_fips")),
        lang: obj.get("lang").and_then(Value::as_str).map(str::to_string),
        is_repost,
    }
    .build()
}

/// ISO-8601 / RFC 3339 timestamps; naive values are taken as UTC.
pub fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f%z", "%Y-%m-%d %H:%M:%S%.f%z", "%a %b %d %H:%M:%S %z %Y"] {
        if let Ok(t) = DateTime::parse_from_str(s, fmt) {
            return Some(t.with_timezone(&Utc));
        }
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(t.and_utc());
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d").ok().map(|d| d.and_hms_opt(0, 0, 0).unwrap().and_utc())
}

/// A whitespace token is a URL when it starts (after opening punctuation)
/// with `http://`, `https://` or `www.`.
pub fn is_url_token(token: &str) -> bool {
    let t = token.trim_start_matches(|c: char| !c.is_alphanumeric());
    let t = t.get(..8.min(t.len())).unwrap_or(t).to_ascii_lowercase();
    t.starts_with("http://") || t.starts_with("https://") || t.starts_with("www.")
}

pub fn contains_url(text: &str) -> bool {
    text.split_whitespace().any(is_url_token)
}

pub fn is_repost(post: &Post) -> bool {
    match post.is_repost {
        Some(flag) => flag,
        None => {
            let t = post.text.trim_start();
            t.get(..4).is_some_and(|p| p.eq_ignore_ascii_case("rt @"))
        }
    }
}

pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FilterStats {
    pub input: usize,
    pub language: usize,
    pub repost: usize,
    pub url: usize,
    pub duplicate: usize,
}

impl FilterStats {
    pub fn retained(&self) -> usize {
        self.input - self.language - self.repost - self.url - self.duplicate
    }
}

fn passes_content_filters(p: &Post, stats: &mut FilterStats) -> bool {
    if p.lang.as_deref().is_some_and(|l| l != "en") {
        stats.language += 1;
        false
    } else if is_repost(p) {
        stats.repost += 1;
        false
    } else if contains_url(&p.text) {
        stats.url += 1;
        false
    } else {
        true
    }
}

/// Keep English (or untagged), non-repost, URL-free posts, dropping repeats
/// of a text the same user already had retained. Order is preserved.
pub fn filter_posts(posts: Vec<Post>) -> Vec<Post> {
    filter_posts_with_stats(posts).0
}

pub fn filter_posts_with_stats(posts: Vec<Post>) -> (Vec<Post>, FilterStats) {
    let mut stats = FilterStats { input: posts.len(), ..Default::default() };
    let mut seen: HashSet<(String, String)> = HashSet::new();
    let kept = posts
        .into_iter()
        .filter(|p| {
            if !passes_content_filters(p, &mut stats) {
                return false;
            }
            if seen.insert((p.user_id.clone(), normalize_whitespace(&p.text))) {
                true
            } else {
                stats.duplicate += 1;
                false
            }
        })
        .collect();
    (kept, stats)
}

/// [`filter_posts`] run over `shards` user-partitioned shards in parallel.
/// Dedup state never crosses shards, and the result is identical to the
/// sequential filter for any shard count.
pub fn filter_posts_sharded(posts: Vec<Post>, shards: usize) -> (Vec<Post>, FilterStats) {
    let shards = shards.max(1);
    let mut buckets: Vec<Vec<(usize, Post)>> = (0..shards).map(|_| Vec::new()).collect();
    let input = posts.len();
    for (i, p) in posts.into_iter().enumerate() {
        let s = (fnv1a(p.user_id.as_bytes()) % shards as u64) as usize;
        buckets[s].push((i, p));
    }
    let results: Vec<(Vec<(usize, Post)>, FilterStats)> = buckets
        .into_par_iter()
        .map(|bucket| {
            let (idx, ps): (Vec<usize>, Vec<Post>) = bucket.into_iter().unzip();
            let mut stats = FilterStats { input: ps.len(), ..Default::default() };
            let mut seen: HashSet<(String, String)> = HashSet::new();
            let kept = idx
                .into_iter()
                .zip(ps)
                .filter(|(_, p)| {
                    passes_content_filters(p, &mut stats)
                        && (seen.insert((p.user_id.clone(), normalize_whitespace(&p.text)))
                            || {
                                stats.duplicate += 1;
                                false
                            })
                })
                .collect();
            (kept, stats)
        })
        .collect();

    let mut total = FilterStats { input, ..Default::default() };
    let mut merged = Vec::new();
    for (kept, s) in results {
        total.language += s.language;
        total.repost += s.repost;
        total.url += s.url;
        total.duplicate += s.duplicate;
        merged.extend(kept);
    }
    merged.sort_by_key(|(i, _)| *i);
    (merged.into_iter().map(|(_, p)| p).collect(), total)
}

/// Grouping key for the per-user, per-region, per-period pipeline.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellKey {
    pub user_id: String,
    pub region: RegionCode,
    pub cell: TimeCell,
}

pub fn assign_cell(post: &Post, unit: TimeUnit) -> Result<CellKey> {
    let date = post.timestamp.date_naive();
    if !(1970..=2100).contains(&date.year()) {
        return Err(Error::TimestampOutOfRange(format!("{} ({})", post.timestamp, post.message_id)));
    }
    Ok(CellKey {
        user_id: post.user_id.clone(),
        region: post.region.clone(),
        cell: TimeCell::from_date(date, unit),
    })
}

pub type GroupedPosts = BTreeMap<CellKey, Vec<Post>>;

/// Group posts by [`CellKey`]; posts with out-of-range timestamps are
/// skipped and counted.
pub fn group_posts(posts: Vec<Post>, unit: TimeUnit) -> (GroupedPosts, usize) {
    let mut grouped = GroupedPosts::new();
    let mut skipped = 0;
    for p in posts {
        match assign_cell(&p, unit) {
            Ok(key) => grouped.entry(key).or_default().push(p),
            Err(e) => {
                log::warn!("{e}");
                skipped += 1;
            }
        }
    }
    (grouped, skipped)
}

/// Keep only groups with at least `min_posts` posts.
pub fn apply_upt(grouped: GroupedPosts, min_posts: usize) -> Result<GroupedPosts> {
    if min_posts == 0 {
        return Err(Error::InvalidParameter("min_posts must be at least 1".into()));
    }
    Ok(grouped.into_iter().filter(|(_, ps)| ps.len() >= min_posts).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn post(id: &str, user: &str, text: &str) -> Post {
        Post {
            message_id: id.into(),
            user_id: user.into(),
            timestamp: parse_timestamp("2020-03-04T12:00:00Z").unwrap(),
            text: text.into(),
            region: RegionCode::county("36061").unwrap(),
            lang: None,
            is_repost: None,
        }
    }

    #[test]
    fn parses_full_jsonl_line() {
        let line = r#"{"message_id":"m1","user_id":"u1","timestamp":"2020-01-01T10:00:00Z","text":"hello","county_fips":"36061","lang":"en","is_repost":false}"#;
        let out = parse_posts(line.as_bytes(), InputFormat::Jsonl).unwrap();
        assert_eq!(out.posts.len(), 1);
        assert_eq!(out.malformed, 0);
        let p = &out.posts[0];
        assert_eq!(p.region.code(), "36061");
        assert_eq!(p.lang.as_deref(), Some("en"));
        assert_eq!(p.is_repost, Some(false));
    }

    #[test]
    fn invalid_timestamp_is_skipped() {
        let input = concat!(
            r#"{"message_id":"m1","user_id":"u1","timestamp":"not a date","text":"a","county_fips":"36061"}"#,
            "\n",
            r#"{"message_id":"m2","user_id":"u1","timestamp":"2020-01-01","text":"b","county_fips":"36061"}"#,
            "\n",
            r#"{"message_id":"m3","user_id":"u1","timestamp":"2020-01-02","text":"c","county_fips":6037}"#,
        );
        let out = parse_posts(input.as_bytes(), InputFormat::Jsonl).unwrap();
        assert_eq!(out.malformed, 1);
        assert_eq!(out.posts.len(), 2);
        assert_eq!(out.posts[1].region.code(), "06037");
    }

    #[test]
    fn empty_stream_is_not_an_error() {
        let out = parse_posts(&b""[..], InputFormat::Jsonl).unwrap();
        assert!(out.posts.is_empty());
        let out = parse_posts(&b"message_id,user_id,timestamp,text,county_fips\n"[..], InputFormat::Csv).unwrap();
        assert!(out.posts.is_empty());
    }

    #[test]
    fn mostly_malformed_is_fatal() {
        let input = "garbage\nmore garbage\n";
        assert!(matches!(parse_posts(input.as_bytes(), InputFormat::Jsonl), Err(Error::Format(_))));
    }

    #[test]
    fn invalid_utf8_is_io_error() {
        let bytes = b"{\"message_id\":\"m\xff\"}\n";
        assert!(matches!(parse_posts(&bytes[..], InputFormat::Jsonl), Err(Error::Io(_))));
    }

    #[test]
    fn csv_with_quoting() {
        let input = "message_id,user_id,timestamp,text,county_fips,lang,is_repost\n\
                     m1,u1,2020-01-01T00:00:00Z,\"hello, \"\"world\"\"\",36061,en,\n";
        let out = parse_posts(input.as_bytes(), InputFormat::Csv).unwrap();
        assert_eq!(out.posts[0].text, "hello, \"world\"");
        assert_eq!(out.posts[0].is_repost, None);
    }

    #[test]
    fn csv_requires_header_columns() {
        let input = "id,user,text\n1,2,3\n";
        assert!(matches!(parse_posts(input.as_bytes(), InputFormat::Csv), Err(Error::Format(_))));
    }

    #[test]
    fn url_posts_excluded() {
        let kept = filter_posts(vec![post("1", "u", "check this https://x.co/a"), post("2", "u", "see www.example.com"), post("3", "u", "fine")]);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].message_id, "3");
    }

    #[test]
    fn duplicates_are_per_user() {
        let kept = filter_posts(vec![
            post("1", "u1", "same  text"),
            post("2", "u1", "same text"),
            post("3", "u2", "same text"),
        ]);
        let ids: Vec<_> = kept.iter().map(|p| p.message_id.as_str()).collect();
        assert_eq!(ids, ["1", "3"]);
    }

    #[test]
    fn reposts_and_language() {
        let mut a = post("1", "u", "RT @someone: hi");
        let mut b = post("2", "u", "rt @x lower");
        let mut c = post("3", "u", "hola");
        c.lang = Some("es".into());
        let mut d = post("4", "u", "flagged");
        d.is_repost = Some(true);
        let mut e = post("5", "u", "RT @flag says no");
        e.is_repost = Some(false);
        a.lang = Some("en".into());
        b.lang = None;
        let (kept, stats) = filter_posts_with_stats(vec![a, b, c, d, e]);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].message_id, "5");
        assert_eq!((stats.repost, stats.language), (3, 1));
    }

    #[test]
    fn upt_boundary() {
        let key = |u: &str| CellKey {
            user_id: u.into(),
            region: RegionCode::county("36061").unwrap(),
            cell: TimeCell::week(2020, 10).unwrap(),
        };
        let mut g = GroupedPosts::new();
        g.insert(key("two"), vec![post("1", "two", "a"), post("2", "two", "b")]);
        g.insert(key("three"), vec![post("3", "three", "a"), post("4", "three", "b"), post("5", "three", "c")]);
        let kept = apply_upt(g.clone(), 3).unwrap();
        assert_eq!(kept.len(), 1);
        assert!(kept.contains_key(&key("three")));
        assert_eq!(apply_upt(g.clone(), 1).unwrap(), g);
        assert!(apply_upt(g, 0).is_err());
    }

    #[test]
    fn out_of_range_timestamp_is_record_error() {
        let mut p = post("1", "u", "x");
        p.timestamp = parse_timestamp("1969-12-31T00:00:00Z").unwrap();
        assert!(matches!(assign_cell(&p, TimeUnit::Week), Err(Error::TimestampOutOfRange(_))));
    }

    fn arb_posts() -> impl Strategy<Value = Vec<Post>> {
        let texts = prop::sample::select(vec!["a", "b", "a ", "rt @x", "http://u", "c d", "RT @y hi"]);
        prop::collection::vec((0u8..4, texts, prop::option::of(prop::bool::ANY), prop::bool::ANY), 0..40).prop_map(
            |rows| {
                rows.into_iter()
                    .enumerate()
                    .map(|(i, (u, t, rp, es))| {
                        let mut p = post(&i.to_string(), &format!("u{u}"), t);
                        p.is_repost = rp;
                        p.lang = if es { Some("es".into()) } else { None };
                        p
                    })
                    .collect()
            },
        )
    }

    proptest! {
        #[test]
        fn filter_is_idempotent_subsequence(posts in arb_posts()) {
            let once = filter_posts(posts.clone());
            prop_assert_eq!(filter_posts(once.clone()), once.clone());
            let mut it = posts.iter();
            for p in &once {
                prop_assert!(it.any(|q| q == p));
            }
        }

        #[test]
        fn sharding_does_not_change_output(posts in arb_posts(), shards in 1usize..8) {
            let (a, sa) = filter_posts_with_stats(posts.clone());
            let (b, sb) = filter_posts_sharded(posts, shards);
            prop_assert_eq!(a, b);
            prop_assert_eq!(sa, sb);
        }
    }
}
