//! CSV and JSONL readers and writers for every file the pipeline consumes
//! or produces.
//!
//! Region-cell outputs round scores to 6 decimals; intermediate files (user
//! scores, truth, lexicons) keep full round-trip precision. Missing values
//! are written as `NA`.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Display;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::{NaiveDate, SecondsFormat};
use csv::StringRecord;

use crate::adapt::FilterDecision;
use crate::aggregate::RegionCell;
use crate::analysis::{SurveyResponse, SurveyRow};
use crate::cell::{RegionCode, RegionLevel, TimeCell, TimeUnit};
use crate::error::{Error, Result};
use crate::ingest::Post;
use crate::mapping::{CountyInfo, RegionMapping};
use crate::reliability::{ReliabilityGrid, UtSweepPoint};
use crate::scoring::{Lexicon, Outcome, UserScore, WeightTable};
use crate::synth::TruthRow;

pub const INTERCEPT_TERM: &str = "_intercept";
const NA: &str = "NA";

struct Table {
    what: &'static str,
    cols: HashMap<&'static str, usize>,
    records: Vec<StringRecord>,
}

impl Table {
    fn read<R: Read>(r: R, what: &'static str, required: &[&'static str], optional: &[&'static str]) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let headers = rdr.headers()?.clone();
        let mut cols = HashMap::new();
        for &name in required.iter().chain(optional) {
            match headers.iter().position(|h| h == name) {
                Some(i) => {
                    cols.insert(name, i);
                }
                None if required.contains(&name) => {
                    return Err(Error::Format(format!("{what}: missing column '{name}'")));
                }
                None => {}
            }
        }
        let records = rdr.records().collect::<std::result::Result<_, _>>()?;
        Ok(Table { what, cols, records })
    }

    fn has(&self, name: &str) -> bool {
        self.cols.contains_key(name)
    }

    fn str<'a>(&self, rec: &'a StringRecord, name: &str) -> Option<&'a str> {
        self.cols.get(name).and_then(|&i| rec.get(i)).filter(|s| !s.is_empty())
    }

    fn req<'a>(&self, row: usize, rec: &'a StringRecord, name: &str) -> Result<&'a str> {
        self.str(rec, name).ok_or_else(|| self.err(row, format!("empty '{name}'")))
    }

    fn parse<T: FromStr>(&self, row: usize, rec: &StringRecord, name: &str) -> Result<T>
    where
        T::Err: Display,
    {
        let s = self.req(row, rec, name)?;
        s.parse().map_err(|e| self.err(row, format!("bad '{name}' value '{s}': {e}")))
    }

    fn err(&self, row: usize, msg: String) -> Error {
        // Header is line 1.
        Error::Format(format!("{} line {}: {msg}", self.what, row + 2))
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| NA.to_string(), |x| format!("{x:.6}"))
}

/// Region code with its level inferred from the shape: 5 digits is a county,
/// 2 uppercase letters a state, `US` the nation.
pub fn infer_region(code: &str) -> Result<RegionCode> {
    let code = code.trim();
    if code == "US" {
        Ok(RegionCode::nation())
    } else if code.len() == 2 && code.bytes().all(|b| b.is_ascii_uppercase()) {
        RegionCode::state(code)
    } else if !code.is_empty() && code.len() <= 5 && code.bytes().all(|b| b.is_ascii_digit()) {
        RegionCode::county(format!("{code:0>5}"))
    } else {
        Err(Error::InvalidRegion(format!("cannot infer the level of region '{code}'")))
    }
}

fn week_cell(t: &Table, row: usize, rec: &StringRecord) -> Result<TimeCell> {
    let year: i32 = t.parse(row, rec, "iso_year")?;
    let week: u32 = t.parse(row, rec, "iso_week")?;
    TimeCell::week(year, week).map_err(|e| t.err(row, e.to_string()))
}

pub fn write_region_cells<W: Write>(w: W, cells: &[RegionCell]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["region_level", "region_code", "iso_year", "iso_week", "dep", "anx", "n_users", "provenance", "unit"])?;
    for c in cells {
        wr.write_record([
            c.region.level().as_str().to_string(),
            c.region.code().to_string(),
            c.cell.iso_year.to_string(),
            c.cell.index.to_string(),
            format!("{:.6}", c.dep),
            format!("{:.6}", c.anx),
            c.n_users.to_string(),
            c.provenance.as_str().to_string(),
            c.cell.unit.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

/// Reads region cells; a missing `unit` column means weeks.
pub fn read_region_cells<R: Read>(r: R) -> Result<Vec<RegionCell>> {
    let t = Table::read(
        r,
        "region cells",
        &["region_level", "region_code", "iso_year", "iso_week", "dep", "anx", "n_users", "provenance"],
        &["unit"],
    )?;
    t.records
        .iter()
        .enumerate()
        .map(|(i, rec)| {
            let level: RegionLevel = t.parse(i, rec, "region_level")?;
            let unit: TimeUnit = match t.str(rec, "unit") {
                Some(_) => t.parse(i, rec, "unit")?,
                None => TimeUnit::Week,
            };
            let cell = TimeCell::new(unit, t.parse(i, rec, "iso_year")?, t.parse(i, rec, "iso_week")?)
                .map_err(|e| t.err(i, e.to_string()))?;
            Ok(RegionCell {
                region: RegionCode::new(level, t.req(i, rec, "region_code")?).map_err(|e| t.err(i, e.to_string()))?,
                cell,
                dep: t.parse(i, rec, "dep")?,
                anx: t.parse(i, rec, "anx")?,
                n_users: t.parse(i, rec, "n_users")?,
                sum_weights: f64::NAN,
                provenance: t.parse(i, rec, "provenance")?,
            })
        })
        .collect()
}

pub fn write_user_scores<W: Write>(w: W, scores: &[UserScore]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["user_id", "region_level", "region_code", "unit", "iso_year", "period", "dep", "anx", "weight"])?;
    for s in scores {
        wr.write_record([
            s.user_id.clone(),
            s.region.level().as_str().to_string(),
            s.region.code().to_string(),
            s.cell.unit.to_string(),
            s.cell.iso_year.to_string(),
            s.cell.index.to_string(),
            s.dep.to_string(),
            s.anx.to_string(),
            s.weight.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_user_scores<R: Read>(r: R) -> Result<Vec<UserScore>> {
    let t = Table::read(
        r,
        "user scores",
        &["user_id", "region_level", "region_code", "unit", "iso_year", "period", "dep", "anx", "weight"],
        &[],
    )?;
    t.records
        .iter()
        .enumerate()
        .map(|(i, rec)| {
            let level: RegionLevel = t.parse(i, rec, "region_level")?;
            let cell = TimeCell::new(t.parse(i, rec, "unit")?, t.parse(i, rec, "iso_year")?, t.parse(i, rec, "period")?)
                .map_err(|e| t.err(i, e.to_string()))?;
            Ok(UserScore {
                user_id: t.req(i, rec, "user_id")?.to_string(),
                region: RegionCode::new(level, t.req(i, rec, "region_code")?).map_err(|e| t.err(i, e.to_string()))?,
                cell,
                dep: t.parse(i, rec, "dep")?,
                anx: t.parse(i, rec, "anx")?,
                weight: t.parse(i, rec, "weight")?,
            })
        })
        .collect()
}

/// Lexicon CSV: `term, category, weight`, one intercept row per category
/// with term `_intercept`.
pub fn read_lexicon<R: Read>(r: R, name: &str) -> Result<Lexicon> {
    let t = Table::read(r, "lexicon", &["term", "category", "weight"], &[])?;
    let mut weights: BTreeMap<Outcome, BTreeMap<String, f64>> = BTreeMap::new();
    let mut intercepts = BTreeMap::new();
    for (i, rec) in t.records.iter().enumerate() {
        let term = t.req(i, rec, "term")?;
        let outcome: Outcome = t.parse(i, rec, "category")?;
        let w: f64 = t.parse(i, rec, "weight")?;
        if term == INTERCEPT_TERM {
            intercepts.insert(outcome, w);
        } else if weights.entry(outcome).or_default().insert(term.to_string(), w).is_some() {
            return Err(t.err(i, format!("duplicate term '{term}' for {outcome}")));
        }
    }
    Lexicon::new(name, weights, intercepts)
}

pub fn write_lexicon<W: Write>(w: W, lex: &Lexicon) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["term", "category", "weight"])?;
    for o in lex.outcomes() {
        wr.write_record([INTERCEPT_TERM, o.as_str(), &lex.intercept(o).unwrap_or(0.0).to_string()])?;
        for term in lex.terms() {
            wr.write_record([term.as_str(), o.as_str(), &lex.weight(term, o).unwrap_or(0.0).to_string()])?;
        }
    }
    wr.flush()?;
    Ok(())
}

/// Post-stratification weights: `user_id, iso_year, iso_week, weight`.
pub fn read_weights<R: Read>(r: R, default_weight: f64) -> Result<WeightTable> {
    let t = Table::read(r, "weights", &["user_id", "iso_year", "iso_week", "weight"], &[])?;
    let mut table = WeightTable::new(default_weight)?;
    for (i, rec) in t.records.iter().enumerate() {
        let cell = week_cell(&t, i, rec)?;
        table.insert(t.req(i, rec, "user_id")?, cell, t.parse(i, rec, "weight")?).map_err(|e| t.err(i, e.to_string()))?;
    }
    Ok(table)
}

/// County mapping: `fips, state, census_region` and an optional `msa`.
pub fn read_mapping<R: Read>(r: R) -> Result<RegionMapping> {
    let t = Table::read(r, "mapping", &["fips", "state", "census_region"], &["msa"])?;
    let mut m = RegionMapping::new();
    for (i, rec) in t.records.iter().enumerate() {
        let fips = format!("{:0>5}", t.req(i, rec, "fips")?);
        let info = CountyInfo {
            state: t.req(i, rec, "state")?.to_string(),
            census_region: t.req(i, rec, "census_region")?.to_string(),
            msa: t.str(rec, "msa").map(str::to_string),
        };
        m.insert(&fips, info).map_err(|e| t.err(i, e.to_string()))?;
    }
    Ok(m)
}

pub fn write_mapping<W: Write>(w: W, m: &RegionMapping) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["fips", "state", "census_region", "msa"])?;
    for (fips, info) in m.counties() {
        wr.write_record([fips.as_str(), &info.state, &info.census_region, info.msa.as_deref().unwrap_or("")])?;
    }
    wr.flush()?;
    Ok(())
}

const RELIABILITY_HEADER: [&str; 7] = ["level", "unit", "ut", "mean_R", "ci_low", "ci_high", "n_cells"];

/// Grid rows carry the minimum-users floor in `ut` and a normal 95%
/// interval from the across-pair standard error. Absent cells are `NA`.
pub fn write_reliability_grid<W: Write>(w: W, grid: &ReliabilityGrid, min_users: usize) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(RELIABILITY_HEADER)?;
    for ((level, unit), report) in &grid.cells {
        let (m, lo, hi, n) = match report {
            Some(r) => (
                Some(r.mean_r),
                Some(r.mean_r - 1.96 * r.std_err),
                Some(r.mean_r + 1.96 * r.std_err),
                r.n_pairs,
            ),
            None => (None, None, None, 0),
        };
        wr.write_record([level.as_str().to_string(), unit.to_string(), min_users.to_string(), opt(m), opt(lo), opt(hi), n.to_string()])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_ut_sweep<W: Write>(w: W, level: RegionLevel, unit: TimeUnit, points: &[UtSweepPoint]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(RELIABILITY_HEADER)?;
    for p in points {
        wr.write_record([
            level.as_str().to_string(),
            unit.to_string(),
            p.ut.to_string(),
            opt(p.mean_r),
            opt(p.ci95.map(|c| c.0)),
            opt(p.ci95.map(|c| c.1)),
            p.n_cells.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_audit<W: Write>(w: W, decisions: &[FilterDecision]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["term", "u_S", "u_T", "L", "f_S", "f_T", "sigma_S", "d", "kept", "reason"])?;
    let full = |v: Option<f64>| v.map_or_else(|| NA.to_string(), |x| x.to_string());
    for d in decisions {
        wr.write_record([
            d.term.clone(),
            d.usage_source.to_string(),
            d.usage_target.to_string(),
            full(d.log_usage_ratio),
            d.freq_source.to_string(),
            d.freq_target.to_string(),
            d.std_source.to_string(),
            full(d.freq_d),
            d.kept.to_string(),
            d.reason.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

/// Survey panel aggregates: `region_code, iso_year, iso_week, value, n_respondents`.
pub fn read_survey<R: Read>(r: R) -> Result<Vec<SurveyRow>> {
    let t = Table::read(r, "survey", &["region_code", "iso_year", "iso_week", "value"], &["n_respondents"])?;
    t.records
        .iter()
        .enumerate()
        .map(|(i, rec)| {
            Ok(SurveyRow {
                region: infer_region(t.req(i, rec, "region_code")?).map_err(|e| t.err(i, e.to_string()))?,
                cell: week_cell(&t, i, rec)?,
                value: t.parse(i, rec, "value")?,
                n_respondents: if t.has("n_respondents") && t.str(rec, "n_respondents").is_some() {
                    t.parse(i, rec, "n_respondents")?
                } else {
                    0
                },
            })
        })
        .collect()
}

/// Respondent-level survey data: `region_code, iso_year, iso_week, respondent_id, value`.
pub fn read_survey_microdata<R: Read>(r: R) -> Result<Vec<SurveyResponse>> {
    let t = Table::read(r, "survey microdata", &["region_code", "iso_year", "iso_week", "respondent_id", "value"], &[])?;
    t.records
        .iter()
        .enumerate()
        .map(|(i, rec)| {
            Ok(SurveyResponse {
                region: infer_region(t.req(i, rec, "region_code")?).map_err(|e| t.err(i, e.to_string()))?,
                cell: week_cell(&t, i, rec)?,
                respondent_id: t.req(i, rec, "respondent_id")?.to_string(),
                value: t.parse(i, rec, "value")?,
            })
        })
        .collect()
}

/// External criteria: `county_fips, variable, value` -> county -> variable -> value.
pub fn read_criteria<R: Read>(r: R) -> Result<BTreeMap<String, BTreeMap<String, f64>>> {
    let t = Table::read(r, "criteria", &["county_fips", "variable", "value"], &[])?;
    let mut out: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for (i, rec) in t.records.iter().enumerate() {
        let fips = RegionCode::county(format!("{:0>5}", t.req(i, rec, "county_fips")?))
            .map_err(|e| t.err(i, e.to_string()))?;
        let var = t.req(i, rec, "variable")?.to_string();
        out.entry(fips.code().to_string()).or_default().insert(var, t.parse(i, rec, "value")?);
    }
    Ok(out)
}

/// Event calendar rows: `date` (YYYY-MM-DD), `label`.
pub fn read_events<R: Read>(r: R) -> Result<Vec<(NaiveDate, String)>> {
    let t = Table::read(r, "events", &["date"], &["label"])?;
    t.records
        .iter()
        .enumerate()
        .map(|(i, rec)| {
            let date = t.parse(i, rec, "date")?;
            Ok((date, t.str(rec, "label").unwrap_or("").to_string()))
        })
        .collect()
}

pub fn write_events<W: Write>(w: W, events: &[(NaiveDate, String)]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["date", "label"])?;
    for (d, label) in events {
        wr.write_record([d.to_string(), label.clone()])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_truth<W: Write>(w: W, rows: &[TruthRow]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["user_id", "county_fips", "iso_year", "iso_week", "dep", "anx"])?;
    for t in rows {
        wr.write_record([
            t.user_id.clone(),
            t.region.code().to_string(),
            t.cell.iso_year.to_string(),
            t.cell.index.to_string(),
            t.dep.to_string(),
            t.anx.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_truth<R: Read>(r: R) -> Result<Vec<TruthRow>> {
    let t = Table::read(r, "truth", &["user_id", "county_fips", "iso_year", "iso_week", "dep", "anx"], &[])?;
    t.records
        .iter()
        .enumerate()
        .map(|(i, rec)| {
            Ok(TruthRow {
                user_id: t.req(i, rec, "user_id")?.to_string(),
                region: RegionCode::county(t.req(i, rec, "county_fips")?).map_err(|e| t.err(i, e.to_string()))?,
                cell: week_cell(&t, i, rec)?,
                dep: t.parse(i, rec, "dep")?,
                anx: t.parse(i, rec, "anx")?,
            })
        })
        .collect()
}

/// One JSON object per line with the fields the post reader expects.
pub fn write_posts_jsonl<W: Write>(mut w: W, posts: &[Post]) -> Result<()> {
    for p in posts {
        let v = serde_json::json!({
            "message_id": p.message_id,
            "user_id": p.user_id,
            "timestamp": p.timestamp.to_rfc3339_opts(SecondsFormat::Secs, true),
            "text": p.text,
            "county_fips": p.region.code(),
            "lang": p.lang,
            "is_repost": p.is_repost,
        });
        serde_json::to_writer(&mut w, &v).map_err(|e| Error::Io(e.into()))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_survey<W: Write>(w: W, rows: &[SurveyRow]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["region_code", "iso_year", "iso_week", "value", "n_respondents"])?;
    for r in rows {
        wr.write_record([
            r.region.code().to_string(),
            r.cell.iso_year.to_string(),
            r.cell.index.to_string(),
            r.value.to_string(),
            r.n_respondents.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregate::Provenance;
    use crate::ingest::{parse_posts, InputFormat};

    #[test]
    fn region_cells_round_trip() {
        let cells = vec![RegionCell {
            region: RegionCode::county("36061").unwrap(),
            cell: TimeCell::week(2020, 10).unwrap(),
            dep: 2.428_571_428,
            anx: 1.0,
            n_users: 70,
            sum_weights: 70.0,
            provenance: Provenance::Super,
        }];
        let mut buf = Vec::new();
        write_region_cells(&mut buf, &cells).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("county,36061,2020,10,2.428571,1.000000,70,super,week"));
        let back = read_region_cells(buf.as_slice()).unwrap();
        assert_eq!(back[0].n_users, 70);
        assert_eq!(back[0].provenance, Provenance::Super);
    }

    #[test]
    fn lexicon_round_trip() {
        let csv = "term,category,weight\n_intercept,DEP,2.0\nhappy,DEP,-0.5\nsad,DEP,0.25\n";
        let lex = read_lexicon(csv.as_bytes(), "t").unwrap();
        assert_eq!(lex.intercept(Outcome::Dep), Some(2.0));
        let mut buf = Vec::new();
        write_lexicon(&mut buf, &lex).unwrap();
        assert_eq!(read_lexicon(buf.as_slice(), "t").unwrap(), lex);
        assert!(read_lexicon("term,weight\n".as_bytes(), "t").is_err());
    }

    #[test]
    fn user_scores_full_precision() {
        let s = vec![UserScore {
            user_id: "u1".into(),
            region: RegionCode::county("01001").unwrap(),
            cell: TimeCell::week(2020, 1).unwrap(),
            dep: 1.0 / 3.0,
            anx: 2.0_f64.sqrt(),
            weight: 0.7,
        }];
        let mut buf = Vec::new();
        write_user_scores(&mut buf, &s).unwrap();
        assert_eq!(read_user_scores(buf.as_slice()).unwrap(), s);
    }

    #[test]
    fn posts_jsonl_round_trip() {
        let cfg = crate::synth::SynthConfig { n_counties: 1, users_per_county: (2, 2), weeks: 1, ..Default::default() };
        let corpus = crate::synth::generate_corpus(&cfg).unwrap();
        let mut buf = Vec::new();
        write_posts_jsonl(&mut buf, &corpus.posts).unwrap();
        let parsed = parse_posts(buf.as_slice(), InputFormat::Jsonl).unwrap();
        assert_eq!(parsed.malformed, 0);
        assert_eq!(parsed.posts, corpus.posts);
    }

    #[test]
    fn region_inference_and_misc_readers() {
        assert_eq!(infer_region("1001").unwrap(), RegionCode::county("01001").unwrap());
        assert_eq!(infer_region("NY").unwrap().level(), RegionLevel::State);
        assert!(infer_region("ny").is_err());
        let m = read_mapping("fips,state,census_region\n1001,AL,South\n".as_bytes()).unwrap();
        assert_eq!(m.county("01001").unwrap().state, "AL");
        let c = read_criteria("county_fips,variable,value\n01001,income,3.5\n".as_bytes()).unwrap();
        assert_eq!(c["01001"]["income"], 3.5);
        let e = read_events("date,label\n2020-03-15,lockdown\n".as_bytes()).unwrap();
        assert_eq!(e[0].1, "lockdown");
        let err = read_weights("user_id,iso_year,iso_week,weight\nu1,2020,60,1.0\n".as_bytes(), 1.0).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }
}
