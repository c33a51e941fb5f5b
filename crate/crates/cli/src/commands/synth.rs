use std::io::Write;

use clap::Args;
use lbmha::aggregate::{Provenance, RegionCell};
use lbmha::analysis::SurveyRow;
use lbmha::formats;
use lbmha::synth::{
    generate_corpus, generate_event_series, generate_panel, generate_user_scores, EventSeriesConfig, PanelConfig,
    ScoreSynthConfig, SynthConfig,
};
use lbmha::{Error, RegionCode, Result};

use super::{overlay, Run};
use crate::config::Settings;

const CORPUS_KEYS: &[&str] = &[
    "n-counties",
    "users-min",
    "users-max",
    "weeks",
    "start-year",
    "start-week",
    "vocab-size",
    "tokens",
    "posts-min",
    "posts-max",
    "latent-min",
    "latent-max",
    "noise",
];
const SCORES_KEYS: &[&str] = &["n-counties", "weeks", "users-min", "users-max", "mean-min", "mean-max", "user-sigma"];
const PANEL_KEYS: &[&str] = &["entities", "periods", "beta", "entity-scale", "confound", "noise"];
const EVENTS_KEYS: &[&str] = &["year", "base-level", "sigma", "event-weeks", "shock-sd"];

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// corpus, scores, panel or events.
    #[arg(long)]
    kind: Option<String>,
    /// Generator parameter as key=value; repeatable.
    #[arg(long = "param", value_name = "KEY=VALUE")]
    params: Vec<String>,
}

pub fn run(mut settings: Settings, a: SynthArgs) -> Result<()> {
    let mut flags = vec![("kind", a.kind)];
    let mut pairs = Vec::new();
    for p in &a.params {
        let (k, v) = p.split_once('=').ok_or_else(|| Error::Config(format!("--param expects key=value, got '{p}'")))?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    for (k, v) in &pairs {
        flags.push((k.as_str(), Some(v.clone())));
    }
    overlay(&mut settings, flags);
    let kind = settings.raw("kind").unwrap_or("corpus").to_string();
    let keys: Vec<&str> = match kind.as_str() {
        "corpus" => CORPUS_KEYS,
        "scores" => SCORES_KEYS,
        "panel" => PANEL_KEYS,
        "events" => EVENTS_KEYS,
        other => return Err(Error::Config(format!("unknown synth kind '{other}' (corpus, scores, panel or events)"))),
    }
    .iter()
    .copied()
    .chain(["kind"])
    .collect();
    let run = Run::new(&format!("synth {kind}"), settings, &keys)?;
    let s = &run.settings;
    let seed = s.seed()?;
    match kind.as_str() {
        "corpus" => {
            let d = SynthConfig::default();
            let cfg = SynthConfig {
                n_counties: s.get_or("n-counties", d.n_counties)?,
                users_per_county: (s.get_or("users-min", d.users_per_county.0)?, s.get_or("users-max", d.users_per_county.1)?),
                weeks: s.get_or("weeks", d.weeks)?,
                start_year: s.get_or("start-year", d.start_year)?,
                start_week: s.get_or("start-week", d.start_week)?,
                vocab_size: s.get_or("vocab-size", d.vocab_size)?,
                tokens_per_user_week: s.get_or("tokens", d.tokens_per_user_week)?,
                posts_per_user_week: (
                    s.get_or("posts-min", d.posts_per_user_week.0)?,
                    s.get_or("posts-max", d.posts_per_user_week.1)?,
                ),
                latent_range: (s.get_or("latent-min", d.latent_range.0)?, s.get_or("latent-max", d.latent_range.1)?),
                noise_sigma: s.get_or("noise", d.noise_sigma)?,
                seed,
            };
            let corpus = generate_corpus(&cfg)?;
            let mut w = run.create("posts.jsonl")?;
            formats::write_posts_jsonl(&mut w, &corpus.posts)?;
            w.flush()?;
            let mut w = run.create("truth.csv")?;
            formats::write_truth(&mut w, &corpus.truth)?;
            w.flush()?;
            let mut w = run.create("lexicon.csv")?;
            formats::write_lexicon(&mut w, &corpus.lexicon)?;
            w.flush()?;
            let mut w = run.create("mapping.csv")?;
            formats::write_mapping(&mut w, &corpus.mapping)?;
            w.flush()?;
            println!("{} posts, {} user-weeks", corpus.posts.len(), corpus.truth.len());
        }
        "scores" => {
            let d = ScoreSynthConfig::default();
            let cfg = ScoreSynthConfig {
                n_counties: s.get_or("n-counties", d.n_counties)?,
                weeks: s.get_or("weeks", d.weeks)?,
                users_per_cell: (s.get_or("users-min", d.users_per_cell.0)?, s.get_or("users-max", d.users_per_cell.1)?),
                mean_range: (s.get_or("mean-min", d.mean_range.0)?, s.get_or("mean-max", d.mean_range.1)?),
                user_sigma: s.get_or("user-sigma", d.user_sigma)?,
                seed,
            };
            let scores = generate_user_scores(&cfg)?;
            let mut w = run.create("user_scores.csv")?;
            formats::write_user_scores(&mut w, &scores)?;
            w.flush()?;
            println!("{} user scores", scores.len());
        }
        "panel" => {
            let cfg = PanelConfig {
                n_entities: s.get_or("entities", 200)?,
                n_periods: s.get_or("periods", 20)?,
                beta: s.get_or("beta", 0.7)?,
                entity_effect_scale: s.get_or("entity-scale", 1.0)?,
                confound: s.raw("confound").is_none() || s.flag("confound")?,
                noise: s.get_or("noise", 0.1)?,
                seed,
            };
            let panel = generate_panel(&cfg)?;
            let cells: Vec<RegionCell> = panel
                .iter()
                .map(|o| observed(o.region.clone(), o.cell, o.x))
                .collect();
            let survey: Vec<SurveyRow> = panel
                .iter()
                .map(|o| SurveyRow { region: o.region.clone(), cell: o.cell, value: o.y, n_respondents: 0 })
                .collect();
            let mut w = run.create("panel_language.csv")?;
            formats::write_region_cells(&mut w, &cells)?;
            w.flush()?;
            let mut w = run.create("panel_survey.csv")?;
            formats::write_survey(&mut w, &survey)?;
            w.flush()?;
            println!("{} panel observations", panel.len());
        }
        _ => {
            let weeks: Vec<u32> = s.list("event-weeks", "10,20,30,40,50")?;
            let cfg = EventSeriesConfig {
                year: s.get_or("year", 2020)?,
                base_level: s.get_or("base-level", 2.5)?,
                sigma: s.get_or("sigma", 0.02)?,
                event_weeks: weeks,
                shock_sd: s.get_or("shock-sd", 3.0)?,
                seed,
            };
            let (series, calendar) = generate_event_series(&cfg)?;
            let cells: Vec<RegionCell> = series.iter().map(|(c, v)| observed(RegionCode::nation(), *c, *v)).collect();
            let mut w = run.create("event_series.csv")?;
            formats::write_region_cells(&mut w, &cells)?;
            w.flush()?;
            let mut w = run.create("events.csv")?;
            formats::write_events(&mut w, calendar.events())?;
            w.flush()?;
            println!("{} weeks, {} events", series.len(), calendar.events().len());
        }
    }
    run.finish()
}

fn observed(region: RegionCode, cell: lbmha::TimeCell, v: f64) -> RegionCell {
    RegionCell { region, cell, dep: v, anx: v, n_users: 1, sum_weights: 1.0, provenance: Provenance::Observed }
}
