use std::io::Write;

use clap::Args;
use lbmha::aggregate::SuperWeighting;
use lbmha::formats;
use lbmha::pipeline::{run_score, ScoreParams};
use lbmha::scoring::{LexiconMode, WeightTable, WeightingMode};
use lbmha::{Error, Result, TimeUnit};

use super::{file_stem, load_posts, on, open, opt, overlay, Run};
use crate::config::Settings;

const KEYS: &[&str] = &[
    "posts",
    "format",
    "lexicon",
    "weights",
    "default-weight",
    "mapping",
    "unit",
    "ut",
    "min-posts",
    "max-gap",
    "dense-lexicon",
    "multiply-weights",
    "super-weighting",
    "no-interpolate",
    "shards",
];

#[derive(Args, Debug)]
pub struct ScoreArgs {
    /// Post file, JSONL or CSV.
    #[arg(long)]
    posts: Option<String>,
    /// Force the post format (jsonl or csv) instead of using the extension.
    #[arg(long)]
    format: Option<String>,
    /// Weighted lexicon CSV (term, category, weight).
    #[arg(long)]
    lexicon: Option<String>,
    /// Post-stratification weights CSV.
    #[arg(long)]
    weights: Option<String>,
    #[arg(long)]
    default_weight: Option<f64>,
    /// County to state and census-region mapping; enables super counties.
    #[arg(long)]
    mapping: Option<String>,
    /// year, quarter, month, week or day.
    #[arg(long)]
    unit: Option<String>,
    /// Minimum reporting users per county-period (50 and 200 are standard).
    #[arg(long)]
    ut: Option<usize>,
    #[arg(long)]
    min_posts: Option<usize>,
    /// Drop regions whose longest run of missing periods reaches this.
    #[arg(long)]
    max_gap: Option<usize>,
    /// Score every lexicon term, including ones a user never wrote.
    #[arg(long)]
    dense_lexicon: bool,
    /// Multiply scores by weights instead of taking a weighted mean.
    #[arg(long)]
    multiply_weights: bool,
    /// users or weights.
    #[arg(long)]
    super_weighting: Option<String>,
    #[arg(long)]
    no_interpolate: bool,
    #[arg(long)]
    shards: Option<usize>,
}

pub fn run(mut settings: Settings, a: ScoreArgs) -> Result<()> {
    overlay(
        &mut settings,
        vec![
            ("posts", a.posts),
            ("format", a.format),
            ("lexicon", a.lexicon),
            ("weights", a.weights),
            ("default-weight", opt(&a.default_weight)),
            ("mapping", a.mapping),
            ("unit", a.unit),
            ("ut", opt(&a.ut)),
            ("min-posts", opt(&a.min_posts)),
            ("max-gap", opt(&a.max_gap)),
            ("dense-lexicon", on(a.dense_lexicon)),
            ("multiply-weights", on(a.multiply_weights)),
            ("super-weighting", a.super_weighting),
            ("no-interpolate", on(a.no_interpolate)),
            ("shards", opt(&a.shards)),
        ],
    );
    let mut run = Run::new("score", settings, KEYS)?;
    let s = &run.settings;
    let defaults = ScoreParams::default();
    let params = ScoreParams {
        unit: s.get_or::<TimeUnit>("unit", defaults.unit)?,
        min_posts: s.get_or("min-posts", defaults.min_posts)?,
        ut: s.get_or("ut", defaults.ut)?,
        max_gap: s.get_or("max-gap", defaults.max_gap)?,
        lexicon_mode: if s.flag("dense-lexicon")? { LexiconMode::Dense } else { LexiconMode::Sparse },
        weighting: if s.flag("multiply-weights")? { WeightingMode::Multiply } else { WeightingMode::Normalized },
        super_weighting: match s.raw("super-weighting").unwrap_or("users") {
            "users" => SuperWeighting::Users,
            "weights" => SuperWeighting::Weights,
            other => return Err(Error::Config(format!("unknown super-weighting '{other}' (users or weights)"))),
        },
        interpolate: !s.flag("no-interpolate")?,
        shards: s.get_or("shards", rayon::current_num_threads())?,
    };
    let default_weight: f64 = s.get_or("default-weight", 1.0)?;
    let format = s.raw("format").map(str::to_string);

    let posts_path = run.required("posts")?;
    let lex_path = run.required("lexicon")?;
    let weights_path = run.input("weights")?;
    let mapping_path = run.input("mapping")?;

    let lexicon = formats::read_lexicon(open(&lex_path)?, &file_stem(&lex_path))?;
    let weights = match &weights_path {
        Some(p) => formats::read_weights(open(p)?, default_weight)?,
        None => WeightTable::new(default_weight)?,
    };
    let mapping = mapping_path.as_ref().map(|p| formats::read_mapping(open(p)?)).transpose()?;
    let posts = load_posts(&posts_path, format.as_deref())?;

    let out = run_score(posts, &lexicon, &weights, mapping.as_ref(), &params)?;

    let mut w = run.create("user_scores.csv")?;
    formats::write_user_scores(&mut w, &out.user_scores)?;
    w.flush()?;
    let mut w = run.create("region_cells.csv")?;
    formats::write_region_cells(&mut w, &out.cells)?;
    w.flush()?;
    if !out.super_regions.is_empty() {
        let mut w = run.create("super_counties.csv")?;
        writeln!(w, "state,iso_year,period,unit,members")?;
        for r in &out.super_regions {
            let members: Vec<String> = r.member_counties.iter().map(ToString::to_string).collect();
            writeln!(w, "{},{},{},{},{}", r.state, r.cell.iso_year, r.cell.index, r.cell.unit, members.join(" "))?;
        }
        w.flush()?;
    }
    let report = out.descriptives.render();
    run.write_text("descriptives.txt", &report)?;
    print!("{report}");
    println!(
        "{} user-periods scored; {} region cells reported; {} regions dropped for gaps",
        out.user_scores.len(),
        out.cells.len(),
        out.dropped_regions.len()
    );
    run.finish()
}
