use std::io::Write;

use clap::Args;
use lbmha::adapt::{adapt_pipeline, corpus_stats, user_frequencies, AdaptParams, CorpusStats, NameList};
use lbmha::formats;
use lbmha::ingest::{filter_posts, group_posts};
use lbmha::scoring::extract_features;
use lbmha::{Error, Result, TimeUnit};

use super::{file_stem, load_posts, open, opt, overlay, Run};
use crate::config::Settings;

const KEYS: &[&str] = &["source", "target", "lexicon", "names", "usage-bound", "frequency-bound"];

#[derive(Args, Debug)]
pub struct AdaptArgs {
    /// Posts from the corpus the lexicon was trained on.
    #[arg(long)]
    source: Option<String>,
    /// Posts from the corpus the lexicon will be applied to.
    #[arg(long)]
    target: Option<String>,
    #[arg(long)]
    lexicon: Option<String>,
    /// One name per line; matching terms are removed.
    #[arg(long)]
    names: Option<String>,
    /// Maximum absolute log10 ratio of target to source usage.
    #[arg(long)]
    usage_bound: Option<f64>,
    /// Maximum absolute standardized frequency difference.
    #[arg(long)]
    frequency_bound: Option<f64>,
}

fn stats_for(path: &std::path::Path) -> Result<CorpusStats> {
    let posts = filter_posts(load_posts(path, None)?);
    let (grouped, _) = group_posts(posts, TimeUnit::Year);
    corpus_stats(&user_frequencies(&extract_features(&grouped)))
}

pub fn run(mut settings: Settings, a: AdaptArgs) -> Result<()> {
    overlay(
        &mut settings,
        vec![
            ("source", a.source),
            ("target", a.target),
            ("lexicon", a.lexicon),
            ("names", a.names),
            ("usage-bound", opt(&a.usage_bound)),
            ("frequency-bound", opt(&a.frequency_bound)),
        ],
    );
    let mut run = Run::new("adapt", settings, KEYS)?;
    let defaults = AdaptParams::default();
    let params = AdaptParams {
        usage_bound: run.settings.get_or("usage-bound", defaults.usage_bound)?,
        frequency_bound: run.settings.get_or("frequency-bound", defaults.frequency_bound)?,
    };
    if !(params.usage_bound > 0.0 && params.frequency_bound >= 0.0) {
        return Err(Error::Config("usage-bound must be > 0 and frequency-bound >= 0".into()));
    }
    let names_path = run.required("names")?;
    let lex_path = run.required("lexicon")?;
    let source_path = run.required("source")?;
    let target_path = run.required("target")?;

    let names = NameList::load(&names_path)?;
    let base = formats::read_lexicon(open(&lex_path)?, &file_stem(&lex_path))?;
    let source = stats_for(&source_path)?;
    let target = stats_for(&target_path)?;
    let adapted = adapt_pipeline(&source, &target, &base, &names, params)?;

    let mut w = run.create("adapt_audit.csv")?;
    formats::write_audit(&mut w, &adapted.decisions)?;
    w.flush()?;
    let Some(lexicon) = &adapted.lexicon else {
        return Err(Error::NoContent("every lexicon term was filtered out; see adapt_audit.csv".into()));
    };
    let mut w = run.create("adapted_lexicon.csv")?;
    formats::write_lexicon(&mut w, lexicon)?;
    w.flush()?;

    let mut counts = std::collections::BTreeMap::new();
    for d in &adapted.decisions {
        *counts.entry(d.reason.as_str()).or_insert(0usize) += 1;
    }
    println!("{} of {} terms kept", lexicon.len(), base.len());
    for (reason, n) in counts {
        println!("  {reason:<10} {n}");
    }
    run.finish()
}
