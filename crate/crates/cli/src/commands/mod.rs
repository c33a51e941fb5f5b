pub mod adapt;
pub mod analyze;
pub mod reliability;
pub mod score;
pub mod synth;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use lbmha::aggregate::RegionCell;
use lbmha::formats;
use lbmha::ingest::{parse_posts, InputFormat, Post};
use lbmha::Result;

use crate::config::Settings;
use crate::manifest::write_manifest;

pub use adapt::AdaptArgs;
pub use analyze::AnalyzeCommand;
pub use reliability::ReliabilityArgs;
pub use score::ScoreArgs;
pub use synth::SynthArgs;

/// Copy flag values over config entries. Absent flags leave the config alone.
pub(crate) fn overlay(settings: &mut Settings, flags: Vec<(&str, Option<String>)>) {
    for (k, v) in flags {
        if let Some(v) = v {
            settings.set(k, v);
        }
    }
}

pub(crate) fn opt<T: ToString>(v: &Option<T>) -> Option<String> {
    v.as_ref().map(ToString::to_string)
}

pub(crate) fn on(flag: bool) -> Option<String> {
    flag.then(|| "true".to_string())
}

/// One command invocation: settings, output directory and the inputs read.
pub(crate) struct Run {
    pub settings: Settings,
    pub out_dir: PathBuf,
    command: String,
    inputs: Vec<(&'static str, PathBuf)>,
}

impl Run {
    pub fn new(command: &str, settings: Settings, allowed: &[&str]) -> Result<Self> {
        settings.check_keys(allowed)?;
        let out_dir = PathBuf::from(settings.raw("output").unwrap_or("."));
        std::fs::create_dir_all(&out_dir)
            .map_err(|e| lbmha::Error::Config(format!("cannot create output dir {}: {e}", out_dir.display())))?;
        Ok(Run { settings, out_dir, command: command.to_string(), inputs: Vec::new() })
    }

    pub fn input(&mut self, key: &'static str) -> Result<Option<PathBuf>> {
        let p = self.settings.input(key)?;
        if let Some(p) = &p {
            self.inputs.push((key, p.clone()));
        }
        Ok(p)
    }

    pub fn required(&mut self, key: &'static str) -> Result<PathBuf> {
        let p = self.settings.required_input(key)?;
        self.inputs.push((key, p.clone()));
        Ok(p)
    }

    pub fn create(&self, name: &str) -> Result<BufWriter<File>> {
        Ok(BufWriter::new(File::create(self.out_dir.join(name))?))
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<()> {
        let mut f = self.create(name)?;
        f.write_all(text.as_bytes())?;
        f.flush()?;
        Ok(())
    }

    pub fn finish(self) -> Result<()> {
        write_manifest(&self.out_dir, &self.command, &self.settings, &self.inputs)
    }
}

pub(crate) fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path)?))
}

pub(crate) fn load_posts(path: &Path, format: Option<&str>) -> Result<Vec<Post>> {
    let format = match format {
        Some(f) => f.parse()?,
        None => InputFormat::from_path(path),
    };
    let parsed = parse_posts(open(path)?, format)?;
    log::info!("read {} posts from {} ({} malformed)", parsed.posts.len(), path.display(), parsed.malformed);
    Ok(parsed.posts)
}

pub(crate) fn load_cells(path: &Path) -> Result<Vec<RegionCell>> {
    formats::read_region_cells(open(path)?)
}

pub(crate) fn file_stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "lexicon".to_string(), |s| s.to_string_lossy().into_owned())
}
