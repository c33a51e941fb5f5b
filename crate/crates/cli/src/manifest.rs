use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::{Path, PathBuf};

use lbmha::Result;
use sha2::{Digest, Sha256};

use crate::config::Settings;

pub const MANIFEST_FILE: &str = "run_manifest.txt";

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut h = Sha256::new();
    let mut r = BufReader::new(File::open(path)?);
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = r.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

/// Record what produced an output directory: tool version, command, config
/// hash, the settings themselves, and a checksum per input file.
pub fn write_manifest(out_dir: &Path, command: &str, settings: &Settings, inputs: &[(&str, PathBuf)]) -> Result<()> {
    let mut f = File::create(out_dir.join(MANIFEST_FILE))?;
    writeln!(f, "tool lbmha {}", env!("CARGO_PKG_VERSION"))?;
    writeln!(f, "command {command}")?;
    writeln!(f, "config_hash {}", settings.hash())?;
    for (k, v) in settings.entries() {
        if k != "workers" && k != "output" {
            writeln!(f, "setting {k}={v}")?;
        }
    }
    for (key, path) in inputs {
        writeln!(f, "input {key} {} sha256={}", path.display(), sha256_file(path)?)?;
    }
    Ok(())
}
