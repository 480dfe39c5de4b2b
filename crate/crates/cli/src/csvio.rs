//! Deterministic CSV emission. Every file starts with a comment line carrying
//! the configuration hash; floats are written with the shortest round-trip
//! representation, so rerunning the same configuration reproduces the files
//! byte for byte.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

pub struct CsvWriter {
    buffer: String,
    columns: usize,
}

impl CsvWriter {
    pub fn new(config_hash: &str, header: &[&str]) -> Self {
        let mut buffer = String::new();
        let _ = writeln!(buffer, "# config_hash={config_hash}");
        let _ = writeln!(buffer, "{}", header.join(","));
        CsvWriter {
            buffer,
            columns: header.len(),
        }
    }

    pub fn row(&mut self, fields: &[String]) {
        debug_assert_eq!(fields.len(), self.columns);
        let _ = writeln!(self.buffer, "{}", fields.join(","));
    }

    pub fn contents(&self) -> &str {
        &self.buffer
    }

    pub fn write_to(&self, dir: &Path, name: &str) -> io::Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let path = dir.join(name);
        fs::write(&path, self.buffer.as_bytes())?;
        Ok(path)
    }
}

pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}
