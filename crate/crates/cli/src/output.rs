//! Artifact writing. Existing files are never replaced: a clash appends a
//! version suffix (`report.json`, `report.v2.json`, `report.v3.json`, ...).

use std::fs::OpenOptions;
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};

fn versioned_name(name: &str, version: usize) -> String {
    if version == 1 {
        return name.to_string();
    }
    match name.rsplit_once('.') {
        Some((stem, ext)) => format!("{stem}.v{version}.{ext}"),
        None => format!("{name}.v{version}"),
    }
}

/// Writes `contents` to the first free versioned name under `dir`.
pub fn write_versioned(dir: &Path, name: &str, contents: &str) -> std::io::Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    for version in 1.. {
        let path = dir.join(versioned_name(name, version));
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut file) => {
                file.write_all(contents.as_bytes())?;
                return Ok(path);
            }
            Err(e) if e.kind() == ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e),
        }
    }
    unreachable!("version counter is unbounded")
}
