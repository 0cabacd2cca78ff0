//! Run manifests and report files.
//!
//! Reports start with a single `# generated unix=<secs>` line; everything
//! after it depends only on the run configuration and the inputs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{RunConfig, Seeds};
use crate::error::{CliError, CliResult};

pub const TIMESTAMP_PREFIX: &str = "# generated unix=";

pub fn timestamp_line() -> String {
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    format!("{TIMESTAMP_PREFIX}{secs}\n")
}

/// Writes `body` behind a timestamp header.
pub fn write_report(path: &Path, body: &str) -> CliResult<()> {
    let mut text = timestamp_line();
    text.push_str(body);
    write_file(path, text.as_bytes())
}

pub fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

/// Hash of a blob framed like a git object: `sha256("blob <len>\0" ++ bytes)`.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

/// Blob hash of a file's contents, ignoring a leading timestamp line so
/// that reports from repeated runs hash the same.
fn content_hash(bytes: &[u8]) -> String {
    match std::str::from_utf8(bytes) {
        Ok(text) if text.starts_with(TIMESTAMP_PREFIX) => blob_hash(strip_timestamp(text).as_bytes()),
        _ => blob_hash(bytes),
    }
}

/// Hash of a directory as a sorted `<hash> <relative path>` listing, which is
/// itself hashed as a blob.
fn tree_hash(dir: &Path) -> CliResult<String> {
    let mut files = Vec::new();
    collect_files(dir, dir, &mut files)?;
    files.sort();
    let mut listing = String::new();
    for rel in &files {
        let path = dir.join(rel);
        let bytes = std::fs::read(&path).map_err(|e| CliError::io(&path, e))?;
        writeln!(listing, "{} {}", content_hash(&bytes), rel.display()).expect("string write");
    }
    Ok(blob_hash(listing.as_bytes()))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> CliResult<()> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| CliError::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            out.push(path.strip_prefix(root).expect("under root").to_path_buf());
        }
    }
    Ok(())
}

pub fn path_hash(path: &Path) -> CliResult<String> {
    if path.is_dir() {
        tree_hash(path)
    } else {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        Ok(content_hash(&bytes))
    }
}

#[derive(Debug, Serialize)]
struct FileHash {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct ManifestDoc<'a> {
    command: &'a str,
    /// Hash over the sorted input hashes.
    input_hash: String,
    seeds: Seeds,
    inputs: Vec<FileHash>,
    outputs: Vec<FileHash>,
    config: &'a RunConfig,
}

/// Inputs and outputs of one command, written as `<command>.manifest.toml`
/// in the output directory.
#[derive(Debug, Default)]
pub struct Manifest {
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Manifest {
    pub fn input(&mut self, path: impl Into<PathBuf>) {
        self.inputs.push(path.into());
    }

    pub fn output(&mut self, path: impl Into<PathBuf>) {
        self.outputs.push(path.into());
    }

    fn hashes(paths: &[PathBuf], base: &Path) -> CliResult<Vec<FileHash>> {
        let mut v = paths
            .iter()
            .map(|p| {
                let shown = p.strip_prefix(base).unwrap_or(p);
                Ok(FileHash { path: shown.display().to_string(), sha256: path_hash(p)? })
            })
            .collect::<CliResult<Vec<_>>>()?;
        v.sort_by(|a, b| a.path.cmp(&b.path));
        Ok(v)
    }

    pub fn write(&self, command: &str, cfg: &RunConfig) -> CliResult<PathBuf> {
        let inputs = Self::hashes(&self.inputs, &cfg.out)?;
        let outputs = Self::hashes(&self.outputs, &cfg.out)?;
        let mut listing = String::new();
        for f in &inputs {
            writeln!(listing, "{} {}", f.sha256, f.path).expect("string write");
        }
        let doc = ManifestDoc {
            command,
            input_hash: blob_hash(listing.as_bytes()),
            seeds: cfg.seeds(),
            inputs,
            outputs,
            config: cfg,
        };
        let body = toml::to_string(&doc).map_err(|e| CliError::Config(format!("manifest serialization: {e}")))?;
        let path = cfg.out.join(format!("{command}.manifest.toml"));
        write_report(&path, &body)?;
        Ok(path)
    }
}

/// Report text with the timestamp line removed, for comparisons.
pub fn strip_timestamp(text: &str) -> &str {
    match text.strip_prefix(TIMESTAMP_PREFIX) {
        Some(rest) => rest.split_once('\n').map_or("", |(_, body)| body),
        None => text,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_hash_matches_git_framing() {
        // `printf 'hello\n' | git hash-object --object-format=sha256 --stdin`
        assert_eq!(blob_hash(b"hello\n"), "2cf8d83d9ee29543b34a87727421fdecb7e3f3a183d337639025de576db9ebb4");
    }

    #[test]
    fn tree_hash_is_order_independent_and_content_sensitive() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        std::fs::create_dir(a.path().join("sub")).unwrap();
        std::fs::create_dir(b.path().join("sub")).unwrap();
        std::fs::write(a.path().join("x"), "1").unwrap();
        std::fs::write(a.path().join("sub/y"), "2").unwrap();
        std::fs::write(b.path().join("sub/y"), "2").unwrap();
        std::fs::write(b.path().join("x"), "1").unwrap();
        assert_eq!(path_hash(a.path()).unwrap(), path_hash(b.path()).unwrap());
        std::fs::write(b.path().join("x"), "3").unwrap();
        assert_ne!(path_hash(a.path()).unwrap(), path_hash(b.path()).unwrap());
    }

    #[test]
    fn report_hash_ignores_the_timestamp() {
        let a = format!("{TIMESTAMP_PREFIX}1\nbody\n");
        let b = format!("{TIMESTAMP_PREFIX}2\nbody\n");
        assert_eq!(content_hash(a.as_bytes()), content_hash(b.as_bytes()));
        assert_eq!(content_hash(b"raw"), blob_hash(b"raw"));
    }

    #[test]
    fn timestamp_is_confined_to_first_line() {
        let text = format!("{}body\nmore\n", timestamp_line());
        assert_eq!(strip_timestamp(&text), "body\nmore\n");
        assert_eq!(strip_timestamp("plain\n"), "plain\n");
    }
}
