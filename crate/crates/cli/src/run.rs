//! Run directories and their manifests.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use sha2::{Digest, Sha256};

use mpkit::{Error, Result};

pub const MANIFEST: &str = "manifest.txt";
pub const CONFIG: &str = "config.txt";
pub const OUTPUTS: &str = "outputs";

pub fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.to_path_buf(), source }
}

/// Git-style object hash: SHA-256 of `blob <len>\0` followed by the content.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of a file, or of every file under a directory (tree-style: sorted
/// `hash  relative/path` lines, hashed again).
pub fn path_hash(path: &Path) -> Result<String> {
    let meta = fs::metadata(path).map_err(|e| io_err(path, e))?;
    if meta.is_file() {
        return Ok(blob_hash(&fs::read(path).map_err(|e| io_err(path, e))?));
    }
    let mut files = Vec::new();
    collect_files(path, path, &mut files)?;
    files.sort();
    let mut listing = String::new();
    for rel in files {
        let full = path.join(&rel);
        let bytes = fs::read(&full).map_err(|e| io_err(&full, e))?;
        let _ = writeln!(listing, "{}  {}", blob_hash(&bytes), rel.display());
    }
    Ok(blob_hash(listing.as_bytes()))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| io_err(dir, e))? {
        let entry = entry.map_err(|e| io_err(dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            out.push(path.strip_prefix(root).expect("walked below root").to_path_buf());
        }
    }
    Ok(())
}

/// An open run directory. Dropping it without `finish` leaves no manifest.
pub struct Run {
    pub dir: PathBuf,
    command: &'static str,
    seed: u64,
    started: DateTime<Utc>,
    config_sha: String,
    inputs: Vec<(String, String)>,
    checkpoint: Option<PathBuf>,
    metrics: Option<PathBuf>,
}

impl Run {
    /// Creates `<out>/<timestamp>-<command>` (with a numeric suffix if that
    /// already exists) and writes the configuration snapshot.
    pub fn create(out: &Path, command: &'static str, seed: u64, config_text: &str) -> Result<Run> {
        fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
        let started = Utc::now();
        let stem = format!("{}-{command}", started.format("%Y%m%d-%H%M%S"));
        let mut dir = out.join(&stem);
        let mut n = 1;
        loop {
            match fs::create_dir(&dir) {
                Ok(()) => break,
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    n += 1;
                    dir = out.join(format!("{stem}-{n}"));
                }
                Err(e) => return Err(io_err(&dir, e)),
            }
        }
        let outputs = dir.join(OUTPUTS);
        fs::create_dir(&outputs).map_err(|e| io_err(&outputs, e))?;
        let config_path = dir.join(CONFIG);
        fs::write(&config_path, config_text).map_err(|e| io_err(&config_path, e))?;
        Ok(Run {
            dir,
            command,
            seed,
            started,
            config_sha: sha256_hex(config_text.as_bytes()),
            inputs: Vec::new(),
            checkpoint: None,
            metrics: None,
        })
    }

    pub fn outputs(&self) -> PathBuf {
        self.dir.join(OUTPUTS)
    }

    /// Records an input file or directory under `label`.
    pub fn input(&mut self, label: &str, path: &Path) -> Result<()> {
        let hash = path_hash(path)?;
        self.inputs.push((label.to_string(), hash));
        Ok(())
    }

    pub fn set_checkpoint(&mut self, path: PathBuf) {
        self.checkpoint = Some(path);
    }

    pub fn set_metrics(&mut self, path: PathBuf) {
        self.metrics = Some(path);
    }

    /// Combined hash of the configuration, seed and every recorded input.
    pub fn input_hash(&self) -> String {
        let mut listing = format!("command {}\nseed {}\nconfig {}\n", self.command, self.seed, self.config_sha);
        for (label, hash) in &self.inputs {
            let _ = writeln!(listing, "input {label} {hash}");
        }
        blob_hash(listing.as_bytes())
    }

    /// Writes the manifest and returns the run directory.
    pub fn finish(self, outcome: &Result<()>) -> Result<PathBuf> {
        let stamp = |t: DateTime<Utc>| t.to_rfc3339_opts(SecondsFormat::Millis, true);
        let rel = |p: &Option<PathBuf>| match p {
            Some(p) => p.strip_prefix(&self.dir).unwrap_or(p).display().to_string(),
            None => "none".to_string(),
        };
        let status = match outcome {
            Ok(()) => "ok".to_string(),
            Err(e) => format!("failed ({:?}): {e}", e.category()).to_lowercase(),
        };
        let mut text = String::new();
        let _ = writeln!(text, "command = {}", self.command);
        let _ = writeln!(text, "status = {}", status.replace('\n', " "));
        let _ = writeln!(text, "seed = {}", self.seed);
        let _ = writeln!(text, "config = {CONFIG}");
        let _ = writeln!(text, "config_sha256 = {}", self.config_sha);
        let _ = writeln!(text, "started = {}", stamp(self.started));
        let _ = writeln!(text, "finished = {}", stamp(Utc::now()));
        let _ = writeln!(text, "checkpoint = {}", rel(&self.checkpoint));
        let _ = writeln!(text, "metrics = {}", rel(&self.metrics));
        for (label, hash) in &self.inputs {
            let _ = writeln!(text, "input.{label} = {hash}");
        }
        let _ = writeln!(text, "input_hash = {}", self.input_hash());
        let path = self.dir.join(MANIFEST);
        fs::write(&path, text).map_err(|e| io_err(&path, e))?;
        Ok(self.dir)
    }
}
