//! Run directories: one per command invocation, with a manifest recording
//! the configuration hash and input digests.

use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::{DataError, UsageError};

const MANIFEST: &str = "manifest.json";
const INCOMPLETE: &str = ".incomplete";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub created: String,
    pub config_sha256: String,
    /// Command-line arguments of the command itself.
    pub arguments: String,
    pub config: RunConfig,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    /// Command-specific results (counts, metrics).
    pub summary: serde_json::Value,
}

pub fn sha256_file(path: &Path) -> anyhow::Result<(String, u64)> {
    let mut file = File::open(path).map_err(|e| DataError(format!("cannot read {}: {e}", path.display())))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut bytes = 0u64;
    loop {
        let n = file.read(&mut buf).with_context(|| format!("reading {}", path.display()))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        bytes += n as u64;
    }
    Ok((hex::encode(hasher.finalize()), bytes))
}

/// Digests of a file, or of every file below a directory in path order.
pub fn digest_path(path: &Path) -> anyhow::Result<Vec<FileDigest>> {
    if !path.exists() {
        return Err(DataError(format!("input {} does not exist", path.display())).into());
    }
    let mut files = Vec::new();
    collect_files(path, &mut files)?;
    files.sort();
    files
        .into_iter()
        .map(|f| {
            let (sha256, bytes) = sha256_file(&f)?;
            Ok(FileDigest { path: f.display().to_string(), sha256, bytes })
        })
        .collect()
}

fn collect_files(path: &Path, out: &mut Vec<PathBuf>) -> anyhow::Result<()> {
    if path.is_dir() {
        for entry in std::fs::read_dir(path).with_context(|| format!("listing {}", path.display()))? {
            let p = entry?.path();
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            if name != MANIFEST && name != INCOMPLETE {
                collect_files(&p, out)?;
            }
        }
    } else {
        out.push(path.to_path_buf());
    }
    Ok(())
}

pub struct RunDir {
    pub path: PathBuf,
    command: String,
    arguments: String,
    config: RunConfig,
    inputs: Vec<FileDigest>,
}

pub enum Prepared {
    /// A finished run with the same configuration and inputs already exists.
    UpToDate(PathBuf),
    Fresh(RunDir),
}

impl RunDir {
    /// Opens the run directory for `command`. Without an explicit directory
    /// a new one named `<command>-<timestamp>-<config hash>` is created under
    /// the configured output directory.
    pub fn prepare(
        command: &str,
        arguments: &str,
        config: &RunConfig,
        explicit: Option<&Path>,
        inputs: &[&Path],
        force: bool,
    ) -> anyhow::Result<Prepared> {
        let mut digests = Vec::new();
        for input in inputs {
            digests.extend(digest_path(input)?);
        }
        let hash = config.digest();
        let path = match explicit {
            Some(p) => p.to_path_buf(),
            None => {
                let stamp = chrono::Local::now().format("%Y%m%dT%H%M%S%.3f");
                Path::new(&config.output_dir).join(format!("{command}-{stamp}-{}", &hash[..12]))
            }
        };
        if path.join(INCOMPLETE).exists() && !force {
            return Err(UsageError(format!(
                "{} holds partial output from an interrupted run; rerun with --force to overwrite",
                path.display()
            ))
            .into());
        }
        if let Ok(text) = std::fs::read_to_string(path.join(MANIFEST)) {
            let previous: RunManifest = serde_json::from_str(&text)
                .map_err(|e| DataError(format!("{}: unreadable manifest: {e}", path.display())))?;
            if !force {
                if previous.command == command
                    && previous.arguments == arguments
                    && previous.config_sha256 == hash
                    && previous.inputs == digests
                {
                    return Ok(Prepared::UpToDate(path));
                }
                return Err(UsageError(format!(
                    "{} already holds a different `{}` run; choose another --run-dir or pass --force",
                    path.display(),
                    previous.command
                ))
                .into());
            }
        } else if path.exists() && !path.join(INCOMPLETE).exists() && std::fs::read_dir(&path)?.next().is_some() {
            // never clear a directory this tool did not create
            return Err(UsageError(format!("{} exists and is not a run directory", path.display())).into());
        }
        if force && path.exists() {
            std::fs::remove_dir_all(&path).with_context(|| format!("clearing {}", path.display()))?;
        }
        std::fs::create_dir_all(&path).with_context(|| format!("creating {}", path.display()))?;
        std::fs::write(path.join(INCOMPLETE), command).with_context(|| format!("writing into {}", path.display()))?;
        Ok(Prepared::Fresh(RunDir {
            path,
            command: command.into(),
            arguments: arguments.into(),
            config: config.clone(),
            inputs: digests,
        }))
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    /// Writes the manifest and clears the partial-output marker.
    pub fn finish(self, summary: serde_json::Value) -> anyhow::Result<PathBuf> {
        let outputs = digest_path(&self.path)?;
        let manifest = RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").into(),
            command: self.command,
            created: chrono::Local::now().to_rfc3339(),
            config_sha256: self.config.digest(),
            arguments: self.arguments,
            config: self.config,
            inputs: self.inputs,
            outputs,
            summary,
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(self.path.join(MANIFEST), text + "\n")?;
        std::fs::remove_file(self.path.join(INCOMPLETE))?;
        Ok(self.path)
    }
}
