use std::collections::BTreeMap;
use std::path::{Component, Path, PathBuf};

use anyhow::{bail, Context};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{hex, RunConfig};

/// A run's output directory. Every write goes through here so nothing lands
/// outside `root`.
pub struct Output {
    root: PathBuf,
}

#[derive(Serialize)]
struct FileDigest {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    config_hash: String,
    config_file: &'a str,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
}

fn check_relative(rel: &str) -> anyhow::Result<()> {
    let p = Path::new(rel);
    if rel.is_empty() || p.components().any(|c| !matches!(c, Component::Normal(_))) {
        bail!("output path {rel:?} must stay inside the output directory");
    }
    Ok(())
}

fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

/// Files under `dir`, sorted, relative to `dir` with `/` separators.
fn walk(dir: &Path) -> anyhow::Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).with_context(|| format!("listing {}", d.display()))? {
            let p = entry?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir)?.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect::<Vec<_>>().join("/");
                out.push((rel, p));
            }
        }
    }
    out.sort();
    Ok(out)
}

impl Output {
    pub fn create(root: &Path) -> anyhow::Result<Self> {
        std::fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self { root: root.to_path_buf() })
    }

    /// Path of `rel` inside the run directory, with parents created.
    pub fn path(&self, rel: &str) -> anyhow::Result<PathBuf> {
        check_relative(rel)?;
        let p = self.root.join(rel);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        Ok(p)
    }

    /// Directory `rel` inside the run directory, created.
    pub fn dir(&self, rel: &str) -> anyhow::Result<PathBuf> {
        check_relative(rel)?;
        let p = self.root.join(rel);
        std::fs::create_dir_all(&p).with_context(|| format!("creating {}", p.display()))?;
        Ok(p)
    }

    pub fn write(&self, rel: &str, bytes: impl AsRef<[u8]>) -> anyhow::Result<PathBuf> {
        let p = self.path(rel)?;
        std::fs::write(&p, bytes).with_context(|| format!("writing {}", p.display()))?;
        Ok(p)
    }

    /// Writes `config.toml` and `manifest.json`. Inputs that are directories
    /// contribute every file below them.
    pub fn finish(&self, command: &str, config: &RunConfig, inputs: &[PathBuf]) -> anyhow::Result<()> {
        self.write("config.toml", config.to_toml()?)?;
        let mut ins = BTreeMap::new();
        for p in inputs {
            if p.is_dir() {
                for (rel, full) in walk(p)? {
                    ins.insert(format!("{}/{rel}", p.display()), sha256_file(&full)?);
                }
            } else {
                ins.insert(p.display().to_string(), sha256_file(p)?);
            }
        }
        let mut outs = Vec::new();
        for (rel, full) in walk(&self.root)? {
            if rel != "manifest.json" {
                outs.push(FileDigest { sha256: sha256_file(&full)?, path: rel });
            }
        }
        let manifest = Manifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            seed: config.seed,
            config_hash: config.hash()?,
            config_file: "config.toml",
            inputs: ins.into_iter().map(|(path, sha256)| FileDigest { path, sha256 }).collect(),
            outputs: outs,
        };
        self.write("manifest.json", serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(())
    }
}
