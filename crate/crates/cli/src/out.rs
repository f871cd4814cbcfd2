//! The output directory: every file the CLI writes goes through `OutDir`,
//! which refuses paths that would leave it.

use std::fs;
use std::path::{Component, Path, PathBuf};

use mixborrow::model::hex_digest;
use mixborrow::{Error, Result};
use serde::Serialize;

pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(OutDir { root: fs::canonicalize(root)? })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Absolute path of a relative artifact name; parent directories are
    /// created.
    pub fn path(&self, rel: &str) -> Result<PathBuf> {
        let rel_path = Path::new(rel);
        if rel.is_empty() || !rel_path.components().all(|c| matches!(c, Component::Normal(_))) {
            return Err(Error::InvalidArgument(format!("artifact path '{rel}' leaves the output directory")));
        }
        let full = self.root.join(rel_path);
        if let Some(parent) = full.parent() {
            fs::create_dir_all(parent)?;
        }
        Ok(full)
    }

    /// Absolute path of a subdirectory, created if missing.
    pub fn dir(&self, rel: &str) -> Result<PathBuf> {
        let p = self.path(rel)?;
        fs::create_dir_all(&p)?;
        Ok(p)
    }
}

#[derive(Serialize)]
struct Artifact {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Input {
    path: String,
    sha256: String,
}

/// Reproducibility manifest: the command, the effective config (written
/// next to it as `config.toml`), input and artifact digests. No clocks and
/// no host details, so reruns produce the same bytes.
#[derive(Serialize)]
pub struct Manifest {
    command: String,
    version: String,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    spec_hash: Option<String>,
    config: String,
    rerun: String,
    inputs: Vec<Input>,
    artifacts: Vec<Artifact>,
}

impl Manifest {
    pub fn new(command: &str, seed: u64) -> Self {
        Manifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            spec_hash: None,
            config: "config.toml".to_string(),
            rerun: format!("mixborrow {command} --config config.toml --out <dir>"),
            inputs: Vec::new(),
            artifacts: Vec::new(),
        }
    }

    pub fn spec_hash(&mut self, h: String) {
        self.spec_hash = Some(h);
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let digest = if path.is_dir() { digest_dir(path)? } else { hex_digest(&fs::read(path)?) };
        self.inputs.push(Input { path: path.display().to_string(), sha256: digest });
        Ok(())
    }

    /// Record every file under the output directory (except the manifest).
    pub fn finish(mut self, out: &OutDir) -> Result<()> {
        let mut files = Vec::new();
        collect_files(out.root(), out.root(), &mut files)?;
        files.sort();
        for rel in files {
            if rel == "manifest.json" {
                continue;
            }
            let bytes = fs::read(out.root().join(&rel))?;
            self.artifacts.push(Artifact { path: rel, sha256: hex_digest(&bytes) });
        }
        mixborrow::io::write_json(&out.path("manifest.json")?, &self)
    }
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let p = entry?.path();
        if p.is_dir() {
            collect_files(root, &p, out)?;
        } else {
            let rel = p.strip_prefix(root).map_err(|e| Error::InvalidArgument(e.to_string()))?;
            out.push(rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/"));
        }
    }
    Ok(())
}

fn digest_dir(dir: &Path) -> Result<String> {
    let mut files = Vec::new();
    collect_files(dir, dir, &mut files)?;
    files.sort();
    let mut acc = Vec::new();
    for f in files {
        acc.extend_from_slice(f.as_bytes());
        acc.extend_from_slice(hex_digest(&fs::read(dir.join(&f))?).as_bytes());
    }
    Ok(hex_digest(&acc))
}
