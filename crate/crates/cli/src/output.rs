//! Output directory bookkeeping and the run manifest.

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "run_manifest.json";
pub const CONFIG_FILE: &str = "resolved_config.toml";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Arguments without `--out`, `--config` and logging flags.
    pub args: Vec<String>,
    pub seed: u64,
    pub inputs: Vec<FileHash>,
    /// Paths relative to the output directory.
    pub outputs: Vec<FileHash>,
}

impl RunManifest {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let mut file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file
            .read(&mut buf)
            .with_context(|| format!("reading {}", path.display()))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Regular files under `path` (or `path` itself), sorted.
pub fn list_files(path: &Path) -> anyhow::Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files = Vec::new();
    let mut stack = vec![path.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).with_context(|| format!("listing {}", dir.display()))? {
            let p = entry?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push(p);
            }
        }
    }
    files.sort();
    Ok(files)
}

/// Hashes every file named by `inputs`, expanding directories.
pub fn hash_inputs(inputs: &[PathBuf]) -> anyhow::Result<Vec<FileHash>> {
    let mut hashes = Vec::new();
    for input in inputs {
        if !input.exists() {
            bail!("input {} does not exist", input.display());
        }
        for file in list_files(input)? {
            hashes.push(FileHash {
                path: file.display().to_string(),
                sha256: sha256_file(&file)?,
            });
        }
    }
    Ok(hashes)
}

/// Tracks the files a run writes below its output directory.
pub struct OutDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutDir {
    pub fn create(root: &Path) -> anyhow::Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(OutDir {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn prepare(&mut self, rel: &str) -> anyhow::Result<PathBuf> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        if !self.written.iter().any(|w| w == rel) {
            self.written.push(rel.to_string());
        }
        Ok(path)
    }

    pub fn write(&mut self, rel: &str, contents: &str) -> anyhow::Result<()> {
        let path = self.prepare(rel)?;
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> anyhow::Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(rel, &text)
    }

    pub fn writer(&mut self, rel: &str) -> anyhow::Result<BufWriter<File>> {
        let path = self.prepare(rel)?;
        let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        Ok(BufWriter::new(file))
    }

    /// Path for a file written by library code; recorded like any other output.
    pub fn path_for(&mut self, rel: &str) -> anyhow::Result<PathBuf> {
        self.prepare(rel)
    }

    pub fn finish(mut self, mut manifest: RunManifest, config_toml: &str) -> anyhow::Result<RunManifest> {
        self.write(CONFIG_FILE, config_toml)?;
        let mut written = self.written.clone();
        written.sort();
        manifest.outputs = written
            .iter()
            .map(|rel| {
                Ok(FileHash {
                    path: rel.clone(),
                    sha256: sha256_file(&self.root.join(rel))?,
                })
            })
            .collect::<anyhow::Result<_>>()?;
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        let path = self.root.join(MANIFEST_FILE);
        let mut file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        file.write_all(text.as_bytes())?;
        Ok(manifest)
    }
}
