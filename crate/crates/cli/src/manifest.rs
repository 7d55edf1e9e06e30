//! Run manifests and run directories.
//!
//! A manifest is the resolved config (every default materialized) plus
//! dataset fingerprints and the build/precision mode, written as the same
//! flat key=value text the config loader reads. Re-running `train --config
//! <manifest>` reproduces the run bit-for-bit in 64-bit mode; fingerprints
//! are re-verified on load.

use crate::config::{RunSpec, Task};
use anyhow::{bail, Context, Result};
use opto_dfa::data::read_maybe_gz;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub const MANIFEST_FORMAT: &str = "odfa-manifest/1";

/// Names of the files a task reads, relative to the data dir (the loader
/// also accepts `.gz` variants).
pub fn task_files(task: Task) -> &'static [&'static str] {
    match task {
        Task::Mnist => &[
            "mnist/train-images-idx3-ubyte",
            "mnist/train-labels-idx1-ubyte",
            "mnist/t10k-images-idx3-ubyte",
            "mnist/t10k-labels-idx1-ubyte",
        ],
        Task::Cora => &["cora/cora.content", "cora/cora.cites"],
    }
}

fn resolve_existing(data_dir: &Path, rel: &str) -> Result<PathBuf> {
    let plain = data_dir.join(rel);
    let gz = data_dir.join(format!("{rel}.gz"));
    for p in [&plain, &gz] {
        if p.exists() {
            return Ok(p.clone());
        }
    }
    bail!(
        "missing dataset file: tried {} and {}\n{}",
        plain.display(),
        gz.display(),
        retrieval_instructions()
    );
}

pub fn retrieval_instructions() -> &'static str {
    "Datasets are read from --data-dir (or $OPTO_DFA_DATA_DIR, default ./data):\n\
     \u{20} mnist/: train-images-idx3-ubyte, train-labels-idx1-ubyte,\n\
     \u{20}         t10k-images-idx3-ubyte, t10k-labels-idx1-ubyte\n\
     \u{20}         (IDX files, e.g. from https://ossci-datasets.s3.amazonaws.com/mnist/)\n\
     \u{20} cora/:  cora.content, cora.cites\n\
     \u{20}         (from https://linqs-data.soe.ucsc.edu/public/lbc/cora.tgz)\n\
     Files may be gzip-compressed (keep a .gz suffix). This tool never downloads."
}

/// Content fingerprint of one dataset file: decompressed byte count and
/// SHA-256, stable across raw/gz storage.
pub fn fingerprint(path: &Path) -> Result<(u64, String)> {
    let bytes = read_maybe_gz(path).with_context(|| format!("reading {}", path.display()))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok((bytes.len() as u64, format!("{:x}", hasher.finalize())))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub spec: RunSpec,
    /// (relative name, decompressed bytes, sha256) per dataset file.
    pub fingerprints: Vec<(String, u64, String)>,
}

impl RunManifest {
    pub fn collect(spec: &RunSpec, data_dir: &Path) -> Result<RunManifest> {
        let mut fingerprints = Vec::new();
        for rel in task_files(spec.task) {
            let path = resolve_existing(data_dir, rel)?;
            let (bytes, sha) = fingerprint(&path)?;
            fingerprints.push((rel.to_string(), bytes, sha));
        }
        Ok(RunManifest {
            spec: spec.clone(),
            fingerprints,
        })
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "format = {MANIFEST_FORMAT}");
        for (k, v) in self.spec.to_key_values() {
            let _ = writeln!(out, "{k} = {v}");
        }
        for (name, bytes, sha) in &self.fingerprints {
            let _ = writeln!(out, "data.{name}.bytes = {bytes}");
            let _ = writeln!(out, "data.{name}.sha256 = {sha}");
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render())
            .with_context(|| format!("writing manifest {}", path.display()))
    }

    /// Verify recorded fingerprints against the data actually on disk.
    pub fn verify_fingerprints(
        kv: &BTreeMap<String, String>,
        task: Task,
        data_dir: &Path,
    ) -> Result<()> {
        for rel in task_files(task) {
            let (Some(want_bytes), Some(want_sha)) = (
                kv.get(&format!("data.{rel}.bytes")),
                kv.get(&format!("data.{rel}.sha256")),
            ) else {
                continue;
            };
            let path = resolve_existing(data_dir, rel)?;
            let (bytes, sha) = fingerprint(&path)?;
            if want_bytes != &bytes.to_string() || want_sha != &sha {
                bail!(
                    "dataset fingerprint mismatch for {rel}: manifest recorded {want_bytes} bytes / {want_sha}, found {bytes} bytes / {sha}"
                );
            }
        }
        Ok(())
    }
}

/// Create `<out_dir>/<UTC timestamp>-<short config hash>[-<n>]`, never
/// reusing an existing directory.
pub fn create_run_dir(out_dir: &Path, spec: &RunSpec) -> Result<PathBuf> {
    let rendered: String = spec
        .to_key_values()
        .iter()
        .map(|(k, v)| format!("{k}={v}\n"))
        .collect();
    let mut hasher = Sha256::new();
    hasher.update(rendered.as_bytes());
    let hash = format!("{:x}", hasher.finalize());
    let stamp = chrono::Utc::now().format("%Y%m%d-%H%M%S");
    let base = format!("{stamp}-{}", &hash[..8]);
    for attempt in 0..1000 {
        let name = if attempt == 0 {
            base.clone()
        } else {
            format!("{base}-{attempt}")
        };
        let dir = out_dir.join(&name);
        match std::fs::create_dir_all(out_dir)
            .and_then(|_| std::fs::create_dir(&dir))
        {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e).with_context(|| format!("creating run dir {}", dir.display())),
        }
    }
    bail!("could not allocate a fresh run directory under {}", out_dir.display());
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{parse_key_values, Overrides};

    fn spec() -> RunSpec {
        Overrides {
            task: Some(Task::Cora),
            ..Default::default()
        }
        .resolve()
        .unwrap()
    }

    #[test]
    fn manifest_text_reloads_to_same_spec() {
        let m = RunManifest {
            spec: spec(),
            fingerprints: vec![("cora/cora.content".into(), 123, "abc".into())],
        };
        let text = m.render();
        let kv = parse_key_values(&text).unwrap();
        assert_eq!(kv.get("format").unwrap(), MANIFEST_FORMAT);
        let reloaded = Overrides::from_key_values(&kv).unwrap().resolve().unwrap();
        assert_eq!(reloaded, m.spec);
        assert_eq!(kv.get("data.cora/cora.content.bytes").unwrap(), "123");
    }

    #[test]
    fn run_dirs_never_collide() {
        let tmp = tempfile::tempdir().unwrap();
        let a = create_run_dir(tmp.path(), &spec()).unwrap();
        let b = create_run_dir(tmp.path(), &spec()).unwrap();
        assert_ne!(a, b);
        assert!(a.exists() && b.exists());
    }
}
