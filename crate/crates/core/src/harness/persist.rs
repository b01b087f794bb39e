//! Run directories: lock file, checksummed manifest, rerun protection.

use std::fs::{self, OpenOptions};
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const CONFIG_SNAPSHOT_FILE: &str = "config.txt";
const LOCK_FILE: &str = ".lock";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// An open run directory. Holds the lock until dropped.
#[derive(Debug)]
pub struct RunDir {
    path: PathBuf,
    files: Vec<(String, String)>,
    seeds: Vec<(String, u64)>,
}

impl RunDir {
    /// Opens `<base>/<name>-<hash prefix>`. A completed run with the same config hash
    /// (a manifest is present) is only replaced when `force` is set.
    pub fn create(base: &Path, name: &str, config_hash: &str, force: bool) -> Result<Self> {
        let path = base.join(format!("{name}-{}", &config_hash[..12.min(config_hash.len())]));
        if path.join(LOCK_FILE).exists() {
            return Err(Error::Runtime(format!(
                "{} is locked by another run (remove {LOCK_FILE} if that run is dead)",
                path.display()
            )));
        }
        if path.join(MANIFEST_FILE).exists() {
            if !force {
                return Err(Error::Runtime(format!(
                    "{} already holds a run with config hash {config_hash}; pass --force to overwrite",
                    path.display()
                )));
            }
            fs::remove_dir_all(&path)?;
        }
        fs::create_dir_all(&path)?;
        match OpenOptions::new().write(true).create_new(true).open(path.join(LOCK_FILE)) {
            Ok(_) => {}
            Err(e) if e.kind() == ErrorKind::AlreadyExists => {
                return Err(Error::Runtime(format!("{} is locked by another run", path.display())));
            }
            Err(e) => return Err(e.into()),
        }
        Ok(Self {
            path,
            files: Vec::new(),
            seeds: Vec::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Writes `rel` (may contain subdirectories) and records its checksum.
    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<PathBuf> {
        let target = self.path.join(rel);
        if let Some(parent) = target.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&target, bytes)?;
        let digest = sha256_hex(bytes);
        match self.files.iter_mut().find(|(name, _)| name == rel) {
            Some(entry) => entry.1 = digest,
            None => self.files.push((rel.to_owned(), digest)),
        }
        Ok(target)
    }

    /// Records a file already written under the run directory (e.g. by
    /// [`super::plot::emit_plot_data`]).
    pub fn register(&mut self, path: &Path) -> Result<()> {
        let rel = path
            .strip_prefix(&self.path)
            .map_err(|_| Error::Runtime(format!("{} is outside the run directory", path.display())))?
            .to_string_lossy()
            .replace('\\', "/");
        let digest = sha256_hex(&fs::read(path)?);
        self.files.push((rel, digest));
        Ok(())
    }

    pub fn record_seed(&mut self, label: &str, seed: u64) {
        self.seeds.push((label.to_owned(), seed));
    }

    pub fn files(&self) -> &[(String, String)] {
        &self.files
    }

    /// Writes the manifest; `error` is recorded as the run status.
    pub fn finish(&mut self, kind: &str, config_hash: &str, error: Option<&str>) -> Result<PathBuf> {
        let mut text = format!(
            "gradshield_version = {}\nkind = {kind}\nconfig_hash = {config_hash}\nstatus = {}\n",
            env!("CARGO_PKG_VERSION"),
            match error {
                None => "ok".to_owned(),
                Some(e) => format!("error: {}", e.replace('\n', " ")),
            }
        );
        text.push_str("\n[seeds]\n");
        for (label, seed) in &self.seeds {
            text.push_str(&format!("{label} = {seed}\n"));
        }
        text.push_str("\n[files]\n");
        let mut files = self.files.clone();
        files.sort();
        for (name, digest) in &files {
            text.push_str(&format!("{name} = sha256:{digest}\n"));
        }
        let path = self.path.join(MANIFEST_FILE);
        fs::write(&path, text)?;
        Ok(path)
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(self.path.join(LOCK_FILE));
    }
}

/// `(file, checksum)` pairs listed in a manifest.
pub fn manifest_files(manifest: &str) -> Vec<(String, String)> {
    manifest
        .split("\n[files]\n")
        .nth(1)
        .unwrap_or("")
        .lines()
        .filter_map(|l| {
            let (name, digest) = l.split_once(" = sha256:")?;
            Some((name.to_owned(), digest.to_owned()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_lists_checksums_and_rerun_needs_force() {
        let tmp = tempfile::tempdir().unwrap();
        let hash = "0123456789abcdef0123";
        {
            let mut run = RunDir::create(tmp.path(), "demo", hash, false).unwrap();
            run.write("a.csv", b"x,y\n1,2\n").unwrap();
            run.write("sub/b.csv", b"z\n").unwrap();
            run.record_seed("seed", 42);
            assert!(RunDir::create(tmp.path(), "demo", hash, false).is_err(), "lock ignored");
            run.finish("bound-curve", hash, None).unwrap();
        }
        let dir = tmp.path().join("demo-0123456789ab");
        let manifest = fs::read_to_string(dir.join(MANIFEST_FILE)).unwrap();
        let files = manifest_files(&manifest);
        assert_eq!(files.len(), 2);
        for (name, digest) in files {
            assert_eq!(sha256_hex(&fs::read(dir.join(name)).unwrap()), digest);
        }
        assert!(!dir.join(LOCK_FILE).exists());
        let err = RunDir::create(tmp.path(), "demo", hash, false).unwrap_err();
        assert!(err.to_string().contains("--force"));
        let run = RunDir::create(tmp.path(), "demo", hash, true).unwrap();
        assert!(!run.path().join("a.csv").exists());
    }
}
