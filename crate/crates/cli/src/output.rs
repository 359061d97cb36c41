//! Outputs are staged next to their destination and renamed into place only
//! once every file of a command has been written.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use tempfile::NamedTempFile;

#[derive(Default)]
pub struct Staged {
    files: Vec<(NamedTempFile, PathBuf)>,
}

impl Staged {
    /// Writes one output through `fill` into a temporary sibling of `path`.
    pub fn write<F>(&mut self, path: &Path, fill: F) -> Result<()>
    where
        F: FnOnce(&mut BufWriter<&File>) -> Result<()>,
    {
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        let tmp = NamedTempFile::new_in(dir).with_context(|| format!("cannot stage output in {}", dir.display()))?;
        {
            let mut out = BufWriter::new(tmp.as_file());
            fill(&mut out).with_context(|| format!("writing {}", path.display()))?;
            out.flush()?;
        }
        self.files.push((tmp, path.to_path_buf()));
        Ok(())
    }

    pub fn paths(&self) -> Vec<PathBuf> {
        self.files.iter().map(|(_, p)| p.clone()).collect()
    }

    /// Renames every staged file into place. Dropping without committing
    /// removes them.
    pub fn commit(self) -> Result<Vec<PathBuf>> {
        let mut done = Vec::new();
        for (tmp, path) in self.files {
            tmp.persist(&path).with_context(|| format!("cannot move output to {}", path.display()))?;
            done.push(path);
        }
        Ok(done)
    }
}

/// `model.json` + `.manifest.json` -> `model.manifest.json`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}
