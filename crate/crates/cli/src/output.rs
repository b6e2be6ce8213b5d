use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use tempfile::NamedTempFile;

use crate::error::{CliError, CliResult};

/// Output directory whose files appear only once fully written.
pub struct OutDir {
    root: PathBuf,
}

fn io_error(path: &Path, source: std::io::Error) -> CliError {
    CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

impl OutDir {
    pub fn create(root: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(root).map_err(|e| io_error(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    /// Writes through a temp file in the same directory, then renames.
    pub fn write_with<F>(&self, name: &str, fill: F) -> CliResult<PathBuf>
    where
        F: FnOnce(&mut NamedTempFile) -> std::io::Result<()>,
    {
        let target = self.root.join(name);
        let mut tmp = NamedTempFile::new_in(&self.root).map_err(|e| io_error(&target, e))?;
        fill(&mut tmp).map_err(|e| io_error(&target, e))?;
        tmp.as_file_mut()
            .sync_all()
            .map_err(|e| io_error(&target, e))?;
        tmp.persist(&target)
            .map_err(|e| io_error(&target, e.error))?;
        Ok(target)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> CliResult<PathBuf> {
        self.write_with(name, |file| {
            serde_json::to_writer_pretty(&mut *file, value)?;
            writeln!(file)
        })
    }
}

/// File-name fragment for a function spec such as `csv:data/f.csv`.
pub fn slug(spec: &str) -> String {
    spec.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '-' })
        .collect()
}
