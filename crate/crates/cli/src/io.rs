//! File helpers. Outputs are staged in temporary files next to their target
//! and renamed into place only once every output of a command is ready.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use evprune_core::event::{read_events_bin, read_events_csv, EventStream, EVT1_MAGIC};
use evprune_core::image::{decode_pnm, RgbImage};
use tempfile::NamedTempFile;

use crate::error::{CliError, CliResult};

pub fn read_bytes(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn read_image(path: &Path) -> CliResult<RgbImage> {
    let bytes = read_bytes(path)?;
    decode_pnm(&bytes).map_err(|e| CliError::Format(format!("{}: {e}", path.display())))
}

/// EVT1 when the file starts with the magic, CSV otherwise.
pub fn read_events(path: &Path) -> CliResult<EventStream> {
    let bytes = read_bytes(path)?;
    let parsed = if bytes.starts_with(&EVT1_MAGIC) {
        read_events_bin(&bytes)
    } else {
        read_events_csv(&bytes)
    };
    parsed.map_err(|e| CliError::Format(format!("{}: {e}", path.display())))
}

/// Pending outputs of one command.
#[derive(Default)]
pub struct OutputSet {
    staged: Vec<(NamedTempFile, PathBuf)>,
}

impl OutputSet {
    pub fn new() -> Self {
        OutputSet::default()
    }

    pub fn stage(&mut self, path: &Path, bytes: &[u8]) -> CliResult<()> {
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        let mut tmp = NamedTempFile::new_in(dir).map_err(|e| CliError::io(path, e))?;
        tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
        tmp.flush().map_err(|e| CliError::io(path, e))?;
        self.staged.push((tmp, path.to_path_buf()));
        Ok(())
    }

    pub fn commit(self) -> CliResult<()> {
        for (tmp, path) in self.staged {
            tmp.persist(&path).map_err(|e| CliError::io(&path, e.error))?;
        }
        Ok(())
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let mut out = OutputSet::new();
    out.stage(path, bytes)?;
    out.commit()
}
