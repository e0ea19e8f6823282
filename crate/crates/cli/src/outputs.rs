use std::fs;
use std::path::{Path, PathBuf};

use sdnp_core::persist::sidecar_path;

use crate::error::{CliError, CliResult};

/// Files and directories created by a command. Unless `commit` is called
/// they are removed on drop, so a failed run leaves nothing behind.
#[derive(Default)]
pub struct Outputs {
    files: Vec<PathBuf>,
    dirs: Vec<PathBuf>,
    committed: bool,
}

impl Outputs {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn file(&mut self, path: &Path) -> PathBuf {
        self.files.push(path.to_path_buf());
        path.to_path_buf()
    }

    /// A `.f32` matrix file plus its metadata sidecar.
    pub fn matrix(&mut self, path: &Path) -> PathBuf {
        self.files.push(sidecar_path(path));
        self.file(path)
    }

    /// Creates `dir` (and missing parents), remembering what was new.
    pub fn dir(&mut self, dir: &Path) -> CliResult<PathBuf> {
        let mut missing = Vec::new();
        let mut cur = Some(dir);
        while let Some(d) = cur {
            if d.as_os_str().is_empty() || d.exists() {
                break;
            }
            missing.push(d.to_path_buf());
            cur = d.parent();
        }
        fs::create_dir_all(dir).map_err(|e| CliError::Internal(format!("{}: {e}", dir.display())))?;
        self.dirs.extend(missing.into_iter().rev());
        Ok(dir.to_path_buf())
    }

    /// Parent directory of an output file.
    pub fn parent_of(&mut self, path: &Path) -> CliResult<()> {
        match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => self.dir(p).map(|_| ()),
            _ => Ok(()),
        }
    }

    pub fn commit(mut self) {
        self.committed = true;
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for f in &self.files {
            let _ = fs::remove_file(f);
        }
        for d in self.dirs.iter().rev() {
            let _ = fs::remove_dir(d);
        }
    }
}
