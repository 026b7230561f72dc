//! Output directories that appear only once complete.

use std::fs;
use std::path::{Path, PathBuf};

use hiad_core::{HiadError, Result};

/// A scratch directory next to `dest` that is renamed onto it by
/// [`Staged::commit`] and deleted if dropped before that.
pub struct Staged {
    tmp: PathBuf,
    dest: PathBuf,
    done: bool,
}

impl Staged {
    /// Fails if `dest` already exists and is not an empty directory.
    pub fn new(dest: &Path) -> Result<Self> {
        if dest.exists() {
            let empty = dest.is_dir() && fs::read_dir(dest).map_err(|e| HiadError::io(dest, e))?.next().is_none();
            if !empty {
                return Err(HiadError::Config(format!("output {} already exists", dest.display())));
            }
        }
        let name = dest
            .file_name()
            .ok_or_else(|| HiadError::Config(format!("output path {} has no final component", dest.display())))?;
        let parent = match dest.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent).map_err(|e| HiadError::io(&parent, e))?;
        let tmp = parent.join(format!(".{}.partial-{}", name.to_string_lossy(), std::process::id()));
        if tmp.exists() {
            fs::remove_dir_all(&tmp).map_err(|e| HiadError::io(&tmp, e))?;
        }
        fs::create_dir(&tmp).map_err(|e| HiadError::io(&tmp, e))?;
        Ok(Staged {
            tmp,
            dest: dest.to_path_buf(),
            done: false,
        })
    }

    pub fn path(&self) -> &Path {
        &self.tmp
    }

    pub fn commit(mut self) -> Result<PathBuf> {
        if self.dest.is_dir() {
            fs::remove_dir(&self.dest).map_err(|e| HiadError::io(&self.dest, e))?;
        }
        fs::rename(&self.tmp, &self.dest).map_err(|e| HiadError::io(&self.dest, e))?;
        self.done = true;
        Ok(self.dest.clone())
    }
}

impl Drop for Staged {
    fn drop(&mut self) {
        if !self.done {
            let _ = fs::remove_dir_all(&self.tmp);
        }
    }
}
