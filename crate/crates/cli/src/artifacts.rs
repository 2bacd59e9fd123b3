//! Artifact writing with overwrite protection.

use std::path::Path;

use hlogformer::{Error, Result};

/// Write bytes to a path, refusing to replace an existing file unless
/// `force` is set.
pub fn write_artifact(path: &Path, content: &[u8], force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::ArtifactExists(path.display().to_string()));
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
        }
    }
    std::fs::write(path, content)
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn write_artifact_str(path: &Path, content: &str, force: bool) -> Result<()> {
    write_artifact(path, content.as_bytes(), force)
}

/// Paths named in a config must exist before the run starts.
pub fn require_exists(path: &Path, what: &str) -> Result<()> {
    if !path.exists() {
        return Err(Error::InvalidConfig(format!(
            "{what} `{}` does not exist",
            path.display()
        )));
    }
    Ok(())
}
