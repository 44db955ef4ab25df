//! File formats: depth images with metadata sidecars, PLY point clouds,
//! observation clusters and plain-text reports. Every writer replaces its
//! target atomically.

mod clusters;
mod depth;
mod ply;
mod report;

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub use clusters::{read_clusters, FitReport};
pub use depth::{
    read_depth, read_mask, read_metadata, write_depth, write_layer_map, ImageFormat, Metadata,
};
pub use ply::{read_ply, write_ply};
pub use report::{format_sig, metrics_table, MetricsRow};

/// Writes `bytes` to a temporary file next to `path`, then renames it over `path`.
pub fn atomic_write(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        let perms = std::fs::Permissions::from_mode(0o644);
        tmp.as_file().set_permissions(perms).map_err(|e| Error::io(path, e))?;
    }
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}
