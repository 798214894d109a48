//! Small file helpers shared by the serialization paths.

use std::path::Path;

use crate::error::Result;

/// Write-temp-then-rename so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let tmp = match dir {
        Some(d) => {
            std::fs::create_dir_all(d)?;
            d.join(format!(
                ".{}.tmp",
                path.file_name().unwrap().to_string_lossy()
            ))
        }
        None => Path::new(&format!(
            ".{}.tmp",
            path.file_name().unwrap().to_string_lossy()
        ))
        .to_path_buf(),
    };
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
