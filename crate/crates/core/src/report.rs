//! Output files: provenance headers, RFC-4180-style CSV bodies, atomic
//! writes. Re-running a command with the same config and seed reproduces
//! byte-identical files (floats are printed with Rust's shortest-round-trip
//! formatting).

use std::path::Path;

use crate::error::{Error, Result};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Comment header carried by every emitted file.
pub fn file_header(config_hash: &str, seed: Option<u64>) -> String {
    let seed = seed.map_or("none".to_string(), |s| s.to_string());
    format!(
        "# generated-by: hawkes-mca v{TOOL_VERSION}\n# config-hash: {config_hash}\n# seed: {seed}\n"
    )
}

/// Quotes a CSV field when needed (commas, quotes, newlines).
pub fn csv_field(raw: &str) -> String {
    if raw.contains(',') || raw.contains('"') || raw.contains('\n') {
        format!("\"{}\"", raw.replace('"', "\"\""))
    } else {
        raw.to_string()
    }
}

/// Write-temp-then-rename so partially written files never appear under the
/// final name.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let display = path.display().to_string();
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(display.clone(), e))?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp_path = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp_path, bytes).map_err(|e| Error::io(display.clone(), e))?;
    std::fs::rename(&tmp_path, path).map_err(|e| Error::io(display, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_quoting() {
        let h = file_header("abcd", Some(3));
        assert!(h.contains("config-hash: abcd"));
        assert!(h.contains("seed: 3"));
        assert_eq!(csv_field("plain"), "plain");
        assert_eq!(csv_field("a,b"), "\"a,b\"");
        assert_eq!(csv_field("say \"hi\""), "\"say \"\"hi\"\"\"");
    }

    #[test]
    fn atomic_write_roundtrip() {
        let dir = std::env::temp_dir().join("hawkes-mca-report-test");
        let path = dir.join("nested").join("file.csv");
        atomic_write(&path, b"x,y\n1,2\n").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"x,y\n1,2\n");
        let _ = std::fs::remove_dir_all(&dir);
    }
}
