//! File emission: 17-significant-digit floats and atomic writes.

use std::fs;
use std::path::Path;

use crate::error::CliError;

/// Round-trip float formatting: 17 significant digits.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// CSV field escaping: quotes the value when it contains a comma, quote, or
/// newline (doubling embedded quotes), and passes plain values through.
pub fn csv_field(value: &str) -> String {
    if value.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", value.replace('"', "\"\""))
    } else {
        value.to_string()
    }
}

/// Writes via a sibling temp file and rename, so readers never observe a
/// half-written file and re-runs replace outputs in one step.
pub fn atomic_write(path: &Path, content: &str) -> Result<(), CliError> {
    let describe = |what: &str, err: std::io::Error| {
        CliError::Config(format!("cannot {what} {}: {err}", path.display()))
    };
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| describe("create the directory for", e))?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, content).map_err(|e| describe("write", e))?;
    fs::rename(&tmp, path).map_err(|e| describe("finish writing", e))?;
    Ok(())
}
