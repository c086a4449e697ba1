//! Shared helpers for the JSON artifacts.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde_json::value::RawValue;

use crate::error::{Error, Result};

/// A JSON array with every value printed to 17 significant digits, which
/// round-trips any finite `f64` bit-exactly. Non-finite values become `null`.
pub fn raw_numbers(values: &[f64]) -> Box<RawValue> {
    let mut s = String::with_capacity(values.len() * 24 + 2);
    s.push('[');
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        if v.is_finite() {
            s.push_str(&format!("{v:.16e}"));
        } else {
            s.push_str("null");
        }
    }
    s.push(']');
    RawValue::from_string(s).expect("valid JSON number array")
}

/// Writes via a temporary sibling and a rename so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Serializes `value` as pretty JSON with a trailing newline.
pub fn to_json_pretty<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}
