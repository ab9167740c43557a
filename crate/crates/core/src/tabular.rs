//! Versioned CSV tables: a `# format=` and `# version=` preamble ahead of
//! the header row.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const TABLE_VERSION: u32 = 1;

/// Opens `path` for writing with the preamble in place.
pub fn writer(path: &Path, format: &str) -> Result<csv::Writer<File>> {
    let mut f = File::create(path)?;
    writeln!(f, "# format={format}")?;
    writeln!(f, "# version={TABLE_VERSION}")?;
    Ok(csv::Writer::from_writer(f))
}

/// Header and numeric rows of a table written by [`writer`].
pub fn read(path: &Path, format: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let bad = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let text = fs::read_to_string(path)?;
    let meta: HashMap<&str, &str> = text
        .lines()
        .take_while(|l| l.starts_with('#'))
        .filter_map(|l| l.trim_start_matches('#').split_once('='))
        .map(|(k, v)| (k.trim(), v.trim()))
        .collect();
    if meta.get("format") != Some(&format) {
        return Err(bad(format!("expected format `{format}`")));
    }
    if meta.get("version") != Some(&TABLE_VERSION.to_string().as_str()) {
        return Err(bad("unsupported version".into()));
    }
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header = r
        .headers()
        .map_err(|e| bad(e.to_string()))?
        .iter()
        .map(String::from)
        .collect();
    let mut rows = Vec::new();
    for rec in r.deserialize::<Vec<f64>>() {
        rows.push(rec.map_err(|e| bad(e.to_string()))?);
    }
    Ok((header, rows))
}
