//! Labelled directories of event files.
//!
//! A dataset directory holds event files plus `labels.csv` with a
//! `file,label` header and one row per sample; file names are relative to
//! the directory.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::events::{parse_event_file, write_event_file, EventStream};

pub const LABELS_FILE: &str = "labels.csv";

/// Reads every sample listed in `dir/labels.csv`, in file order.
pub fn read_dataset(dir: &Path) -> Result<Vec<(EventStream, usize)>> {
    let index = dir.join(LABELS_FILE);
    let text = fs::read_to_string(&index).map_err(|e| Error::io(&index, e))?;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || (i == 0 && line == "file,label") {
            continue;
        }
        let (file, label) = line
            .split_once(',')
            .ok_or_else(|| Error::parse(i + 1, format!("expected `file,label`, got `{line}`")))?;
        let label: usize = label
            .trim()
            .parse()
            .map_err(|_| Error::parse(i + 1, format!("label `{}` is not an integer", label.trim())))?;
        let path = dir.join(file.trim());
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let stream = parse_event_file(&bytes).map_err(|e| match e {
            Error::Parse { line, msg } => Error::Parse {
                line,
                msg: format!("{}: {msg}", path.display()),
            },
            other => other,
        })?;
        out.push((stream, label));
    }
    Ok(out)
}

/// Writes `samples` as `sample-00000.events`, ... plus `labels.csv`.
pub fn write_dataset(dir: &Path, samples: &[(EventStream, usize)]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut index = String::from("file,label\n");
    for (i, (stream, label)) in samples.iter().enumerate() {
        let name = format!("sample-{i:05}.events");
        let path = dir.join(&name);
        fs::write(&path, write_event_file(stream)).map_err(|e| Error::io(&path, e))?;
        let _ = writeln!(index, "{name},{label}");
    }
    let path = dir.join(LABELS_FILE);
    fs::write(&path, index).map_err(|e| Error::io(&path, e))
}
