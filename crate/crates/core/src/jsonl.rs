//! Line-delimited JSON files with a leading header record.
//!
//! Every on-disk format in the crate (feature streams, token traces,
//! lexicons, manifests, memory dumps, scenarios) is one JSON value per line.
//! Blank lines are skipped.

use std::io::{BufRead, Write};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum JsonlError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("missing header line")]
    MissingHeader,
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
}

/// Parse every non-blank line of `reader` as `T`, reporting 1-based line numbers.
pub fn read_records<T: DeserializeOwned, R: BufRead>(reader: R) -> Result<Vec<(usize, T)>, JsonlError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|source| JsonlError::Parse {
            line: idx + 1,
            source,
        })?;
        out.push((idx + 1, value));
    }
    Ok(out)
}

/// Read a header line followed by records.
pub fn read_with_header<H, T, R>(reader: R) -> Result<(H, Vec<T>), JsonlError>
where
    H: DeserializeOwned,
    T: DeserializeOwned,
    R: BufRead,
{
    let mut lines = reader.lines().enumerate();
    let header = loop {
        match lines.next() {
            None => return Err(JsonlError::MissingHeader),
            Some((_, line)) => {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                break serde_json::from_str(&line).map_err(|source| JsonlError::Parse { line: 1, source })?;
            }
        }
    };
    let mut records = Vec::new();
    for (idx, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line).map_err(|source| JsonlError::Parse {
            line: idx + 1,
            source,
        })?);
    }
    Ok((header, records))
}

pub fn write_line<T: Serialize, W: Write>(mut writer: W, value: &T) -> Result<(), JsonlError> {
    let line = serde_json::to_string(value).map_err(|source| JsonlError::Parse { line: 0, source })?;
    writer.write_all(line.as_bytes())?;
    writer.write_all(b"\n")?;
    Ok(())
}

pub fn write_with_header<H, T, W>(mut writer: W, header: &H, records: &[T]) -> Result<(), JsonlError>
where
    H: Serialize,
    T: Serialize,
    W: Write,
{
    write_line(&mut writer, header)?;
    for r in records {
        write_line(&mut writer, r)?;
    }
    Ok(())
}
