//! On-disk snapshots: one JSON-lines file per table, header line first.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::AuthError;

pub const FORMAT: &str = "vermillion.authdb";
pub const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct Header {
    format: String,
    table: String,
    version: u32,
}

fn table_path(dir: &Path, table: &str) -> std::path::PathBuf {
    dir.join(format!("{table}.jsonl"))
}

pub fn write_table<'a, T, I>(dir: &Path, table: &str, records: I) -> Result<(), AuthError>
where
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
{
    let storage = |e: std::io::Error| AuthError::Storage(format!("{table}: {e}"));
    fs::create_dir_all(dir).map_err(storage)?;
    let tmp = dir.join(format!(".{table}.jsonl.tmp"));
    {
        let mut out = std::io::BufWriter::new(fs::File::create(&tmp).map_err(storage)?);
        let header = Header {
            format: FORMAT.into(),
            table: table.into(),
            version: VERSION,
        };
        serde_json::to_writer(&mut out, &header).map_err(|e| AuthError::Storage(e.to_string()))?;
        out.write_all(b"\n").map_err(storage)?;
        for record in records {
            serde_json::to_writer(&mut out, record).map_err(|e| AuthError::Storage(e.to_string()))?;
            out.write_all(b"\n").map_err(storage)?;
        }
        out.flush().map_err(storage)?;
    }
    fs::rename(&tmp, table_path(dir, table)).map_err(storage)
}

/// Missing files read as empty tables.
pub fn read_table<T: DeserializeOwned>(dir: &Path, table: &str) -> Result<Vec<T>, AuthError> {
    let path = table_path(dir, table);
    let file = match fs::File::open(&path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(AuthError::Storage(format!("{}: {e}", path.display()))),
    };
    let mut lines = BufReader::new(file).lines();
    let bad = |what: String| AuthError::Storage(format!("{}: {what}", path.display()));
    let header: Header = match lines.next() {
        Some(line) => serde_json::from_str(&line.map_err(|e| bad(e.to_string()))?)
            .map_err(|e| bad(format!("header: {e}")))?,
        None => return Ok(Vec::new()),
    };
    if header.format != FORMAT || header.table != table || header.version != VERSION {
        return Err(bad(format!("unsupported header {header:?}")));
    }
    let mut records = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line.map_err(|e| bad(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line).map_err(|e| bad(format!("line {}: {e}", n + 2)))?);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_and_checks_header() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![(1u32, "a".to_string()), (2, "b".to_string())];
        write_table(dir.path(), "pairs", &rows).unwrap();
        let back: Vec<(u32, String)> = read_table(dir.path(), "pairs").unwrap();
        assert_eq!(back, rows);

        let text = fs::read_to_string(dir.path().join("pairs.jsonl")).unwrap();
        assert!(text.starts_with("{\"format\":\"vermillion.authdb\",\"table\":\"pairs\",\"version\":1}\n"));
        assert!(read_table::<(u32, String)>(dir.path(), "absent").unwrap().is_empty());

        fs::write(dir.path().join("pairs.jsonl"), "{\"format\":\"x\",\"table\":\"pairs\",\"version\":1}\n").unwrap();
        assert!(read_table::<(u32, String)>(dir.path(), "pairs").is_err());
    }
}
