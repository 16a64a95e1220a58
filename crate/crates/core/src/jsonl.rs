//! JSON-lines files with an optional leading header object.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{HaloError, Result};

pub fn write<H: Serialize, R: Serialize>(path: &Path, header: Option<&H>, rows: &[R]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    if let Some(h) = header {
        serde_json::to_writer(&mut w, &serde_json::to_value(h)?)?;
        w.write_all(b"\n")?;
    }
    for r in rows {
        // Round-trip through Value so object keys come out sorted.
        serde_json::to_writer(&mut w, &serde_json::to_value(r)?)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn lines(path: &Path) -> Result<Vec<String>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(line);
        }
    }
    Ok(out)
}

pub fn read_all<R: DeserializeOwned>(path: &Path) -> Result<Vec<R>> {
    lines(path)?
        .iter()
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| HaloError::Format(format!("{}:{}: {e}", path.display(), i + 1))))
        .collect()
}

pub fn read_with_header<H: DeserializeOwned, R: DeserializeOwned>(path: &Path) -> Result<(H, Vec<R>)> {
    let all = lines(path)?;
    let Some((first, rest)) = all.split_first() else {
        return Err(HaloError::Format(format!("{} is empty", path.display())));
    };
    let parse_err = |i: usize, e: serde_json::Error| HaloError::Format(format!("{}:{}: {e}", path.display(), i + 1));
    let header = serde_json::from_str(first).map_err(|e| parse_err(0, e))?;
    let rows = rest
        .iter()
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| parse_err(i + 1, e)))
        .collect::<Result<_>>()?;
    Ok((header, rows))
}
