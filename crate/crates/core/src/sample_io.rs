//! Sample files: CSV with an `f0,...,f{d-1}` header (canonical), or raw
//! little-endian f64 row-major binary (`.f64`) with a JSON sidecar
//! `{"n": ..., "d": ...}`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sample::Sample;

#[derive(Debug, Serialize, Deserialize)]
struct BinarySidecar {
    n: usize,
    d: usize,
}

/// Sidecar path for a `.f64` binary sample file.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn write_csv(path: &Path, sample: &Sample) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let header: Vec<String> = (0..sample.d()).map(|j| format!("f{j}")).collect();
    w.write_record(&header)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let mut record = csv::StringRecord::new();
    for row in sample.rows() {
        record.clear();
        for v in row {
            record.push_field(&format!("{v}"));
        }
        w.write_record(&record)
            .map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Sample> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(BufReader::new(file));
    let d = r
        .headers()
        .map_err(|e| Error::format(path, e.to_string()))?
        .len();
    let mut data = Vec::new();
    let mut n = 0usize;
    for record in r.records() {
        let record = record.map_err(|e| Error::format(path, e.to_string()))?;
        if record.len() != d {
            return Err(Error::format(
                path,
                format!("row {} has {} fields, expected {d}", n + 1, record.len()),
            ));
        }
        for field in record.iter() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::format(path, format!("cannot parse float {field:?}")))?;
            data.push(v);
        }
        n += 1;
    }
    Sample::from_vec(data, n, d)
}

pub fn write_binary(path: &Path, sample: &Sample) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for v in sample.data() {
        w.write_all(&v.to_le_bytes())
            .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    let sidecar = sidecar_path(path);
    let meta = BinarySidecar {
        n: sample.n(),
        d: sample.d(),
    };
    let text = serde_json::to_string_pretty(&meta).expect("sidecar serialization");
    std::fs::write(&sidecar, text).map_err(|e| Error::io(&sidecar, e))?;
    Ok(())
}

pub fn read_binary(path: &Path) -> Result<Sample> {
    let sidecar = sidecar_path(path);
    let text = std::fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
    let meta: BinarySidecar =
        serde_json::from_str(&text).map_err(|e| Error::format(&sidecar, e.to_string()))?;
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    let expected = meta.n * meta.d * 8;
    if bytes.len() != expected {
        return Err(Error::format(
            path,
            format!(
                "expected {expected} bytes for {}x{}, found {}",
                meta.n,
                meta.d,
                bytes.len()
            ),
        ));
    }
    let data: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Sample::from_vec(data, meta.n, meta.d)
}

/// Load a sample file, dispatching on the `.csv` / `.f64` extension.
pub fn read_sample(path: &Path) -> Result<Sample> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => read_csv(path),
        Some("f64") => read_binary(path),
        _ => Err(Error::format(
            path,
            "unknown sample format: expected .csv or .f64".to_string(),
        )),
    }
}
