use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{RawCadastralUnit, RawContract, Transaction};
use crate::error::{Error, Result};

/// Leading bytes of the binary transaction cache.
pub const CACHE_MAGIC: &[u8; 4] = b"FMTX";
/// Bumped whenever [`Transaction`] or the header changes layout.
pub const CACHE_VERSION: u32 = 2;

#[derive(Debug, Clone)]
pub struct CsvOptions {
    pub delimiter: u8,
    /// Written as a `# ...` line ahead of the header; readers skip such lines.
    pub comment: Option<String>,
}

impl Default for CsvOptions {
    fn default() -> Self {
        CsvOptions {
            delimiter: b',',
            comment: None,
        }
    }
}

fn read_csv<T: DeserializeOwned, R: Read>(reader: R, opts: &CsvOptions) -> Result<Vec<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(opts.delimiter)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

fn write_csv<T: Serialize, W: Write>(mut writer: W, rows: &[T], opts: &CsvOptions) -> Result<()> {
    if let Some(c) = &opts.comment {
        for line in c.lines() {
            writeln!(writer, "# {line}")?;
        }
    }
    let mut wtr = csv::WriterBuilder::new()
        .delimiter(opts.delimiter)
        .from_writer(writer);
    for row in rows {
        wtr.serialize(row)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_contracts_csv(path: &Path, opts: &CsvOptions) -> Result<Vec<RawContract>> {
    read_csv(BufReader::new(File::open(path)?), opts)
}

pub fn read_cadaster_csv(path: &Path, opts: &CsvOptions) -> Result<Vec<RawCadastralUnit>> {
    read_csv(BufReader::new(File::open(path)?), opts)
}

pub fn read_transactions_csv(path: &Path, opts: &CsvOptions) -> Result<Vec<Transaction>> {
    read_csv(BufReader::new(File::open(path)?), opts)
}

pub fn write_contracts_csv(path: &Path, rows: &[RawContract], opts: &CsvOptions) -> Result<()> {
    write_csv(BufWriter::new(File::create(path)?), rows, opts)
}

pub fn write_cadaster_csv(path: &Path, rows: &[RawCadastralUnit], opts: &CsvOptions) -> Result<()> {
    write_csv(BufWriter::new(File::create(path)?), rows, opts)
}

pub fn write_transactions_csv(path: &Path, rows: &[Transaction], opts: &CsvOptions) -> Result<()> {
    write_csv(BufWriter::new(File::create(path)?), rows, opts)
}

/// Transactions as `magic | version (u32 LE) | note length (u32 LE) | note
/// (UTF-8) | bincode payload`.
pub fn write_binary_cache(path: &Path, rows: &[Transaction], note: Option<&str>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let note = note.unwrap_or_default().as_bytes();
    w.write_all(CACHE_MAGIC)?;
    w.write_all(&CACHE_VERSION.to_le_bytes())?;
    w.write_all(&(note.len() as u32).to_le_bytes())?;
    w.write_all(note)?;
    bincode::serialize_into(&mut w, rows).map_err(|e| Error::Cache(e.to_string()))?;
    w.flush()?;
    Ok(())
}

pub fn read_binary_cache(path: &Path) -> Result<Vec<Transaction>> {
    read_binary_cache_with_note(path).map(|(rows, _)| rows)
}

/// Rows and the free-form note stored in the header.
pub fn read_binary_cache_with_note(path: &Path) -> Result<(Vec<Transaction>, String)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CACHE_MAGIC {
        return Err(Error::Cache("not a transaction cache".into()));
    }
    let mut version = [0u8; 4];
    r.read_exact(&mut version)?;
    let version = u32::from_le_bytes(version);
    if version != CACHE_VERSION {
        return Err(Error::Cache(format!(
            "cache version {version}, expected {CACHE_VERSION}"
        )));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut note = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut note)?;
    let note = String::from_utf8(note).map_err(|e| Error::Cache(e.to_string()))?;
    let rows = bincode::deserialize_from(r).map_err(|e| Error::Cache(e.to_string()))?;
    Ok((rows, note))
}
