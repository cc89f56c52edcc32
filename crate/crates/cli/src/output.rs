//! CSV rendering and atomic file writes.

use std::io::Write;
use std::path::Path;

use tempfile::NamedTempFile;

/// Writes `bytes` to a temporary file beside `path`, then renames it into
/// place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Formats a float so it parses back to the same value.
pub fn fmt_f64(x: f64) -> String {
    x.to_string()
}

/// A CSV document: echoed config comment lines, a header, then records.
pub struct CsvDoc {
    preamble: String,
    writer: csv::Writer<Vec<u8>>,
}

impl CsvDoc {
    pub fn new(preamble: &str, header: &[&str]) -> csv::Result<Self> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(header)?;
        Ok(Self {
            preamble: preamble.to_string(),
            writer,
        })
    }

    pub fn row<I, S>(&mut self, fields: I) -> csv::Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields)
    }

    pub fn into_bytes(self) -> std::io::Result<Vec<u8>> {
        let body = self.writer.into_inner().map_err(|e| e.into_error())?;
        let mut out = self.preamble.into_bytes();
        out.extend_from_slice(&body);
        Ok(out)
    }
}
