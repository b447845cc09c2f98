use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::CliError;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize)]
pub struct Provenance {
    pub artifact: &'static str,
    pub version: &'static str,
    pub format_version: u32,
    pub command: &'static str,
    pub config_hash: String,
}

impl Provenance {
    pub fn new(command: &'static str, config_hash: String) -> Self {
        Provenance {
            artifact: "nlsnf",
            version: env!("CARGO_PKG_VERSION"),
            format_version: FORMAT_VERSION,
            command,
            config_hash,
        }
    }

    /// One-line comment header for text formats.
    pub fn comment(&self) -> String {
        format!(
            "# {} {} format={} command={} config_hash={}",
            self.artifact, self.version, self.format_version, self.command, self.config_hash
        )
    }
}

#[derive(Serialize)]
struct WithProvenance<'a, T: Serialize> {
    provenance: &'a Provenance,
    #[serde(flatten)]
    body: &'a T,
}

pub fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, prov: &Provenance, body: &T) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, &WithProvenance { provenance: prov, body })
        .map_err(|e| CliError::Runtime(format!("writing {}: {e}", path.display())))?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// CSV with a leading provenance comment line.
pub fn write_csv(path: &Path, prov: &Provenance, header: &[String], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = create(path)?;
    writeln!(w, "{}", prov.comment())?;
    {
        let mut cw = csv::Writer::from_writer(&mut w);
        cw.write_record(header).map_err(csv_err)?;
        for r in rows {
            cw.write_record(r).map_err(csv_err)?;
        }
        cw.flush()?;
    }
    w.flush()?;
    Ok(())
}

/// Streaming CSV writer; the provenance line is already written.
pub fn csv_writer(path: &Path, prov: &Provenance) -> Result<csv::Writer<BufWriter<File>>, CliError> {
    let mut w = create(path)?;
    writeln!(w, "{}", prov.comment())?;
    Ok(csv::Writer::from_writer(w))
}

pub fn csv_err(e: csv::Error) -> CliError {
    CliError::Runtime(format!("csv: {e}"))
}

/// Shortest round-trip representation.
pub fn num(x: f64) -> String {
    if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else if x.is_nan() {
        "nan".into()
    } else {
        format!("{x:e}")
    }
}
