use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use hardstar::background::fmt_f64;

use crate::config::RunConfig;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Header carried by every emitted file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub program: String,
    pub version: String,
    pub command: String,
    pub config_sha256: String,
}

impl Provenance {
    pub fn for_config(config: &RunConfig) -> Self {
        Self {
            program: "hardstar".into(),
            version: VERSION.into(),
            command: config.command.name().into(),
            config_sha256: config.hash(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("provenance serializes")
    }
}

/// A table cell: numbers get seventeen significant digits, missing values
/// stay empty.
#[derive(Debug, Clone)]
pub enum Cell {
    Num(f64),
    Int(usize),
    Text(String),
    Empty,
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Num(v) => fmt_f64(*v),
            Cell::Int(i) => i.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Empty, Cell::Num)
    }
}

pub struct Artifacts {
    dir: PathBuf,
    provenance: Provenance,
    written: Vec<PathBuf>,
}

impl Artifacts {
    pub fn create(dir: PathBuf, provenance: Provenance) -> std::io::Result<Self> {
        fs::create_dir_all(&dir)?;
        Ok(Self { dir, provenance, written: Vec::new() })
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    fn open(&mut self, name: &str) -> std::io::Result<BufWriter<File>> {
        let path = self.dir.join(name);
        let f = File::create(&path)?;
        self.written.push(path);
        Ok(BufWriter::new(f))
    }

    /// `# {provenance}` followed by a header row and the records.
    pub fn csv<I>(&mut self, name: &str, columns: &[&str], rows: I) -> anyhow::Result<()>
    where
        I: IntoIterator<Item = Vec<Cell>>,
    {
        let mut w = self.open(name)?;
        writeln!(w, "# {}", self.provenance.to_json())?;
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(columns)?;
        for row in rows {
            wr.write_record(row.iter().map(Cell::render))?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Writes through `f`, after the provenance comment line.
    pub fn csv_with<F>(&mut self, name: &str, f: F) -> anyhow::Result<()>
    where
        F: FnOnce(&mut BufWriter<File>, &str) -> anyhow::Result<()>,
    {
        let header = self.provenance.to_json();
        let mut w = self.open(name)?;
        f(&mut w, &header)?;
        w.flush()?;
        Ok(())
    }

    /// `{"provenance": ..., "data": ...}`
    pub fn json<T: Serialize>(&mut self, name: &str, data: &T) -> anyhow::Result<()> {
        let doc = serde_json::json!({ "provenance": self.provenance, "data": data });
        let mut w = self.open(name)?;
        serde_json::to_writer_pretty(&mut w, &doc)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    pub fn svg(&mut self, name: &str, body: &str) -> anyhow::Result<()> {
        let mut w = self.open(name)?;
        writeln!(w, "<!-- {} -->", self.provenance.to_json())?;
        w.write_all(body.as_bytes())?;
        w.flush()?;
        Ok(())
    }
}

/// Recovers the header of any file written through [`Artifacts`].
pub fn read_provenance(path: &Path) -> anyhow::Result<Provenance> {
    let mut first = String::new();
    BufReader::new(File::open(path)?).read_line(&mut first)?;
    let line = first.trim();
    if let Some(rest) = line.strip_prefix("# ") {
        return Ok(serde_json::from_str(rest)?);
    }
    if let Some(rest) = line.strip_prefix("<!-- ").and_then(|s| s.strip_suffix(" -->")) {
        return Ok(serde_json::from_str(rest)?);
    }
    #[derive(Deserialize)]
    struct Doc {
        provenance: Provenance,
    }
    let doc: Doc = serde_json::from_reader(File::open(path)?)?;
    Ok(doc.provenance)
}
