use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

/// A header plus string cells, ready for CSV.
pub struct Table {
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&'static str]) -> Self {
        Table {
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        Ok(w.into_inner()?)
    }
}

pub fn bits(row: &[u8]) -> String {
    row.iter().map(|b| char::from(b'0' + b)).collect()
}

fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value)?;
    out.push(b'\n');
    Ok(out)
}

/// Destination for command artifacts: a directory or standard output.
pub struct Sink {
    dir: Option<PathBuf>,
    format: Format,
    written: Vec<String>,
}

impl Sink {
    pub fn new(dir: Option<PathBuf>, format: Format) -> Result<Self> {
        if let Some(d) = &dir {
            fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
        }
        Ok(Sink {
            dir,
            format,
            written: Vec::new(),
        })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn put(&mut self, name: String, bytes: &[u8]) -> Result<()> {
        match &self.dir {
            Some(d) => {
                let path = d.join(&name);
                fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
                self.written.push(name);
            }
            None => std::io::stdout().write_all(bytes)?,
        }
        Ok(())
    }

    /// Writes `value` or `table` depending on the selected format.
    pub fn emit<T: Serialize + ?Sized>(&mut self, stem: &str, value: &T, table: &Table) -> Result<()> {
        match self.format {
            Format::Json => self.json(stem, value),
            Format::Csv => self.csv(stem, table),
        }
    }

    pub fn json<T: Serialize + ?Sized>(&mut self, stem: &str, value: &T) -> Result<()> {
        self.put(format!("{stem}.json"), &to_json(value)?)
    }

    pub fn csv(&mut self, stem: &str, table: &Table) -> Result<()> {
        self.put(format!("{stem}.csv"), &table.to_csv()?)
    }

    /// Records the invocation next to the artifacts; nothing time-dependent is stored.
    pub fn finish<T: Serialize>(mut self, manifest: &T) -> Result<()> {
        if self.dir.is_none() {
            return Ok(());
        }
        self.written.sort();
        #[derive(Serialize)]
        struct Manifest<'a, T> {
            tool: &'static str,
            version: &'static str,
            #[serde(flatten)]
            run: &'a T,
            files: &'a [String],
        }
        let bytes = to_json(&Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            run: manifest,
            files: &self.written,
        })?;
        let path = self.dir.as_ref().unwrap().join("manifest.json");
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}
