use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::CliError;

/// Comment lines that open every output file.
pub fn provenance(command: &str, config_echo: &str) -> Vec<String> {
    vec![
        format!("stormsim {} {command}", env!("CARGO_PKG_VERSION")),
        format!("config: {config_echo}"),
    ]
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

pub fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// CSV table with `#` comment lines above the header.
pub struct Table {
    path: PathBuf,
    writer: csv::Writer<BufWriter<File>>,
}

impl Table {
    pub fn create(path: PathBuf, comments: &[String], header: &[&str]) -> Result<Self, CliError> {
        let mut out = create(&path)?;
        let io = |source| CliError::Io {
            path: path.clone(),
            source,
        };
        for c in comments {
            writeln!(out, "# {c}").map_err(io)?;
        }
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(header).map_err(|e| csv_err(&path, e))?;
        Ok(Table { path, writer })
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<(), CliError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields).map_err(|e| csv_err(&self.path, e))
    }

    pub fn finish(mut self) -> Result<PathBuf, CliError> {
        self.writer.flush().map_err(|source| CliError::Io {
            path: self.path.clone(),
            source,
        })?;
        Ok(self.path)
    }
}

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    CliError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    }
}

/// Number or `NA`.
pub fn num(v: Option<f64>) -> String {
    match v {
        Some(v) if v.is_nan() => "NA".into(),
        Some(v) => v.to_string(),
        None => "NA".into(),
    }
}
