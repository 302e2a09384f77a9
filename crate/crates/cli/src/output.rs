//! CSV artifacts: `#` comment lines carrying the schema and seed, then a
//! header row, then data. Floats are rounded to a fixed number of
//! significant digits and printed in shortest form, so identical inputs give
//! identical bytes.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::CliError;

/// Rounds `v` to `digits` significant digits.
pub fn format_float(v: f64, digits: usize) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return if v.is_nan() {
            "nan".into()
        } else if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let rounded: f64 = format!("{:.*e}", digits - 1, v)
        .parse()
        .expect("formatted float parses");
    let a = rounded.abs();
    if (1e-5..1e16).contains(&a) {
        format!("{rounded}")
    } else {
        format!("{rounded:e}")
    }
}

pub enum Cell<'a> {
    F(f64),
    B(bool),
    S(&'a str),
    Empty,
}

pub struct CsvOut {
    path: PathBuf,
    w: csv::Writer<BufWriter<File>>,
    digits: usize,
    buf: Vec<String>,
}

impl CsvOut {
    /// `meta` entries become `# key: value` lines after the schema and seed.
    pub fn create(
        path: &Path,
        schema: &str,
        seed: u64,
        meta: &[(&str, String)],
        header: &[&str],
        digits: usize,
    ) -> Result<Self, CliError> {
        let io_err = |source| CliError::Output {
            path: path.to_path_buf(),
            source,
        };
        let file = File::create(path).map_err(io_err)?;
        let mut bw = BufWriter::new(file);
        let mut head = format!("# schema: {schema}\n# seed: {seed}\n");
        for (k, v) in meta {
            head.push_str(&format!("# {k}: {v}\n"));
        }
        bw.write_all(head.as_bytes()).map_err(io_err)?;
        let mut out = Self {
            path: path.to_path_buf(),
            w: csv::Writer::from_writer(bw),
            digits,
            buf: Vec::with_capacity(header.len()),
        };
        out.w.write_record(header).map_err(|e| out.csv_err(e))?;
        Ok(out)
    }

    fn csv_err(&self, e: csv::Error) -> CliError {
        CliError::Output {
            path: self.path.clone(),
            source: e.into(),
        }
    }

    pub fn row(&mut self, cells: &[Cell<'_>]) -> Result<(), CliError> {
        self.buf.clear();
        for c in cells {
            self.buf.push(match c {
                Cell::F(v) => format_float(*v, self.digits),
                Cell::B(v) => v.to_string(),
                Cell::S(s) => s.to_string(),
                Cell::Empty => String::new(),
            });
        }
        let res = self.w.write_record(&self.buf);
        res.map_err(|e| self.csv_err(e))
    }

    pub fn finish(mut self) -> Result<PathBuf, CliError> {
        self.w.flush().map_err(|source| CliError::Output {
            path: self.path.clone(),
            source,
        })?;
        Ok(self.path)
    }
}
