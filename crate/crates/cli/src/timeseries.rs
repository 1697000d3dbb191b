//! Plain CSV time series: a `t` column followed by named columns.

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SeriesError {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TimeSeriesFile {
    pub t: Vec<f64>,
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
}

impl TimeSeriesFile {
    pub fn new(t: Vec<f64>) -> Result<Self, SeriesError> {
        for (i, w) in t.windows(2).enumerate() {
            if !(w[1] > w[0]) {
                return Err(SeriesError::Invalid(format!("t is not strictly increasing at row {}", i + 1)));
            }
        }
        if let Some(v) = t.iter().find(|v| !v.is_finite()) {
            return Err(SeriesError::Invalid(format!("t must be finite, got {v}")));
        }
        Ok(Self { t, names: Vec::new(), columns: Vec::new() })
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn push(&mut self, name: impl Into<String>, values: Vec<f64>) -> Result<(), SeriesError> {
        let name = name.into();
        if name == "t" || self.names.contains(&name) {
            return Err(SeriesError::Invalid(format!("duplicate column {name}")));
        }
        if values.len() != self.t.len() {
            return Err(SeriesError::Invalid(format!(
                "column {name} has {} rows, expected {}",
                values.len(),
                self.t.len()
            )));
        }
        self.names.push(name);
        self.columns.push(values);
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.names.iter().position(|n| n == name).map(|i| self.columns[i].as_slice())
    }

    /// Like [`column`](Self::column) but with a readable error.
    pub fn require(&self, name: &str) -> Result<&[f64], SeriesError> {
        self.column(name).ok_or_else(|| SeriesError::Invalid(format!("missing column {name}")))
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<(), SeriesError> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["t"];
        header.extend(self.names.iter().map(String::as_str));
        out.write_record(&header).map_err(csv_io)?;
        let mut row = Vec::with_capacity(header.len());
        for i in 0..self.t.len() {
            row.clear();
            row.push(self.t[i].to_string());
            row.extend(self.columns.iter().map(|c| c[i].to_string()));
            out.write_record(&row).map_err(csv_io)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<(), SeriesError> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self, SeriesError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).trim(csv::Trim::All).from_reader(r);
        let header = rdr.headers().map_err(|e| parse_err(1, e))?.clone();
        if header.get(0) != Some("t") {
            return Err(SeriesError::Parse { line: 1, message: "first column must be t".into() });
        }
        let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        for (i, n) in names.iter().enumerate() {
            if n.is_empty() || n == "t" || names[..i].contains(n) {
                return Err(SeriesError::Parse { line: 1, message: format!("bad or duplicate column name {n:?}") });
            }
        }
        let mut t = Vec::new();
        let mut columns = vec![Vec::new(); names.len()];
        let mut prev = f64::NEG_INFINITY;
        for rec in rdr.records() {
            let rec = rec.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                parse_err(line, e)
            })?;
            let line = rec.position().map_or(0, |p| p.line());
            if rec.len() != header.len() {
                return Err(SeriesError::Parse {
                    line,
                    message: format!("expected {} cells, found {}", header.len(), rec.len()),
                });
            }
            let mut cells = rec.iter().enumerate().map(|(j, cell)| {
                let col = if j == 0 { "t" } else { names[j - 1].as_str() };
                if cell.is_empty() {
                    return Err(SeriesError::Parse { line, message: format!("missing value in column {col}") });
                }
                cell.parse::<f64>()
                    .map_err(|_| SeriesError::Parse { line, message: format!("column {col}: not a number: {cell:?}") })
            });
            let tv = cells.next().expect("t cell")?;
            if !tv.is_finite() || !(tv > prev) {
                return Err(SeriesError::Parse { line, message: format!("t must be finite and strictly increasing, got {tv}") });
            }
            prev = tv;
            t.push(tv);
            for (c, v) in columns.iter_mut().zip(cells) {
                c.push(v?);
            }
        }
        Ok(Self { t, names, columns })
    }

    pub fn read(path: &Path) -> Result<Self, SeriesError> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

fn parse_err(line: u64, e: csv::Error) -> SeriesError {
    SeriesError::Parse { line, message: e.to_string() }
}

fn csv_io(e: csv::Error) -> SeriesError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => SeriesError::Io(io),
        other => SeriesError::Invalid(format!("{other:?}")),
    }
}
