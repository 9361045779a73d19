//! Streaming CSV ingestion.
//!
//! Input files have a header `x,y1,...,yd` followed by numeric rows. Rows
//! that fail to parse, have the wrong number of fields or contain a
//! non-finite value are skipped and counted; the stream is rejected once
//! the whole input has been read if more than a tenth of its rows were bad.

use std::fs::File;
use std::io::{self, BufReader, Read};
use std::path::Path;

use crate::CliError;

/// Largest tolerated fraction of malformed rows.
pub const MAX_MALFORMED_FRACTION: f64 = 0.1;

/// One pass over a CSV source, yielding `(x, y)` records in file order.
pub struct RecordReader<R: Read> {
    rows: csv::StringRecordsIntoIter<R>,
    dim: usize,
    records: u64,
    malformed: u64,
    first_malformed_line: Option<u64>,
    failure: Option<CliError>,
}

/// Opens `path`, or standard input for `-`.
pub fn open(path: &Path) -> Result<RecordReader<Box<dyn Read>>, CliError> {
    let inner: Box<dyn Read> = if path.as_os_str() == "-" {
        Box::new(io::stdin().lock())
    } else {
        let file = File::open(path)
            .map_err(|e| CliError::Input(format!("cannot open {}: {e}", path.display())))?;
        Box::new(BufReader::new(file))
    };
    RecordReader::new(inner)
}

impl<R: Read> RecordReader<R> {
    pub fn new(inner: R) -> Result<Self, CliError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(inner);
        let header = reader
            .headers()
            .map_err(|e| CliError::Input(format!("cannot read header: {e}")))?
            .clone();
        let dim = check_header(&header)?;
        Ok(RecordReader {
            rows: reader.into_records(),
            dim,
            records: 0,
            malformed: 0,
            first_malformed_line: None,
            failure: None,
        })
    }

    /// Response dimension declared by the header.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Records yielded so far.
    pub fn records(&self) -> u64 {
        self.records
    }

    pub fn malformed(&self) -> u64 {
        self.malformed
    }

    /// Ends the pass: reports read errors and enforces the malformed-row cap.
    pub fn finish(self) -> Result<IngestSummary, CliError> {
        if let Some(e) = self.failure {
            return Err(e);
        }
        let total = self.records + self.malformed;
        if total == 0 {
            return Err(CliError::Input("the input has no data rows".into()));
        }
        if self.malformed as f64 > MAX_MALFORMED_FRACTION * total as f64 {
            return Err(CliError::Input(format!(
                "{} of {} rows are malformed (first at line {}); at most {}% are tolerated",
                self.malformed,
                total,
                self.first_malformed_line.unwrap_or(0),
                MAX_MALFORMED_FRACTION * 100.0
            )));
        }
        Ok(IngestSummary {
            records: self.records,
            malformed: self.malformed,
        })
    }

    fn parse(&self, row: &csv::StringRecord) -> Option<(f64, Vec<f64>)> {
        if row.len() != self.dim + 1 {
            return None;
        }
        let mut values = row.iter().map(|f| f.parse::<f64>().ok().filter(|v| v.is_finite()));
        let x = values.next()??;
        let y: Option<Vec<f64>> = values.collect();
        y.map(|y| (x, y))
    }
}

impl<R: Read> Iterator for RecordReader<R> {
    type Item = (f64, Vec<f64>);

    fn next(&mut self) -> Option<Self::Item> {
        if self.failure.is_some() {
            return None;
        }
        loop {
            match self.rows.next()? {
                Ok(row) => match self.parse(&row) {
                    Some(rec) => {
                        self.records += 1;
                        return Some(rec);
                    }
                    None => {
                        self.malformed += 1;
                        if self.first_malformed_line.is_none() {
                            self.first_malformed_line = row.position().map(|p| p.line());
                        }
                    }
                },
                Err(e) if e.is_io_error() => {
                    self.failure = Some(CliError::Input(format!("read error: {e}")));
                    return None;
                }
                Err(_) => self.malformed += 1,
            }
        }
    }
}

/// Counts reported at the end of a pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IngestSummary {
    pub records: u64,
    pub malformed: u64,
}

fn check_header(header: &csv::StringRecord) -> Result<usize, CliError> {
    let fields: Vec<&str> = header.iter().collect();
    if fields.len() < 2 || fields[0] != "x" {
        return Err(CliError::Input(format!(
            "header must be `x,y1,...,yd`, found `{}`",
            fields.join(",")
        )));
    }
    for (j, name) in fields[1..].iter().enumerate() {
        if *name != format!("y{}", j + 1) {
            return Err(CliError::Input(format!(
                "header column {} must be `y{}`, found `{name}`",
                j + 2,
                j + 1
            )));
        }
    }
    Ok(fields.len() - 1)
}
