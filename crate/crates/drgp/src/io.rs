//! CSV reading and writing of time series.

use std::fs::File;
use std::path::{Path, PathBuf};

use drgp_core::{Dataset, Matrix};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Open {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("{path}: {message}")]
    Shape { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
}

/// Which column of a file holds the output series.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub enum OutputColumn {
    #[default]
    Last,
    Named(String),
    Index(usize),
}

impl OutputColumn {
    /// Interprets a command-line value: a number is an index, anything else a name.
    pub fn parse(s: &str) -> Self {
        s.parse()
            .map_or_else(|_| OutputColumn::Named(s.to_owned()), OutputColumn::Index)
    }

    fn resolve(&self, header: &[String], path: &Path) -> Result<usize, IoError> {
        let shape = |message: String| IoError::Shape {
            path: path.to_owned(),
            message,
        };
        match self {
            OutputColumn::Last => Ok(header.len() - 1),
            OutputColumn::Index(i) if *i < header.len() => Ok(*i),
            OutputColumn::Index(i) => Err(shape(format!(
                "output column {i} is out of range for {} columns",
                header.len()
            ))),
            OutputColumn::Named(name) => header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| shape(format!("no column named {name:?}"))),
        }
    }
}

/// Reads a numeric CSV with a header row. Rows keep their file order; every
/// column except the output becomes an input, in file order.
pub fn load_csv(path: &Path, output: &OutputColumn) -> Result<Dataset, IoError> {
    let file = File::open(path).map_err(|source| IoError::Open {
        path: path.to_owned(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let header: Vec<String> = reader
        .headers()
        .map_err(|source| IoError::Csv {
            path: path.to_owned(),
            source,
        })?
        .iter()
        .map(str::to_owned)
        .collect();
    if header.len() < 2 {
        return Err(IoError::Shape {
            path: path.to_owned(),
            message: format!(
                "need at least one input and one output column, found {}",
                header.len()
            ),
        });
    }
    let out_col = output.resolve(&header, path)?;
    let width = header.len();
    let mut inputs = Vec::new();
    let mut outputs = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|source| IoError::Csv {
            path: path.to_owned(),
            source,
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let parse_err = |message: String| IoError::Parse {
            path: path.to_owned(),
            line,
            message,
        };
        if record.len() != width {
            return Err(parse_err(format!(
                "expected {width} fields, found {}",
                record.len()
            )));
        }
        for (c, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                parse_err(format!("column {:?}: {cell:?} is not a number", header[c]))
            })?;
            if c == out_col {
                outputs.push(v);
            } else {
                inputs.push(v);
            }
        }
    }
    if outputs.is_empty() {
        return Err(IoError::Shape {
            path: path.to_owned(),
            message: "file has no data rows".into(),
        });
    }
    let n = outputs.len();
    let matrix = Matrix::from_vec(n, width - 1, inputs).map_err(|e| IoError::Shape {
        path: path.to_owned(),
        message: e.to_string(),
    })?;
    let mut names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|(c, _)| *c != out_col)
        .map(|(_, h)| h.clone())
        .collect();
    names.push(header[out_col].clone());
    Dataset::new(matrix, outputs, names).map_err(|e| IoError::Shape {
        path: path.to_owned(),
        message: e.to_string(),
    })
}

/// Writes inputs followed by the output column, with a header.
pub fn write_csv(path: &Path, data: &Dataset) -> Result<(), IoError> {
    let csv_err = |source| IoError::Csv {
        path: path.to_owned(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let q = data.input_dim();
    let header: Vec<String> = if data.names.len() == q + 1 {
        data.names.clone()
    } else {
        (0..q)
            .map(|j| format!("x{j}"))
            .chain(std::iter::once("y".to_owned()))
            .collect()
    };
    w.write_record(&header).map_err(csv_err)?;
    for i in 0..data.len() {
        let row: Vec<String> = data
            .inputs
            .row(i)
            .iter()
            .chain(std::iter::once(&data.outputs[i]))
            .map(|v| v.to_string())
            .collect();
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|source| IoError::Open {
        path: path.to_owned(),
        source,
    })
}
