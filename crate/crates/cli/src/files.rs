use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use timechange_sv::Trace;

use crate::CliError;

pub(crate) fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Io {
            path: path.to_path_buf(),
            source: e,
        })
}

pub(crate) fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>, CliError> {
    Ok(csv::Writer::from_writer(create(path)?))
}

pub(crate) fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::Csv {
        path: path.to_path_buf(),
        source: e,
    }
}

pub(crate) fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    let mut w = create(path)?;
    let io = |e| CliError::Io {
        path: path.to_path_buf(),
        source: e,
    };
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: e.into(),
    })?;
    w.write_all(b"\n").map_err(io)?;
    w.flush().map_err(io)
}

/// Writes `iter,<parameters>,loglik`.
pub fn write_trace(path: &Path, trace: &Trace) -> Result<(), CliError> {
    let err = csv_err(path);
    let mut w = csv_writer(path)?;
    let mut header = vec!["iter".to_string()];
    header.extend(trace.param_names.iter().cloned());
    header.push("loglik".into());
    w.write_record(&header).map_err(&err)?;
    for ((it, row), ll) in trace.iterations.iter().zip(&trace.draws).zip(&trace.loglik) {
        let mut rec = vec![it.to_string()];
        rec.extend(row.iter().map(f64::to_string));
        rec.push(ll.to_string());
        w.write_record(&rec).map_err(&err)?;
    }
    w.flush().map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Named numeric columns read back from a trace file.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceTable {
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl TraceTable {
    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }
}

/// Reads every column after `iter`, including `loglik`.
pub fn read_trace(path: &Path) -> Result<TraceTable, CliError> {
    let malformed = |msg: String| CliError::Malformed {
        path: path.to_path_buf(),
        message: msg,
    };
    let file = File::open(path).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut rdr = csv::Reader::from_reader(file);
    let headers = rdr.headers().map_err(csv_err(path))?.clone();
    if headers.get(0) != Some("iter") || headers.len() < 2 {
        return Err(malformed(
            "expected a header starting with `iter` and at least one column".into(),
        ));
    }
    let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut columns = vec![Vec::new(); names.len()];
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        let line = i + 2;
        if rec.len() != headers.len() {
            return Err(malformed(format!(
                "line {line}: expected {} fields",
                headers.len()
            )));
        }
        for (c, col) in columns.iter_mut().enumerate() {
            let raw = &rec[c + 1];
            let v: f64 = raw
                .parse()
                .map_err(|_| malformed(format!("line {line}: cannot parse `{raw}`")))?;
            col.push(v);
        }
    }
    Ok(TraceTable { names, columns })
}
