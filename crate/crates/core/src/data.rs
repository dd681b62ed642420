//! Observation series and CSV ingestion.

use std::path::Path as FsPath;

use crate::error::{Error, Result};

/// Discretely observed values at strictly increasing times (in years).
#[derive(Clone, Debug, PartialEq)]
pub struct Observations {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl Observations {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::Contract(format!(
                "{} times but {} values",
                times.len(),
                values.len()
            )));
        }
        if times.len() < 2 {
            return Err(Error::Contract(
                "at least two observations are required".into(),
            ));
        }
        for (i, (&t, &v)) in times.iter().zip(&values).enumerate() {
            if !t.is_finite() || !v.is_finite() {
                return Err(Error::Data {
                    line: i + 1,
                    message: "non-finite entry".into(),
                });
            }
            if i > 0 && t <= times[i - 1] {
                return Err(Error::Data {
                    line: i + 1,
                    message: format!(
                        "time {t} does not exceed the previous time {}",
                        times[i - 1]
                    ),
                });
            }
        }
        Ok(Self { times, values })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn n_intervals(&self) -> usize {
        self.times.len() - 1
    }

    /// The first `n` observations.
    pub fn head(&self, n: usize) -> Result<Self> {
        let n = n.min(self.len());
        Self::new(self.times[..n].to_vec(), self.values[..n].to_vec())
    }
}

/// How observation times are obtained from a CSV file.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CsvSchema {
    /// Header `time,value`.
    TimeColumn,
    /// Header `value`; times are `0, Δ, 2Δ, …`.
    ImplicitSpacing(f64),
}

/// Reads observations from a CSV file. Errors carry the 1-based file line.
///
/// With `require_positive` every value must be strictly positive, as needed
/// by models that work on the log scale.
pub fn ingest_csv(
    path: impl AsRef<FsPath>,
    schema: CsvSchema,
    require_positive: bool,
) -> Result<Observations> {
    let file = std::fs::File::open(path.as_ref())?;
    read_csv(file, schema, require_positive)
}

pub fn read_csv<R: std::io::Read>(
    reader: R,
    schema: CsvSchema,
    require_positive: bool,
) -> Result<Observations> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column = |name: &str| headers.iter().position(|h| h == name);
    let value_col = column("value").ok_or(Error::Data {
        line: 1,
        message: "missing `value` column".into(),
    })?;
    let time_col = match schema {
        CsvSchema::TimeColumn => Some(column("time").ok_or(Error::Data {
            line: 1,
            message: "missing `time` column".into(),
        })?),
        CsvSchema::ImplicitSpacing(dt) => {
            if !(dt > 0.0) || !dt.is_finite() {
                return Err(Error::Config(format!(
                    "spacing must be positive (got {dt})"
                )));
            }
            None
        }
    };

    let mut times = Vec::new();
    let mut values = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let line = record.position().map_or(i + 2, |p| p.line() as usize);
        let field = |col: usize, what: &str| -> Result<f64> {
            let raw = record.get(col).ok_or_else(|| Error::Data {
                line,
                message: format!("missing {what}"),
            })?;
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Data {
                    line,
                    message: format!("cannot parse {what} `{raw}`"),
                })
        };
        let v = field(value_col, "value")?;
        if require_positive && !(v > 0.0) {
            return Err(Error::Data {
                line,
                message: format!("value {v} must be positive for this model"),
            });
        }
        let t = match (time_col, schema) {
            (Some(c), _) => field(c, "time")?,
            (None, CsvSchema::ImplicitSpacing(dt)) => dt * times.len() as f64,
            (None, CsvSchema::TimeColumn) => unreachable!(),
        };
        if let Some(&prev) = times.last() {
            if t <= prev {
                return Err(Error::Data {
                    line,
                    message: format!("time {t} is not after the previous time {prev}"),
                });
            }
        }
        times.push(t);
        values.push(v);
    }
    Observations::new(times, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_rows_with_times() {
        let obs = read_csv(
            "time,value\n0,1\n1,2\n".as_bytes(),
            CsvSchema::TimeColumn,
            false,
        )
        .unwrap();
        assert_eq!(obs.times(), &[0.0, 1.0]);
        assert_eq!(obs.values(), &[1.0, 2.0]);
    }

    #[test]
    fn implicit_weekly_spacing() {
        let mut text = String::from("value\n");
        for i in 0..1809 {
            text.push_str(&format!("{}\n", 5.0 + (i % 7) as f64));
        }
        let dt = 5.0 / 252.0;
        let obs = read_csv(text.as_bytes(), CsvSchema::ImplicitSpacing(dt), true).unwrap();
        assert_eq!(obs.len(), 1809);
        let last = *obs.times().last().unwrap();
        assert!((last - 1808.0 * dt).abs() < 1e-12);
        assert!((last - 35.873).abs() < 1e-3);
    }

    #[test]
    fn out_of_order_rows_name_the_line() {
        let err = read_csv(
            "time,value\n0,1\n2,2\n1,3\n".as_bytes(),
            CsvSchema::TimeColumn,
            false,
        )
        .unwrap_err();
        match err {
            Error::Data { line, .. } => assert_eq!(line, 4),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn unparseable_and_nonpositive_rows_are_reported() {
        let err = read_csv(
            "time,value\n0,1\n1,abc\n".as_bytes(),
            CsvSchema::TimeColumn,
            false,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Data { line: 3, .. }), "{err}");
        let err = read_csv(
            "value\n1\n0\n".as_bytes(),
            CsvSchema::ImplicitSpacing(1.0),
            true,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Data { line: 3, .. }), "{err}");
        assert!(read_csv(
            "value\n1\n0\n".as_bytes(),
            CsvSchema::ImplicitSpacing(1.0),
            false
        )
        .is_ok());
    }

    #[test]
    fn too_few_rows_are_rejected() {
        assert!(read_csv("time,value\n0,1\n".as_bytes(), CsvSchema::TimeColumn, false).is_err());
        assert!(read_csv("time\n0\n1\n".as_bytes(), CsvSchema::TimeColumn, false).is_err());
    }
}
