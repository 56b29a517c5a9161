use std::io::Write;
use std::path::Path;

use chrono::DateTime;

use super::{DataError, TimeSeries};

/// Options for [`load_series`].
#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub value_column: String,
    /// Overrides any interval found in the file.
    pub interval_seconds: Option<f64>,
    /// Overrides a `label` comment; the file stem is the last fallback.
    pub label: Option<String>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            value_column: "value".into(),
            interval_seconds: None,
            label: None,
        }
    }
}

/// Looks for `# <key>: <value>` (or `=`) among the comment lines.
fn metadata<'a>(text: &'a str, key: &str) -> Option<&'a str> {
    text.lines()
        .filter_map(|l| l.trim_start().strip_prefix('#'))
        .find_map(|l| {
            let rest = l.trim().strip_prefix(key)?;
            let rest = rest.trim_start().strip_prefix([':', '='])?;
            Some(rest.trim())
        })
}

/// Reads one value column from a CSV file.
///
/// The sample interval comes from `opts.interval_seconds`, else an
/// `interval_seconds` comment, else the first two timestamps, else 1 s.
pub fn load_series(path: &Path, opts: &LoadOptions) -> Result<TimeSeries, DataError> {
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let label = opts
        .label
        .clone()
        .or_else(|| metadata(&text, "label").filter(|l| !l.is_empty()).map(str::to_string))
        .unwrap_or_else(|| {
            path.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default()
        });
    parse_series(&text, opts, label)
}

pub(crate) fn parse_series(text: &str, opts: &LoadOptions, label: String) -> Result<TimeSeries, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| DataError::Csv(e.to_string()))?.clone();
    if headers.is_empty() {
        return Err(DataError::Empty);
    }
    let value_idx = headers
        .iter()
        .position(|h| h == opts.value_column)
        .ok_or_else(|| DataError::MissingColumn(opts.value_column.clone()))?;
    let ts_idx = headers.iter().position(|h| h == "timestamp");

    let mut values = Vec::new();
    let mut stamps: Vec<DateTime<chrono::FixedOffset>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| DataError::Csv(e.to_string()))?;
        let row = rec.position().map_or(values.len() + 2, |p| p.line() as usize);
        let raw = rec.get(value_idx).unwrap_or("");
        let v: f64 = raw.parse().map_err(|_| DataError::Parse {
            row,
            column: opts.value_column.clone(),
            value: raw.to_string(),
        })?;
        if !v.is_finite() {
            return Err(DataError::Parse {
                row,
                column: opts.value_column.clone(),
                value: raw.to_string(),
            });
        }
        values.push(v);
        if let Some(ti) = ts_idx {
            let raw = rec.get(ti).unwrap_or("");
            let t = DateTime::parse_from_rfc3339(raw).map_err(|_| DataError::Timestamp {
                row,
                value: raw.to_string(),
            })?;
            if stamps.last().is_some_and(|prev| t <= *prev) {
                return Err(DataError::NonMonotone { row });
            }
            stamps.push(t);
        }
    }
    if values.is_empty() {
        return Err(DataError::Empty);
    }

    let interval = opts
        .interval_seconds
        .or_else(|| metadata(text, "interval_seconds").and_then(|v| v.parse().ok()))
        .or_else(|| match stamps.as_slice() {
            [a, b, ..] => Some((*b - *a).num_milliseconds() as f64 / 1000.0),
            _ => None,
        })
        .unwrap_or(1.0);
    TimeSeries::new(values, interval, label)
}

/// Writes a series in the format [`load_series`] reads back.
pub fn write_series(path: &Path, s: &TimeSeries) -> Result<(), DataError> {
    let io = |source| DataError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(f, "# label: {}", s.label()).map_err(io)?;
    writeln!(f, "# interval_seconds: {}", s.sample_interval()).map_err(io)?;
    writeln!(f, "value").map_err(io)?;
    for v in s.values() {
        writeln!(f, "{v}").map_err(io)?;
    }
    f.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<TimeSeries, DataError> {
        parse_series(text, &LoadOptions::default(), "t".into())
    }

    #[test]
    fn three_rows() {
        let s = parse("value\n1.0\n2.0\n3.0\n").unwrap();
        assert_eq!(s.values(), &[1.0, 2.0, 3.0]);
        assert_eq!(s.sample_interval(), 1.0);
    }

    #[test]
    fn bad_value_names_row() {
        match parse("value\n1.0\nabc\n3.0\n") {
            Err(DataError::Parse { row: 3, value, .. }) => assert_eq!(value, "abc"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn timestamps_must_increase() {
        let text = "timestamp,value\n2024-01-01T00:06:00Z,1\n2024-01-01T00:00:00Z,2\n";
        assert!(matches!(parse(text), Err(DataError::NonMonotone { row: 3 })));
    }

    #[test]
    fn interval_sources() {
        let text = "timestamp,value\n2024-01-01T00:00:00Z,1\n2024-01-01T00:06:00+00:00,2\n";
        assert_eq!(parse(text).unwrap().sample_interval(), 360.0);
        let text = "# interval_seconds: 30\nvalue\n1\n2\n";
        assert_eq!(parse(text).unwrap().sample_interval(), 30.0);
        let opts = LoadOptions {
            interval_seconds: Some(5.0),
            ..Default::default()
        };
        assert_eq!(parse_series(text, &opts, "x".into()).unwrap().sample_interval(), 5.0);
    }

    #[test]
    fn empty_and_missing_column() {
        assert!(matches!(parse(""), Err(DataError::Empty)));
        assert!(matches!(parse("value\n"), Err(DataError::Empty)));
        assert!(matches!(parse("other\n1\n"), Err(DataError::MissingColumn(_))));
    }

    #[test]
    fn comments_skipped_and_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("site.csv");
        let s = TimeSeries::new(vec![0.25, 1.5, -3.0], 360.0, "site 4").unwrap();
        write_series(&p, &s).unwrap();
        assert_eq!(load_series(&p, &LoadOptions::default()).unwrap(), s);
        let relabelled = LoadOptions {
            label: Some("other".into()),
            ..Default::default()
        };
        assert_eq!(load_series(&p, &relabelled).unwrap().label(), "other");
        std::fs::write(&p, "value\n1\n").unwrap();
        assert_eq!(load_series(&p, &LoadOptions::default()).unwrap().label(), "site");
        assert!(matches!(
            load_series(&dir.path().join("missing.csv"), &LoadOptions::default()),
            Err(DataError::Io { .. })
        ));
    }
}
