//! CSV file formats.
//!
//! Data tables have one sample per line and one variable per field; an
//! optional header line is detected when any field of the first record is
//! neither a number nor a missing token. Empty fields, `NA`, `NaN` and `?`
//! are missing. In memory the table is the `p x n` [`IncompleteMatrix`]
//! with variables as rows.

use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::Path;

use gapkit_core::{DMatrix, IncompleteMatrix, Mask};

use crate::error::{config, CliError, CliResult};

const MISSING_TOKENS: [&str; 5] = ["", "NA", "NaN", "nan", "?"];

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Option<Vec<String>>,
    pub data: IncompleteMatrix,
}

fn parse_field(s: &str) -> Option<Option<f64>> {
    let s = s.trim();
    if MISSING_TOKENS.contains(&s) {
        return Some(None);
    }
    s.parse::<f64>().ok().filter(|v| v.is_finite()).map(Some)
}

/// Parses a data table from any reader; `label` names the source in errors.
pub fn parse_table(reader: impl Read, label: &str) -> CliResult<Table> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(reader);
    let mut rows: Vec<Vec<Option<f64>>> = Vec::new();
    let mut header = None;
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| config(format!("{label}: {e}")))?;
        let parsed: Vec<Option<Option<f64>>> = rec.iter().map(parse_field).collect();
        if parsed.iter().any(Option::is_none) {
            if line == 0 {
                header = Some(rec.iter().map(str::to_string).collect());
                continue;
            }
            let bad = rec.iter().find(|f| parse_field(f).is_none()).unwrap_or_default();
            return Err(config(format!("{label}: line {}: cannot parse {bad:?}", line + 1)));
        }
        rows.push(parsed.into_iter().map(Option::unwrap).collect());
    }
    if rows.is_empty() {
        return Err(config(format!("{label}: no data rows")));
    }
    let p = rows[0].len();
    let n = rows.len();
    let data = IncompleteMatrix::from_options(p, n, |i, j| rows[j][i]).map_err(CliError::Core)?;
    Ok(Table { header, data })
}

pub fn read_table(path: &Path) -> CliResult<Table> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    parse_table(file, &path.display().to_string())
}

/// Shortest round-trip text for a value; `NaN` prints as an empty field.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v:?}")
    }
}

/// Writes a `p x n` matrix as `n` lines of `p` fields. Entries that are
/// unobserved under `mask` are written empty.
pub fn write_table(out: impl Write, x: &DMatrix<f64>, mask: Option<&Mask>, header: Option<&[String]>) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if let Some(h) = header {
        w.write_record(h)?;
    }
    for j in 0..x.ncols() {
        let rec: Vec<String> = (0..x.nrows())
            .map(|i| match mask {
                Some(m) if !m.is_observed(i, j) => String::new(),
                _ => fmt_f64(x[(i, j)]),
            })
            .collect();
        w.write_record(&rec)?;
    }
    w.flush()
}

/// A single-column series; gaps become `NaN`. Blank lines are gaps, so
/// this does not go through the CSV reader, which skips them.
pub fn read_series(path: &Path) -> CliResult<(Option<String>, Vec<f64>)> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_series(&text, &path.display().to_string())
}

pub fn parse_series(text: &str, label: &str) -> CliResult<(Option<String>, Vec<f64>)> {
    let mut header = None;
    let mut values = Vec::new();
    for (line, raw) in text.lines().enumerate() {
        let field = raw.trim();
        if field.contains(',') {
            return Err(config(format!("{label}: line {}: expected one column", line + 1)));
        }
        match parse_field(field.trim_matches('"')) {
            Some(v) => values.push(v.unwrap_or(f64::NAN)),
            None if line == 0 => header = Some(field.trim_matches('"').to_string()),
            None => return Err(config(format!("{label}: line {}: cannot parse {field:?}", line + 1))),
        }
    }
    if values.is_empty() {
        return Err(config(format!("{label}: no data rows")));
    }
    Ok((header, values))
}

/// Columns of equal length written side by side under `header`.
pub fn write_columns(out: impl Write, header: &[String], columns: &[Vec<f64>]) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    let n = columns.first().map_or(0, Vec::len);
    for t in 0..n {
        w.write_record(columns.iter().map(|c| fmt_f64(c[t])))?;
    }
    w.flush()
}

/// Edge list `i,j,w` with zero-based node indices; a header line is
/// optional. Node indices must be below `p`.
pub fn read_edges(path: &Path, p: usize) -> CliResult<Vec<(usize, usize, f64)>> {
    let label = path.display().to_string();
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(file);
    let mut edges = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| config(format!("{label}: {e}")))?;
        if rec.len() != 3 {
            return Err(config(format!("{label}: line {}: expected i,j,w", line + 1)));
        }
        let parsed = (rec[0].parse::<usize>(), rec[1].parse::<usize>(), rec[2].parse::<f64>());
        match parsed {
            (Ok(i), Ok(j), Ok(w)) => {
                if i >= p || j >= p {
                    return Err(config(format!("{label}: line {}: node index out of range for {p} nodes", line + 1)));
                }
                edges.push((i, j, w));
            }
            _ if line == 0 => continue,
            _ => return Err(config(format!("{label}: line {}: expected i,j,w", line + 1))),
        }
    }
    Ok(edges)
}

pub fn write_edges(out: impl Write, edges: &[(usize, usize, f64)]) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["i", "j", "w"])?;
    for &(i, j, v) in edges {
        w.write_record([i.to_string(), j.to_string(), fmt_f64(v)])?;
    }
    w.flush()
}

/// `-` or no path means standard output.
pub fn open_output(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    match path {
        Some(p) if p != Path::new("-") => {
            let f = File::create(p).map_err(|e| CliError::io(p, e))?;
            Ok(Box::new(BufWriter::new(f)))
        }
        _ => Ok(Box::new(io::stdout().lock())),
    }
}

pub fn write_file(path: &Path, f: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> CliResult<()> {
    let mut out = open_output(Some(path))?;
    f(&mut out).and_then(|_| out.flush()).map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_gaps() {
        let t = parse_table("a,b\n1,2\n,NA\n3.5,?\n".as_bytes(), "x").unwrap();
        assert_eq!(t.header.as_deref(), Some(&["a".to_string(), "b".to_string()][..]));
        assert_eq!(t.data.shape(), (2, 3));
        assert_eq!(t.data.get(0, 2), Some(3.5));
        assert_eq!(t.data.get(1, 1), None);
        assert_eq!(t.data.get(1, 2), None);
    }

    #[test]
    fn headerless_round_trip() {
        let t = parse_table("1,2\n,0.1\n".as_bytes(), "x").unwrap();
        assert!(t.header.is_none());
        let mut buf = Vec::new();
        write_table(&mut buf, &t.data.filled_with(f64::NAN), None, None).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "1.0,2.0\n,0.1\n");
    }

    #[test]
    fn bad_field_is_config_error() {
        let e = parse_table("1,2\n3,x\n".as_bytes(), "in").unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("line 2"));
    }

    #[test]
    fn ragged_rows_rejected() {
        assert!(parse_table("1,2\n3\n".as_bytes(), "in").is_err());
    }

    #[test]
    fn series_blank_lines_are_gaps() {
        let (h, v) = parse_series("price\n1.5\n\nNA\n2\n\n", "s").unwrap();
        assert_eq!(h.as_deref(), Some("price"));
        assert_eq!(v.len(), 5);
        assert!(v[1].is_nan() && v[2].is_nan() && v[4].is_nan());
        assert_eq!(v[3], 2.0);
        assert!(parse_series("1,2\n", "s").is_err());
    }

    #[test]
    fn float_text_round_trips() {
        for v in [0.1, 1e-7, 123456.789, -2.5e300] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
        assert_eq!(fmt_f64(f64::NAN), "");
    }
}
