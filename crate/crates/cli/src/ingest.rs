//! CSV ingestion of the small and big samples, plus the small CSV tables
//! (truths, estimates) used by `evaluate`.
//!
//! Columns are found by header name. `area` and (small sample) `y` or (big
//! sample) `weight` are reserved; every other column is a covariate, in file
//! order.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use smallarea::model::AreaGrouped;
use smallarea::{BigSample, SmallSample, UnitRecord};

use crate::error::CliError;

/// A parsed sample together with its covariate column names.
#[derive(Debug, Clone)]
pub struct Ingested<S> {
    pub sample: S,
    pub covariates: Vec<String>,
}

struct Layout {
    area: usize,
    y: Option<usize>,
    weight: Option<usize>,
    covariates: Vec<usize>,
    names: Vec<String>,
}

fn open(path: &Path) -> Result<File, CliError> {
    File::open(path).map_err(|e| CliError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn parse_error(source: &str, line: u64, message: impl Into<String>) -> CliError {
    CliError::Parse {
        file: source.to_string(),
        line,
        message: message.into(),
    }
}

fn csv_error(source: &str, e: csv::Error) -> CliError {
    let line = e.position().map_or(0, |p| p.line());
    parse_error(source, line, e.to_string())
}

fn layout(source: &str, headers: &csv::StringRecord, want_y: bool) -> Result<Layout, CliError> {
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);
    let area = find("area").ok_or_else(|| parse_error(source, 1, "missing column `area`"))?;
    let y = find("y");
    let weight = find("weight");
    if want_y && y.is_none() {
        return Err(parse_error(source, 1, "missing column `y`"));
    }
    if !want_y && y.is_some() {
        return Err(parse_error(source, 1, "the big sample must not carry a `y` column"));
    }
    if !want_y && weight.is_none() {
        return Err(parse_error(source, 1, "missing column `weight`"));
    }
    let covariates: Vec<usize> = (0..headers.len())
        .filter(|&i| i != area && Some(i) != y && Some(i) != weight)
        .collect();
    if covariates.is_empty() {
        return Err(parse_error(source, 1, "no covariate columns"));
    }
    let names = covariates.iter().map(|&i| headers[i].trim().to_string()).collect();
    Ok(Layout {
        area,
        y,
        weight,
        covariates,
        names,
    })
}

fn parse_f64(source: &str, line: u64, column: &str, field: &str) -> Result<f64, CliError> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| parse_error(source, line, format!("`{column}` is not a number: {field:?}")))?;
    if !v.is_finite() {
        return Err(parse_error(
            source,
            line,
            format!("`{column}` is not finite: {field:?}"),
        ));
    }
    Ok(v)
}

fn read_records<R: Read>(reader: R, source: &str, want_y: bool) -> Result<(Vec<UnitRecord>, Vec<String>), CliError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers().map_err(|e| csv_error(source, e))?.clone();
    let layout = layout(source, &headers, want_y)?;
    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| csv_error(source, e))?;
        let line = row.position().map_or(0, |p| p.line());
        let area = row[layout.area].trim();
        if area.is_empty() {
            return Err(parse_error(source, line, "empty area id"));
        }
        let y = match layout.y {
            Some(i) => match row[i].trim() {
                "0" => Some(false),
                "1" => Some(true),
                other => return Err(parse_error(source, line, format!("y must be 0 or 1, got {other:?}"))),
            },
            None => None,
        };
        let weight = match layout.weight {
            Some(i) if !(want_y && row[i].trim().is_empty()) => {
                let w = parse_f64(source, line, "weight", &row[i])?;
                if w < 0.0 {
                    return Err(parse_error(source, line, format!("negative weight {w}")));
                }
                Some(w)
            }
            _ => None,
        };
        let x = layout
            .covariates
            .iter()
            .zip(&layout.names)
            .map(|(&i, name)| parse_f64(source, line, name, &row[i]))
            .collect::<Result<Vec<f64>, _>>()?;
        records.push(UnitRecord::new(area, y, x, weight));
    }
    Ok((records, layout.names))
}

pub fn read_small<R: Read>(reader: R, source: &str) -> Result<Ingested<SmallSample>, CliError> {
    let (records, covariates) = read_records(reader, source, true)?;
    Ok(Ingested {
        sample: SmallSample::new(records)?,
        covariates,
    })
}

pub fn read_big<R: Read>(reader: R, source: &str) -> Result<Ingested<BigSample>, CliError> {
    let (records, covariates) = read_records(reader, source, false)?;
    Ok(Ingested {
        sample: BigSample::new(records)?,
        covariates,
    })
}

pub fn ingest_small(path: &Path) -> Result<Ingested<SmallSample>, CliError> {
    read_small(open(path)?, &path.display().to_string())
}

pub fn ingest_big(path: &Path) -> Result<Ingested<BigSample>, CliError> {
    read_big(open(path)?, &path.display().to_string())
}

/// The small and big samples must share covariate columns.
pub fn check_compatible(small: &Ingested<SmallSample>, big: &Ingested<BigSample>) -> Result<(), CliError> {
    if small.covariates != big.covariates {
        return Err(CliError::Input(format!(
            "covariate columns differ: small has {:?}, big has {:?}",
            small.covariates, big.covariates
        )));
    }
    Ok(())
}

/// Per-area raw weight sums of a big sample, for reporting.
pub fn weight_report(big: &BigSample) -> Vec<(String, f64)> {
    big.area_ids()
        .iter()
        .cloned()
        .zip(big.raw_weight_sums().iter().copied())
        .collect()
}

/// `area,value` pairs from column `column` of a CSV table. Empty cells are
/// returned as `None`.
pub fn read_column(path: &Path, column: &str) -> Result<Vec<(String, Option<f64>)>, CliError> {
    let source = path.display().to_string();
    let mut rdr = csv::Reader::from_reader(open(path)?);
    let headers = rdr.headers().map_err(|e| csv_error(&source, e))?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| parse_error(&source, 1, format!("missing column `{name}`")))
    };
    let area = find("area")?;
    let value = find(column)?;
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| csv_error(&source, e))?;
        let line = row.position().map_or(0, |p| p.line());
        let cell = row[value].trim();
        let v = if cell.is_empty() {
            None
        } else {
            Some(parse_f64(&source, line, column, cell)?)
        };
        out.push((row[area].trim().to_string(), v));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_sample_sizes() {
        let text = "area,y,x1\nA,1,0.5\nA,0,1.5\nB,1,-2\n";
        let s = read_small(text.as_bytes(), "t").unwrap();
        assert_eq!(s.sample.m_observed(), 2);
        assert_eq!(s.sample.area_size(0), 2);
        assert_eq!(s.sample.area_size(1), 1);
        assert_eq!(s.covariates, vec!["x1"]);
    }

    #[test]
    fn bad_outcome_cites_its_line() {
        let text = "area,y,x1\nA,1,0\nA,0,0\nA,1,0\nB,0,0\nB,1,0\nB,2,0\n";
        match read_small(text.as_bytes(), "small.csv") {
            Err(CliError::Parse { line, message, .. }) => {
                assert_eq!(line, 7);
                assert!(message.contains("y must be 0 or 1"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn big_weights_normalized_with_raw_sums() {
        let text = "area,x1,weight\nA,0.1,100\nA,0.2,150\n";
        let b = read_big(text.as_bytes(), "big.csv").unwrap();
        assert_eq!(b.sample.weight(0), 0.4);
        assert_eq!(b.sample.weight(1), 0.6);
        assert_eq!(weight_report(&b.sample), vec![("A".to_string(), 250.0)]);
    }

    #[test]
    fn structural_problems() {
        let cases = [
            ("y,x1\n1,0\n", 1),
            ("area,y,x1\nA,1\n", 2),
            ("area,y,x1,weight\nA,1,0,-3\n", 2),
            ("area,y\nA,1\n", 1),
        ];
        for (text, want) in cases {
            match read_small(text.as_bytes(), "s") {
                Err(CliError::Parse { line, .. }) => assert_eq!(line, want, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
        assert!(matches!(
            read_big("area,y,x1,weight\nA,1,0,1\n".as_bytes(), "b"),
            Err(CliError::Parse { .. })
        ));
        assert!(matches!(
            read_big("area,x1\nA,0\n".as_bytes(), "b"),
            Err(CliError::Parse { .. })
        ));
    }
}
