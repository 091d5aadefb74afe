//! Output envelopes and CSV writers.
//!
//! JSON is canonical: every number is written at full precision, and a
//! copy rounded to [`PRESENTATION_DIGITS`] decimals is attached for reading.
//! CSV writers use Rust's shortest round-trip float formatting, so written
//! samples parse back to identical values.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};
use smallarea::model::AreaGrouped;
use smallarea::predict::AreaEstimate;
use smallarea::{BigSample, SmallSample};

use crate::error::CliError;

pub const PRESENTATION_DIGITS: i32 = 6;

/// Copy of `value` with every non-integer number rounded.
pub fn rounded(value: &Value, digits: i32) -> Value {
    match value {
        Value::Number(n) if !(n.is_i64() || n.is_u64()) => {
            let scale = 10f64.powi(digits);
            n.as_f64()
                .map(|x| json!((x * scale).round() / scale))
                .unwrap_or_else(|| value.clone())
        }
        Value::Array(items) => Value::Array(items.iter().map(|v| rounded(v, digits)).collect()),
        Value::Object(map) => Value::Object(map.iter().map(|(k, v)| (k.clone(), rounded(v, digits))).collect()),
        other => other.clone(),
    }
}

/// `{command, seed, config, result, presentation}` as pretty JSON.
pub fn envelope(command: &str, seed: Option<u64>, config: Value, result: &impl Serialize) -> Result<String, CliError> {
    let result = serde_json::to_value(result)?;
    let doc = json!({
        "command": command,
        "seed": seed,
        "config": config,
        "presentation": rounded(&result, PRESENTATION_DIGITS),
        "result": result,
    });
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    Ok(text)
}

pub fn write_text(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| CliError::Io {
            path: p.display().to_string(),
            source: e,
        }),
        None => std::io::stdout().write_all(text.as_bytes()).map_err(|e| CliError::Io {
            path: "<stdout>".into(),
            source: e,
        }),
    }
}

fn csv_to_string(f: impl FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    f(&mut w).map_err(|e| CliError::Input(e.to_string()))?;
    let bytes = w.into_inner().map_err(|e| CliError::Input(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::Input(e.to_string()))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Estimates table; `actual` is appended when truths are supplied.
pub fn estimates_csv(estimates: &[AreaEstimate], actual: Option<&[Option<f64>]>) -> Result<String, CliError> {
    csv_to_string(|w| {
        let mut header = vec!["area", "ebp", "direct", "direct_se", "mspe", "se_ebp", "cv"];
        if actual.is_some() {
            header.push("actual");
        }
        w.write_record(&header)?;
        for (i, e) in estimates.iter().enumerate() {
            let mut row = vec![
                e.area.clone(),
                e.ebp.to_string(),
                opt(e.direct),
                opt(e.direct_se),
                opt(e.mspe),
                opt(e.se_ebp),
                opt(e.cv),
            ];
            if let Some(a) = actual {
                row.push(opt(a[i]));
            }
            w.write_record(&row)?;
        }
        Ok(())
    })
}

/// `area,y,<covariates>[,weight]`; the weight column is written when every
/// record has a weight.
pub fn small_csv(small: &SmallSample, covariates: &[String]) -> Result<String, CliError> {
    let weighted = small.records().iter().all(|r| r.weight.is_some());
    csv_to_string(|w| {
        let mut header = vec!["area".to_string(), "y".to_string()];
        header.extend(covariates.iter().cloned());
        if weighted {
            header.push("weight".into());
        }
        w.write_record(&header)?;
        for rec in small.records() {
            let mut row = vec![
                rec.area.clone(),
                if rec.y == Some(true) { "1" } else { "0" }.to_string(),
            ];
            row.extend(rec.x.iter().map(f64::to_string));
            if weighted {
                row.push(opt(rec.weight));
            }
            w.write_record(&row)?;
        }
        Ok(())
    })
}

/// `area,<covariates>,weight` with the raw weights.
pub fn big_csv(big: &BigSample, covariates: &[String]) -> Result<String, CliError> {
    csv_to_string(|w| {
        let mut header = vec!["area".to_string()];
        header.extend(covariates.iter().cloned());
        header.push("weight".into());
        w.write_record(&header)?;
        for rec in big.records() {
            let mut row = vec![rec.area.clone()];
            row.extend(rec.x.iter().map(f64::to_string));
            row.push(opt(rec.weight));
            w.write_record(&row)?;
        }
        Ok(())
    })
}

/// `area,truth`.
pub fn truth_csv(areas: &[String], truths: &[f64]) -> Result<String, CliError> {
    csv_to_string(|w| {
        w.write_record(["area", "truth"])?;
        for (a, t) in areas.iter().zip(truths) {
            w.write_record([a.clone(), t.to_string()])?;
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_keeps_integers_and_structure() {
        let v = json!({"a": 0.123456789, "b": [1, 2.5e-9], "c": "x", "d": null});
        let r = rounded(&v, 6);
        assert_eq!(r, json!({"a": 0.123457, "b": [1, 0.0], "c": "x", "d": null}));
    }

    #[test]
    fn envelope_is_stable() {
        let a = envelope("fit", Some(3), json!({"k": 1}), &vec![0.1, 0.2]).unwrap();
        let b = envelope("fit", Some(3), json!({"k": 1}), &vec![0.1, 0.2]).unwrap();
        assert_eq!(a, b);
        assert!(a.contains("\"presentation\""));
    }
}
