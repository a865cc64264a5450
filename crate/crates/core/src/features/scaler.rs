use std::io::{Read, Write};

use log::warn;

use super::{is_one_hot, FeatureTable};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnScale {
    pub column: String,
    pub mean: f64,
    pub std: f64,
    /// One-hot columns pass through unchanged.
    pub scaled: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalerParams {
    pub columns: Vec<ColumnScale>,
    /// Scaled columns whose training values were constant (std replaced by 1).
    pub constant_columns: Vec<String>,
}

/// Fit per-column mean and population standard deviation.
pub fn fit_scaler(train: &FeatureTable) -> ScalerParams {
    let n = train.n_rows() as f64;
    let d = train.n_cols();
    let mut constant_columns = Vec::new();
    let columns = (0..d)
        .map(|j| {
            let name = train.columns[j].clone();
            if is_one_hot(&name) {
                return ColumnScale { column: name, mean: 0.0, std: 1.0, scaled: false };
            }
            let values = train.values.iter().skip(j).step_by(d);
            let mean = if n > 0.0 { values.clone().sum::<f64>() / n } else { 0.0 };
            let var = if n > 0.0 { values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n } else { 0.0 };
            let mut std = var.sqrt();
            if !(std > 0.0) || !std.is_finite() {
                warn!("column {name} is constant on the training rows; leaving it centered with std 1");
                constant_columns.push(name.clone());
                std = 1.0;
            }
            ColumnScale { column: name, mean, std, scaled: true }
        })
        .collect();
    ScalerParams { columns, constant_columns }
}

pub fn transform(table: &FeatureTable, params: &ScalerParams) -> Result<FeatureTable> {
    let expected: Vec<&str> = params.columns.iter().map(|c| c.column.as_str()).collect();
    if table.columns.iter().map(String::as_str).ne(expected.iter().copied()) {
        let offending = table
            .columns
            .iter()
            .filter(|c| !expected.contains(&c.as_str()))
            .cloned()
            .chain(expected.iter().filter(|c| !table.columns.iter().any(|t| t == *c)).map(|c| c.to_string()))
            .collect::<Vec<_>>();
        return Err(Error::Schema { offending: if offending.is_empty() { vec!["<column order>".into()] } else { offending } });
    }
    let d = table.n_cols();
    let mut out = table.clone();
    for (k, v) in out.values.iter_mut().enumerate() {
        let c = &params.columns[k % d];
        if c.scaled {
            *v = (*v - c.mean) / c.std;
        }
    }
    Ok(out)
}

pub fn write_scaler<W: Write>(out: W, params: &ScalerParams) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["column", "mean", "std"])?;
    for c in &params.columns {
        w.write_record([c.column.clone(), c.mean.to_string(), c.std.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_scaler<R: Read>(input: R) -> Result<ScalerParams> {
    let mut r = csv::Reader::from_reader(input);
    let mut columns = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let bad = || Error::Row { line, message: "invalid scaler row".into() };
        let column = rec[0].to_string();
        columns.push(ColumnScale {
            scaled: !is_one_hot(&column),
            column,
            mean: rec[1].parse().map_err(|_| bad())?,
            std: rec[2].parse().map_err(|_| bad())?,
        });
    }
    Ok(ScalerParams { columns, constant_columns: Vec::new() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(cols: &[&str], rows: &[&[f64]]) -> FeatureTable {
        let mut t = FeatureTable::new(cols.iter().map(|c| c.to_string()).collect());
        for (i, r) in rows.iter().enumerate() {
            t.push_row(i as u64, false, r);
        }
        t
    }

    #[test]
    fn one_two_three() {
        let t = table(&["x"], &[&[1.0], &[2.0], &[3.0]]);
        let params = fit_scaler(&t);
        assert_eq!(params.columns[0].mean, 2.0);
        assert!((params.columns[0].std - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        let out = transform(&t, &params).unwrap();
        let expected = [-1.224_744_871_391_589, 0.0, 1.224_744_871_391_589];
        for (a, b) in out.values.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn standardized_column_is_fixed_point() {
        let v = [-1.224_744_871_391_589, 0.0, 1.224_744_871_391_589];
        let t = table(&["x"], &[&[v[0]], &[v[1]], &[v[2]]]);
        let out = transform(&t, &fit_scaler(&t)).unwrap();
        for (a, b) in out.values.iter().zip(v) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_column_centered_with_warning() {
        let t = table(&["c"], &[&[5.0], &[5.0], &[5.0]]);
        let params = fit_scaler(&t);
        assert_eq!(params.constant_columns, vec!["c".to_string()]);
        assert_eq!(transform(&t, &params).unwrap().values, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn one_hot_untouched() {
        let t = table(&["x", "type_other"], &[&[1.0, 1.0], &[3.0, 0.0]]);
        let out = transform(&t, &fit_scaler(&t)).unwrap();
        assert_eq!(out.column(1), vec![1.0, 0.0]);
        assert_eq!(out.column(0), vec![-1.0, 1.0]);
    }

    #[test]
    fn schema_mismatch() {
        let t = table(&["x"], &[&[1.0], &[2.0]]);
        let params = fit_scaler(&t);
        let other = table(&["y"], &[&[1.0]]);
        assert!(matches!(transform(&other, &params), Err(Error::Schema { .. })));
    }

    #[test]
    fn csv_roundtrip() {
        let t = table(&["x", "type_other"], &[&[1.0, 1.0], &[3.5, 0.0]]);
        let params = fit_scaler(&t);
        let mut buf = Vec::new();
        write_scaler(&mut buf, &params).unwrap();
        let back = read_scaler(buf.as_slice()).unwrap();
        assert_eq!(back.columns, params.columns);
    }
}
