//! CSV ingestion and emission.
//!
//! Dialect: comma separator, '.' decimal point, mandatory header row, UTF-8.
//! Continuous cells are written with the shortest representation that parses
//! back to the identical bits, so write-then-load round-trips exactly.

use std::collections::BTreeMap;
use std::path::Path;

use crate::data::{encode_categorical, ColumnKind, Dataset};
use crate::error::{Error, Result};

/// Loads a CSV file. `schema` describes the input columns in file order with
/// the target column excluded; `target` names the output column, which may
/// appear at any position. Categorical columns are validated against the
/// declared label set and then encoded by output-mean rank.
pub fn load_csv(path: impl AsRef<Path>, schema: &[ColumnKind], target: &str) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::io(
                path,
                std::io::Error::new(std::io::ErrorKind::NotFound, e.to_string()),
            ),
            _ => Error::Csv {
                path: path.into(),
                message: e.to_string(),
            },
        })?;

    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Csv {
            path: path.into(),
            message: e.to_string(),
        })?
        .iter()
        .map(|h| h.to_string())
        .collect();

    let target_pos = header
        .iter()
        .position(|h| h == target)
        .ok_or_else(|| Error::HeaderMismatch(format!("target column {target:?} not found")))?;
    let feature_pos: Vec<usize> = (0..header.len()).filter(|&i| i != target_pos).collect();
    if feature_pos.len() != schema.len() {
        return Err(Error::HeaderMismatch(format!(
            "file has {} input columns, schema declares {}",
            feature_pos.len(),
            schema.len()
        )));
    }
    let names: Vec<String> = feature_pos.iter().map(|&i| header[i].clone()).collect();

    let p = schema.len();
    let mut continuous: Vec<Vec<f64>> = vec![Vec::new(); p];
    let mut raw_labels: Vec<Vec<String>> = vec![Vec::new(); p];
    let mut output: Vec<f64> = Vec::new();

    for (rec_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Csv {
            path: path.into(),
            message: e.to_string(),
        })?;
        let file_row = rec_idx + 2; // 1-based, after the header
        if record.len() != header.len() {
            return Err(Error::Csv {
                path: path.into(),
                message: format!("row {file_row} has {} cells, expected {}", record.len(), header.len()),
            });
        }
        let y_cell = &record[target_pos];
        output.push(parse_f64(y_cell).ok_or_else(|| Error::BadCell {
            row: file_row,
            column: target_pos + 1,
            name: target.to_string(),
            value: y_cell.to_string(),
        })?);
        for (k, &pos) in feature_pos.iter().enumerate() {
            let cell = &record[pos];
            match &schema[k] {
                ColumnKind::Continuous => {
                    continuous[k].push(parse_f64(cell).ok_or_else(|| Error::BadCell {
                        row: file_row,
                        column: pos + 1,
                        name: names[k].clone(),
                        value: cell.to_string(),
                    })?);
                }
                ColumnKind::Categorical(labels) => {
                    if !labels.iter().any(|l| l == cell) {
                        return Err(Error::UnknownLabel {
                            column: names[k].clone(),
                            label: cell.to_string(),
                        });
                    }
                    raw_labels[k].push(cell.to_string());
                }
            }
        }
    }
    if output.is_empty() {
        return Err(Error::Csv {
            path: path.into(),
            message: "no data rows".into(),
        });
    }

    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(p);
    let mut maps: Vec<Option<BTreeMap<String, usize>>> = Vec::with_capacity(p);
    for k in 0..p {
        match &schema[k] {
            ColumnKind::Continuous => {
                columns.push(std::mem::take(&mut continuous[k]));
                maps.push(None);
            }
            ColumnKind::Categorical(_) => {
                let (encoded, map) = encode_categorical(&raw_labels[k], &output);
                columns.push(encoded);
                maps.push(Some(map));
            }
        }
    }

    Dataset::from_columns(columns, output, schema.to_vec(), names, target.to_string(), maps)
}

fn parse_f64(cell: &str) -> Option<f64> {
    let v: f64 = cell.trim().parse().ok()?;
    v.is_finite().then_some(v)
}

/// Writes a dataset to CSV; categorical cells are decoded back to labels, so
/// the file can be re-ingested through the same schema.
pub fn write_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::Csv {
        path: path.into(),
        message: e.to_string(),
    })?;

    let mut header: Vec<String> = dataset.names().to_vec();
    header.push(dataset.target_name().to_string());
    writer.write_record(&header).map_err(|e| Error::Csv {
        path: path.into(),
        message: e.to_string(),
    })?;

    // Pre-invert the encoding maps: rank -> label.
    let inverses: Vec<Option<Vec<&String>>> = dataset
        .encoding_maps()
        .iter()
        .map(|m| {
            m.as_ref().map(|map| {
                let mut inv: Vec<(usize, &String)> = map.iter().map(|(l, &r)| (r, l)).collect();
                inv.sort_by_key(|&(r, _)| r);
                inv.into_iter().map(|(_, l)| l).collect()
            })
        })
        .collect();

    let mut record: Vec<String> = Vec::with_capacity(dataset.p() + 1);
    for i in 0..dataset.n() {
        record.clear();
        for j in 0..dataset.p() {
            let v = dataset.value(i, j);
            match &inverses[j] {
                Some(labels) => record.push(labels[v as usize].clone()),
                None => record.push(format!("{v}")),
            }
        }
        record.push(format!("{}", dataset.output()[i]));
        writer.write_record(&record).map_err(|e| Error::Csv {
            path: path.into(),
            message: e.to_string(),
        })?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loads_a_small_continuous_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("tiny.csv");
        std::fs::write(&p, "x,Y\n0.25,1\n0.5,2\n-1e-3,3\n").unwrap();
        let ds = load_csv(&p, &[ColumnKind::Continuous], "Y").unwrap();
        assert_eq!(ds.n(), 3);
        assert_eq!(ds.p(), 1);
        assert_eq!(ds.column(0), &[0.25, 0.5, -1e-3]);
        assert_eq!(ds.output(), &[1.0, 2.0, 3.0]);
        assert_eq!(ds.names()[0], "x");
    }

    #[test]
    fn reports_row_and_column_of_bad_cells() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        std::fs::write(&p, "x,Y\n1.0,2\noops,3\n").unwrap();
        match load_csv(&p, &[ColumnKind::Continuous], "Y") {
            Err(Error::BadCell { row, column, value, .. }) => {
                assert_eq!(row, 3);
                assert_eq!(column, 1);
                assert_eq!(value, "oops");
            }
            other => panic!("expected BadCell, got {other:?}"),
        }
    }

    #[test]
    fn rejects_undeclared_labels_by_name() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("labels.csv");
        std::fs::write(&p, "c,Y\na,1\nz,2\n").unwrap();
        let schema = [ColumnKind::Categorical(vec!["a".into(), "b".into()])];
        match load_csv(&p, &schema, "Y") {
            Err(Error::UnknownLabel { label, column }) => {
                assert_eq!(label, "z");
                assert_eq!(column, "c");
            }
            other => panic!("expected UnknownLabel, got {other:?}"),
        }
    }

    #[test]
    fn missing_target_is_a_header_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("head.csv");
        std::fs::write(&p, "x,y\n1,2\n").unwrap();
        assert!(matches!(
            load_csv(&p, &[ColumnKind::Continuous], "Y"),
            Err(Error::HeaderMismatch(_))
        ));
    }

    #[test]
    fn continuous_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rt.csv");
        let cols = vec![vec![0.1 + 0.2, 1.0 / 3.0, -1e-17], vec![5.5, f64::MIN_POSITIVE, 2.0]];
        let ds = Dataset::from_continuous(cols, vec![0.123456789012345, 2.0, 3.0]).unwrap();
        write_csv(&ds, &p).unwrap();
        let back = load_csv(&p, ds.kinds(), "Y").unwrap();
        for j in 0..ds.p() {
            for i in 0..ds.n() {
                assert_eq!(ds.value(i, j).to_bits(), back.value(i, j).to_bits());
            }
        }
        assert_eq!(ds.fingerprint(), back.fingerprint());
    }
}
