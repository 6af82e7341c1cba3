//! Comma-separated dataset files.
//!
//! One header row; one row per image. Label cells are `1`, `0`, `-1`
//! (uncertain) or blank (unobserved, mask 0).

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularSchema {
    pub patient_id_column: String,
    pub feature_columns: Vec<String>,
    pub label_columns: Vec<String>,
}

impl TabularSchema {
    /// `patient_id, f0..f{d-1}, <label names>`.
    pub fn for_dataset(ds: &Dataset) -> Self {
        Self {
            patient_id_column: "patient_id".into(),
            feature_columns: (0..ds.feature_dim()).map(|j| format!("f{j}")).collect(),
            label_columns: ds.label_names.clone(),
        }
    }
}

pub fn write_tabular(ds: &Dataset, schema: &TabularSchema, path: &Path) -> Result<()> {
    if schema.feature_columns.len() != ds.feature_dim()
        || schema.label_columns.len() != ds.n_labels()
    {
        return Err(Error::Config("schema does not match dataset".into()));
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec![schema.patient_id_column.clone()];
    header.extend(schema.feature_columns.iter().cloned());
    header.extend(schema.label_columns.iter().cloned());
    w.write_record(&header)?;
    for i in 0..ds.len() {
        let mut rec = vec![ds.patient_ids[i].to_string()];
        rec.extend(ds.features.row(i).iter().map(|v| v.to_string()));
        for j in 0..ds.n_labels() {
            rec.push(if ds.mask.get(i, j) == 0.0 {
                String::new()
            } else {
                format!("{}", ds.labels.get(i, j) as i64)
            });
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_tabular(path: &Path, schema: &TabularSchema) -> Result<Dataset> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header = rdr.headers()?.clone();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse {
                row: 0,
                column: name.to_string(),
                message: "column missing from header".into(),
            })
    };
    let pid_col = find(&schema.patient_id_column)?;
    let feat_cols = schema
        .feature_columns
        .iter()
        .map(|c| find(c))
        .collect::<Result<Vec<_>>>()?;
    let label_cols = schema
        .label_columns
        .iter()
        .map(|c| find(c))
        .collect::<Result<Vec<_>>>()?;

    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut mask = Vec::new();
    let mut pids = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let row = r + 1;
        let rec = rec?;
        let cell = |col: usize, name: &str| -> Result<&str> {
            rec.get(col).ok_or_else(|| Error::Parse {
                row,
                column: name.to_string(),
                message: "missing cell".into(),
            })
        };
        let bad = |name: &str, v: &str, what: &str| Error::Parse {
            row,
            column: name.to_string(),
            message: format!("`{v}` is not {what}"),
        };
        let pid = cell(pid_col, &schema.patient_id_column)?;
        pids.push(
            pid.trim()
                .parse::<u64>()
                .map_err(|_| bad(&schema.patient_id_column, pid, "a patient id"))?,
        );
        for (&c, name) in feat_cols.iter().zip(&schema.feature_columns) {
            let v = cell(c, name)?;
            let x = v
                .trim()
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| bad(name, v, "a finite number"))?;
            features.push(x);
        }
        for (&c, name) in label_cols.iter().zip(&schema.label_columns) {
            let v = cell(c, name)?;
            let (y, m) = match v.trim() {
                "" => (0.0, 0.0),
                s => match s.parse::<f64>() {
                    Ok(y) if y == 0.0 || y == 1.0 || y == -1.0 => (y, 1.0),
                    _ => return Err(bad(name, v, "a label (1, 0, -1 or blank)")),
                },
            };
            labels.push(y);
            mask.push(m);
        }
    }
    let n = pids.len();
    Dataset::new(
        Tensor::new(vec![n, feat_cols.len()], features)?,
        Tensor::new(vec![n, label_cols.len()], labels)?,
        Tensor::new(vec![n, label_cols.len()], mask)?,
        pids,
        schema.label_columns.clone(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{default_label_names, generate, prune_labels, DomainSpec, LabelModel};
    use crate::numerics::RngStream;

    fn sample() -> Dataset {
        let d = DomainSpec::base(3, 4, 1);
        let lm =
            LabelModel::sample(default_label_names(3), 3, 0.2, &mut RngStream::new(2)).unwrap();
        let ds = generate(&d, &lm, 30, &RngStream::new(3)).unwrap();
        prune_labels(&ds, &["L00", "L02"]).unwrap()
    }

    #[test]
    fn round_trip() {
        let ds = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let schema = TabularSchema::for_dataset(&ds);
        write_tabular(&ds, &schema, &path).unwrap();
        let back = load_tabular(&path, &schema).unwrap();
        assert_eq!(back.patient_ids, ds.patient_ids);
        assert_eq!(back.mask, ds.mask);
        for (a, b) in back.features.data().iter().zip(ds.features.data()) {
            assert!((a - b).abs() <= 1e-9);
        }
        for k in 0..ds.labels.len() {
            if ds.mask.data()[k] != 0.0 {
                assert_eq!(back.labels.data()[k], ds.labels.data()[k]);
            }
        }
    }

    #[test]
    fn blank_cell_is_unobserved() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "pid,x,a,b\n1,0.5,1,\n2,1.5,,-1\n").unwrap();
        let schema = TabularSchema {
            patient_id_column: "pid".into(),
            feature_columns: vec!["x".into()],
            label_columns: vec!["a".into(), "b".into()],
        };
        let ds = load_tabular(&path, &schema).unwrap();
        assert_eq!(ds.mask.data(), &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(ds.labels.data(), &[1.0, 0.0, 0.0, -1.0]);
    }

    #[test]
    fn errors_name_the_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "pid,x,a\n1,oops,1\n").unwrap();
        let schema = TabularSchema {
            patient_id_column: "pid".into(),
            feature_columns: vec!["x".into()],
            label_columns: vec!["a".into()],
        };
        match load_tabular(&path, &schema) {
            Err(Error::Parse { row, column, .. }) => {
                assert_eq!(row, 1);
                assert_eq!(column, "x");
            }
            other => panic!("unexpected {other:?}"),
        }
        let missing = TabularSchema {
            label_columns: vec!["zzz".into()],
            ..schema
        };
        match load_tabular(&path, &missing) {
            Err(Error::Parse { column, .. }) => assert_eq!(column, "zzz"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
