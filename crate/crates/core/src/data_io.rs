//! Real-dataset ingestion: column filtering, binary-category mapping,
//! row-wise missing-value drops, mean-centering with unit-norm scaling, and
//! the registry of benchmark dataset shapes.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Dataset;

/// How a CSV becomes a regression dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestConfig {
    /// Response column, by header name or zero-based index.
    pub response: ColumnRef,
    /// Columns dropped before any other processing.
    pub drop_columns: Vec<String>,
    /// Append an all-ones intercept column after normalization.
    pub add_bias: bool,
    pub delimiter: u8,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            response: ColumnRef::Index(usize::MAX),
            drop_columns: Vec::new(),
            add_bias: true,
            delimiter: b',',
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ColumnRef {
    Name(String),
    Index(usize),
}

impl ColumnRef {
    fn resolve(&self, headers: &[String]) -> Result<usize> {
        match self {
            ColumnRef::Name(name) => headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::BadColumn {
                    column: name.clone(),
                    reason: "not found in header".into(),
                }),
            ColumnRef::Index(i) => {
                // usize::MAX means "last column".
                let idx = if *i == usize::MAX { headers.len() - 1 } else { *i };
                if idx < headers.len() {
                    Ok(idx)
                } else {
                    Err(Error::BadColumn {
                        column: format!("#{i}"),
                        reason: format!("index out of range ({} columns)", headers.len()),
                    })
                }
            }
        }
    }
}

/// What the pipeline did: kept/dropped columns and row counts.
#[derive(Debug, Clone, Default, Serialize)]
pub struct IngestReport {
    pub kept_columns: Vec<String>,
    /// Multi-category or configured-away columns, with the reason.
    pub dropped_columns: Vec<(String, String)>,
    pub rows_read: usize,
    pub rows_dropped_missing: usize,
}

fn is_missing(field: &str) -> bool {
    let t = field.trim();
    t.is_empty() || matches!(t.to_ascii_lowercase().as_str(), "na" | "nan" | "n/a" | "null")
}

/// Ingest a CSV with a header row. Rows with missing values in any retained
/// column are dropped; two-category text columns map to {0,1} in order of
/// first appearance; text columns with more categories are dropped with a
/// note in the report. Every retained column (and the response) is centered
/// and scaled to unit Euclidean norm; the bias column, when requested, is
/// appended afterwards and left as ones.
pub fn ingest_csv<R: Read>(reader: R, cfg: &IngestConfig) -> Result<(Dataset, IngestReport)> {
    let mut r = csv::ReaderBuilder::new()
        .delimiter(cfg.delimiter)
        .flexible(false)
        .from_reader(reader);
    let headers: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    let response_idx = cfg.response.resolve(&headers)?;

    let mut report = IngestReport::default();
    let mut retained: Vec<usize> = Vec::new();
    for (j, name) in headers.iter().enumerate() {
        if cfg.drop_columns.iter().any(|d| d == name) {
            report
                .dropped_columns
                .push((name.clone(), "configured".into()));
        } else {
            retained.push(j);
        }
    }
    if !retained.contains(&response_idx) {
        return Err(Error::BadColumn {
            column: headers[response_idx].clone(),
            reason: "response column was dropped by configuration".into(),
        });
    }

    // Read everything, then drop rows with missing values in retained columns.
    let mut rows: Vec<Vec<String>> = Vec::new();
    for record in r.records() {
        let record = record?;
        report.rows_read += 1;
        let fields: Vec<String> = retained.iter().map(|&j| record[j].to_owned()).collect();
        if fields.iter().any(|f| is_missing(f)) {
            report.rows_dropped_missing += 1;
        } else {
            rows.push(fields);
        }
    }
    if rows.is_empty() {
        return Err(Error::InsufficientData("no complete rows".into()));
    }

    // Classify each retained column: numeric as-is, two-category text
    // mapped {0,1}, anything else dropped.
    let n = rows.len();
    let mut columns: Vec<(String, Vec<f64>)> = Vec::new();
    let mut response: Option<Vec<f64>> = None;
    for (pos, &j) in retained.iter().enumerate() {
        let name = &headers[j];
        let raw: Vec<&str> = rows.iter().map(|row| row[pos].trim()).collect();
        let numeric: Option<Vec<f64>> = raw
            .iter()
            .map(|f| f.parse::<f64>().ok())
            .collect();
        let values = match numeric {
            Some(v) => v,
            None => {
                // Order of first appearance decides the {0,1} coding.
                let mut seen: Vec<&str> = Vec::new();
                for f in &raw {
                    if !seen.contains(f) {
                        seen.push(f);
                    }
                }
                if seen.len() == 2 {
                    raw.iter()
                        .map(|f| if *f == seen[0] { 0.0 } else { 1.0 })
                        .collect()
                } else if j == response_idx {
                    return Err(Error::BadColumn {
                        column: name.clone(),
                        reason: format!("response is non-numeric with {} categories", seen.len()),
                    });
                } else {
                    report.dropped_columns.push((
                        name.clone(),
                        format!("nominal with {} categories", seen.len()),
                    ));
                    continue;
                }
            }
        };
        if j == response_idx {
            response = Some(values);
        } else {
            columns.push((name.clone(), values));
        }
    }
    let y_raw = response.ok_or_else(|| Error::BadColumn {
        column: headers[response_idx].clone(),
        reason: "missing after filtering".into(),
    })?;

    // Center and scale to unit Euclidean norm.
    let normalize = |name: &str, values: &[f64]| -> Result<Vec<f64>> {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let centered: Vec<f64> = values.iter().map(|v| v - mean).collect();
        let norm = centered.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::BadColumn {
                column: name.to_owned(),
                reason: "is constant (zero norm after centering)".into(),
            });
        }
        Ok(centered.into_iter().map(|v| v / norm).collect())
    };

    let mut feature_names = Vec::new();
    let mut features: Vec<Vec<f64>> = Vec::new();
    for (name, values) in &columns {
        features.push(normalize(name, values)?);
        feature_names.push(name.clone());
    }
    let y = normalize(&headers[response_idx], &y_raw)?;
    if cfg.add_bias {
        features.push(vec![1.0; n]);
        feature_names.push("bias".into());
    }
    if features.is_empty() {
        return Err(Error::InsufficientData("no usable feature columns".into()));
    }

    report.kept_columns = feature_names;
    let d = features.len();
    let x = DMatrix::from_fn(n, d, |i, j| features[j][i]);
    Ok((
        Dataset {
            x,
            y: DVector::from_vec(y),
            true_labels: None,
            truth: None,
            noise_sigma: None,
            corrupted_indices: None,
        },
        report,
    ))
}

pub fn ingest_csv_path<P: AsRef<Path>>(path: P, cfg: &IngestConfig) -> Result<(Dataset, IngestReport)> {
    ingest_csv(std::fs::File::open(path)?, cfg)
}

/// Expected shape of one benchmark dataset after ingestion. `d` counts the
/// columns of the final design matrix, bias included when `add_bias`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRegistryEntry {
    pub name: String,
    pub expected_n: usize,
    pub expected_d: usize,
    pub add_bias: bool,
}

#[derive(Deserialize)]
struct RegistryFile {
    dataset: Vec<DatasetRegistryEntry>,
}

/// The benchmark datasets and their post-ingestion shapes. The fish-market
/// regression omits the intercept: a fish of zero size weighs zero.
pub fn registry() -> BTreeMap<String, DatasetRegistryEntry> {
    let parsed: RegistryFile =
        toml::from_str(include_str!("../resources/registry.toml")).expect("registry parses");
    parsed
        .dataset
        .into_iter()
        .map(|e| (e.name.clone(), e))
        .collect()
}

pub fn registry_entry(name: &str) -> Result<DatasetRegistryEntry> {
    registry()
        .get(name)
        .cloned()
        .ok_or_else(|| Error::UnknownDataset(name.to_owned()))
}

/// Shape check against the registry; the report lists any discrepancy.
pub fn validate_against_registry(data: &Dataset, entry: &DatasetRegistryEntry) -> (bool, String) {
    let mut problems = Vec::new();
    if data.n() != entry.expected_n {
        problems.push(format!(
            "sample count {} differs from expected {}",
            data.n(),
            entry.expected_n
        ));
    }
    if data.dim() != entry.expected_d {
        problems.push(format!(
            "dimension {} differs from expected {}",
            data.dim(),
            entry.expected_d
        ));
    }
    if problems.is_empty() {
        (true, format!("matches registry entry '{}'", entry.name))
    } else {
        (false, problems.join("; "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg_for(response: &str) -> IngestConfig {
        IngestConfig {
            response: ColumnRef::Name(response.into()),
            add_bias: false,
            ..IngestConfig::default()
        }
    }

    #[test]
    fn centering_and_normalization() {
        let csv = "a,y\n1,10\n2,20\n3,30\n";
        let (data, _) = ingest_csv(csv.as_bytes(), &cfg_for("y")).unwrap();
        let s = 1.0 / 2.0_f64.sqrt();
        let expected = [-s, 0.0, s];
        for i in 0..3 {
            assert!((data.x[(i, 0)] - expected[i]).abs() < 1e-12);
            assert!((data.y[i] - expected[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn missing_rows_are_dropped() {
        let csv = "a,b,y\n1,2,3\n4,,6\n7,8,9\nNA,1,2\n1,nan,3\n2,3,4\n5,6,7\n8,9,1\n3,1,4\n1,5,9\n";
        let (data, report) = ingest_csv(csv.as_bytes(), &cfg_for("y")).unwrap();
        assert_eq!(report.rows_read, 10);
        assert_eq!(report.rows_dropped_missing, 3);
        assert_eq!(data.n(), 7);
    }

    #[test]
    fn binary_text_maps_by_first_appearance() {
        let csv = "sex,y\nmale,1\nfemale,2\nmale,3\nfemale,1\n";
        let (data, _) = ingest_csv(csv.as_bytes(), &cfg_for("y")).unwrap();
        // male appears first so it codes as 0; after centering the male rows
        // are negative and equal.
        assert!(data.x[(0, 0)] < 0.0);
        assert_eq!(data.x[(0, 0)], data.x[(2, 0)]);
        assert_eq!(data.x[(1, 0)], data.x[(3, 0)]);
    }

    #[test]
    fn nominal_columns_are_dropped_with_reason() {
        let csv = "region,a,y\nnorth,1,2\nsouth,2,3\neast,3,4\nwest,4,5\n";
        let (data, report) = ingest_csv(csv.as_bytes(), &cfg_for("y")).unwrap();
        assert_eq!(data.dim(), 1);
        assert!(report
            .dropped_columns
            .iter()
            .any(|(name, reason)| name == "region" && reason.contains("4 categories")));
    }

    #[test]
    fn constant_column_is_an_error() {
        let csv = "a,y\n5,1\n5,2\n5,3\n";
        match ingest_csv(csv.as_bytes(), &cfg_for("y")) {
            Err(Error::BadColumn { column, .. }) => assert_eq!(column, "a"),
            other => panic!("expected ConstantColumn-style error, got {other:?}"),
        }
    }

    #[test]
    fn bias_column_is_appended_unnormalized() {
        let csv = "a,y\n1,1\n2,2\n3,3\n";
        let cfg = IngestConfig {
            response: ColumnRef::Name("y".into()),
            add_bias: true,
            ..IngestConfig::default()
        };
        let (data, report) = ingest_csv(csv.as_bytes(), &cfg).unwrap();
        assert_eq!(data.dim(), 2);
        assert_eq!(report.kept_columns.last().map(String::as_str), Some("bias"));
        for i in 0..3 {
            assert_eq!(data.x[(i, 1)], 1.0);
        }
    }

    #[test]
    fn ingestion_is_deterministic() {
        let csv = "a,b,y\n1,male,3\n4,female,6\n7,male,9\n";
        let cfg = cfg_for("y");
        let (a, _) = ingest_csv(csv.as_bytes(), &cfg).unwrap();
        let (b, _) = ingest_csv(csv.as_bytes(), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn registry_matches_published_shapes() {
        let reg = registry();
        let expect = [
            ("medical", 1338, 7, true),
            ("wine", 1599, 12, true),
            ("who", 1649, 21, true),
            ("fish", 159, 5, false),
        ];
        for (name, n, d, bias) in expect {
            let e = &reg[name];
            assert_eq!((e.expected_n, e.expected_d, e.add_bias), (n, d, bias), "{name}");
        }
    }

    #[test]
    fn registry_validation_reports_mismatch() {
        let entry = registry_entry("fish").unwrap();
        let data = Dataset {
            x: DMatrix::zeros(158, 5),
            y: DVector::zeros(158),
            true_labels: None,
            truth: None,
            noise_sigma: None,
            corrupted_indices: None,
        };
        let (ok, msg) = validate_against_registry(&data, &entry);
        assert!(!ok);
        assert!(msg.contains("158"));
        assert!(matches!(registry_entry("nope"), Err(Error::UnknownDataset(_))));
    }
}
