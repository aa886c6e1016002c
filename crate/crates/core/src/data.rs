//! Dataset representation, file ingestion and fold assignment.
//!
//! Two flat-file formats are accepted, both keyed by the same [`ColumnSchema`]:
//! CSV with a header row, and JSON-lines with one object per customer.
//! Treatment values must be the integers 0 or 1; nothing is coerced.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column names used to read a customer table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnSchema {
    pub id: String,
    pub treatment: String,
    pub outcome: String,
    /// Feature columns in model order. `None` takes every remaining column
    /// (file order for CSV, key order for JSON-lines).
    #[serde(default)]
    pub features: Option<Vec<String>>,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        ColumnSchema {
            id: "customer_id".into(),
            treatment: "treatment".into(),
            outcome: "outcome".into(),
            features: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FileFormat {
    Csv,
    Jsonl,
}

impl FileFormat {
    pub fn from_path(path: &Path) -> FileFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("ndjson") => FileFormat::Jsonl,
            _ => FileFormat::Csv,
        }
    }
}

/// Immutable customer table: ids, features `X`, binary treatment `D`, outcome `Y`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    customer_ids: Vec<String>,
    feature_names: Vec<String>,
    features: DMatrix<f64>,
    treatment: Vec<u8>,
    outcome: Vec<f64>,
}

impl Dataset {
    pub fn new(
        customer_ids: Vec<String>,
        feature_names: Vec<String>,
        features: DMatrix<f64>,
        treatment: Vec<u8>,
        outcome: Vec<f64>,
    ) -> Result<Self> {
        let n = customer_ids.len();
        if n == 0 {
            return Err(Error::InvalidData("dataset has no rows".into()));
        }
        if features.nrows() != n || treatment.len() != n || outcome.len() != n {
            return Err(Error::InvalidData(format!(
                "length mismatch: {} ids, {} feature rows, {} treatments, {} outcomes",
                n,
                features.nrows(),
                treatment.len(),
                outcome.len()
            )));
        }
        if feature_names.len() != features.ncols() {
            return Err(Error::InvalidData(format!(
                "{} feature names for {} feature columns",
                feature_names.len(),
                features.ncols()
            )));
        }
        let mut seen = HashSet::with_capacity(n);
        for (row, id) in customer_ids.iter().enumerate() {
            if !seen.insert(id.as_str()) {
                return Err(Error::Validation {
                    row: row + 1,
                    column: "customer_id".into(),
                    message: format!("duplicate customer id `{id}`"),
                });
            }
        }
        for (row, &d) in treatment.iter().enumerate() {
            if d > 1 {
                return Err(Error::Validation {
                    row: row + 1,
                    column: "treatment".into(),
                    message: format!("treatment must be 0 or 1, got {d}"),
                });
            }
        }
        for (row, y) in outcome.iter().enumerate() {
            if !y.is_finite() {
                return Err(Error::Validation {
                    row: row + 1,
                    column: "outcome".into(),
                    message: format!("non-finite value {y}"),
                });
            }
        }
        for j in 0..features.ncols() {
            for i in 0..n {
                let v = features[(i, j)];
                if !v.is_finite() {
                    return Err(Error::Validation {
                        row: i + 1,
                        column: feature_names[j].clone(),
                        message: format!("non-finite value {v}"),
                    });
                }
            }
        }
        Ok(Dataset {
            customer_ids,
            feature_names,
            features,
            treatment,
            outcome,
        })
    }

    pub fn n(&self) -> usize {
        self.customer_ids.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn customer_ids(&self) -> &[String] {
        &self.customer_ids
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn treatment(&self) -> &[u8] {
        &self.treatment
    }

    pub fn treatment_f64(&self) -> Vec<f64> {
        self.treatment.iter().map(|&d| d as f64).collect()
    }

    pub fn outcome(&self) -> &[f64] {
        &self.outcome
    }

    pub fn n_treated(&self) -> usize {
        self.treatment.iter().filter(|&&d| d == 1).count()
    }

    /// Estimation needs at least one treated and one control customer.
    pub fn require_both_arms(&self) -> Result<()> {
        let treated = self.n_treated();
        if treated == 0 || treated == self.n() {
            return Err(Error::Estimation(format!(
                "treatment must contain both arms; found {} treated of {} customers",
                treated,
                self.n()
            )));
        }
        Ok(())
    }

    /// Rows `indices` in the given order. Repeated indices get suffixed ids
    /// so the uniqueness invariant survives resampling.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut seen = HashSet::with_capacity(indices.len());
        let ids = indices
            .iter()
            .enumerate()
            .map(|(k, &i)| {
                if seen.insert(i) {
                    self.customer_ids[i].clone()
                } else {
                    format!("{}#{}", self.customer_ids[i], k)
                }
            })
            .collect();
        Dataset {
            customer_ids: ids,
            feature_names: self.feature_names.clone(),
            features: self.features.select_rows(indices),
            treatment: indices.iter().map(|&i| self.treatment[i]).collect(),
            outcome: indices.iter().map(|&i| self.outcome[i]).collect(),
        }
    }

    /// Replaces the outcome vector, keeping everything else.
    pub fn with_outcome(&self, outcome: Vec<f64>) -> Result<Dataset> {
        Dataset::new(
            self.customer_ids.clone(),
            self.feature_names.clone(),
            self.features.clone(),
            self.treatment.clone(),
            outcome,
        )
    }

    /// Writes the canonical CSV layout: `customer_id,treatment,outcome,<features>`.
    ///
    /// Floats use the shortest representation that parses back to the same bits.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_csv_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_csv_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let schema = ColumnSchema::default();
        let mut header = vec![schema.id, schema.treatment, schema.outcome];
        header.extend(self.feature_names.iter().cloned());
        wr.write_record(&header)?;
        let mut record = Vec::with_capacity(header.len());
        for i in 0..self.n() {
            record.clear();
            record.push(self.customer_ids[i].clone());
            record.push(self.treatment[i].to_string());
            record.push(format!("{:?}", self.outcome[i]));
            for j in 0..self.n_features() {
                record.push(format!("{:?}", self.features[(i, j)]));
            }
            wr.write_record(&record)?;
        }
        wr.flush()
    }
}

/// Reads and validates a customer table.
pub fn load_dataset(path: &Path, schema: &ColumnSchema) -> Result<Dataset> {
    match FileFormat::from_path(path) {
        FileFormat::Csv => {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            read_csv(file, schema)
        }
        FileFormat::Jsonl => {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            read_jsonl(BufReader::new(file), schema)
        }
    }
}

fn check_schema(schema: &ColumnSchema) -> Result<()> {
    if let Some(f) = &schema.features {
        if f.is_empty() {
            return Err(Error::Schema("at least one feature column is required".into()));
        }
    }
    Ok(())
}

fn parse_treatment(raw: &str, row: usize, column: &str) -> Result<u8> {
    match raw.trim() {
        "0" => Ok(0),
        "1" => Ok(1),
        other => Err(Error::Validation {
            row,
            column: column.to_string(),
            message: format!("treatment must be the integer 0 or 1, got `{other}`"),
        }),
    }
}

fn parse_real(raw: &str, row: usize, column: &str) -> Result<f64> {
    let v: f64 = raw.trim().parse().map_err(|_| Error::Validation {
        row,
        column: column.to_string(),
        message: format!("cannot parse `{raw}` as a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Validation {
            row,
            column: column.to_string(),
            message: format!("non-finite value `{raw}`"),
        });
    }
    Ok(v)
}

/// CSV reader; row numbers in errors are 1-based data rows (header excluded).
pub fn read_csv<R: std::io::Read>(reader: R, schema: &ColumnSchema) -> Result<Dataset> {
    check_schema(schema)?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Schema(format!("cannot read header row: {e}")))?
        .clone();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing column `{name}`")))
    };
    let id_col = find(&schema.id)?;
    let d_col = find(&schema.treatment)?;
    let y_col = find(&schema.outcome)?;
    let feature_names: Vec<String> = match &schema.features {
        Some(f) => f.clone(),
        None => headers
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != id_col && *i != d_col && *i != y_col)
            .map(|(_, h)| h.to_string())
            .collect(),
    };
    if feature_names.is_empty() {
        return Err(Error::Schema("no feature columns found".into()));
    }
    let feature_cols = feature_names
        .iter()
        .map(|f| find(f))
        .collect::<Result<Vec<_>>>()?;

    let mut ids = Vec::new();
    let mut treatment = Vec::new();
    let mut outcome = Vec::new();
    let mut values = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let row = k + 1;
        let rec = rec.map_err(|e| Error::Validation {
            row,
            column: "*".into(),
            message: e.to_string(),
        })?;
        ids.push(rec[id_col].to_string());
        treatment.push(parse_treatment(&rec[d_col], row, &schema.treatment)?);
        outcome.push(parse_real(&rec[y_col], row, &schema.outcome)?);
        for (&c, name) in feature_cols.iter().zip(&feature_names) {
            values.push(parse_real(&rec[c], row, name)?);
        }
    }
    let n = ids.len();
    let features = DMatrix::from_row_slice(n, feature_names.len(), &values);
    Dataset::new(ids, feature_names, features, treatment, outcome)
}

pub fn read_jsonl<R: BufRead>(reader: R, schema: &ColumnSchema) -> Result<Dataset> {
    check_schema(schema)?;
    let mut ids = Vec::new();
    let mut treatment = Vec::new();
    let mut outcome = Vec::new();
    let mut values = Vec::new();
    let mut feature_names: Option<Vec<String>> = schema.features.clone();
    let mut row = 0;
    for line in reader.lines() {
        let line = line.map_err(|e| Error::InvalidData(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        row += 1;
        let obj: serde_json::Map<String, serde_json::Value> = serde_json::from_str(&line)
            .map_err(|e| Error::Validation {
                row,
                column: "*".into(),
                message: format!("invalid JSON object: {e}"),
            })?;
        let get = |key: &str| {
            obj.get(key).ok_or_else(|| {
                Error::Schema(format!("missing key `{key}` in row {row}"))
            })
        };
        let id = match get(&schema.id)? {
            serde_json::Value::String(s) => s.clone(),
            serde_json::Value::Number(n) if n.is_u64() || n.is_i64() => n.to_string(),
            other => {
                return Err(Error::Validation {
                    row,
                    column: schema.id.clone(),
                    message: format!("customer id must be a string or integer, got {other}"),
                })
            }
        };
        let d = match get(&schema.treatment)?.as_u64() {
            Some(0) => 0,
            Some(1) => 1,
            _ => {
                return Err(Error::Validation {
                    row,
                    column: schema.treatment.clone(),
                    message: format!(
                        "treatment must be the integer 0 or 1, got {}",
                        obj[&schema.treatment]
                    ),
                })
            }
        };
        let number = |key: &str| -> Result<f64> {
            let v = get(key)?;
            v.as_f64()
                .filter(|x| x.is_finite())
                .ok_or_else(|| Error::Validation {
                    row,
                    column: key.to_string(),
                    message: format!("expected a finite number, got {v}"),
                })
        };
        let names = feature_names.get_or_insert_with(|| {
            obj.keys()
                .filter(|k| **k != schema.id && **k != schema.treatment && **k != schema.outcome)
                .cloned()
                .collect()
        });
        ids.push(id);
        treatment.push(d);
        outcome.push(number(&schema.outcome)?);
        for name in names.iter() {
            values.push(number(name)?);
        }
    }
    let feature_names = feature_names.unwrap_or_default();
    if feature_names.is_empty() {
        return Err(Error::Schema("no feature columns found".into()));
    }
    let features = DMatrix::from_row_slice(ids.len(), feature_names.len(), &values);
    Dataset::new(ids, feature_names, features, treatment, outcome)
}

/// Assignment of each customer to one of `n_folds` cross-fitting folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub fold_of: Vec<usize>,
    pub n_folds: usize,
}

impl FoldPlan {
    pub fn from_assignment(fold_of: Vec<usize>, n_folds: usize) -> Result<Self> {
        if n_folds < 2 {
            return Err(Error::Argument(format!("need at least 2 folds, got {n_folds}")));
        }
        let mut seen = vec![false; n_folds];
        for &f in &fold_of {
            if f >= n_folds {
                return Err(Error::Argument(format!("fold index {f} out of range")));
            }
            seen[f] = true;
        }
        if let Some(empty) = seen.iter().position(|s| !s) {
            return Err(Error::Argument(format!("fold {empty} is empty")));
        }
        Ok(FoldPlan { fold_of, n_folds })
    }

    pub fn len(&self) -> usize {
        self.fold_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fold_of.is_empty()
    }

    /// Row indices of fold `f`, ascending.
    pub fn members(&self, f: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] == f).collect()
    }

    /// Row indices outside fold `f`, ascending.
    pub fn complement(&self, f: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] != f).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_folds];
        for &f in &self.fold_of {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Balanced seeded partition: shuffle row indices, then deal them round-robin.
pub fn assign_folds(n: usize, n_folds: usize, seed: u64) -> Result<FoldPlan> {
    if n_folds < 2 {
        return Err(Error::Argument(format!("need at least 2 folds, got {n_folds}")));
    }
    if n < n_folds {
        return Err(Error::Argument(format!(
            "cannot split {n} rows into {n_folds} folds"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut fold_of = vec![0; n];
    for (k, &i) in order.iter().enumerate() {
        fold_of[i] = k % n_folds;
    }
    Ok(FoldPlan { fold_of, n_folds })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> ColumnSchema {
        ColumnSchema {
            id: "id".into(),
            treatment: "d".into(),
            outcome: "y".into(),
            features: Some(vec!["f0".into()]),
        }
    }

    #[test]
    fn reads_small_csv() {
        let text = "id,d,y,f0\na,0,1.5,2\nb,1,2.5,3\nc,0,0.5,-1\nd,1,4,0.25\n";
        let ds = read_csv(text.as_bytes(), &schema()).unwrap();
        assert_eq!(ds.n(), 4);
        assert_eq!(ds.n_features(), 1);
        assert_eq!(ds.customer_ids()[3], "d");
        assert_eq!(ds.treatment(), &[0, 1, 0, 1]);
        assert_eq!(ds.features()[(3, 0)], 0.25);
    }

    #[test]
    fn rejects_non_binary_treatment() {
        let text = "id,d,y,f0\na,0,1.5,2\nb,2,2.5,3\n";
        match read_csv(text.as_bytes(), &schema()) {
            Err(Error::Validation { row, column, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "d");
            }
            other => panic!("unexpected {other:?}"),
        }
        let float_d = "id,d,y,f0\na,1.0,1.5,2\n";
        assert!(matches!(
            read_csv(float_d.as_bytes(), &schema()),
            Err(Error::Validation { .. })
        ));
    }

    #[test]
    fn rejects_nan_cell_with_location() {
        let text = "id,d,y,f0\na,0,1.5,2\nb,1,2.5,NaN\n";
        match read_csv(text.as_bytes(), &schema()) {
            Err(Error::Validation { row, column, .. }) => {
                assert_eq!((row, column.as_str()), (2, "f0"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let inf = "id,d,y,f0\na,0,inf,2\n";
        assert!(matches!(
            read_csv(inf.as_bytes(), &schema()),
            Err(Error::Validation { .. })
        ));
    }

    #[test]
    fn missing_column_is_schema_error() {
        let text = "id,d,f0\na,0,2\n";
        assert!(matches!(read_csv(text.as_bytes(), &schema()), Err(Error::Schema(_))));
    }

    #[test]
    fn all_treated_loads_but_cannot_estimate() {
        let text = "id,d,y,f0\na,1,1,2\nb,1,2,3\n";
        let ds = read_csv(text.as_bytes(), &schema()).unwrap();
        assert!(matches!(ds.require_both_arms(), Err(Error::Estimation(_))));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let text = "id,d,y,f0\na,1,1,2\na,0,2,3\n";
        assert!(matches!(
            read_csv(text.as_bytes(), &schema()),
            Err(Error::Validation { .. })
        ));
    }

    #[test]
    fn reads_jsonl() {
        let text = "{\"id\":\"a\",\"d\":0,\"y\":1.0,\"f0\":2}\n{\"id\":7,\"d\":1,\"y\":3,\"f0\":-1.5}\n";
        let ds = read_jsonl(text.as_bytes(), &schema()).unwrap();
        assert_eq!(ds.customer_ids(), &["a".to_string(), "7".to_string()]);
        assert_eq!(ds.outcome(), &[1.0, 3.0]);
        let bad = "{\"id\":\"a\",\"d\":1.0,\"y\":1.0,\"f0\":2}\n";
        assert!(matches!(
            read_jsonl(bad.as_bytes(), &schema()),
            Err(Error::Validation { .. })
        ));
    }

    #[test]
    fn folds_are_balanced() {
        let plan = assign_folds(6, 3, 7).unwrap();
        assert_eq!(plan.sizes(), vec![2, 2, 2]);
        let mut sizes = assign_folds(7, 3, 7).unwrap().sizes();
        sizes.sort();
        assert_eq!(sizes, vec![2, 2, 3]);
    }

    #[test]
    fn folds_are_deterministic() {
        let a = assign_folds(1000, 3, 1).unwrap();
        let b = assign_folds(1000, 3, 1).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, assign_folds(1000, 3, 2).unwrap());
    }

    #[test]
    fn fold_arguments_checked() {
        assert!(matches!(assign_folds(2, 3, 0), Err(Error::Argument(_))));
        assert!(matches!(assign_folds(10, 1, 0), Err(Error::Argument(_))));
    }
}
