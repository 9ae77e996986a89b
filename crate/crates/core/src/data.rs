//! Observational datasets, CSV persistence, feature standardization and
//! seeded train/validation/test splitting.

use std::collections::HashMap;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A sample `{(x_i, t_i, y_i)}` of covariates, binary treatment and outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub t: Vec<u8>,
    pub y: Array1<f64>,
    pub feature_names: Vec<String>,
}

/// Exact potential-outcome means, only known for generated data.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub mu0: Array1<f64>,
    pub mu1: Array1<f64>,
    pub tau: Array1<f64>,
}

impl GroundTruth {
    pub fn new(mu0: Array1<f64>, mu1: Array1<f64>) -> Result<Self> {
        if mu0.len() != mu1.len() {
            return Err(Error::Dimension { expected: mu0.len(), actual: mu1.len(), context: "mu1 length" });
        }
        let tau = &mu1 - &mu0;
        Ok(Self { mu0, mu1, tau })
    }

    pub fn len(&self) -> usize {
        self.tau.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> GroundTruth {
        GroundTruth {
            mu0: idx.iter().map(|&i| self.mu0[i]).collect(),
            mu1: idx.iter().map(|&i| self.mu1[i]).collect(),
            tau: idx.iter().map(|&i| self.tau[i]).collect(),
        }
    }
}

pub(crate) fn default_feature_names(d: usize) -> Vec<String> {
    (1..=d).map(|j| format!("x{j}")).collect()
}

impl Dataset {
    /// Builds a dataset and checks its invariants (binary treatment, finite
    /// values, matching row counts, `n >= 2`, `d >= 1`).
    pub fn new(x: Array2<f64>, t: Vec<u8>, y: Array1<f64>) -> Result<Self> {
        let names = default_feature_names(x.ncols());
        Self::with_names(x, t, y, names)
    }

    pub fn with_names(x: Array2<f64>, t: Vec<u8>, y: Array1<f64>, feature_names: Vec<String>) -> Result<Self> {
        let ds = Self { x, t, y, feature_names };
        ds.validate()?;
        if ds.n() < 2 {
            return Err(Error::Validation(format!("dataset needs at least 2 rows, got {}", ds.n())));
        }
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        let n = self.x.nrows();
        if self.x.ncols() == 0 {
            return Err(Error::Validation("dataset needs at least one feature".into()));
        }
        if self.t.len() != n {
            return Err(Error::Dimension { expected: n, actual: self.t.len(), context: "treatment length" });
        }
        if self.y.len() != n {
            return Err(Error::Dimension { expected: n, actual: self.y.len(), context: "outcome length" });
        }
        if self.feature_names.len() != self.x.ncols() {
            return Err(Error::Dimension {
                expected: self.x.ncols(),
                actual: self.feature_names.len(),
                context: "feature name count",
            });
        }
        for (i, row) in self.x.outer_iter().enumerate() {
            if self.t[i] > 1 {
                return Err(Error::InvalidRow {
                    row: i,
                    message: format!("treatment must be 0 or 1, got {}", self.t[i]),
                });
            }
            if !self.y[i].is_finite() || row.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidRow { row: i, message: "non-finite value".into() });
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_treated(&self) -> usize {
        self.t.iter().filter(|&&t| t == 1).count()
    }

    pub fn n_control(&self) -> usize {
        self.n() - self.n_treated()
    }

    /// Treatment indicator as floats, convenient for arithmetic.
    pub fn t_f64(&self) -> Array1<f64> {
        self.t.iter().map(|&t| f64::from(t)).collect()
    }

    /// Rows at `idx`, in that order. May produce an empty dataset.
    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select(Axis(0), idx),
            t: idx.iter().map(|&i| self.t[i]).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            feature_names: self.feature_names.clone(),
        }
    }

    /// Rows with `t == arm`, order preserved.
    pub fn arm_subset(&self, arm: u8) -> Dataset {
        self.select(&self.arm_indices(arm))
    }

    pub fn arm_indices(&self, arm: u8) -> Vec<usize> {
        self.t.iter().enumerate().filter_map(|(i, &t)| (t == arm).then_some(i)).collect()
    }

    /// Stacks two datasets with identical feature layout.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.d() != other.d() {
            return Err(Error::Dimension { expected: self.d(), actual: other.d(), context: "feature count in concat" });
        }
        let x = ndarray::concatenate(Axis(0), &[self.x.view(), other.x.view()])
            .map_err(|e| Error::Invariant(e.to_string()))?;
        let mut t = self.t.clone();
        t.extend_from_slice(&other.t);
        let y = self.y.iter().chain(other.y.iter()).copied().collect();
        Ok(Dataset { x, t, y, feature_names: self.feature_names.clone() })
    }
}

/// Column mapping for CSV ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CsvSchema {
    pub treatment: String,
    pub outcome: String,
    pub mu0: String,
    pub mu1: String,
    /// Explicit feature columns; when `None`, every other column is a feature.
    pub features: Option<Vec<String>>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self { treatment: "t".into(), outcome: "y".into(), mu0: "mu0".into(), mu1: "mu1".into(), features: None }
    }
}

fn parse_cell(raw: &str, row: usize, column: &str) -> Result<f64> {
    let v: f64 = raw.trim().parse().map_err(|_| Error::InvalidRow {
        row,
        message: format!("column `{column}`: cannot parse `{raw}` as a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::InvalidRow { row, message: format!("column `{column}`: non-finite value `{raw}`") });
    }
    Ok(v)
}

/// Reads a headered CSV. Ground truth is returned when both potential-outcome
/// columns are present.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<(Dataset, Option<GroundTruth>)> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema)
}

pub fn read_csv<R: std::io::Read>(reader: R, schema: &CsvSchema) -> Result<(Dataset, Option<GroundTruth>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let position: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h.as_str(), i)).collect();
    let column =
        |name: &str| position.get(name).copied().ok_or_else(|| Error::Schema(format!("missing column `{name}`")));
    let t_col = column(&schema.treatment)?;
    let y_col = column(&schema.outcome)?;
    let truth_cols = match (position.get(schema.mu0.as_str()), position.get(schema.mu1.as_str())) {
        (Some(&a), Some(&b)) => Some((a, b)),
        (None, None) => None,
        _ => {
            return Err(Error::Schema(format!("columns `{}` and `{}` must be given together", schema.mu0, schema.mu1)))
        }
    };
    let feature_cols: Vec<usize> = match &schema.features {
        Some(names) => names.iter().map(|n| column(n)).collect::<Result<_>>()?,
        None => (0..headers.len())
            .filter(|&i| i != t_col && i != y_col && truth_cols.is_none_or(|(a, b)| i != a && i != b))
            .collect(),
    };
    if feature_cols.is_empty() {
        return Err(Error::Schema("no feature columns".into()));
    }

    let d = feature_cols.len();
    let mut xs = Vec::new();
    let mut t = Vec::new();
    let mut y = Vec::new();
    let mut mu0 = Vec::new();
    let mut mu1 = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        for &c in &feature_cols {
            xs.push(parse_cell(&record[c], row, &headers[c])?);
        }
        let tv = parse_cell(&record[t_col], row, &schema.treatment)?;
        if tv != 0.0 && tv != 1.0 {
            return Err(Error::InvalidRow {
                row,
                message: format!("treatment must be 0 or 1, got {}", &record[t_col]),
            });
        }
        t.push(tv as u8);
        y.push(parse_cell(&record[y_col], row, &schema.outcome)?);
        if let Some((a, b)) = truth_cols {
            mu0.push(parse_cell(&record[a], row, &schema.mu0)?);
            mu1.push(parse_cell(&record[b], row, &schema.mu1)?);
        }
    }
    let n = t.len();
    let x = Array2::from_shape_vec((n, d), xs).map_err(|e| Error::Invariant(e.to_string()))?;
    let names = feature_cols.iter().map(|&c| headers[c].clone()).collect();
    let ds = Dataset::with_names(x, t, Array1::from(y), names)?;
    let truth = match truth_cols {
        Some(_) => Some(GroundTruth::new(Array1::from(mu0), Array1::from(mu1))?),
        None => None,
    };
    Ok((ds, truth))
}

/// Writes the dataset (and optional ground truth) using the default schema:
/// feature columns, then `t`, `y`, and `mu0`, `mu1` when available.
pub fn save_csv(path: impl AsRef<Path>, data: &Dataset, truth: Option<&GroundTruth>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(file, data, truth, None)
}

/// Writes the dataset as CSV, optionally appending an extra named column
/// (used to export pseudo-outcomes next to the data).
pub fn write_csv<W: std::io::Write>(
    writer: W,
    data: &Dataset,
    truth: Option<&GroundTruth>,
    extra: Option<(&str, &Array1<f64>)>,
) -> Result<()> {
    if let Some(g) = truth {
        if g.len() != data.n() {
            return Err(Error::Dimension { expected: data.n(), actual: g.len(), context: "ground truth length" });
        }
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = data.feature_names.clone();
    header.push("t".into());
    header.push("y".into());
    if truth.is_some() {
        header.push("mu0".into());
        header.push("mu1".into());
    }
    if let Some((name, _)) = extra {
        header.push(name.to_string());
    }
    w.write_record(&header)?;
    for i in 0..data.n() {
        let mut rec: Vec<String> = data.x.row(i).iter().map(|v| v.to_string()).collect();
        rec.push(data.t[i].to_string());
        rec.push(data.y[i].to_string());
        if let Some(g) = truth {
            rec.push(g.mu0[i].to_string());
            rec.push(g.mu1[i].to_string());
        }
        if let Some((_, col)) = extra {
            rec.push(col[i].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// Index partition into training, validation and test rows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

pub const DEFAULT_SPLIT: [f64; 3] = [0.63, 0.27, 0.10];

/// Part sizes: floor for train and validation, remainder to test, then any
/// empty part borrows one row from the currently largest part.
pub fn split_sizes(n: usize, ratios: [f64; 3]) -> Result<[usize; 3]> {
    if ratios.iter().any(|&r| !(r > 0.0) || !r.is_finite()) {
        return Err(Error::Config(format!("split ratios must be positive, got {ratios:?}")));
    }
    let total: f64 = ratios.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios must sum to 1, got {total}")));
    }
    if n < 3 {
        return Err(Error::Config(format!("cannot split {n} rows into three parts")));
    }
    let train = (ratios[0] * n as f64).floor() as usize;
    let val = (ratios[1] * n as f64).floor() as usize;
    let mut sizes = [train, val, n - train - val];
    while let Some(empty) = sizes.iter().position(|&s| s == 0) {
        let largest = (0..3).max_by_key(|&k| (sizes[k], std::cmp::Reverse(k))).unwrap();
        sizes[largest] -= 1;
        sizes[empty] += 1;
    }
    Ok(sizes)
}

/// Uniform random permutation of `0..n` followed by a contiguous cut.
pub fn split(n: usize, ratios: [f64; 3], seed: u64) -> Result<DataSplit> {
    let [a, b, _] = split_sizes(n, ratios)?;
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let test = idx.split_off(a + b);
    let val = idx.split_off(a);
    Ok(DataSplit { train: idx, val, test })
}

/// Per-feature z-scoring statistics fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Outcome `(mean, std)` when outcomes are standardized too.
    pub outcome: Option<(f64, f64)>,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    // Constant columns keep their scale.
    (mean, if sd > 1e-12 { sd } else { 1.0 })
}

impl StandardizationStats {
    /// Population mean and standard deviation per feature.
    pub fn fit(train: &Dataset, standardize_outcome: bool) -> Result<Self> {
        if train.n() == 0 {
            return Err(Error::Validation("cannot standardize on empty training data".into()));
        }
        let (mean, std) = train.x.columns().into_iter().map(|c| mean_std(c.iter().copied())).unzip();
        let outcome = standardize_outcome.then(|| mean_std(train.y.iter().copied()));
        Ok(Self { mean, std, outcome })
    }

    pub fn transform_x(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|v| (v - self.mean[j]) / self.std[j]);
        }
        out
    }

    pub fn inverse_x(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|v| v * self.std[j] + self.mean[j]);
        }
        out
    }

    pub fn apply(&self, data: &Dataset) -> Dataset {
        let y = match self.outcome {
            Some((m, s)) => data.y.mapv(|v| (v - m) / s),
            None => data.y.clone(),
        };
        Dataset { x: self.transform_x(data.x.view()), t: data.t.clone(), y, feature_names: data.feature_names.clone() }
    }

    pub fn invert(&self, data: &Dataset) -> Dataset {
        let y = match self.outcome {
            Some((m, s)) => data.y.mapv(|v| v * s + m),
            None => data.y.clone(),
        };
        Dataset { x: self.inverse_x(data.x.view()), t: data.t.clone(), y, feature_names: data.feature_names.clone() }
    }
}

/// Fits statistics on `train` and applies them unchanged to every dataset in
/// `others`.
pub fn standardize(
    train: &Dataset,
    others: &[&Dataset],
    standardize_outcome: bool,
) -> Result<(Dataset, Vec<Dataset>, StandardizationStats)> {
    let stats = StandardizationStats::fit(train, standardize_outcome)?;
    let others = others.iter().map(|d| stats.apply(d)).collect();
    Ok((stats.apply(train), others, stats))
}
