//! Tabular data model, CSV ingestion, seeded splitting and squared-error loss.
//!
//! The CSV dialect is deliberately narrow: comma separated, one header row,
//! `.` as decimal point, every cell numeric. Anything else is rejected with the
//! offending row and column named in the error.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A feature matrix with an aligned outcome vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    outcome: Array1<f64>,
    feature_names: Option<Vec<String>>,
    outcome_name: Option<String>,
}

impl Dataset {
    pub fn new(features: Array2<f64>, outcome: Array1<f64>) -> Result<Self> {
        let (n, p) = features.dim();
        if n == 0 {
            return Err(Error::Empty("dataset has no rows"));
        }
        if p == 0 {
            return Err(Error::Empty("dataset has no feature columns"));
        }
        if outcome.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: outcome.len(),
            });
        }
        if features
            .iter()
            .chain(outcome.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite("dataset"));
        }
        Ok(Dataset {
            features,
            outcome,
            feature_names: None,
            outcome_name: None,
        })
    }

    pub fn with_names(mut self, feature_names: Vec<String>, outcome_name: String) -> Result<Self> {
        if feature_names.len() != self.n_features() {
            return Err(Error::DimensionMismatch {
                expected: self.n_features(),
                found: feature_names.len(),
            });
        }
        self.feature_names = Some(feature_names);
        self.outcome_name = Some(outcome_name);
        Ok(self)
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn outcome(&self) -> &Array1<f64> {
        &self.outcome
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    pub fn outcome_name(&self) -> Option<&str> {
        self.outcome_name.as_deref()
    }

    pub fn n_rows(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    /// True when every outcome value is bitwise identical to the first.
    pub fn outcome_is_constant(&self) -> bool {
        let first = self.outcome[0];
        self.outcome.iter().all(|&v| v == first)
    }

    /// Rows in the given order, names carried over.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select(Axis(0), rows),
            outcome: self.outcome.select(Axis(0), rows),
            feature_names: self.feature_names.clone(),
            outcome_name: self.outcome_name.clone(),
        }
    }

    /// Writes in the same dialect `load_csv` reads; the outcome is the last column.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut writer = csv::Writer::from_writer(file);
        let mut header: Vec<String> = match &self.feature_names {
            Some(names) => names.clone(),
            None => (0..self.n_features())
                .map(|j| format!("x{}", j + 1))
                .collect(),
        };
        header.push(self.outcome_name.clone().unwrap_or_else(|| "y".to_string()));
        writer.write_record(&header)?;
        for (row, y) in self.features.rows().into_iter().zip(self.outcome.iter()) {
            let mut record: Vec<String> = row.iter().map(|v| format_float(*v)).collect();
            record.push(format_float(*y));
            writer.write_record(&record)?;
        }
        writer.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Shortest representation that parses back to the same `f64`.
pub fn format_float(v: f64) -> String {
    format!("{v:?}")
}

/// Which CSV column holds the outcome.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OutcomeColumn {
    Name(String),
    Index(usize),
    Last,
}

impl From<&str> for OutcomeColumn {
    fn from(name: &str) -> Self {
        OutcomeColumn::Name(name.to_string())
    }
}

/// A fully numeric CSV: header plus an n×c value matrix.
#[derive(Debug, Clone)]
pub struct Table {
    pub headers: Vec<String>,
    pub values: Array2<f64>,
}

impl Table {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }
}

pub fn read_table(path: impl AsRef<Path>) -> Result<Table> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if headers.is_empty() {
        return Err(Error::Empty("csv has no columns"));
    }
    let mut values = Vec::new();
    let mut n_rows = 0;
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        // data rows are 1-based, counting the header as row 1
        let row = i + 2;
        if record.len() != headers.len() {
            return Err(Error::DimensionMismatch {
                expected: headers.len(),
                found: record.len(),
            });
        }
        for (cell, column) in record.iter().zip(&headers) {
            let v: f64 = cell.parse().map_err(|_| Error::NonNumeric {
                row,
                column: column.clone(),
                value: cell.to_string(),
            })?;
            if !v.is_finite() {
                return Err(Error::NonNumeric {
                    row,
                    column: column.clone(),
                    value: cell.to_string(),
                });
            }
            values.push(v);
        }
        n_rows += 1;
    }
    if n_rows == 0 {
        return Err(Error::Empty("csv has no data rows"));
    }
    let values = Array2::from_shape_vec((n_rows, headers.len()), values)
        .expect("row lengths were checked against the header");
    Ok(Table { headers, values })
}

/// Reads a dataset; every column other than the outcome becomes a feature, in file order.
pub fn load_csv(path: impl AsRef<Path>, outcome: impl Into<OutcomeColumn>) -> Result<Dataset> {
    let table = read_table(path)?;
    let c = table.headers.len();
    let outcome_idx = match outcome.into() {
        OutcomeColumn::Name(name) => table
            .column_index(&name)
            .ok_or(Error::MissingColumn(name))?,
        OutcomeColumn::Index(i) if i < c => i,
        OutcomeColumn::Index(i) => return Err(Error::MissingColumn(format!("#{i}"))),
        OutcomeColumn::Last => c - 1,
    };
    if c < 2 {
        return Err(Error::Empty("csv needs at least one feature column"));
    }
    let feature_cols: Vec<usize> = (0..c).filter(|&j| j != outcome_idx).collect();
    let features = table.values.select(Axis(1), &feature_cols);
    let outcome = table.values.column(outcome_idx).to_owned();
    let names = feature_cols
        .iter()
        .map(|&j| table.headers[j].clone())
        .collect();
    Dataset::new(features, outcome)?.with_names(names, table.headers[outcome_idx].clone())
}

/// Fractions and seed for the train/validation/test partition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            test_fraction: 0.10,
            validation_fraction: 0.20,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn with_seed(seed: u64) -> Self {
        SplitSpec {
            seed,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, f) in [
            ("test_fraction", self.test_fraction),
            ("validation_fraction", self.validation_fraction),
        ] {
            if !(0.0..1.0).contains(&f) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {f}")));
            }
        }
        Ok(())
    }
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Row indices of each partition, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Partition sizes `(train, validation, test)` for `n` rows.
pub fn split_sizes(n: usize, spec: &SplitSpec) -> (usize, usize, usize) {
    let test = round_half_up(n as f64 * spec.test_fraction).min(n);
    let rest = n - test;
    let validation = round_half_up(rest as f64 * spec.validation_fraction).min(rest);
    (rest - validation, validation, test)
}

pub fn split_indices(n: usize, spec: &SplitSpec) -> Result<SplitIndices> {
    spec.validate()?;
    let (n_train, n_val, n_test) = split_sizes(n, spec);
    if n_test == 0 {
        return Err(Error::EmptyPartition("test"));
    }
    if n_val == 0 {
        return Err(Error::EmptyPartition("validation"));
    }
    if n_train == 0 {
        return Err(Error::EmptyPartition("train"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let mut test = order[..n_test].to_vec();
    let mut validation = order[n_test..n_test + n_val].to_vec();
    let mut train = order[n_test + n_val..].to_vec();
    test.sort_unstable();
    validation.sort_unstable();
    train.sort_unstable();
    Ok(SplitIndices {
        train,
        validation,
        test,
    })
}

pub fn split(data: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset)> {
    let idx = split_indices(data.n_rows(), spec)?;
    Ok((
        data.select_rows(&idx.train),
        data.select_rows(&idx.validation),
        data.select_rows(&idx.test),
    ))
}

/// Two-way split used when an external holdout already exists.
pub fn split_train_validation(
    data: &Dataset,
    validation_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if !(0.0..1.0).contains(&validation_fraction) {
        return Err(Error::Config(format!(
            "validation_fraction must lie in [0, 1), got {validation_fraction}"
        )));
    }
    let n = data.n_rows();
    let n_val = round_half_up(n as f64 * validation_fraction).min(n);
    if n_val == 0 {
        return Err(Error::EmptyPartition("validation"));
    }
    if n_val == n {
        return Err(Error::EmptyPartition("train"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut validation = order[..n_val].to_vec();
    let mut train = order[n_val..].to_vec();
    validation.sort_unstable();
    train.sort_unstable();
    Ok((data.select_rows(&train), data.select_rows(&validation)))
}

/// Mean squared error.
pub fn mse(predictions: ArrayView1<f64>, outcomes: ArrayView1<f64>) -> Result<f64> {
    if predictions.len() != outcomes.len() {
        return Err(Error::DimensionMismatch {
            expected: outcomes.len(),
            found: predictions.len(),
        });
    }
    if outcomes.is_empty() {
        return Err(Error::Empty("mse of zero-length vectors"));
    }
    let total: f64 = predictions
        .iter()
        .zip(outcomes.iter())
        .map(|(p, y)| (p - y) * (p - y))
        .sum();
    Ok(total / outcomes.len() as f64)
}

/// Writes `contents` through a temp file in the destination directory, then renames.
pub fn write_atomic(path: impl AsRef<Path>, contents: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| Path::new("."));
    let tmp = dir.join(format!(
        ".{}.tmp-{}",
        path.file_name().and_then(|s| s.to_str()).unwrap_or("out"),
        std::process::id()
    ));
    let mut file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    file.write_all(contents).map_err(|e| Error::io(&tmp, e))?;
    file.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(file);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let path = dir.path().join(name);
        std::fs::write(&path, body).unwrap();
        path
    }

    #[test]
    fn loads_three_row_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(&dir, "d.csv", "x1,x2,y\n1,2,3\n4,5,6\n7,8.5,9\n");
        let data = load_csv(&path, "y").unwrap();
        assert_eq!(data.n_rows(), 3);
        assert_eq!(data.n_features(), 2);
        assert_eq!(data.outcome(), &array![3.0, 6.0, 9.0]);
        assert_eq!(data.features()[[2, 1]], 8.5);
        assert_eq!(data.feature_names().unwrap(), ["x1", "x2"]);
    }

    #[test]
    fn outcome_in_middle_keeps_feature_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(&dir, "d.csv", "a,y,b\n1,2,3\n");
        let data = load_csv(&path, "y").unwrap();
        assert_eq!(data.features(), &array![[1.0, 3.0]]);
        assert_eq!(data.feature_names().unwrap(), ["a", "b"]);
    }

    #[test]
    fn rejects_na_with_location() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(&dir, "d.csv", "x1,x2,y\n1,2,3\n4,NA,6\n");
        match load_csv(&path, "y") {
            Err(Error::NonNumeric { row, column, value }) => {
                assert_eq!(row, 3);
                assert_eq!(column, "x2");
                assert_eq!(value, "NA");
            }
            other => panic!("expected NonNumeric, got {other:?}"),
        }
    }

    #[test]
    fn rejects_missing_file_and_column() {
        assert!(matches!(
            load_csv("/definitely/not/here.csv", "y"),
            Err(Error::Io { .. })
        ));
        let dir = tempfile::tempdir().unwrap();
        let path = write(&dir, "d.csv", "x1,x2\n1,2\n");
        assert!(matches!(load_csv(&path, "y"), Err(Error::MissingColumn(_))));
    }

    #[test]
    fn rejects_header_only_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(&dir, "d.csv", "x1,y\n");
        assert!(matches!(load_csv(&path, "y"), Err(Error::Empty(_))));
    }

    #[test]
    fn default_split_sizes() {
        let spec = SplitSpec::default();
        assert_eq!(split_sizes(100, &spec), (72, 18, 10));
        let idx = split_indices(100, &spec).unwrap();
        assert_eq!(
            (idx.train.len(), idx.validation.len(), idx.test.len()),
            (72, 18, 10)
        );
    }

    #[test]
    fn small_split_is_a_partition() {
        // 10·0.1 = 1 test row; 9·0.2 = 1.8 → 2 validation rows; 7 remain for training
        let idx = split_indices(10, &SplitSpec::with_seed(3)).unwrap();
        assert_eq!(
            (idx.train.len(), idx.validation.len(), idx.test.len()),
            (7, 2, 1)
        );
        let mut seen = [0usize; 10];
        for i in idx.train.iter().chain(&idx.validation).chain(&idx.test) {
            seen[*i] += 1;
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn split_is_deterministic_in_seed() {
        let a = split_indices(57, &SplitSpec::with_seed(11)).unwrap();
        let b = split_indices(57, &SplitSpec::with_seed(11)).unwrap();
        let c = split_indices(57, &SplitSpec::with_seed(12)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn tiny_split_errors() {
        assert!(matches!(
            split_indices(3, &SplitSpec::default()),
            Err(Error::EmptyPartition(_))
        ));
    }

    #[test]
    fn mse_examples() {
        let y = array![1.0, -1.0, 3.5];
        assert_eq!(mse(y.view(), y.view()).unwrap(), 0.0);
        assert_eq!(
            mse(array![0.0, 0.0].view(), array![1.0, -1.0].view()).unwrap(),
            1.0
        );
        assert!(matches!(
            mse(array![0.0].view(), array![1.0, 2.0].view()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn mse_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p: Vec<f64> = (0..50).map(|_| rng.random_range(-3.0..3.0)).collect();
        let y: Vec<f64> = (0..50).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mut acc = 0.0;
        for i in 0..50 {
            let d = p[i] - y[i];
            acc += d * d;
        }
        let oracle = acc / 50.0;
        let got = mse(Array1::from(p).view(), Array1::from(y).view()).unwrap();
        assert!((got - oracle).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(&dir, "d.csv", "a,b,y\n0.1,2e-3,3\n-4.25,5,6.125\n");
        let first = load_csv(&path, "y").unwrap();
        let out = dir.path().join("again.csv");
        first.write_csv(&out).unwrap();
        let second = load_csv(&out, "y").unwrap();
        assert_eq!(first, second);
    }

    proptest! {
        #[test]
        fn split_partitions_rows(n in 20usize..400, seed in any::<u64>()) {
            let idx = split_indices(n, &SplitSpec::with_seed(seed)).unwrap();
            let mut all: Vec<usize> = idx.train.iter()
                .chain(&idx.validation)
                .chain(&idx.test)
                .copied()
                .collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }

        #[test]
        fn mse_is_permutation_invariant(
            pairs in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..60),
            seed in any::<u64>(),
        ) {
            let (p, y): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
            let mut order: Vec<usize> = (0..p.len()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let pp: Vec<f64> = order.iter().map(|&i| p[i]).collect();
            let yp: Vec<f64> = order.iter().map(|&i| y[i]).collect();
            let a = mse(Array1::from(p).view(), Array1::from(y).view()).unwrap();
            let b = mse(Array1::from(pp).view(), Array1::from(yp).view()).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
        }
    }
}
