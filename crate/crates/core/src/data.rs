//! Dataset ingestion, [-1, 1] normalization, train/test splits and the
//! benchmark manifest.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("expected exactly two distinct labels, observed {observed:?}")]
    LabelCount { observed: Vec<String> },
    #[error("line {line}: label {label:?} is not one of {known:?}")]
    UnknownLabel { line: u64, label: String, known: Vec<String> },
    #[error("dataset has no usable rows")]
    Empty,
    #[error("feature dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("n_train = {n_train} must satisfy 1 <= n_train < {len}")]
    SplitOutOfRange { n_train: usize, len: usize },
    #[error("both classes must be present (found {positives} positive, {negatives} negative)")]
    SingleClass { positives: usize, negatives: usize },
    #[error("labels must be +1 or -1")]
    InvalidLabels,
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Libsvm,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "libsvm" | "svmlight" => Ok(Format::Libsvm),
            other => Err(format!("unknown format {other:?} (expected csv or libsvm)")),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Csv => "csv",
            Format::Libsvm => "libsvm",
        })
    }
}

/// Bijection between the two original label values and -1/+1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    pub negative: String,
    pub positive: String,
}

impl LabelMap {
    /// The smaller label (numerically if both parse as numbers, otherwise
    /// lexicographically) becomes -1.
    pub fn from_observed(labels: &[String]) -> Result<Self, DataError> {
        let mut distinct: Vec<String> = labels.to_vec();
        distinct.sort();
        distinct.dedup();
        if distinct.len() != 2 {
            return Err(DataError::LabelCount { observed: distinct });
        }
        let numeric: Option<Vec<f64>> = distinct.iter().map(|s| s.parse::<f64>().ok()).collect();
        let swap = match numeric {
            Some(v) => v[0] > v[1],
            None => false,
        };
        let (negative, positive) = if swap {
            (distinct[1].clone(), distinct[0].clone())
        } else {
            (distinct[0].clone(), distinct[1].clone())
        };
        Ok(Self { negative, positive })
    }

    pub fn encode(&self, raw: &str) -> Option<f64> {
        if raw == self.positive {
            Some(1.0)
        } else if raw == self.negative {
            Some(-1.0)
        } else {
            None
        }
    }

    pub fn decode(&self, label: f64) -> &str {
        if label > 0.0 {
            &self.positive
        } else {
            &self.negative
        }
    }
}

/// Numeric labels are compared by value, so "1", "+1" and "1.0" coincide.
fn canonical_label(raw: &str) -> String {
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() => format!("{v}"),
        _ => raw.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadOptions {
    pub format: Format,
    /// Zero-based label column for CSV input.
    pub label_col: usize,
    /// `None` detects a header from the first record.
    pub header: Option<bool>,
    /// Reuse an existing label map, e.g. the training file's for a test file.
    pub label_map: Option<LabelMap>,
    /// Required feature count; libsvm rows are padded to it.
    pub n_features: Option<usize>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self { format: Format::Csv, label_col: 0, header: None, label_map: None, n_features: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub x: DMatrix<f64>,
    pub y: Vec<f64>,
    pub label_map: LabelMap,
    pub split: Option<Split>,
    /// Rows dropped for missing values.
    pub rejected_rows: usize,
}

impl Dataset {
    pub fn new(name: impl Into<String>, x: DMatrix<f64>, y: Vec<f64>) -> Result<Self, DataError> {
        if x.nrows() != y.len() {
            return Err(DataError::DimensionMismatch { expected: x.nrows(), found: y.len() });
        }
        if y.iter().any(|v| *v != 1.0 && *v != -1.0) {
            return Err(DataError::InvalidLabels);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(DataError::Malformed { line: 0, message: "non-finite feature".into() });
        }
        let label_map = LabelMap { negative: "-1".into(), positive: "1".into() };
        Ok(Self { name: name.into(), x, y, label_map, split: None, rejected_rows: 0 })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    pub fn subset(&self, indices: &[usize]) -> (DMatrix<f64>, Vec<f64>) {
        let x = self.x.select_rows(indices);
        let y = indices.iter().map(|&i| self.y[i]).collect();
        (x, y)
    }

    /// Training rows (all rows when no split is set).
    pub fn train(&self) -> (DMatrix<f64>, Vec<f64>) {
        match &self.split {
            Some(s) => self.subset(&s.train),
            None => (self.x.clone(), self.y.clone()),
        }
    }

    /// Test rows (none when no split is set).
    pub fn test(&self) -> (DMatrix<f64>, Vec<f64>) {
        match &self.split {
            Some(s) => self.subset(&s.test),
            None => (DMatrix::zeros(0, self.n_features()), Vec::new()),
        }
    }
}

pub fn load(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| DataError::Io { path: path.to_path_buf(), source })?;
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset").to_string();
    parse(&text, &name, opts)
}

pub fn parse(text: &str, name: &str, opts: &LoadOptions) -> Result<Dataset, DataError> {
    let rows = match opts.format {
        Format::Csv => parse_csv(text, opts)?,
        Format::Libsvm => parse_libsvm(text, opts)?,
    };
    let RawRows { lines, labels, features, rejected } = rows;
    if labels.is_empty() {
        return Err(DataError::Empty);
    }
    let label_map = match &opts.label_map {
        Some(m) => m.clone(),
        None => LabelMap::from_observed(&labels)?,
    };
    let mut y = Vec::with_capacity(labels.len());
    for (label, line) in labels.iter().zip(&lines) {
        match label_map.encode(label) {
            Some(v) => y.push(v),
            None => {
                return Err(DataError::UnknownLabel {
                    line: *line,
                    label: label.clone(),
                    known: vec![label_map.negative.clone(), label_map.positive.clone()],
                })
            }
        }
    }
    let n = features.first().map_or(0, Vec::len);
    let x = DMatrix::from_fn(features.len(), n, |i, j| features[i][j]);
    Ok(Dataset { name: name.to_string(), x, y, label_map, split: None, rejected_rows: rejected })
}

struct RawRows {
    lines: Vec<u64>,
    labels: Vec<String>,
    features: Vec<Vec<f64>>,
    rejected: usize,
}

fn is_missing(field: &str) -> bool {
    field.is_empty() || field == "?" || field.eq_ignore_ascii_case("na") || field.eq_ignore_ascii_case("nan")
}

fn parse_csv(text: &str, opts: &LoadOptions) -> Result<RawRows, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut out = RawRows { lines: Vec::new(), labels: Vec::new(), features: Vec::new(), rejected: 0 };
    let mut width = None;
    for (index, record) in reader.records().enumerate() {
        let record = record.map_err(|e| DataError::Malformed {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(index as u64 + 1, |p| p.line());
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() <= opts.label_col {
            return Err(DataError::Malformed {
                line,
                message: format!("{} fields, label column is {}", record.len(), opts.label_col),
            });
        }
        let fields: Vec<&str> = record.iter().collect();
        if index == 0 {
            let looks_like_header = fields
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != opts.label_col)
                .any(|(_, f)| !is_missing(f) && f.parse::<f64>().is_err());
            if opts.header.unwrap_or(looks_like_header) {
                continue;
            }
        }
        match width {
            None => width = Some(fields.len()),
            Some(w) if w != fields.len() => {
                return Err(DataError::Malformed {
                    line,
                    message: format!("expected {w} fields, found {}", fields.len()),
                })
            }
            Some(_) => {}
        }
        if fields.iter().any(|f| is_missing(f)) {
            out.rejected += 1;
            continue;
        }
        let mut row = Vec::with_capacity(fields.len() - 1);
        for (j, field) in fields.iter().enumerate() {
            if j == opts.label_col {
                continue;
            }
            let v: f64 = field.parse().map_err(|_| DataError::Malformed {
                line,
                message: format!("field {} is not a number: {field:?}", j + 1),
            })?;
            if !v.is_finite() {
                return Err(DataError::Malformed { line, message: format!("non-finite value in field {}", j + 1) });
            }
            row.push(v);
        }
        if let Some(n) = opts.n_features {
            if row.len() != n {
                return Err(DataError::DimensionMismatch { expected: n, found: row.len() });
            }
        }
        out.lines.push(line);
        out.labels.push(canonical_label(fields[opts.label_col]));
        out.features.push(row);
    }
    Ok(out)
}

fn parse_libsvm(text: &str, opts: &LoadOptions) -> Result<RawRows, DataError> {
    let mut out = RawRows { lines: Vec::new(), labels: Vec::new(), features: Vec::new(), rejected: 0 };
    let mut sparse: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut max_index = 0;
    for (index, raw_line) in text.lines().enumerate() {
        let line = index as u64 + 1;
        let content = raw_line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut tokens = content.split_whitespace();
        let label = tokens.next().expect("non-empty line has a token");
        let mut row = Vec::new();
        let mut previous = 0;
        for token in tokens {
            let (idx, val) = token.split_once(':').ok_or_else(|| DataError::Malformed {
                line,
                message: format!("expected index:value, found {token:?}"),
            })?;
            let idx: usize = idx.parse().map_err(|_| DataError::Malformed {
                line,
                message: format!("bad feature index {idx:?}"),
            })?;
            if idx == 0 || idx <= previous {
                return Err(DataError::Malformed {
                    line,
                    message: format!("feature indices must be 1-based and increasing, found {idx}"),
                });
            }
            previous = idx;
            let val: f64 = val.parse().map_err(|_| DataError::Malformed {
                line,
                message: format!("bad feature value {val:?}"),
            })?;
            if !val.is_finite() {
                return Err(DataError::Malformed { line, message: format!("non-finite value at index {idx}") });
            }
            row.push((idx, val));
        }
        max_index = max_index.max(previous);
        out.lines.push(line);
        out.labels.push(canonical_label(label));
        sparse.push(row);
    }
    let n = match opts.n_features {
        Some(n) if max_index > n => return Err(DataError::DimensionMismatch { expected: n, found: max_index }),
        Some(n) => n,
        None => max_index,
    };
    out.features = sparse
        .into_iter()
        .map(|row| {
            let mut dense = vec![0.0; n];
            for (idx, val) in row {
                dense[idx - 1] = val;
            }
            dense
        })
        .collect();
    Ok(out)
}

/// Per-feature affine map of the training range onto [-1, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationTransform {
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
}

impl NormalizationTransform {
    pub fn fit(train: &DMatrix<f64>) -> Result<Self, DataError> {
        if train.nrows() == 0 {
            return Err(DataError::Empty);
        }
        let mins = train.column_iter().map(|c| c.min()).collect();
        let maxs = train.column_iter().map(|c| c.max()).collect();
        Ok(Self { mins, maxs })
    }

    pub fn n_features(&self) -> usize {
        self.mins.len()
    }

    /// `2 (x - min) / (max - min) - 1`; constant features map to 0. Values
    /// outside the training range are not clipped.
    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>, DataError> {
        if x.ncols() != self.n_features() {
            return Err(DataError::DimensionMismatch { expected: self.n_features(), found: x.ncols() });
        }
        Ok(DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
            let (lo, hi) = (self.mins[j], self.maxs[j]);
            if hi > lo {
                2.0 * (x[(i, j)] - lo) / (hi - lo) - 1.0
            } else {
                0.0
            }
        }))
    }
}

pub fn fit_normalizer(train: &DMatrix<f64>) -> Result<NormalizationTransform, DataError> {
    NormalizationTransform::fit(train)
}

/// Shuffles the rows under `seed` and puts the first `n_train` in the
/// training part.
pub fn split(dataset: &Dataset, n_train: usize, seed: u64) -> Result<Dataset, DataError> {
    check_split(dataset, n_train)?;
    let mut indices: Vec<usize> = (0..dataset.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    let test = indices.split_off(n_train);
    Ok(Dataset { split: Some(Split { train: indices, test }), ..dataset.clone() })
}

/// The first `n_train` rows train, the rest test, in file order.
pub fn predefined_split(dataset: &Dataset, n_train: usize) -> Result<Dataset, DataError> {
    check_split(dataset, n_train)?;
    let split = Split { train: (0..n_train).collect(), test: (n_train..dataset.len()).collect() };
    Ok(Dataset { split: Some(split), ..dataset.clone() })
}

fn check_split(dataset: &Dataset, n_train: usize) -> Result<(), DataError> {
    if n_train == 0 || n_train >= dataset.len() {
        return Err(DataError::SplitOutOfRange { n_train, len: dataset.len() });
    }
    Ok(())
}

/// `p = #(+1) / #(-1)`.
pub fn class_ratio(y: &[f64]) -> Result<f64, DataError> {
    let positives = y.iter().filter(|v| **v > 0.0).count();
    let negatives = y.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(DataError::SingleClass { positives, negatives });
    }
    Ok(positives as f64 / negatives as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitSeed {
    /// Train and test parts were published separately; file order is kept.
    Predefined,
    Seed(u64),
}

impl FromStr for SplitSeed {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "predefined" | "fixed" => Ok(SplitSeed::Predefined),
            other => other
                .parse()
                .map(SplitSeed::Seed)
                .map_err(|_| format!("seed must be an unsigned integer or \"predefined\", got {other:?}")),
        }
    }
}

impl fmt::Display for SplitSeed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SplitSeed::Predefined => f.write_str("predefined"),
            SplitSeed::Seed(s) => write!(f, "{s}"),
        }
    }
}

/// One line of a benchmark manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub name: String,
    pub path: PathBuf,
    pub format: Format,
    pub n_train: usize,
    pub seed: SplitSeed,
    pub label_col: usize,
}

impl ManifestEntry {
    pub fn load_options(&self) -> LoadOptions {
        LoadOptions { format: self.format, label_col: self.label_col, ..LoadOptions::default() }
    }

    /// Loads the file and applies the split. `seed_override` replaces the
    /// seed of randomly split entries.
    pub fn load_split(&self, seed_override: Option<u64>) -> Result<Dataset, DataError> {
        let mut data = load(&self.path, &self.load_options())?;
        data.name = self.name.clone();
        match self.seed {
            SplitSeed::Predefined => predefined_split(&data, self.n_train),
            SplitSeed::Seed(seed) => split(&data, self.n_train, seed_override.unwrap_or(seed)),
        }
    }
}

/// Parses a manifest: comma-separated `name, path, format, n_train, seed
/// [, label_col]` per line, `#` comments and blank lines ignored. Relative
/// paths are resolved against `base_dir`.
pub fn parse_manifest(text: &str, base_dir: &Path) -> Result<Vec<ManifestEntry>, DataError> {
    let mut entries = Vec::new();
    for (index, raw) in text.lines().enumerate() {
        let line = index + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let fields: Vec<&str> = content.split(',').map(str::trim).collect();
        if !(5..=6).contains(&fields.len()) {
            return Err(DataError::Manifest {
                line,
                message: format!("expected 5 or 6 fields, found {}", fields.len()),
            });
        }
        let bad = |message: String| DataError::Manifest { line, message };
        let path = PathBuf::from(fields[1]);
        let path = if path.is_absolute() { path } else { base_dir.join(path) };
        let format = fields[2].parse().map_err(bad)?;
        let n_train = fields[3]
            .parse()
            .map_err(|_| bad(format!("n_train must be a positive integer, got {:?}", fields[3])))?;
        let seed = fields[4].parse().map_err(bad)?;
        let label_col = match fields.get(5) {
            Some(v) => v.parse().map_err(|_| bad(format!("label column must be an integer, got {v:?}")))?,
            None => 0,
        };
        entries.push(ManifestEntry { name: fields[0].to_string(), path, format, n_train, seed, label_col });
    }
    Ok(entries)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>, DataError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| DataError::Io { path: path.to_path_buf(), source })?;
    parse_manifest(&text, path.parent().unwrap_or(Path::new(".")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn csv_opts() -> LoadOptions {
        LoadOptions::default()
    }

    #[test]
    fn csv_example() {
        let d = parse("1,0.5,0.5\n-1,0,1", "t", &csv_opts()).unwrap();
        assert_eq!((d.len(), d.n_features()), (2, 2));
        assert_eq!(d.y, vec![1.0, -1.0]);
        assert_eq!(d.x, DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.0, 1.0]));
    }

    #[test]
    fn libsvm_example() {
        let opts = LoadOptions { format: Format::Libsvm, ..LoadOptions::default() };
        let d = parse("1 1:0.5 3:2\n-1 2:1", "t", &opts).unwrap();
        assert_eq!(d.x.row(0).iter().copied().collect::<Vec<_>>(), vec![0.5, 0.0, 2.0]);
        assert_eq!(d.y, vec![1.0, -1.0]);
    }

    #[test]
    fn label_conventions() {
        let d = parse("0,1\n1,2\n0,3", "t", &csv_opts()).unwrap();
        assert_eq!(d.y, vec![-1.0, 1.0, -1.0]);
        let d = parse("2,1\n1,2", "t", &csv_opts()).unwrap();
        assert_eq!(d.y, vec![1.0, -1.0]);
        // Numeric, not lexicographic: 10 > 9.
        let d = parse("10,1\n9,2", "t", &csv_opts()).unwrap();
        assert_eq!(d.y, vec![1.0, -1.0]);
        let d = parse("b,1\na,2", "t", &csv_opts()).unwrap();
        assert_eq!(d.y, vec![1.0, -1.0]);
        assert_eq!(d.label_map.decode(1.0), "b");
        let d = parse("+1,1\n-1.0,2\n1.0,3", "t", &csv_opts()).unwrap();
        assert_eq!(d.y, vec![1.0, -1.0, 1.0]);
    }

    #[test]
    fn label_errors() {
        match parse("a,1\nb,2\nc,3", "t", &csv_opts()) {
            Err(DataError::LabelCount { observed }) => assert_eq!(observed, vec!["a", "b", "c"]),
            other => panic!("{other:?}"),
        }
        let map = LabelMap { negative: "a".into(), positive: "b".into() };
        let opts = LoadOptions { label_map: Some(map), ..csv_opts() };
        match parse("a,1\nz,2", "t", &opts) {
            Err(DataError::UnknownLabel { line, label, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(label, "z");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_rows_report_line() {
        match parse("1,2,3\n-1,x,3", "t", &LoadOptions { header: Some(false), ..csv_opts() }) {
            Err(DataError::Malformed { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        match parse("1,2,3\n-1,3", "t", &csv_opts()) {
            Err(DataError::Malformed { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let opts = LoadOptions { format: Format::Libsvm, ..csv_opts() };
        match parse("1 1:0.5\n-1 3:1 2:4", "t", &opts) {
            Err(DataError::Malformed { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn header_and_missing_values() {
        let d = parse("class,a,b\n1,0,1\n-1,?,2\n-1,3,4\n", "t", &csv_opts()).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.rejected_rows, 1);
        let d = parse("f1,label\n0.5,yes\n1.5,no", "t", &LoadOptions { label_col: 1, ..csv_opts() }).unwrap();
        assert_eq!(d.y, vec![1.0, -1.0]);
        assert_eq!(d.x[(1, 0)], 1.5);
    }

    #[test]
    fn normalizer_examples() {
        let x = DMatrix::from_row_slice(3, 2, &[0.0, 3.0, 5.0, 3.0, 10.0, 3.0]);
        let t = fit_normalizer(&x).unwrap();
        let z = t.apply(&x).unwrap();
        assert_eq!(z.column(0).iter().copied().collect::<Vec<_>>(), vec![-1.0, 0.0, 1.0]);
        assert_eq!(z.column(1).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0, 0.0]);
        let test = DMatrix::from_row_slice(1, 2, &[12.0, 3.0]);
        // 2 * 12 / 10 - 1
        assert!((t.apply(&test).unwrap()[(0, 0)] - 1.4).abs() < 1e-15);
        assert!(t.apply(&DMatrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn splits() {
        let x = DMatrix::from_fn(10, 1, |i, _| i as f64);
        let y: Vec<f64> = (0..10).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let d = Dataset::new("d", x, y).unwrap();
        let a = split(&d, 6, 0).unwrap();
        let b = split(&d, 6, 0).unwrap();
        assert_eq!(a.split, b.split);
        let s = a.split.as_ref().unwrap();
        assert_eq!((s.train.len(), s.test.len()), (6, 4));
        let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert!(split(&d, 0, 0).is_err());
        assert!(split(&d, 10, 0).is_err());
        let p = predefined_split(&d, 4).unwrap();
        assert_eq!(p.split.unwrap().train, vec![0, 1, 2, 3]);
    }

    #[test]
    fn class_ratio_examples() {
        let mut y = vec![1.0; 10];
        y.extend(vec![-1.0; 5]);
        assert_eq!(class_ratio(&y).unwrap(), 2.0);
        assert_eq!(class_ratio(&[1.0, -1.0]).unwrap(), 1.0);
        assert!(class_ratio(&[1.0, 1.0]).is_err());
    }

    #[test]
    fn manifest_parsing() {
        let text = "# comment\nmonk1, monk1.csv, csv, 124, predefined\n\nhaberman, /abs/h.csv, csv, 150, 0, 0\n";
        let m = parse_manifest(text, Path::new("/data")).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m[0].path, PathBuf::from("/data/monk1.csv"));
        assert_eq!(m[0].seed, SplitSeed::Predefined);
        assert_eq!(m[1].path, PathBuf::from("/abs/h.csv"));
        assert_eq!(m[1].seed, SplitSeed::Seed(0));
        assert!(parse_manifest("a, b, csv, x, 0", Path::new(".")).is_err());
        assert!(parse_manifest("a, b, xml, 3, 0", Path::new(".")).is_err());
        assert!(parse_manifest("", Path::new(".")).unwrap().is_empty());
    }

    proptest! {
        #[test]
        fn normalized_training_data_in_range(
            values in prop::collection::vec(-1e3f64..1e3, 2..60),
            cols in 1usize..4,
        ) {
            let rows = values.len() / cols;
            prop_assume!(rows >= 1);
            let x = DMatrix::from_row_slice(rows, cols, &values[..rows * cols]);
            let t = fit_normalizer(&x).unwrap();
            let z = t.apply(&x).unwrap();
            prop_assert!(z.iter().all(|v| (-1.0..=1.0).contains(v)));
        }

        #[test]
        fn split_is_deterministic_partition(len in 2usize..80, seed in any::<u64>(), frac in 0.01f64..0.99) {
            let n_train = ((len as f64 * frac) as usize).clamp(1, len - 1);
            let x = DMatrix::zeros(len, 1);
            let y: Vec<f64> = (0..len).map(|i| if i % 3 == 0 { 1.0 } else { -1.0 }).collect();
            let d = Dataset::new("d", x, y).unwrap();
            let a = split(&d, n_train, seed).unwrap().split.unwrap();
            let b = split(&d, n_train, seed).unwrap().split.unwrap();
            prop_assert_eq!(&a, &b);
            let mut all: Vec<usize> = a.train.iter().chain(&a.test).copied().collect();
            all.sort();
            prop_assert_eq!(all, (0..len).collect::<Vec<_>>());
        }

        #[test]
        fn label_map_round_trips(a in "[a-z]{1,6}", b in "[a-z]{1,6}") {
            prop_assume!(a != b);
            let map = LabelMap::from_observed(&[a.clone(), b.clone()]).unwrap();
            for raw in [&a, &b] {
                let code = map.encode(raw).unwrap();
                prop_assert_eq!(map.decode(code), raw.as_str());
            }
        }
    }
}
