//! Datasets, CSV ingestion, cutpoint grids and cross-validation folds.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Real;

/// Default cap on candidate split values per covariate.
pub const DEFAULT_MAX_CUTS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponseKind {
    Continuous,
    Binary,
}

impl ResponseKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ResponseKind::Continuous => "continuous",
            ResponseKind::Binary => "binary",
        }
    }
}

/// Response vector plus a column-major covariate matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    y: Vec<T>,
    columns: Vec<Vec<T>>,
    column_names: Vec<String>,
    response_name: String,
    kind: ResponseKind,
}

impl<T: Real> Dataset<T> {
    /// Builds a dataset from column-major covariates, validating shapes and values.
    pub fn new(
        y: Vec<T>,
        columns: Vec<Vec<T>>,
        column_names: Vec<String>,
        response_name: impl Into<String>,
        kind: ResponseKind,
    ) -> Result<Self> {
        let response_name = response_name.into();
        if columns.len() != column_names.len() {
            return Err(Error::InvalidData(format!(
                "{} covariate columns but {} names",
                columns.len(),
                column_names.len()
            )));
        }
        let n = y.len();
        for (name, col) in column_names.iter().zip(&columns) {
            if col.len() != n {
                return Err(Error::InvalidData(format!(
                    "column `{name}` has {} values, expected {n}",
                    col.len()
                )));
            }
            if let Some(row) = col.iter().position(|v| !v.is_finite()) {
                return Err(Error::InvalidData(format!(
                    "non-finite value in column `{name}` at row {}",
                    row + 1
                )));
            }
        }
        for (row, &v) in y.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::InvalidData(format!(
                    "non-finite response at row {}",
                    row + 1
                )));
            }
            if kind == ResponseKind::Binary && v != T::zero() && v != T::one() {
                return Err(Error::NotBinary {
                    column: response_name.clone(),
                    row: row + 1,
                    value: v.to_string(),
                });
            }
        }
        Ok(Self {
            y,
            columns,
            column_names,
            response_name,
            kind,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.columns.len()
    }

    pub fn y(&self) -> &[T] {
        &self.y
    }

    pub fn kind(&self) -> ResponseKind {
        self.kind
    }

    pub fn response_name(&self) -> &str {
        &self.response_name
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn column(&self, j: usize) -> &[T] {
        &self.columns[j]
    }

    pub fn columns(&self) -> &[Vec<T>] {
        &self.columns
    }

    pub fn value(&self, i: usize, j: usize) -> T {
        self.columns[j][i]
    }

    pub fn row(&self, i: usize) -> Vec<T> {
        self.columns.iter().map(|c| c[i]).collect()
    }

    pub fn rows(&self) -> Vec<Vec<T>> {
        (0..self.n()).map(|i| self.row(i)).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.column_names.iter().position(|c| c == name)
    }

    /// Resolves column names to indices, naming the first unknown column on failure.
    pub fn column_indices<S: AsRef<str>>(&self, names: &[S]) -> Result<Vec<usize>> {
        names
            .iter()
            .map(|s| {
                self.column_index(s.as_ref())
                    .ok_or_else(|| Error::MissingColumn(s.as_ref().to_string()))
            })
            .collect()
    }

    /// Rows selected by index, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Self {
        Self {
            y: rows.iter().map(|&i| self.y[i]).collect(),
            columns: self
                .columns
                .iter()
                .map(|c| rows.iter().map(|&i| c[i]).collect())
                .collect(),
            column_names: self.column_names.clone(),
            response_name: self.response_name.clone(),
            kind: self.kind,
        }
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec![self.response_name.clone()];
        header.extend(self.column_names.iter().cloned());
        w.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec = Vec::with_capacity(self.p() + 1);
            rec.push(self.y[i].to_string());
            rec.extend(self.columns.iter().map(|c| c[i].to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(())
    }
}

/// How to read a CSV file into a [`Dataset`].
#[derive(Clone, Debug)]
pub struct CsvOptions {
    pub response: String,
    pub kind: ResponseKind,
    /// Columns expanded into one indicator per observed level (`name=level`).
    pub categorical: Vec<String>,
}

impl CsvOptions {
    pub fn new(response: impl Into<String>, kind: ResponseKind) -> Self {
        Self {
            response: response.into(),
            kind,
            categorical: Vec::new(),
        }
    }
}

pub fn load_csv<T: Real>(
    path: impl AsRef<Path>,
    response: &str,
    kind: ResponseKind,
) -> Result<Dataset<T>> {
    load_csv_with(path, &CsvOptions::new(response, kind))
}

pub fn load_csv_with<T: Real>(path: impl AsRef<Path>, opts: &CsvOptions) -> Result<Dataset<T>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let response_idx = header
        .iter()
        .position(|h| h == &opts.response)
        .ok_or_else(|| Error::MissingColumn(opts.response.clone()))?;
    for cat in &opts.categorical {
        if !header.contains(cat) {
            return Err(Error::MissingColumn(cat.clone()));
        }
    }

    let mut raw: Vec<Vec<String>> = vec![Vec::new(); header.len()];
    for rec in reader.records() {
        let rec = rec?;
        for (j, cell) in rec.iter().enumerate() {
            raw[j].push(cell.to_string());
        }
    }

    let parse = |column: &str, row: usize, cell: &str| -> Result<T> {
        if cell.is_empty() {
            return Err(Error::InvalidData(format!(
                "missing value in column `{column}` at data row {row}"
            )));
        }
        cell.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .map(T::lit)
            .ok_or_else(|| Error::NonNumeric {
                column: column.to_string(),
                row,
                value: cell.to_string(),
            })
    };

    let y = raw[response_idx]
        .iter()
        .enumerate()
        .map(|(r, cell)| parse(&opts.response, r + 1, cell))
        .collect::<Result<Vec<T>>>()?;

    let mut columns = Vec::new();
    let mut names = Vec::new();
    for (j, name) in header.iter().enumerate() {
        if j == response_idx {
            continue;
        }
        if opts.categorical.contains(name) {
            if let Some(row) = raw[j].iter().position(|c| c.is_empty()) {
                return Err(Error::InvalidData(format!(
                    "missing value in column `{name}` at data row {}",
                    row + 1
                )));
            }
            let levels: BTreeSet<&str> = raw[j].iter().map(String::as_str).collect();
            for level in levels {
                names.push(format!("{name}={level}"));
                columns.push(
                    raw[j]
                        .iter()
                        .map(|c| if c == level { T::one() } else { T::zero() })
                        .collect(),
                );
            }
        } else {
            names.push(name.clone());
            columns.push(
                raw[j]
                    .iter()
                    .enumerate()
                    .map(|(r, cell)| parse(name, r + 1, cell))
                    .collect::<Result<Vec<T>>>()?,
            );
        }
    }
    Dataset::new(y, columns, names, opts.response.clone(), opts.kind)
}

/// Disjoint covariate blocks: `minus` feeds f₁, `plus` feeds f₂.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovariateSplit {
    pub minus: Vec<usize>,
    pub plus: Vec<usize>,
}

impl CovariateSplit {
    pub fn new(minus: Vec<usize>, plus: Vec<usize>, p: usize) -> Result<Self> {
        if minus.is_empty() || plus.is_empty() {
            return Err(Error::InvalidConfig(
                "both covariate blocks must be nonempty".into(),
            ));
        }
        for &j in minus.iter().chain(&plus) {
            if j >= p {
                return Err(Error::InvalidConfig(format!(
                    "covariate index {j} out of range for {p} columns"
                )));
            }
        }
        if let Some(j) = minus.iter().find(|j| plus.contains(j)) {
            return Err(Error::InvalidConfig(format!(
                "covariate {j} appears in both blocks"
            )));
        }
        let dedup = |v: &[usize]| v.iter().collect::<BTreeSet<_>>().len() == v.len();
        if !dedup(&minus) || !dedup(&plus) {
            return Err(Error::InvalidConfig("duplicate covariate in a block".into()));
        }
        Ok(Self { minus, plus })
    }

    pub fn from_names<T: Real, S: AsRef<str>>(
        data: &Dataset<T>,
        minus: &[S],
        plus: &[S],
    ) -> Result<Self> {
        Self::new(data.column_indices(minus)?, data.column_indices(plus)?, data.p())
    }

    /// Sorted union of both blocks.
    pub fn union(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self.minus.iter().chain(&self.plus).copied().collect();
        set.into_iter().collect()
    }
}

/// Candidate split values per covariate column.
#[derive(Clone, Debug, PartialEq)]
pub struct CutpointGrid<T> {
    cuts: Vec<Vec<T>>,
}

impl<T: Real> CutpointGrid<T> {
    /// Wraps explicit cutpoints; each column must be strictly increasing.
    pub fn from_cuts(cuts: Vec<Vec<T>>) -> Result<Self> {
        for (j, c) in cuts.iter().enumerate() {
            if c.windows(2).any(|w| w[0] >= w[1]) || c.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidData(format!(
                    "cutpoints for column {j} are not strictly increasing"
                )));
            }
        }
        Ok(Self { cuts })
    }

    pub fn column(&self, j: usize) -> &[T] {
        &self.cuts[j]
    }

    pub fn n_columns(&self) -> usize {
        self.cuts.len()
    }

    pub fn n_cuts(&self, j: usize) -> usize {
        self.cuts[j].len()
    }

    pub fn is_empty(&self) -> bool {
        self.cuts.iter().all(Vec::is_empty)
    }
}

/// Builds per-column cutpoints.
///
/// A column with `d` distinct values gets the `d - 1` midpoints between
/// consecutive distinct values when `d - 1 <= max_cuts`; otherwise `max_cuts`
/// of those midpoints are taken at equally spaced empirical quantile positions.
/// Every cutpoint `c` satisfies `min < c < max`, so routing `x < c` to the
/// left child leaves both sides of the observed data nonempty.
pub fn build_cutpoints<T: Real>(data: &Dataset<T>, max_cuts: usize) -> CutpointGrid<T> {
    let max_cuts = max_cuts.max(1);
    let cuts = data
        .columns()
        .iter()
        .map(|col| column_cutpoints(col, max_cuts))
        .collect();
    CutpointGrid { cuts }
}

fn column_cutpoints<T: Real>(col: &[T], max_cuts: usize) -> Vec<T> {
    let mut distinct: Vec<T> = col.to_vec();
    distinct.sort_by(|a, b| a.partial_cmp(b).expect("finite covariates"));
    distinct.dedup();
    if distinct.len() < 2 {
        return Vec::new();
    }
    let half = T::lit(0.5);
    let mids = distinct.len() - 1;
    let midpoint = |j: usize| distinct[j] + (distinct[j + 1] - distinct[j]) * half;
    if mids <= max_cuts {
        return (0..mids).map(midpoint).collect();
    }
    (1..=max_cuts)
        .map(|k| midpoint(k * mids / (max_cuts + 1)))
        .collect()
}

/// Per-observation cut ranks: `rank[c][i]` counts cutpoints of column `c` that are `<= x[i][c]`.
///
/// An observation goes left at a split on cut index `k` iff its rank is `<= k`.
#[derive(Clone, Debug)]
pub struct SplitIndex {
    ranks: Vec<Vec<u32>>,
}

impl SplitIndex {
    pub fn new<T: Real>(data: &Dataset<T>, grid: &CutpointGrid<T>) -> Self {
        let ranks = data
            .columns()
            .iter()
            .enumerate()
            .map(|(j, col)| {
                let cuts = grid.column(j);
                col.iter()
                    .map(|&x| cuts.partition_point(|&c| c <= x) as u32)
                    .collect()
            })
            .collect();
        Self { ranks }
    }

    #[inline]
    pub fn rank(&self, column: usize, obs: usize) -> u32 {
        self.ranks[column][obs]
    }

    #[inline]
    pub fn column(&self, column: usize) -> &[u32] {
        &self.ranks[column]
    }

    pub fn n(&self) -> usize {
        self.ranks.first().map_or(0, Vec::len)
    }
}

/// Assignment of observations to `k` cross-validation folds (labels `0..k`).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub fold: Vec<usize>,
}

impl FoldAssignment {
    pub fn n(&self) -> usize {
        self.fold.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &f in &self.fold {
            s[f] += 1;
        }
        s
    }

    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.fold[i] == fold).collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.fold[i] != fold).collect()
    }

    /// Two-column CSV `row_index,fold`, both 1-based.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["row_index", "fold"])?;
        for (i, f) in self.fold.iter().enumerate() {
            w.write_record([(i + 1).to_string(), (f + 1).to_string()])?;
        }
        w.flush().map_err(|source| Error::Io {
            path: "<folds>".into(),
            source,
        })?;
        Ok(())
    }
}

/// Random near-equal split of `0..n` into `k` folds; deterministic for a fixed seed.
pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::InvalidConfig(format!("fold count {k} must be >= 2")));
    }
    if k > n {
        return Err(Error::InvalidConfig(format!(
            "fold count {k} exceeds observation count {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::seeded(seed));
    let mut fold = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold[i] = pos % k;
    }
    Ok(FoldAssignment { k, fold })
}
