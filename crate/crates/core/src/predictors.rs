//! Public weight vectors from feature data.
//!
//! Each method turns a feature matrix `Y` (one row per individual) and a query
//! `y` into the coefficients of a linear predictor `sum_i w_i d_i`. Zero and
//! negligible coefficients are dropped, with a map back to the feature rows.

use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative magnitude below which a weight counts as zero.
pub const DEFAULT_DROP_THRESHOLD: f64 = 1e-12;

/// Condition number above which kernel solves are flagged.
pub const ILL_CONDITIONED: f64 = 1e12;

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    rows: DMatrix<f64>,
    query: DVector<f64>,
}

impl FeatureSet {
    pub fn new(rows: Vec<Vec<f64>>, query: Vec<f64>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::Validation("feature matrix has no rows".into()));
        }
        let m = query.len();
        if m == 0 {
            return Err(Error::Validation("query vector is empty".into()));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    found: row.len(),
                });
            }
            if let Some(j) = row.iter().position(|x| !x.is_finite()) {
                return Err(Error::Validation(format!(
                    "non-finite feature at row {i}, column {j}"
                )));
            }
        }
        if query.iter().any(|x| !x.is_finite()) {
            return Err(Error::Validation("non-finite query entry".into()));
        }
        Ok(Self {
            rows: DMatrix::from_fn(n, m, |i, j| rows[i][j]),
            query: DVector::from_vec(query),
        })
    }

    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn rows(&self) -> &DMatrix<f64> {
        &self.rows
    }

    pub fn query(&self) -> &DVector<f64> {
        &self.query
    }

    fn row(&self, i: usize) -> DVector<f64> {
        self.rows.row(i).transpose()
    }

    fn sq_distance(&self, i: usize) -> f64 {
        (self.row(i) - &self.query).norm_squared()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Kernel {
    /// `exp(-|a - b|^2 / bandwidth^2)`.
    Gaussian { bandwidth: f64 },
    /// `<a, b>`.
    Linear,
}

impl Kernel {
    pub fn eval(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        match *self {
            Kernel::Gaussian { bandwidth } => (-(a - b).norm_squared() / (bandwidth * bandwidth)).exp(),
            Kernel::Linear => a.dot(b),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Kernel::Gaussian { bandwidth } if !(bandwidth > 0.0 && bandwidth.is_finite()) => Err(
                Error::ParameterOutOfRange(format!("bandwidth must be positive, got {bandwidth}")),
            ),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "method")]
pub enum WeightSpec {
    Knn { k: usize },
    NadarayaWatson { kernel: Kernel },
    Ridge { lambda: f64 },
    KernelRegression { kernel: Kernel, lambda: f64 },
}

/// `1/k` on the `k` rows nearest to the query (ties to the smaller index).
pub fn knn_weights(features: &FeatureSet, k: usize) -> Result<Vec<f64>> {
    let n = features.len();
    if k == 0 || k > n {
        return Err(Error::KOutOfRange { k, n });
    }
    let dist: Vec<f64> = (0..n).map(|i| features.sq_distance(i)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(a.cmp(&b)));
    let mut w = vec![0.0; n];
    for &i in &order[..k] {
        w[i] = 1.0 / k as f64;
    }
    Ok(w)
}

/// `K(y, y_i) / sum_j K(y, y_j)`.
pub fn nadaraya_watson_weights(features: &FeatureSet, kernel: Kernel) -> Result<Vec<f64>> {
    kernel.validate()?;
    let mass: Vec<f64> = (0..features.len())
        .map(|i| kernel.eval(&features.query, &features.row(i)))
        .collect();
    if mass.iter().any(|&k| k < 0.0) {
        return Err(Error::ParameterOutOfRange(
            "kernel takes negative values on the data".into(),
        ));
    }
    let total = mass.iter().fold(0.0, |acc, k| acc + k);
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::DegenerateKernelMass);
    }
    Ok(mass.into_iter().map(|k| k / total).collect())
}

/// `Y (Y^T Y + lambda I)^{-1} y`, by Cholesky on the `m x m` system.
pub fn ridge_weights(features: &FeatureSet, lambda: f64) -> Result<Vec<f64>> {
    check_lambda(lambda)?;
    let y = &features.rows;
    let mut gram = y.transpose() * y;
    for j in 0..gram.nrows() {
        gram[(j, j)] += lambda;
    }
    let chol = gram.cholesky().ok_or(Error::SingularSystem)?;
    let z = chol.solve(&features.query);
    Ok((y * z).iter().copied().collect())
}

/// Kernel ridge weights with a condition estimate of `K + lambda I`.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelSolve {
    pub weights: Vec<f64>,
    pub condition: f64,
}

impl KernelSolve {
    pub fn ill_conditioned(&self) -> bool {
        self.condition > ILL_CONDITIONED
    }
}

/// `(K(Y) + lambda I)^{-1} k(y, Y)`, by Cholesky.
pub fn kernel_regression_weights(features: &FeatureSet, kernel: Kernel, lambda: f64) -> Result<KernelSolve> {
    check_lambda(lambda)?;
    kernel.validate()?;
    let n = features.len();
    let rows: Vec<DVector<f64>> = (0..n).map(|i| features.row(i)).collect();
    let mut gram = DMatrix::from_fn(n, n, |i, j| kernel.eval(&rows[i], &rows[j]));
    for i in 0..n {
        gram[(i, i)] += lambda;
    }
    let k = DVector::from_fn(n, |i, _| kernel.eval(&features.query, &rows[i]));
    let chol = gram.cholesky().ok_or(Error::SingularSystem)?;
    // cond(L L^T) >= (max L_ii / min L_ii)^2; exact for diagonal systems.
    let diag = chol.l_dirty().diagonal();
    let ratio = diag.max() / diag.min();
    Ok(KernelSolve {
        weights: chol.solve(&k).iter().copied().collect(),
        condition: ratio * ratio,
    })
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::ParameterOutOfRange(format!(
            "regularization must be positive, got {lambda}"
        )))
    }
}

/// Weights ready for the auction, with the rows they came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivedWeights {
    pub weights: Vec<f64>,
    /// Feature row of each kept weight.
    pub index_map: Vec<usize>,
    pub dropped: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl DerivedWeights {
    /// Keeps entries with `|w_i| >= threshold * sum_j |w_j|` and `w_i != 0`.
    pub fn from_raw(raw: &[f64], threshold: f64) -> Self {
        let total = raw.iter().fold(0.0, |acc, w| acc + w.abs());
        let (mut weights, mut index_map, mut dropped) = (Vec::new(), Vec::new(), Vec::new());
        for (i, &w) in raw.iter().enumerate() {
            if w != 0.0 && w.abs() >= threshold * total {
                weights.push(w);
                index_map.push(i);
            } else {
                dropped.push(i);
            }
        }
        Self {
            weights,
            index_map,
            dropped,
            warnings: Vec::new(),
        }
    }
}

pub fn raw_weights(features: &FeatureSet, spec: WeightSpec) -> Result<(Vec<f64>, Vec<String>)> {
    Ok(match spec {
        WeightSpec::Knn { k } => (knn_weights(features, k)?, Vec::new()),
        WeightSpec::NadarayaWatson { kernel } => (nadaraya_watson_weights(features, kernel)?, Vec::new()),
        WeightSpec::Ridge { lambda } => (ridge_weights(features, lambda)?, Vec::new()),
        WeightSpec::KernelRegression { kernel, lambda } => {
            let solve = kernel_regression_weights(features, kernel, lambda)?;
            let warnings = if solve.ill_conditioned() {
                vec![format!(
                    "kernel system is ill-conditioned (estimated condition number {:e})",
                    solve.condition
                )]
            } else {
                Vec::new()
            };
            (solve.weights, warnings)
        }
    })
}

pub fn derive_weights(features: &FeatureSet, spec: WeightSpec, threshold: f64) -> Result<DerivedWeights> {
    let (raw, warnings) = raw_weights(features, spec)?;
    let mut out = DerivedWeights::from_raw(&raw, threshold);
    out.warnings = warnings;
    Ok(out)
}

/// Feature rows parsed from CSV, with the optional id column split off.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTable {
    pub ids: Option<Vec<String>>,
    pub rows: Vec<Vec<f64>>,
}

/// Reads a feature table. A header row is recognised by a non-numeric first
/// record; a header whose first field is `id` marks an id column. Without a
/// header, a non-numeric first field in every row marks the id column.
pub fn read_feature_csv<R: Read>(reader: R) -> Result<FeatureTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut records = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(e, line + 1))?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        records.push((line + 1, rec.iter().map(str::to_owned).collect::<Vec<_>>()));
    }
    let numeric = |s: &str| s.parse::<f64>().is_ok();
    let mut id_column = false;
    if let Some((_, first)) = records.first() {
        if !first.iter().all(|s| numeric(s)) && first.iter().skip(1).any(|s| !numeric(s)) {
            id_column = first.first().is_some_and(|s| s.eq_ignore_ascii_case("id"));
            records.remove(0);
        } else if !records.is_empty() && records.iter().all(|(_, r)| !r.is_empty() && !numeric(&r[0])) {
            id_column = true;
        }
    }
    let mut ids = id_column.then(Vec::new);
    let mut rows = Vec::with_capacity(records.len());
    for (line, rec) in records {
        let mut fields = rec.into_iter();
        if let Some(ids) = ids.as_mut() {
            ids.push(fields.next().unwrap_or_default());
        }
        let row = fields
            .enumerate()
            .map(|(col, s)| {
                s.parse::<f64>().map_err(|_| Error::Parse {
                    line,
                    column: col + 1 + usize::from(id_column),
                    message: format!("not a number: {s:?}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(FeatureTable { ids, rows })
}

fn csv_error(e: csv::Error, line: usize) -> Error {
    Error::Parse {
        line,
        column: 0,
        message: e.to_string(),
    }
}

pub fn load_feature_csv(path: impl AsRef<Path>) -> Result<FeatureTable> {
    read_feature_csv(std::fs::File::open(path)?)
}

/// Comma-separated list of numbers, as given on a command line.
pub fn parse_query(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .enumerate()
        .map(|(col, s)| {
            s.trim().parse::<f64>().map_err(|_| Error::Parse {
                line: 1,
                column: col + 1,
                message: format!("not a number: {:?}", s.trim()),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fs(rows: &[&[f64]], q: &[f64]) -> FeatureSet {
        FeatureSet::new(rows.iter().map(|r| r.to_vec()).collect(), q.to_vec()).unwrap()
    }

    #[test]
    fn knn_full_neighbourhood() {
        let f = fs(&[&[0.0], &[5.0], &[1.0]], &[2.0]);
        assert_eq!(knn_weights(&f, 3).unwrap(), vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn knn_exact_match() {
        let f = fs(&[&[0.0, 1.0], &[1.0, 1.0], &[2.0, 0.0]], &[2.0, 0.0]);
        let d = derive_weights(&f, WeightSpec::Knn { k: 1 }, DEFAULT_DROP_THRESHOLD).unwrap();
        assert_eq!(d.weights, vec![1.0]);
        assert_eq!(d.index_map, vec![2]);
        assert_eq!(d.dropped, vec![0, 1]);
    }

    #[test]
    fn knn_hand_sorted() {
        let f = fs(&[&[0.0], &[1.0], &[2.0]], &[0.9]);
        assert_eq!(knn_weights(&f, 2).unwrap(), vec![0.5, 0.5, 0.0]);
    }

    #[test]
    fn knn_ties_prefer_smaller_index() {
        let f = fs(&[&[2.0], &[0.0], &[1.0], &[0.0]], &[1.0]);
        assert_eq!(knn_weights(&f, 2).unwrap(), vec![0.5, 0.0, 0.5, 0.0]);
    }

    #[test]
    fn knn_rejects_bad_k() {
        let f = fs(&[&[0.0]], &[0.0]);
        assert_eq!(knn_weights(&f, 0).unwrap_err(), Error::KOutOfRange { k: 0, n: 1 });
        assert_eq!(knn_weights(&f, 2).unwrap_err(), Error::KOutOfRange { k: 2, n: 1 });
    }

    #[test]
    fn nw_examples() {
        let g = Kernel::Gaussian { bandwidth: 1.0 };
        assert_eq!(nadaraya_watson_weights(&fs(&[&[3.0]], &[0.0]), g).unwrap(), vec![1.0]);
        let w = nadaraya_watson_weights(&fs(&[&[-1.0], &[1.0]], &[0.0]), g).unwrap();
        assert_eq!(w, vec![0.5, 0.5]);
        let w = nadaraya_watson_weights(&fs(&[&[0.0], &[1.0]], &[0.0]), g).unwrap();
        let e = (-1.0f64).exp();
        assert!((w[0] - 1.0 / (1.0 + e)).abs() < 1e-15);
        assert!((w[1] - e / (1.0 + e)).abs() < 1e-15);
        assert!((w[0] - 0.7311).abs() < 1e-4);
    }

    #[test]
    fn nw_far_query_underflows() {
        let f = fs(&[&[0.0], &[1.0]], &[1e3]);
        let err = nadaraya_watson_weights(&f, Kernel::Gaussian { bandwidth: 0.1 }).unwrap_err();
        assert_eq!(err, Error::DegenerateKernelMass);
    }

    #[test]
    fn ridge_scalar_example() {
        let w = ridge_weights(&fs(&[&[1.0], &[1.0]], &[1.0]), 1.0).unwrap();
        assert!((w[0] - 1.0 / 3.0).abs() < 1e-15 && (w[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn ridge_identity_design() {
        let f = fs(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]], &[1.0, 0.0, 0.0]);
        let w = ridge_weights(&f, 1e-8).unwrap();
        assert!((w[0] - 1.0).abs() < 1e-6);
        assert!(w[1].abs() < 1e-6 && w[2].abs() < 1e-6);
    }

    #[test]
    fn ridge_can_be_negative() {
        let f = fs(&[&[1.0, 0.0], &[1.0, 1.0], &[0.0, 1.0]], &[1.0, -1.0]);
        let w = ridge_weights(&f, 0.1).unwrap();
        assert!(w.iter().any(|&x| x < 0.0));
    }

    #[test]
    fn ridge_rejects_nonpositive_lambda() {
        let f = fs(&[&[1.0]], &[1.0]);
        assert!(matches!(ridge_weights(&f, 0.0), Err(Error::ParameterOutOfRange(_))));
    }

    #[test]
    fn kernel_scalar_case() {
        let g = Kernel::Gaussian { bandwidth: 2.0 };
        let f = fs(&[&[1.0]], &[0.0]);
        let s = kernel_regression_weights(&f, g, 0.5).unwrap();
        let expected = (-0.25f64).exp() / (1.0 + 0.5);
        assert!((s.weights[0] - expected).abs() < 1e-15);
        assert_eq!(s.condition, 1.0);
    }

    #[test]
    fn kernel_far_query_drops_everything() {
        let f = fs(&[&[0.0], &[1.0]], &[1e3]);
        let d = derive_weights(
            &f,
            WeightSpec::KernelRegression {
                kernel: Kernel::Gaussian { bandwidth: 1.0 },
                lambda: 1.0,
            },
            DEFAULT_DROP_THRESHOLD,
        )
        .unwrap();
        assert!(d.weights.is_empty());
        assert_eq!(d.dropped, vec![0, 1]);
    }

    #[test]
    fn kernel_flags_ill_conditioning() {
        let f = fs(&[&[0.0], &[1e-9]], &[0.0]);
        let s = kernel_regression_weights(&f, Kernel::Gaussian { bandwidth: 1.0 }, 1e-15).unwrap();
        assert!(s.ill_conditioned());
    }

    #[test]
    fn drop_threshold_is_relative() {
        let d = DerivedWeights::from_raw(&[1.0, 0.0, 1e-13, -2.0], 1e-12);
        assert_eq!(d.weights, vec![1.0, -2.0]);
        assert_eq!(d.index_map, vec![0, 3]);
        assert_eq!(d.dropped, vec![1, 2]);
    }

    #[test]
    fn csv_with_header_and_ids() {
        let t = read_feature_csv("id,a,b\nalice,1,2\nbob,3,4\n".as_bytes()).unwrap();
        assert_eq!(t.ids, Some(vec!["alice".into(), "bob".into()]));
        assert_eq!(t.rows, vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
    }

    #[test]
    fn csv_plain_numbers() {
        let t = read_feature_csv("1,2\n3,4\n".as_bytes()).unwrap();
        assert_eq!(t.ids, None);
        assert_eq!(t.rows.len(), 2);
    }

    #[test]
    fn csv_ids_without_header() {
        let t = read_feature_csv("a,1\nb,2\n".as_bytes()).unwrap();
        assert_eq!(t.ids, Some(vec!["a".into(), "b".into()]));
        assert_eq!(t.rows, vec![vec![1.0], vec![2.0]]);
    }

    #[test]
    fn csv_reports_bad_cell() {
        let err = read_feature_csv("x,y\n1,2\n3,oops\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, column: 2, .. }), "{err:?}");
    }

    #[test]
    fn query_list() {
        assert_eq!(parse_query("1, 2.5,-3").unwrap(), vec![1.0, 2.5, -3.0]);
        assert!(parse_query("1,,2").is_err());
    }
}
