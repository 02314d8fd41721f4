//! Embeddings and distance functions.

use std::fmt;
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{symmetric_eigen, SymMatrix};

/// A point in latent space: a non-empty vector of finite reals.
///
/// Embeddings produced by [`normalize`] carry a unit-norm tag. Equality
/// compares coordinates only.
#[derive(Clone, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Embedding {
    values: Vec<f64>,
    normalized: bool,
}

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyEmbedding);
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { values, normalized: false })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.values)
    }
}

impl Deref for Embedding {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.values
    }
}

impl AsRef<[f64]> for Embedding {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

impl PartialEq for Embedding {
    fn eq(&self, other: &Self) -> bool {
        self.values == other.values
    }
}

impl fmt::Debug for Embedding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("Embedding").field(&self.values).finish()
    }
}

impl TryFrom<Vec<f64>> for Embedding {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Embedding::new(values)
    }
}

impl From<Embedding> for Vec<f64> {
    fn from(e: Embedding) -> Self {
        e.values
    }
}

/// Scales `x` to unit L2 norm.
pub fn normalize(x: &Embedding) -> Result<Embedding> {
    let values = normalize_slice(&x.values)?;
    Ok(Embedding { values, normalized: true })
}

pub(crate) fn normalize_slice(x: &[f64]) -> Result<Vec<f64>> {
    let n = l2_norm(x);
    if n <= 1e-12 {
        return Err(Error::ZeroVector);
    }
    Ok(x.iter().map(|v| v / n).collect())
}

pub(crate) fn l2_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Inverse covariance matrix for the Mahalanobis distance.
///
/// Construction checks that the matrix is square, symmetric within 1e-9 and
/// positive semi-definite, so every quadratic form it produces is non-negative.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct InverseCovariance {
    rows: Vec<Vec<f64>>,
}

impl InverseCovariance {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::InvalidMetricParams("empty inverse covariance".into()));
        }
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidMetricParams("inverse covariance must be square".into()));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidMetricParams("inverse covariance has non-finite entries".into()));
        }
        let asymmetric = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .find(|&(i, j)| (rows[i][j] - rows[j][i]).abs() > 1e-9);
        if let Some((i, j)) = asymmetric {
            return Err(Error::InvalidMetricParams(format!("inverse covariance is not symmetric at ({i}, {j})")));
        }
        let m = SymMatrix::from_rows(&rows).expect("square checked");
        let eig = symmetric_eigen(&m);
        let scale = eig.values.iter().fold(1.0_f64, |a, v| a.max(v.abs()));
        if let Some(min) = eig.values.last() {
            if *min < -1e-9 * scale {
                return Err(Error::InvalidMetricParams(format!(
                    "inverse covariance is indefinite (eigenvalue {min:e})"
                )));
            }
        }
        Ok(Self { rows })
    }

    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    fn quadratic_form(&self, d: &[f64]) -> f64 {
        self.rows.iter().zip(d).map(|(row, di)| di * row.iter().zip(d).map(|(m, dj)| m * dj).sum::<f64>()).sum()
    }
}

impl fmt::Debug for InverseCovariance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "InverseCovariance({}x{})", self.dim(), self.dim())
    }
}

impl TryFrom<Vec<Vec<f64>>> for InverseCovariance {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        InverseCovariance::new(rows)
    }
}

impl From<InverseCovariance> for Vec<Vec<f64>> {
    fn from(m: InverseCovariance) -> Self {
        m.rows
    }
}

/// Distance function selector.
///
/// Cosine distance is `1 - x.y / (|x||y|)`; correlation distance is the
/// cosine distance between mean-centred vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Metric {
    Euclidean,
    SquaredEuclidean,
    Manhattan,
    Chebyshev,
    Minkowski { p: f64 },
    Cosine,
    Correlation,
    Hamming,
    Mahalanobis { inv_cov: InverseCovariance },
}

impl Metric {
    pub fn minkowski(p: f64) -> Result<Self> {
        let m = Metric::Minkowski { p };
        m.validate()?;
        Ok(m)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Metric::Euclidean => "euclidean",
            Metric::SquaredEuclidean => "squared_euclidean",
            Metric::Manhattan => "manhattan",
            Metric::Chebyshev => "chebyshev",
            Metric::Minkowski { .. } => "minkowski",
            Metric::Cosine => "cosine",
            Metric::Correlation => "correlation",
            Metric::Hamming => "hamming",
            Metric::Mahalanobis { .. } => "mahalanobis",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Metric::Minkowski { p } if !(p.is_finite() && *p >= 1.0) => {
                Err(Error::InvalidMetricParams(format!("minkowski order must be >= 1, got {p}")))
            }
            _ => Ok(()),
        }
    }

    /// Whether this metric obeys the triangle inequality.
    pub fn is_true_metric(&self) -> bool {
        !matches!(self, Metric::SquaredEuclidean | Metric::Cosine | Metric::Correlation)
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Minkowski { p } => write!(f, "minkowski(p={p})"),
            other => f.write_str(other.name()),
        }
    }
}

/// Distance between two embeddings under `metric`.
pub fn distance(metric: &Metric, x: &Embedding, y: &Embedding) -> Result<f64> {
    distance_slices(metric, x, y)
}

pub(crate) fn distance_slices(metric: &Metric, x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), found: y.len() });
    }
    metric.validate()?;
    let diffs = x.iter().zip(y).map(|(a, b)| a - b);
    let d = match metric {
        Metric::Euclidean => squared_euclidean(x, y).sqrt(),
        Metric::SquaredEuclidean => squared_euclidean(x, y),
        Metric::Manhattan => diffs.map(f64::abs).sum(),
        Metric::Chebyshev => diffs.map(f64::abs).fold(0.0, f64::max),
        Metric::Minkowski { p } => diffs.map(|d| d.abs().powf(*p)).sum::<f64>().powf(1.0 / p),
        Metric::Cosine => cosine(x, y)?,
        Metric::Correlation => {
            let xc = centered(x);
            let yc = centered(y);
            if l2_norm(&xc) == 0.0 || l2_norm(&yc) == 0.0 {
                return Err(Error::DegenerateInput("correlation distance of a constant vector"));
            }
            cosine(&xc, &yc)?
        }
        Metric::Hamming => {
            for (index, &v) in x.iter().chain(y).enumerate() {
                if v != 0.0 && v != 1.0 {
                    return Err(Error::NonBinaryInput { index: index % x.len(), value: v });
                }
            }
            diffs.filter(|d| *d != 0.0).count() as f64
        }
        Metric::Mahalanobis { inv_cov } => {
            if inv_cov.dim() != x.len() {
                return Err(Error::DimensionMismatch { expected: inv_cov.dim(), found: x.len() });
            }
            let d: Vec<f64> = diffs.collect();
            inv_cov.quadratic_form(&d).max(0.0).sqrt()
        }
    };
    Ok(d)
}

pub(crate) fn squared_euclidean(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

fn cosine(x: &[f64], y: &[f64]) -> Result<f64> {
    let nx = l2_norm(x);
    let ny = l2_norm(y);
    if nx == 0.0 || ny == 0.0 {
        return Err(Error::DegenerateInput("cosine distance of a zero vector"));
    }
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    // Rounding can push the cosine slightly outside [-1, 1].
    let cos = (dot / (nx * ny)).clamp(-1.0, 1.0);
    Ok(1.0 - cos)
}

fn centered(x: &[f64]) -> Vec<f64> {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| v - mean).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(v: &[f64]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    fn all_metrics(dim: usize) -> Vec<Metric> {
        let mut rows = vec![vec![0.0; dim]; dim];
        for (i, row) in rows.iter_mut().enumerate() {
            row[i] = 2.0;
            if i + 1 < dim {
                row[i + 1] = 0.5;
            }
            if i > 0 {
                row[i - 1] = 0.5;
            }
        }
        vec![
            Metric::Euclidean,
            Metric::SquaredEuclidean,
            Metric::Manhattan,
            Metric::Chebyshev,
            Metric::minkowski(3.0).unwrap(),
            Metric::Cosine,
            Metric::Correlation,
            Metric::Mahalanobis { inv_cov: InverseCovariance::new(rows).unwrap() },
        ]
    }

    #[test]
    fn euclidean_three_four_five() {
        assert_eq!(distance(&Metric::Euclidean, &e(&[3.0, 4.0]), &e(&[0.0, 0.0])).unwrap(), 5.0);
    }

    #[test]
    fn identity_for_every_kind() {
        let x = e(&[0.2, -1.1, 3.0]);
        for m in all_metrics(3) {
            assert_eq!(distance(&m, &x, &x).unwrap(), 0.0, "{m}");
        }
        let b = e(&[1.0, 0.0, 1.0]);
        assert_eq!(distance(&Metric::Hamming, &b, &b).unwrap(), 0.0);
    }

    #[test]
    fn cosine_of_orthogonal_vectors() {
        assert_eq!(distance(&Metric::Cosine, &e(&[1.0, 0.0]), &e(&[0.0, 1.0])).unwrap(), 1.0);
    }

    #[test]
    fn minkowski_order_three() {
        // (1 + 1)^(1/3), evaluated independently.
        let d = distance(&Metric::minkowski(3.0).unwrap(), &e(&[1.0, 1.0]), &e(&[0.0, 0.0])).unwrap();
        assert!((d - 1.259_921_049_894_873).abs() < 1e-12);
    }

    #[test]
    fn hamming_counts_differences() {
        let d = distance(&Metric::Hamming, &e(&[1.0, 0.0, 1.0, 1.0]), &e(&[0.0, 0.0, 1.0, 0.0])).unwrap();
        assert_eq!(d, 2.0);
        let err = distance(&Metric::Hamming, &e(&[1.0, 0.5]), &e(&[0.0, 0.0])).unwrap_err();
        assert!(matches!(err, Error::NonBinaryInput { index: 1, .. }));
    }

    #[test]
    fn mahalanobis_identity_is_euclidean() {
        let id = InverseCovariance::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let m = Metric::Mahalanobis { inv_cov: id };
        assert!((distance(&m, &e(&[3.0, 4.0]), &e(&[0.0, 0.0])).unwrap() - 5.0).abs() < 1e-15);
    }

    #[test]
    fn invalid_params() {
        assert!(matches!(Metric::minkowski(0.5), Err(Error::InvalidMetricParams(_))));
        let bad = Metric::Minkowski { p: 0.9 };
        assert!(distance(&bad, &e(&[1.0]), &e(&[0.0])).is_err());
        assert!(InverseCovariance::new(vec![vec![1.0, 0.5], vec![0.4, 1.0]]).is_err());
        assert!(InverseCovariance::new(vec![vec![1.0, 2.0], vec![2.0, 1.0]]).is_err());
        assert!(InverseCovariance::new(vec![vec![1.0, 0.0]]).is_err());
        // Semi-definite is allowed.
        assert!(InverseCovariance::new(vec![vec![1.0, 1.0], vec![1.0, 1.0]]).is_ok());
    }

    #[test]
    fn degenerate_inputs() {
        let z = e(&[0.0, 0.0]);
        let c = e(&[2.0, 2.0]);
        assert!(matches!(distance(&Metric::Cosine, &z, &c), Err(Error::DegenerateInput(_))));
        assert!(matches!(distance(&Metric::Correlation, &c, &c), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn dimension_mismatch() {
        let err = distance(&Metric::Euclidean, &e(&[1.0]), &e(&[1.0, 2.0])).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 1, found: 2 }));
    }

    #[test]
    fn embedding_rejects_bad_values() {
        assert!(matches!(Embedding::new(vec![]), Err(Error::EmptyEmbedding)));
        assert!(matches!(Embedding::new(vec![1.0, f64::NAN]), Err(Error::NonFinite { index: 1 })));
    }

    #[test]
    fn normalize_cases() {
        let n = normalize(&e(&[3.0, 4.0])).unwrap();
        assert_eq!(n.as_slice(), &[0.6, 0.8]);
        assert!(n.is_normalized());
        assert_eq!(normalize(&e(&[0.0, 0.0, 1.0])).unwrap().as_slice(), &[0.0, 0.0, 1.0]);
        assert!(matches!(normalize(&e(&[0.0, 0.0])), Err(Error::ZeroVector)));
    }

    #[test]
    fn metric_serde_shape() {
        let s = serde_json::to_string(&Metric::minkowski(3.0).unwrap()).unwrap();
        assert_eq!(s, r#"{"kind":"minkowski","p":3.0}"#);
        let m: Metric = serde_json::from_str(r#"{"kind":"squared_euclidean"}"#).unwrap();
        assert_eq!(m, Metric::SquaredEuclidean);
        let bad: std::result::Result<Metric, _> =
            serde_json::from_str(r#"{"kind":"mahalanobis","inv_cov":[[1,3],[3,1]]}"#);
        assert!(bad.is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn vec3() -> impl Strategy<Value = Vec<f64>> {
            proptest::collection::vec(-10.0..10.0f64, 3)
        }

        proptest! {
            #[test]
            fn symmetric(x in vec3(), y in vec3()) {
                let (x, y) = (e(&x), e(&y));
                for m in all_metrics(3) {
                    match (distance(&m, &x, &y), distance(&m, &y, &x)) {
                        (Ok(a), Ok(b)) => prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0)),
                        (Err(_), Err(_)) => {}
                        _ => prop_assert!(false, "asymmetric error for {}", m),
                    }
                }
            }

            #[test]
            fn euclidean_scale_covariance(x in vec3(), y in vec3(), a in -5.0..5.0f64) {
                let d = distance(&Metric::Euclidean, &e(&x), &e(&y)).unwrap();
                let xs: Vec<f64> = x.iter().map(|v| a * v).collect();
                let ys: Vec<f64> = y.iter().map(|v| a * v).collect();
                let ds = distance(&Metric::Euclidean, &e(&xs), &e(&ys)).unwrap();
                prop_assert!((ds - a.abs() * d).abs() <= 1e-9);
            }

            #[test]
            fn cosine_scale_invariance(x in vec3(), y in vec3(), a in 0.01..10.0f64, b in 0.01..10.0f64) {
                prop_assume!(l2_norm(&x) > 1e-6 && l2_norm(&y) > 1e-6);
                let d = distance(&Metric::Cosine, &e(&x), &e(&y)).unwrap();
                let xs: Vec<f64> = x.iter().map(|v| a * v).collect();
                let ys: Vec<f64> = y.iter().map(|v| b * v).collect();
                let ds = distance(&Metric::Cosine, &e(&xs), &e(&ys)).unwrap();
                prop_assert!((ds - d).abs() <= 1e-9);
            }

            #[test]
            fn triangle_inequality(x in vec3(), y in vec3(), z in vec3()) {
                let (x, y, z) = (e(&x), e(&y), e(&z));
                for m in all_metrics(3).into_iter().filter(Metric::is_true_metric) {
                    let xz = distance(&m, &x, &z).unwrap();
                    let xy = distance(&m, &x, &y).unwrap();
                    let yz = distance(&m, &y, &z).unwrap();
                    prop_assert!(xz <= xy + yz + 1e-9, "{}", m);
                }
            }
        }
    }
}
