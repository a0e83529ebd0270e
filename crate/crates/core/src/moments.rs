//! First and second moment algebra.
//!
//! Every propagation step in the engine reduces to one of the operations
//! here: transport through an affine map, products of independent
//! quantities, and expectations of quadratic forms.

use std::borrow::Cow;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use schemars::{JsonSchema, Schema, SchemaGenerator};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{IdssError, Result};

/// Slack on `E[Y^2] >= E[Y]^2`.
pub const VARIANCE_SLACK: f64 = 1e-9;
/// Largest accepted asymmetry `|C - C^T|`.
pub const SYMMETRY_TOLERANCE: f64 = 1e-9;
/// Negative eigenvalues above `-PSD_TOLERANCE * (1 + trace)` are clipped.
pub const PSD_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarMoments {
    pub mean: f64,
    pub second_raw: f64,
}

impl ScalarMoments {
    pub fn new(mean: f64, second_raw: f64) -> Result<Self> {
        if !mean.is_finite() || !second_raw.is_finite() {
            return Err(IdssError::invalid("moments must be finite"));
        }
        let slack = VARIANCE_SLACK * (1.0 + mean * mean);
        if second_raw < mean * mean - slack {
            return Err(IdssError::invalid(format!(
                "second moment {second_raw} is below squared mean {}",
                mean * mean
            )));
        }
        Ok(Self { mean, second_raw })
    }

    pub fn from_mean_variance(mean: f64, variance: f64) -> Result<Self> {
        if variance < 0.0 {
            return Err(IdssError::invalid(format!("negative variance {variance}")));
        }
        Self::new(mean, mean * mean + variance)
    }

    pub fn constant(value: f64) -> Self {
        Self {
            mean: value,
            second_raw: value * value,
        }
    }

    pub fn variance(&self) -> f64 {
        (self.second_raw - self.mean * self.mean).max(0.0)
    }
}

/// Mean vector and covariance matrix of a random vector.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentVector {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl MomentVector {
    /// Validates symmetry and positive semi-definiteness. Small negative
    /// eigenvalues from accumulated rounding are clipped to zero.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if cov.nrows() != n || cov.ncols() != n {
            return Err(IdssError::shape(format!(
                "mean has length {n} but covariance is {}x{}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if mean.iter().chain(cov.iter()).any(|x| !x.is_finite()) {
            return Err(IdssError::invalid("moment vector entries must be finite"));
        }
        let asym = (&cov - cov.transpose()).amax();
        if asym > SYMMETRY_TOLERANCE * (1.0 + cov.amax()) {
            return Err(IdssError::invalid(format!("covariance asymmetric by {asym}")));
        }
        let cov = clip_psd(cov)?;
        Ok(Self { mean, cov })
    }

    pub fn deterministic(mean: DVector<f64>) -> Self {
        let n = mean.len();
        Self {
            mean,
            cov: DMatrix::zeros(n, n),
        }
    }

    pub fn scalar(m: ScalarMoments) -> Self {
        Self {
            mean: DVector::from_element(1, m.mean),
            cov: DMatrix::from_element(1, 1, m.variance()),
        }
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// `E[Y Y^T] = m m^T + C`.
    pub fn second_raw(&self) -> DMatrix<f64> {
        &self.mean * self.mean.transpose() + &self.cov
    }

    pub fn component(&self, i: usize) -> ScalarMoments {
        ScalarMoments {
            mean: self.mean[i],
            second_raw: self.mean[i] * self.mean[i] + self.cov[(i, i)],
        }
    }
}

/// Symmetrise and clip small negative eigenvalues, rejecting genuinely
/// indefinite matrices.
pub fn clip_psd(cov: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = cov.nrows();
    if n == 0 {
        return Ok(cov);
    }
    let sym = (&cov + cov.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym.clone());
    let floor = -PSD_TOLERANCE * (1.0 + sym.trace().abs());
    let min = eig.eigenvalues.min();
    if min < floor {
        return Err(IdssError::invalid(format!(
            "covariance is not positive semi-definite (eigenvalue {min})"
        )));
    }
    if min >= 0.0 {
        return Ok(sym);
    }
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    let out = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    Ok((&out + out.transpose()) * 0.5)
}

/// Moments of `A X + b`.
pub fn linear_map(a: &DMatrix<f64>, b: &DVector<f64>, m: &MomentVector) -> Result<MomentVector> {
    if a.ncols() != m.len() || a.nrows() != b.len() {
        return Err(IdssError::shape(format!(
            "map is {}x{} with offset {} applied to length {}",
            a.nrows(),
            a.ncols(),
            b.len(),
            m.len()
        )));
    }
    let mean = a * &m.mean + b;
    let cov = a * &m.cov * a.transpose();
    MomentVector::new(mean, (&cov + cov.transpose()) * 0.5)
}

/// Moments of `X Y` for independent scalars.
pub fn product_independent(x: ScalarMoments, y: ScalarMoments) -> ScalarMoments {
    ScalarMoments {
        mean: x.mean * y.mean,
        second_raw: x.second_raw * y.second_raw,
    }
}

/// `E[X^T C X] = sum_ij C_ij (m_i m_j + S_ij)`.
pub fn quadratic_form_expectation(m: &MomentVector, c: &DMatrix<f64>) -> Result<f64> {
    let n = m.len();
    if c.nrows() != n || c.ncols() != n {
        return Err(IdssError::shape(format!(
            "{}x{} form on a vector of length {n}",
            c.nrows(),
            c.ncols()
        )));
    }
    Ok(c.component_mul(&m.second_raw()).sum())
}

/// Moments of `Y = X^T theta + v` with `X` independent of the regression
/// vector `theta ~ (a, C)` and `E[v^2] = noise_mean`. `extra_quadratic`
/// adds a further `E[X^T Q X]` to the variance, which is how an evolution
/// covariance enters.
pub fn regression_output_moments(
    x: &MomentVector,
    a_theta: &DVector<f64>,
    c_theta: &DMatrix<f64>,
    noise_mean: f64,
    extra_quadratic: &DMatrix<f64>,
) -> Result<ScalarMoments> {
    let n = x.len();
    if a_theta.len() != n {
        return Err(IdssError::shape(format!(
            "regression vector of length {} on {n} regressors",
            a_theta.len()
        )));
    }
    if !(noise_mean >= 0.0) {
        return Err(IdssError::invalid(format!("negative noise mean {noise_mean}")));
    }
    let mean = x.mean.dot(a_theta);
    let spread = (a_theta.transpose() * &x.cov * a_theta)[(0, 0)];
    let q = c_theta + extra_quadratic;
    let variance = spread + quadratic_form_expectation(x, &q)? + noise_mean;
    ScalarMoments::from_mean_variance(mean, variance.max(0.0))
}

#[derive(Serialize, Deserialize, JsonSchema)]
#[schemars(rename = "MomentVector")]
struct MomentVectorRepr {
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
}

impl JsonSchema for MomentVector {
    fn schema_name() -> Cow<'static, str> {
        MomentVectorRepr::schema_name()
    }

    fn json_schema(generator: &mut SchemaGenerator) -> Schema {
        MomentVectorRepr::json_schema(generator)
    }
}

impl Serialize for MomentVector {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        MomentVectorRepr {
            mean: self.mean.iter().copied().collect(),
            cov: matrix_rows(&self.cov),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for MomentVector {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = MomentVectorRepr::deserialize(d)?;
        let cov = matrix_from_rows(&repr.cov).map_err(serde::de::Error::custom)?;
        MomentVector::new(DVector::from_vec(repr.mean), cov).map_err(serde::de::Error::custom)
    }
}

pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != c) {
        return Err(IdssError::shape("ragged matrix rows"));
    }
    Ok(DMatrix::from_row_iterator(n, c, rows.iter().flatten().copied()))
}

/// Serde adapters storing matrices as nested row-major arrays.
pub mod serde_matrix {
    use super::*;

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
        matrix_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        matrix_from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

pub mod serde_vector {
    use super::*;

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<DVector<f64>, D::Error> {
        Ok(DVector::from_vec(Vec::<f64>::deserialize(d)?))
    }
}
