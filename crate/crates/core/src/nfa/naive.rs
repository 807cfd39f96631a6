//! The background (naive) model H0: a centred Gaussian over the K feature
//! channels of every pixel.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Variances below this are floored and the model is flagged degenerate.
pub const VARIANCE_FLOOR: f64 = 1e-12;
/// Ridge added to a dense covariance, relative to its mean diagonal.
pub const DENSE_SHRINKAGE: f64 = 1e-4;

/// Which structure the covariance is assumed to have.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceForm {
    /// `Σ = λ I`
    Spherical,
    /// `Σ = λ Δ`, `Δ` diagonal with unit determinant.
    #[serde(rename = "elliptical")]
    IndependentElliptical,
    /// Full symmetric positive-definite `Σ`.
    Dense,
}

impl CovarianceForm {
    pub const ALL: [CovarianceForm; 3] = [
        CovarianceForm::Spherical,
        CovarianceForm::IndependentElliptical,
        CovarianceForm::Dense,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CovarianceForm::Spherical => "spherical",
            CovarianceForm::IndependentElliptical => "elliptical",
            CovarianceForm::Dense => "dense",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "spherical" => Ok(CovarianceForm::Spherical),
            "elliptical" => Ok(CovarianceForm::IndependentElliptical),
            "dense" => Ok(CovarianceForm::Dense),
            other => Err(Error::param(format!(
                "unknown covariance form `{other}` (expected spherical|elliptical|dense)"
            ))),
        }
    }

    pub fn code(self) -> f64 {
        match self {
            CovarianceForm::Spherical => 0.0,
            CovarianceForm::IndependentElliptical => 1.0,
            CovarianceForm::Dense => 2.0,
        }
    }

    pub fn from_code(code: f64) -> Result<Self> {
        match code as i64 {
            0 => Ok(CovarianceForm::Spherical),
            1 => Ok(CovarianceForm::IndependentElliptical),
            2 => Ok(CovarianceForm::Dense),
            _ => Err(Error::Format(format!("bad covariance form code {code}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Covariance {
    Spherical {
        lambda: f64,
    },
    IndependentElliptical {
        lambda: f64,
        delta: Vec<f64>,
    },
    Dense {
        sigma: DMatrix<f64>,
        /// Lower Cholesky factor of `sigma`.
        chol: DMatrix<f64>,
        precision: DMatrix<f64>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct NaiveModel {
    pub covariance: Covariance,
    /// Per-channel location.
    pub center: Vec<f64>,
    /// Number of tests (pixels of the analysed map).
    pub n_test: usize,
    /// Set when a variance had to be floored.
    pub degenerate: bool,
}

impl NaiveModel {
    pub fn spherical(center: Vec<f64>, lambda: f64, n_test: usize) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(Error::param(format!("spherical scale must be positive, got {lambda}")));
        }
        Self::checked(Covariance::Spherical { lambda }, center, n_test)
    }

    pub fn independent(center: Vec<f64>, lambda: f64, delta: Vec<f64>, n_test: usize) -> Result<Self> {
        if !(lambda > 0.0) || delta.iter().any(|&d| !(d > 0.0)) {
            return Err(Error::param("elliptical scales must be positive"));
        }
        if delta.len() != center.len() {
            return Err(Error::param(format!(
                "{} diagonal entries for {} channels",
                delta.len(),
                center.len()
            )));
        }
        let log_det: f64 = delta.iter().map(|d| d.ln()).sum();
        if (log_det.exp() - 1.0).abs() > 1e-9 {
            return Err(Error::param(format!(
                "diagonal shape matrix must have unit determinant, got {}",
                log_det.exp()
            )));
        }
        Self::checked(Covariance::IndependentElliptical { lambda, delta }, center, n_test)
    }

    pub fn dense(center: Vec<f64>, sigma: DMatrix<f64>, n_test: usize) -> Result<Self> {
        let k = center.len();
        if sigma.nrows() != k || sigma.ncols() != k {
            return Err(Error::param(format!(
                "covariance is {}x{}, expected {k}x{k}",
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        let chol = sigma.clone().cholesky().ok_or_else(|| {
            Error::Numerical("covariance is not positive definite".to_string())
        })?;
        let precision = chol.inverse();
        let l = chol.unpack();
        Self::checked(
            Covariance::Dense {
                sigma,
                chol: l,
                precision,
            },
            center,
            n_test,
        )
    }

    fn checked(covariance: Covariance, center: Vec<f64>, n_test: usize) -> Result<Self> {
        if n_test == 0 {
            return Err(Error::param("number of tests must be at least 1"));
        }
        if center.is_empty() {
            return Err(Error::param("naive model needs at least one channel"));
        }
        Ok(NaiveModel {
            covariance,
            center,
            n_test,
            degenerate: false,
        })
    }

    pub fn channels(&self) -> usize {
        self.center.len()
    }

    pub fn form(&self) -> CovarianceForm {
        match self.covariance {
            Covariance::Spherical { .. } => CovarianceForm::Spherical,
            Covariance::IndependentElliptical { .. } => CovarianceForm::IndependentElliptical,
            Covariance::Dense { .. } => CovarianceForm::Dense,
        }
    }

    /// `½ rᵀ Σ⁻¹ r` for a residual `r = x - center`.
    pub fn half_mahalanobis(&self, r: &[f64]) -> f64 {
        match &self.covariance {
            Covariance::Spherical { lambda } => 0.5 * r.iter().map(|v| v * v).sum::<f64>() / lambda,
            Covariance::IndependentElliptical { lambda, delta } => {
                0.5 * r
                    .iter()
                    .zip(delta)
                    .map(|(v, d)| v * v / (lambda * d))
                    .sum::<f64>()
            }
            Covariance::Dense { chol, .. } => {
                // forward substitution L y = r, u = ½ |y|²
                let k = r.len();
                let mut y = vec![0.0; k];
                let mut acc = 0.0;
                for i in 0..k {
                    let mut s = r[i];
                    for j in 0..i {
                        s -= chol[(i, j)] * y[j];
                    }
                    y[i] = s / chol[(i, i)];
                    acc += y[i] * y[i];
                }
                0.5 * acc
            }
        }
    }

    /// Writes `Σ⁻¹ r` (the gradient of the half Mahalanobis form) into `out`.
    pub fn precision_times(&self, r: &[f64], out: &mut [f64]) {
        match &self.covariance {
            Covariance::Spherical { lambda } => {
                for (o, v) in out.iter_mut().zip(r) {
                    *o = v / lambda;
                }
            }
            Covariance::IndependentElliptical { lambda, delta } => {
                for ((o, v), d) in out.iter_mut().zip(r).zip(delta) {
                    *o = v / (lambda * d);
                }
            }
            Covariance::Dense { precision, .. } => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = (0..r.len()).map(|j| precision[(i, j)] * r[j]).sum();
                }
            }
        }
    }

    /// Returns a copy whose center and covariance describe features scaled
    /// by `c`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        let center: Vec<f64> = self.center.iter().map(|v| v * c).collect();
        let c2 = c * c;
        let mut m = match &self.covariance {
            Covariance::Spherical { lambda } => NaiveModel::spherical(center, lambda * c2, self.n_test)?,
            Covariance::IndependentElliptical { lambda, delta } => {
                NaiveModel::independent(center, lambda * c2, delta.clone(), self.n_test)?
            }
            Covariance::Dense { sigma, .. } => NaiveModel::dense(center, sigma * c2, self.n_test)?,
        };
        m.degenerate = self.degenerate;
        Ok(m)
    }
}

fn median(values: &mut [f64]) -> f64 {
    let n = values.len();
    let mid = n / 2;
    let (_, upper, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let lower = values[..mid]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

/// Estimates H0 from a batch of feature maps (n, K, h, w).
///
/// The center is the per-channel median over every pixel of the batch; the
/// covariance is the sample covariance of the residuals. The number of tests
/// is the pixel count of one map, `h * w`.
pub fn estimate_naive_model(features: &Tensor, form: CovarianceForm) -> Result<NaiveModel> {
    let s = features.shape();
    let k = s.c;
    let samples = s.n * s.plane();
    if k == 0 {
        return Err(Error::param("cannot estimate a naive model over zero channels"));
    }
    if samples < k + 1 {
        return Err(Error::param(format!(
            "naive model over {k} channels needs at least {} samples, got {samples}",
            k + 1
        )));
    }
    let plane = s.plane();
    let channel = |c: usize| -> Vec<f64> {
        let mut v = Vec::with_capacity(samples);
        for n in 0..s.n {
            v.extend_from_slice(features.plane(n, c));
        }
        v
    };
    let mut center = vec![0.0; k];
    let mut residuals: Vec<Vec<f64>> = Vec::with_capacity(k);
    for (c, slot) in center.iter_mut().enumerate() {
        let mut values = channel(c);
        let mut scratch = values.clone();
        *slot = median(&mut scratch);
        for v in &mut values {
            *v -= *slot;
        }
        residuals.push(values);
    }
    let means: Vec<f64> = residuals
        .iter()
        .map(|r| r.iter().sum::<f64>() / samples as f64)
        .collect();
    let denom = (samples - 1) as f64;
    let cov = |i: usize, j: usize| -> f64 {
        residuals[i]
            .iter()
            .zip(&residuals[j])
            .map(|(a, b)| (a - means[i]) * (b - means[j]))
            .sum::<f64>()
            / denom
    };

    let mut degenerate = false;
    let mut variances: Vec<f64> = (0..k).map(|c| cov(c, c)).collect();
    for v in &mut variances {
        if !(*v >= VARIANCE_FLOOR) {
            *v = VARIANCE_FLOOR;
            degenerate = true;
        }
    }
    let n_test = plane.max(1);

    let mut model = match form {
        CovarianceForm::Spherical => {
            let lambda = variances.iter().sum::<f64>() / k as f64;
            NaiveModel::spherical(center, lambda, n_test)?
        }
        CovarianceForm::IndependentElliptical => {
            let mean_log = variances.iter().map(|v| v.ln()).sum::<f64>() / k as f64;
            let lambda = mean_log.exp();
            let mut delta: Vec<f64> = variances.iter().map(|v| v / lambda).collect();
            // renormalize so the product is one to rounding
            let log_det: f64 = delta.iter().map(|d| d.ln()).sum();
            let fix = (-log_det / k as f64).exp();
            delta.iter_mut().for_each(|d| *d *= fix);
            NaiveModel::independent(center, lambda, delta, n_test)?
        }
        CovarianceForm::Dense => {
            let mut sigma = DMatrix::from_fn(k, k, |i, j| if i == j { 0.0 } else { cov(i, j) });
            for (i, v) in variances.iter().enumerate() {
                sigma[(i, i)] = *v;
            }
            let ridge = DENSE_SHRINKAGE * variances.iter().sum::<f64>() / k as f64;
            for i in 0..k {
                sigma[(i, i)] += ridge;
            }
            NaiveModel::dense(center, sigma, n_test)?
        }
    };
    model.degenerate = degenerate;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_odd_and_even() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 3.0, 2.0]), 2.5);
    }

    #[test]
    fn constant_features_are_flagged() {
        let t = Tensor::full([1, 3, 4, 4], 2.5);
        for form in CovarianceForm::ALL {
            let m = estimate_naive_model(&t, form).unwrap();
            assert!(m.degenerate);
            assert_eq!(m.center, vec![2.5; 3]);
            assert_eq!(m.n_test, 16);
        }
    }

    #[test]
    fn too_few_samples_rejected() {
        let t = Tensor::zeros([1, 4, 2, 2]);
        assert!(estimate_naive_model(&t, CovarianceForm::Spherical).is_err());
    }

    #[test]
    fn elliptical_determinant_is_one() {
        let t = Tensor::from_fn([2, 3, 5, 5], |n, c, y, x| {
            ((n * 31 + c * 17 + y * 7 + x * 3) % 13) as f64 * (c as f64 + 0.5)
        });
        let m = estimate_naive_model(&t, CovarianceForm::IndependentElliptical).unwrap();
        let Covariance::IndependentElliptical { delta, .. } = &m.covariance else {
            panic!("wrong form")
        };
        let det: f64 = delta.iter().product();
        assert!((det - 1.0).abs() < 1e-9);
    }

    #[test]
    fn forms_agree_on_diagonal_mahalanobis() {
        let center = vec![0.0, 0.0];
        let sph = NaiveModel::spherical(center.clone(), 2.0, 1).unwrap();
        let ell = NaiveModel::independent(center.clone(), 2.0, vec![1.0, 1.0], 1).unwrap();
        let den = NaiveModel::dense(center, DMatrix::from_diagonal_element(2, 2, 2.0), 1).unwrap();
        let r = [1.0, -3.0];
        let u = sph.half_mahalanobis(&r);
        assert!((u - 2.5).abs() < 1e-15);
        assert!((ell.half_mahalanobis(&r) - u).abs() < 1e-15);
        assert!((den.half_mahalanobis(&r) - u).abs() < 1e-14);
    }

    #[test]
    fn non_pd_dense_rejected() {
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            NaiveModel::dense(vec![0.0, 0.0], sigma, 1),
            Err(Error::Numerical(_))
        ));
    }
}
