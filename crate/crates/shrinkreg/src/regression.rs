//! Downstream OLS of the outcome on shrinkage estimates, with
//! Eicker-Huber-White and one-way cluster-robust variances.
//!
//! Normalization follows the raw `1/n` convention throughout: the robust
//! variance is reported as `omega` with `se = sqrt(omega / n)`, and no
//! degrees-of-freedom or cluster-count correction is applied anywhere.
//! Confidence intervals and p-values use the normal distribution, not
//! Student's t, so small discrepancies against stats packages that apply
//! HC1-style corrections are expected.

use std::collections::HashMap;
use std::hash::Hash;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RegressionError {
    #[error("length mismatch: {left} regressor rows vs {right} outcomes")]
    LengthMismatch { left: usize, right: usize },
    #[error("too few observations: n = {n} with {k} slope coefficients (need n >= k + 2)")]
    TooFewObservations { n: usize, k: usize },
    #[error("singular design")]
    SingularDesign,
    #[error("zero variance regressor")]
    ZeroVarianceRegressor,
    #[error("cluster-robust variance requires at least 2 distinct clusters")]
    SingleCluster,
    #[error("confidence level must lie in (0,1), got {level}")]
    InvalidLevel { level: f64 },
}

/// Which sandwich was used for the reported variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceEstimator {
    Ehw,
    Cluster,
}

/// Output of `ols_fit`: coefficients plus what the sandwich estimators
/// need later.
#[derive(Debug, Clone)]
pub struct OlsFit {
    pub alpha_hat: f64,
    pub beta_hat: f64,
    pub control_coefs: Vec<f64>,
    pub residuals: Vec<f64>,
    pub n: usize,
    /// The regressor of interest, kept for the bivariate sandwich.
    theta: Vec<f64>,
    /// Full design matrix (intercept, theta, controls), kept only when
    /// controls are present.
    design: Option<DMatrix<f64>>,
}

/// Full regression summary for one method.
#[derive(Debug, Clone, Serialize)]
pub struct RegressionReport {
    pub alpha_hat: f64,
    pub beta_hat: f64,
    pub control_coefs: Vec<f64>,
    pub se_beta: f64,
    pub variance_estimator: VarianceEstimator,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: f64,
    pub residuals: Vec<f64>,
    pub n: usize,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// OLS of `y` on an intercept, `theta_hat`, and optional controls
/// (one row of control values per observation).
pub fn ols_fit(
    theta_hat: &[f64],
    y: &[f64],
    controls: Option<&[Vec<f64>]>,
) -> Result<OlsFit, RegressionError> {
    let n = theta_hat.len();
    if y.len() != n {
        return Err(RegressionError::LengthMismatch {
            left: n,
            right: y.len(),
        });
    }
    let n_controls = match controls {
        Some(rows) if !rows.is_empty() && !rows[0].is_empty() => {
            if rows.len() != n {
                return Err(RegressionError::LengthMismatch {
                    left: rows.len(),
                    right: n,
                });
            }
            rows[0].len()
        }
        _ => 0,
    };
    let k = 1 + n_controls;
    if n < k + 2 {
        return Err(RegressionError::TooFewObservations { n, k });
    }

    if n_controls == 0 {
        return ols_bivariate(theta_hat, y);
    }

    let rows = controls.unwrap();
    let cols = 2 + n_controls;
    let mut design = DMatrix::zeros(n, cols);
    for i in 0..n {
        design[(i, 0)] = 1.0;
        design[(i, 1)] = theta_hat[i];
        for (j, c) in rows[i].iter().enumerate() {
            design[(i, 2 + j)] = *c;
        }
    }
    let xtx = design.transpose() * &design;
    let xty = design.transpose() * DVector::from_column_slice(y);
    let chol = Cholesky::new(xtx).ok_or(RegressionError::SingularDesign)?;
    let coefs = chol.solve(&xty);
    let fitted = &design * &coefs;
    let residuals: Vec<f64> = y
        .iter()
        .zip(fitted.iter())
        .map(|(yi, fi)| yi - fi)
        .collect();
    Ok(OlsFit {
        alpha_hat: coefs[0],
        beta_hat: coefs[1],
        control_coefs: coefs.iter().skip(2).copied().collect(),
        residuals,
        n,
        theta: theta_hat.to_vec(),
        design: Some(design),
    })
}

fn ols_bivariate(theta: &[f64], y: &[f64]) -> Result<OlsFit, RegressionError> {
    let n = theta.len();
    let t_mean = mean(theta);
    let y_mean = mean(y);
    let (lo, hi) = theta
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &t| {
            (lo.min(t), hi.max(t))
        });
    let sxx: f64 = theta.iter().map(|t| (t - t_mean) * (t - t_mean)).sum();
    if hi - lo == 0.0 || sxx == 0.0 {
        return Err(RegressionError::SingularDesign);
    }
    let sxy: f64 = theta
        .iter()
        .zip(y)
        .map(|(t, yi)| (t - t_mean) * (yi - y_mean))
        .sum();
    let beta_hat = sxy / sxx;
    let alpha_hat = y_mean - beta_hat * t_mean;
    let residuals = theta
        .iter()
        .zip(y)
        .map(|(t, yi)| yi - alpha_hat - beta_hat * t)
        .collect();
    Ok(OlsFit {
        alpha_hat,
        beta_hat,
        control_coefs: Vec::new(),
        residuals,
        n,
        theta: theta.to_vec(),
        design: None,
    })
}

/// Eicker-Huber-White variance for the slope in the bivariate regression:
/// `omega = [(1/n) Σ (theta_i - mean)^2 u_i^2] / [(1/n) Σ (theta_i - mean)^2]^2`,
/// with `se = sqrt(omega / n)`.
pub fn ehw_omega(theta_hat: &[f64], residuals: &[f64]) -> Result<f64, RegressionError> {
    if theta_hat.len() != residuals.len() {
        return Err(RegressionError::LengthMismatch {
            left: theta_hat.len(),
            right: residuals.len(),
        });
    }
    let n = theta_hat.len() as f64;
    let t_mean = mean(theta_hat);
    let sxx: f64 = theta_hat.iter().map(|t| (t - t_mean) * (t - t_mean)).sum();
    if sxx == 0.0 {
        return Err(RegressionError::ZeroVarianceRegressor);
    }
    let score_sq: f64 = theta_hat
        .iter()
        .zip(residuals)
        .map(|(t, u)| {
            let s = (t - t_mean) * u;
            s * s
        })
        .sum();
    Ok((score_sq / n) / ((sxx / n) * (sxx / n)))
}

/// One-way cluster-robust (Liang-Zeger) variance for the slope, same
/// normalization as `ehw_omega`: scores are summed within cluster before
/// squaring, and no small-sample correction is applied. With every
/// observation in its own cluster this reduces to `ehw_omega` exactly.
pub fn cluster_omega<L: Eq + Hash>(
    theta_hat: &[f64],
    residuals: &[f64],
    clusters: &[L],
) -> Result<f64, RegressionError> {
    if theta_hat.len() != residuals.len() || theta_hat.len() != clusters.len() {
        return Err(RegressionError::LengthMismatch {
            left: theta_hat.len(),
            right: residuals.len().min(clusters.len()),
        });
    }
    let n = theta_hat.len() as f64;
    let t_mean = mean(theta_hat);
    let sxx: f64 = theta_hat.iter().map(|t| (t - t_mean) * (t - t_mean)).sum();
    if sxx == 0.0 {
        return Err(RegressionError::ZeroVarianceRegressor);
    }
    let group_of = group_indices(clusters);
    let n_groups = group_of.iter().copied().max().map_or(0, |g| g + 1);
    if n_groups < 2 {
        return Err(RegressionError::SingleCluster);
    }
    let mut score_sums = vec![0.0_f64; n_groups];
    for ((t, u), &g) in theta_hat.iter().zip(residuals).zip(&group_of) {
        score_sums[g] += (t - t_mean) * u;
    }
    let score_sq: f64 = score_sums.iter().map(|s| s * s).sum();
    Ok((score_sq / n) / ((sxx / n) * (sxx / n)))
}

/// Maps each row to a dense group index in first-appearance order.
fn group_indices<L: Eq + Hash>(labels: &[L]) -> Vec<usize> {
    let mut ids: HashMap<&L, usize> = HashMap::new();
    labels
        .iter()
        .map(|l| {
            let next = ids.len();
            *ids.entry(l).or_insert(next)
        })
        .collect()
}

impl OlsFit {
    /// EHW omega for the slope. Bivariate fits use the closed form;
    /// fits with controls use the full sandwich and extract the slope
    /// entry.
    pub fn omega_ehw(&self) -> Result<f64, RegressionError> {
        match &self.design {
            None => ehw_omega(&self.theta, &self.residuals),
            Some(x) => self.sandwich_beta_omega(x, None),
        }
    }

    /// Cluster-robust omega for the slope, same dispatch as `omega_ehw`.
    pub fn omega_cluster<L: Eq + Hash>(&self, clusters: &[L]) -> Result<f64, RegressionError> {
        if clusters.len() != self.n {
            return Err(RegressionError::LengthMismatch {
                left: clusters.len(),
                right: self.n,
            });
        }
        match &self.design {
            None => cluster_omega(&self.theta, &self.residuals, clusters),
            Some(x) => {
                let groups = group_indices(clusters);
                let n_groups = groups.iter().copied().max().map_or(0, |g| g + 1);
                if n_groups < 2 {
                    return Err(RegressionError::SingleCluster);
                }
                self.sandwich_beta_omega(x, Some((&groups, n_groups)))
            }
        }
    }

    /// `n * [ (X'X)^{-1} M (X'X)^{-1} ]_{beta,beta}` where `M` is the
    /// outer-product "meat": per-observation scores for EHW, within-cluster
    /// score sums for the clustered variant.
    fn sandwich_beta_omega(
        &self,
        design: &DMatrix<f64>,
        groups: Option<(&[usize], usize)>,
    ) -> Result<f64, RegressionError> {
        let n = self.n;
        let k = design.ncols();
        let xtx = design.transpose() * design;
        let xtx_inv = xtx.try_inverse().ok_or(RegressionError::SingularDesign)?;
        let meat = match groups {
            None => {
                let mut m = DMatrix::zeros(k, k);
                for i in 0..n {
                    let xi = design.row(i).transpose() * self.residuals[i];
                    m += &xi * xi.transpose();
                }
                m
            }
            Some((group_of, n_groups)) => {
                let mut sums = vec![DVector::zeros(k); n_groups];
                for i in 0..n {
                    sums[group_of[i]] += design.row(i).transpose() * self.residuals[i];
                }
                let mut m = DMatrix::zeros(k, k);
                for s in &sums {
                    m += s * s.transpose();
                }
                m
            }
        };
        let cov = &xtx_inv * meat * &xtx_inv;
        Ok(n as f64 * cov[(1, 1)])
    }
}

/// Builds the report: `ci = beta_hat ± z_{1-level/2} * sqrt(omega/n)`,
/// two-sided p-value from the normal distribution.
pub fn make_report(
    fit: &OlsFit,
    omega: f64,
    variance_estimator: VarianceEstimator,
    level: f64,
) -> Result<RegressionReport, RegressionError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(RegressionError::InvalidLevel { level });
    }
    let se_beta = (omega / fit.n as f64).sqrt();
    let z = normal_quantile(1.0 - level / 2.0);
    let (ci_low, ci_high, p_value) = if se_beta > 0.0 {
        let t = fit.beta_hat / se_beta;
        (
            fit.beta_hat - z * se_beta,
            fit.beta_hat + z * se_beta,
            two_sided_p(t),
        )
    } else {
        let p = if fit.beta_hat == 0.0 { 1.0 } else { 0.0 };
        (fit.beta_hat, fit.beta_hat, p)
    };
    Ok(RegressionReport {
        alpha_hat: fit.alpha_hat,
        beta_hat: fit.beta_hat,
        control_coefs: fit.control_coefs.clone(),
        se_beta,
        variance_estimator,
        ci_low,
        ci_high,
        p_value,
        residuals: fit.residuals.clone(),
        n: fit.n,
    })
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Two-sided normal p-value for a t-ratio, via the complementary error
/// function for tail accuracy.
pub fn two_sided_p(t: f64) -> f64 {
    libm::erfc(t.abs() / std::f64::consts::SQRT_2)
}

/// Inverse standard normal CDF: Acklam's rational approximation refined
/// with one Halley step against `normal_cdf`, accurate to well below 1e-9
/// over (0,1).
pub fn normal_quantile(p: f64) -> f64 {
    if p.is_nan() {
        return f64::NAN;
    }
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }

    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.38357751867269e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -((((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0))
    };

    // Halley refinement of Phi(x) = p.
    let e = normal_cdf(x) - p;
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (x * x / 2.0).exp();
    x - u / (1.0 + x * u / 2.0)
}
