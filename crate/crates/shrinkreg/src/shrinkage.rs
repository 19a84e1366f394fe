//! Variance-component estimation and the linear shrinkage estimators.
//!
//! All estimators share the form `theta_hat_i = w_i * xbar_i + (1 - w_i) * xbar`,
//! pulling each unit mean toward the grand mean. They differ in how the
//! weight models the signal-to-noise ratio:
//!
//! * FE — no shrinkage, `w_i = 1`.
//! * HO — weight varies only through `J_i`, using a pooled within variance
//!   and a split-half signal variance.
//! * HE — weight uses the unit-specific within variance `sigma2_i` and the
//!   bias-corrected across-unit variance `v_hat`.
//! * CW — a single common weight, either the classical errors-in-variables
//!   bias-correction ratio (BC) or a split-sample instrumental-variables
//!   slope (IV).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::panel::{grand_mean, unit_means, PanelData};

/// Shrinkage estimator family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Fe,
    Ho,
    He,
    CwBc,
    CwIv,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Fe,
        Method::Ho,
        Method::He,
        Method::CwBc,
        Method::CwIv,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Fe => "fe",
            Method::Ho => "ho",
            Method::He => "he",
            Method::CwBc => "cw_bc",
            Method::CwIv => "cw_iv",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fe" => Ok(Method::Fe),
            "ho" => Ok(Method::Ho),
            "he" => Ok(Method::He),
            "cw_bc" | "cw-bc" | "cwbc" => Ok(Method::CwBc),
            "cw_iv" | "cw-iv" | "cwiv" => Ok(Method::CwIv),
            other => Err(format!("unknown method {other:?}")),
        }
    }
}

/// Common-weight flavor selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CwFlavor {
    /// Bias-correction weight `v_hat / var_n(xbar_i)`.
    Bc,
    /// Split-sample IV weight `cov(xbar_{i,1}, xbar_{i,2}) / var(xbar_{i,1})`.
    Iv,
}

#[derive(Debug, Error)]
pub enum ShrinkageError {
    #[error(
        "insufficient measurements for within-variance (unit {id:?} has J = {j}, need J >= 2)"
    )]
    InsufficientMeasurements { id: String, j: usize },
    #[error("cannot split unit {id:?} with J = {j} < 2")]
    CannotSplit { id: String, j: usize },
    #[error("non-positive signal variance: HO undefined (σ̂_θ² = {value} ≤ 0)")]
    NonPositiveSignalVariance { value: f64 },
    #[error("non-positive V̂: HE undefined (V̂ = {value} ≤ 0)")]
    NonPositiveVHat { value: f64 },
    #[error("CW weight undefined ({detail})")]
    CwWeightUndefined { detail: String },
}

/// Variance components of a panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceComponents {
    /// Unit-level within variances `sigma2_i`, divisor `J_i - 1`.
    pub sigma2_i: Vec<f64>,
    /// Pooled within variance, divisor `sum_i (J_i - 1)`.
    pub sigma2_pooled: f64,
    /// Split-half signal variance (a covariance; may be <= 0).
    pub sigma2_theta: f64,
    /// Across-unit variance net of estimation noise (may be <= 0).
    pub v_hat: f64,
    /// `sqrt(n) * mean(1 / J_i)`, the measurement-to-sampling error ratio.
    pub kappa_hat: f64,
}

/// Weights and estimates produced by one shrinkage method.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShrinkageResult {
    pub method: Method,
    pub weights: Vec<f64>,
    pub estimates: Vec<f64>,
    /// The grand mean the estimates are shrunk toward.
    pub target: f64,
}

impl ShrinkageResult {
    /// Builds estimates as exactly `w * xbar_i + (1 - w) * target`.
    fn from_weights(method: Method, weights: Vec<f64>, means: &[f64], target: f64) -> Self {
        let estimates = weights
            .iter()
            .zip(means)
            .map(|(&w, &m)| w * m + (1.0 - w) * target)
            .collect();
        ShrinkageResult {
            method,
            weights,
            estimates,
            target,
        }
    }
}

/// Unbiased sample variance with divisor `J - 1`.
pub fn sigma2_within(measurements: &[f64]) -> Result<f64, ShrinkageError> {
    let j = measurements.len();
    if j < 2 {
        return Err(ShrinkageError::InsufficientMeasurements {
            id: String::new(),
            j,
        });
    }
    let mean = measurements.iter().sum::<f64>() / j as f64;
    let ss: f64 = measurements.iter().map(|x| (x - mean) * (x - mean)).sum();
    Ok(ss / (j - 1) as f64)
}

/// Means of the first `ceil(J/2)` measurements and of the remainder, in
/// stored order.
pub fn split_half_means(measurements: &[f64]) -> Result<(f64, f64), ShrinkageError> {
    let j = measurements.len();
    if j < 2 {
        return Err(ShrinkageError::CannotSplit {
            id: String::new(),
            j,
        });
    }
    let first_len = j.div_ceil(2);
    let (first, second) = measurements.split_at(first_len);
    Ok((
        first.iter().sum::<f64>() / first.len() as f64,
        second.iter().sum::<f64>() / second.len() as f64,
    ))
}

pub(crate) fn per_unit_sigma2(p: &PanelData) -> Result<Vec<f64>, ShrinkageError> {
    p.units()
        .iter()
        .map(|u| {
            sigma2_within(&u.measurements).map_err(|_| ShrinkageError::InsufficientMeasurements {
                id: u.id.clone(),
                j: u.j(),
            })
        })
        .collect()
}

/// Mean squared deviation of the unit means around the grand mean
/// (divisor `n`). This is the first term of `v_hat` and the denominator of
/// the CW bias-correction weight.
fn mean_sq_dev(means: &[f64], target: f64) -> f64 {
    means
        .iter()
        .map(|m| (m - target) * (m - target))
        .sum::<f64>()
        / means.len() as f64
}

/// Sample covariance with divisor `n - 1`.
fn sample_cov(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    xs.iter()
        .zip(ys)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum::<f64>()
        / (n - 1.0)
}

/// Across-unit variance of the means minus the estimation-noise
/// correction:
/// `(1/n) Σ (xbar_k - xbar)² - ((n-1)/n²) Σ sigma2_k / J_k`.
///
/// Returned as-is; a negative value is meaningful (it signals that the
/// observed dispersion is smaller than the noise floor) and is never
/// clamped here.
pub fn v_hat(p: &PanelData) -> Result<f64, ShrinkageError> {
    let sigma2 = per_unit_sigma2(p)?;
    Ok(v_hat_given(p, &sigma2))
}

fn v_hat_given(p: &PanelData, sigma2: &[f64]) -> f64 {
    let n = p.n() as f64;
    let means = unit_means(p);
    let target = grand_mean(p);
    let correction: f64 = sigma2
        .iter()
        .zip(p.units())
        .map(|(s, u)| s / u.j() as f64)
        .sum::<f64>()
        * (n - 1.0)
        / (n * n);
    mean_sq_dev(&means, target) - correction
}

/// Pooled within variance and split-half signal variance for HO:
/// `sigma2_pooled = Σ_i Σ_j (x_ij - xbar_i)² / Σ_i (J_i - 1)` and
/// `sigma2_theta = cov` (divisor `n - 1`) across units of the two
/// split-half means.
pub fn ho_components(p: &PanelData) -> Result<(f64, f64), ShrinkageError> {
    let mut ss = 0.0;
    let mut dof = 0.0;
    let mut first_halves = Vec::with_capacity(p.n());
    let mut second_halves = Vec::with_capacity(p.n());
    for u in p.units() {
        if u.j() < 2 {
            return Err(ShrinkageError::CannotSplit {
                id: u.id.clone(),
                j: u.j(),
            });
        }
        let mean = u.mean();
        ss += u
            .measurements
            .iter()
            .map(|x| (x - mean) * (x - mean))
            .sum::<f64>();
        dof += (u.j() - 1) as f64;
        let (h1, h2) = split_half_means(&u.measurements)?;
        first_halves.push(h1);
        second_halves.push(h2);
    }
    let sigma2_pooled = ss / dof;
    let sigma2_theta = sample_cov(&first_halves, &second_halves);
    Ok((sigma2_pooled, sigma2_theta))
}

/// `sqrt(n) * (1/n) Σ 1/J_i`.
pub fn kappa_hat(p: &PanelData) -> f64 {
    let n = p.n() as f64;
    let mean_inv_j: f64 = p.units().iter().map(|u| 1.0 / u.j() as f64).sum::<f64>() / n;
    n.sqrt() * mean_inv_j
}

/// All variance components in one pass. Requires `J_i >= 2` everywhere.
pub fn variance_components(p: &PanelData) -> Result<VarianceComponents, ShrinkageError> {
    let sigma2_i = per_unit_sigma2(p)?;
    let (sigma2_pooled, sigma2_theta) = ho_components(p)?;
    let v = v_hat_given(p, &sigma2_i);
    Ok(VarianceComponents {
        sigma2_i,
        sigma2_pooled,
        sigma2_theta,
        v_hat: v,
        kappa_hat: kappa_hat(p),
    })
}

/// Unshrunk fixed-effects estimator: the unit means themselves.
pub fn estimate_fe(p: &PanelData) -> ShrinkageResult {
    let means = unit_means(p);
    let target = grand_mean(p);
    ShrinkageResult::from_weights(Method::Fe, vec![1.0; p.n()], &means, target)
}

/// Homoskedastic individual-weight shrinkage:
/// `w_i = sigma2_theta / (sigma2_pooled / J_i + sigma2_theta)`.
pub fn estimate_ho(p: &PanelData) -> Result<ShrinkageResult, ShrinkageError> {
    let (sigma2_pooled, sigma2_theta) = ho_components(p)?;
    if sigma2_theta <= 0.0 {
        return Err(ShrinkageError::NonPositiveSignalVariance {
            value: sigma2_theta,
        });
    }
    let means = unit_means(p);
    let target = grand_mean(p);
    let weights = p
        .units()
        .iter()
        .map(|u| sigma2_theta / (sigma2_pooled / u.j() as f64 + sigma2_theta))
        .collect();
    Ok(ShrinkageResult::from_weights(
        Method::Ho,
        weights,
        &means,
        target,
    ))
}

/// Heteroskedastic individual-weight shrinkage:
/// `w_i = v_hat / (sigma2_i / J_i + v_hat)`.
pub fn estimate_he(p: &PanelData) -> Result<ShrinkageResult, ShrinkageError> {
    let sigma2_i = per_unit_sigma2(p)?;
    let v = v_hat_given(p, &sigma2_i);
    if v <= 0.0 {
        return Err(ShrinkageError::NonPositiveVHat { value: v });
    }
    let means = unit_means(p);
    let target = grand_mean(p);
    let weights = sigma2_i
        .iter()
        .zip(p.units())
        .map(|(s, u)| v / (s / u.j() as f64 + v))
        .collect();
    Ok(ShrinkageResult::from_weights(
        Method::He,
        weights,
        &means,
        target,
    ))
}

/// Common-weight shrinkage. BC uses `w = v_hat / var_n(xbar_i)`; IV uses
/// the split-sample slope `cov(h1, h2) / var(h1)`. Either weight must be
/// strictly positive.
pub fn estimate_cw(p: &PanelData, flavor: CwFlavor) -> Result<ShrinkageResult, ShrinkageError> {
    let means = unit_means(p);
    let target = grand_mean(p);
    let w = match flavor {
        CwFlavor::Bc => {
            let sigma2 = per_unit_sigma2(p)?;
            let v = v_hat_given(p, &sigma2);
            let var_means = mean_sq_dev(&means, target);
            if var_means <= 0.0 {
                return Err(ShrinkageError::CwWeightUndefined {
                    detail: format!("sample variance of unit means = {var_means} ≤ 0"),
                });
            }
            if v <= 0.0 {
                return Err(ShrinkageError::CwWeightUndefined {
                    detail: format!("V̂ = {v} ≤ 0"),
                });
            }
            v / var_means
        }
        CwFlavor::Iv => {
            let mut h1 = Vec::with_capacity(p.n());
            let mut h2 = Vec::with_capacity(p.n());
            for u in p.units() {
                let (a, b) =
                    split_half_means(&u.measurements).map_err(|_| ShrinkageError::CannotSplit {
                        id: u.id.clone(),
                        j: u.j(),
                    })?;
                h1.push(a);
                h2.push(b);
            }
            let var_h1 = sample_cov(&h1, &h1);
            if var_h1 <= 0.0 {
                return Err(ShrinkageError::CwWeightUndefined {
                    detail: format!("variance of first split-half means = {var_h1} ≤ 0"),
                });
            }
            let w = sample_cov(&h1, &h2) / var_h1;
            let usable = w > 0.0; // also rejects NaN
            if !usable {
                return Err(ShrinkageError::CwWeightUndefined {
                    detail: format!("split-half IV slope = {w} ≤ 0"),
                });
            }
            w
        }
    };
    let method = match flavor {
        CwFlavor::Bc => Method::CwBc,
        CwFlavor::Iv => Method::CwIv,
    };
    Ok(ShrinkageResult::from_weights(
        method,
        vec![w; p.n()],
        &means,
        target,
    ))
}

/// Dispatch on the method enum.
pub fn estimate(p: &PanelData, method: Method) -> Result<ShrinkageResult, ShrinkageError> {
    match method {
        Method::Fe => Ok(estimate_fe(p)),
        Method::Ho => estimate_ho(p),
        Method::He => estimate_he(p),
        Method::CwBc => estimate_cw(p, CwFlavor::Bc),
        Method::CwIv => estimate_cw(p, CwFlavor::Iv),
    }
}
