//! Seeded data-generating processes and the Monte Carlo engine.
//!
//! Every replication derives its own RNG seed from the master seed and the
//! replication index through a fixed 64-bit mixer, so a single replication
//! can be reproduced in isolation and reports are byte-identical no matter
//! how many worker threads run them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::panel::{grand_mean, unit_means, PanelData, Unit};
use crate::regression::{ehw_omega, normal_quantile, ols_fit};
use crate::shrinkage::{self, Method};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid DGP spec: {detail}")]
    InvalidSpec { detail: String },
    #[error("simulation requires at least one replication")]
    ZeroReps,
    #[error("coverage curve requires a nonempty beta grid")]
    EmptyGrid,
    #[error("confidence level must lie in (0,1), got {level}")]
    InvalidLevel { level: f64 },
}

/// Law for the number of measurements per unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JLaw {
    /// Every unit gets exactly this many measurements.
    Fixed(u32),
    /// Poisson draws, floored at 2 so the within variance always exists.
    Poisson { mean: f64 },
    /// Drawn jointly with the noise variance; see `Sigma2Law::CorrelatedPair`.
    CorrelatedPair,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaLaw {
    Normal { mean: f64, sd: f64 },
}

/// Law for the idiosyncratic noise variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sigma2Law {
    ChiSq1,
    /// Takes the value `lo` or `hi` with probability 1/2 each.
    UniformTwoPoint {
        lo: f64,
        hi: f64,
    },
    /// With equal probabilities, `(sigma2, J) = (12*gamma*V, floor(2*sqrt(n)))`
    /// or `(8*gamma*V, floor((2/3)*sqrt(n)))`, where `V` is the variance of
    /// the latent effect. Larger noise variance comes with more
    /// measurements, the endogenous-sampling pattern that breaks HO.
    CorrelatedPair {
        gamma: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseFamily {
    Normal,
    /// `sigma_i * (chi2(2) - 2) / 2`: mean zero, variance `sigma_i^2`,
    /// skewed. Exercises the estimators under non-normal noise.
    GammaCentered,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ULaw {
    Normal { sd: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dependence {
    Independent,
    JSigmaCorrelated,
}

/// Full description of one data-generating process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub n: usize,
    pub j_law: JLaw,
    pub theta_law: ThetaLaw,
    pub sigma2_law: Sigma2Law,
    pub noise_family: NoiseFamily,
    pub alpha: f64,
    pub beta: f64,
    pub u_law: ULaw,
    pub dependence: Dependence,
}

impl DgpSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        let err = |detail: String| Err(SimError::InvalidSpec { detail });
        if self.n < 2 {
            return err(format!("n = {} < 2", self.n));
        }
        // comparisons are written positively so NaN parameters fail them
        match self.j_law {
            JLaw::Fixed(j) if j < 2 => return err(format!("fixed J = {j} < 2")),
            JLaw::Poisson { mean } => {
                let ok = mean > 0.0;
                if !ok {
                    return err(format!("Poisson mean = {mean} must be positive"));
                }
            }
            _ => {}
        }
        let ThetaLaw::Normal { sd, .. } = self.theta_law;
        let theta_ok = sd > 0.0;
        if !theta_ok {
            return err(format!("theta sd = {sd} must be positive"));
        }
        match self.sigma2_law {
            Sigma2Law::UniformTwoPoint { lo, hi } => {
                let ok = lo > 0.0 && hi > 0.0;
                if !ok {
                    return err(format!(
                        "two-point variances must be positive, got {lo}, {hi}"
                    ));
                }
            }
            Sigma2Law::CorrelatedPair { gamma } => {
                let ok = gamma > 0.0;
                if !ok {
                    return err(format!("correlated-pair gamma = {gamma} must be positive"));
                }
            }
            Sigma2Law::ChiSq1 => {}
        }
        let ULaw::Normal { sd } = self.u_law;
        let u_ok = sd >= 0.0;
        if !u_ok {
            return err(format!("u sd = {sd} must be nonnegative"));
        }
        let pair = matches!(self.j_law, JLaw::CorrelatedPair)
            || matches!(self.sigma2_law, Sigma2Law::CorrelatedPair { .. });
        match self.dependence {
            Dependence::JSigmaCorrelated => {
                if !(matches!(self.j_law, JLaw::CorrelatedPair)
                    && matches!(self.sigma2_law, Sigma2Law::CorrelatedPair { .. }))
                {
                    return err(
                        "j_sigma_correlated requires j_law and sigma2_law to both be correlated_pair"
                            .to_string(),
                    );
                }
                // the smaller branch J = floor((2/3) sqrt(n)) must be >= 2
                if ((2.0 / 3.0) * (self.n as f64).sqrt()).floor() < 2.0 {
                    return err(format!("n = {} too small for the correlated pair", self.n));
                }
            }
            Dependence::Independent => {
                if pair {
                    return err(
                        "correlated_pair laws require dependence = j_sigma_correlated".to_string(),
                    );
                }
            }
        }
        Ok(())
    }

    /// Variance of the latent effect implied by `theta_law`.
    pub fn theta_variance(&self) -> f64 {
        let ThetaLaw::Normal { sd, .. } = self.theta_law;
        sd * sd
    }
}

/// Estimation routes the engine can run per replication. `Oracle` and
/// `SemiOracle` exist only here: the oracle regresses on the true latent
/// effects, the semi-oracle uses the true signal variance in otherwise
/// feasible HE weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SimMethod {
    Oracle,
    SemiOracle,
    Estimator(Method),
}

impl SimMethod {
    /// Canonical report order (oracle rows first, FE last).
    pub const ALL: [SimMethod; 7] = [
        SimMethod::Oracle,
        SimMethod::SemiOracle,
        SimMethod::Estimator(Method::He),
        SimMethod::Estimator(Method::Ho),
        SimMethod::Estimator(Method::CwBc),
        SimMethod::Estimator(Method::CwIv),
        SimMethod::Estimator(Method::Fe),
    ];

    pub fn name(self) -> &'static str {
        match self {
            SimMethod::Oracle => "oracle",
            SimMethod::SemiOracle => "semi_oracle",
            SimMethod::Estimator(m) => m.name(),
        }
    }
}

impl std::fmt::Display for SimMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SimMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "oracle" => Ok(SimMethod::Oracle),
            "semi_oracle" | "semi-oracle" | "semioracle" => Ok(SimMethod::SemiOracle),
            other => other.parse::<Method>().map(SimMethod::Estimator),
        }
    }
}

impl Serialize for SimMethod {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for SimMethod {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Deduplicates and orders a method set canonically.
pub fn canonical_methods(methods: &[SimMethod]) -> Vec<SimMethod> {
    SimMethod::ALL
        .iter()
        .copied()
        .filter(|m| methods.contains(m))
        .collect()
}

/// The latent draws behind a simulated panel.
#[derive(Debug, Clone)]
pub struct Truth {
    pub theta: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub j: Vec<usize>,
}

/// Derives the replication seed from the master seed: splitmix64-style
/// finalizer over `master XOR (rep * golden ratio)`.
pub fn mix_seed(master_seed: u64, rep: u64) -> u64 {
    let mut z = master_seed ^ rep.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draws one panel plus the latent truth. Per unit, the draw order is
/// fixed: theta, (J, sigma2), the J noise draws, then u.
pub fn draw_panel(spec: &DgpSpec, seed: u64) -> (PanelData, Truth) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.n;
    let ThetaLaw::Normal {
        mean: theta_mean,
        sd: theta_sd,
    } = spec.theta_law;
    let ULaw::Normal { sd: u_sd } = spec.u_law;
    let chi1 = ChiSquared::new(1.0).expect("chi2(1)");
    let chi2 = ChiSquared::new(2.0).expect("chi2(2)");
    let sqrt_n = (n as f64).sqrt();

    let mut units = Vec::with_capacity(n);
    let mut truth = Truth {
        theta: Vec::with_capacity(n),
        sigma2: Vec::with_capacity(n),
        j: Vec::with_capacity(n),
    };
    let width = (n.max(10) as f64).log10().ceil() as usize;

    for i in 0..n {
        let z: f64 = rng.sample(StandardNormal);
        let theta = theta_mean + theta_sd * z;

        let (j, sigma2) = match spec.dependence {
            Dependence::JSigmaCorrelated => {
                let gamma = match spec.sigma2_law {
                    Sigma2Law::CorrelatedPair { gamma } => gamma,
                    _ => unreachable!("validated"),
                };
                let v = spec.theta_variance();
                if rng.gen_bool(0.5) {
                    ((2.0 * sqrt_n).floor().max(2.0) as usize, 12.0 * gamma * v)
                } else {
                    (
                        ((2.0 / 3.0) * sqrt_n).floor().max(2.0) as usize,
                        8.0 * gamma * v,
                    )
                }
            }
            Dependence::Independent => {
                let j = match spec.j_law {
                    JLaw::Fixed(j) => j as usize,
                    JLaw::Poisson { mean } => {
                        let draw: f64 = Poisson::new(mean).expect("poisson").sample(&mut rng);
                        (draw as usize).max(2)
                    }
                    JLaw::CorrelatedPair => unreachable!("validated"),
                };
                let sigma2 = match spec.sigma2_law {
                    Sigma2Law::ChiSq1 => chi1.sample(&mut rng),
                    Sigma2Law::UniformTwoPoint { lo, hi } => {
                        if rng.gen_bool(0.5) {
                            lo
                        } else {
                            hi
                        }
                    }
                    Sigma2Law::CorrelatedPair { .. } => unreachable!("validated"),
                };
                (j, sigma2)
            }
        };

        let sigma = sigma2.sqrt();
        let measurements = (0..j)
            .map(|_| {
                let noise = match spec.noise_family {
                    NoiseFamily::Normal => {
                        let z: f64 = rng.sample(StandardNormal);
                        z
                    }
                    NoiseFamily::GammaCentered => (chi2.sample(&mut rng) - 2.0) / 2.0,
                };
                theta + sigma * noise
            })
            .collect();

        let uz: f64 = rng.sample(StandardNormal);
        let outcome = spec.alpha + spec.beta * theta + u_sd * uz;

        units.push(Unit {
            id: format!("u{i:0width$}"),
            measurements,
            outcome,
            cluster: None,
            controls: Vec::new(),
        });
        truth.theta.push(theta);
        truth.sigma2.push(sigma2);
        truth.j.push(j);
    }

    let panel = PanelData::new(units).expect("simulated panel is always valid");
    (panel, truth)
}

/// Per-replication result for one method.
#[derive(Debug, Clone, Copy)]
pub struct RepOutcome {
    pub beta_hat: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub covers_true: bool,
    pub sq_err: f64,
    pub mse_theta: f64,
}

/// Runs `reps` independent replications; entry `[r][m]` is `None` when
/// method `m` was undefined on replication `r` (for example `v_hat <= 0`).
pub fn run_replications(
    spec: &DgpSpec,
    methods: &[SimMethod],
    reps: usize,
    level: f64,
    master_seed: u64,
) -> Result<Vec<Vec<Option<RepOutcome>>>, SimError> {
    spec.validate()?;
    if reps == 0 {
        return Err(SimError::ZeroReps);
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(SimError::InvalidLevel { level });
    }
    let z = normal_quantile(1.0 - level / 2.0);
    let methods = methods.to_vec();
    let out = (0..reps)
        .into_par_iter()
        .map(|r| one_replication(spec, &methods, z, mix_seed(master_seed, r as u64)))
        .collect();
    Ok(out)
}

fn one_replication(
    spec: &DgpSpec,
    methods: &[SimMethod],
    z: f64,
    seed: u64,
) -> Vec<Option<RepOutcome>> {
    let (panel, truth) = draw_panel(spec, seed);
    let y = panel.outcomes();
    methods
        .iter()
        .map(|&m| {
            let theta_hat = match m {
                SimMethod::Oracle => Some(truth.theta.clone()),
                SimMethod::SemiOracle => semi_oracle_estimates(&panel, spec.theta_variance()),
                SimMethod::Estimator(est) => {
                    shrinkage::estimate(&panel, est).ok().map(|r| r.estimates)
                }
            }?;
            let fit = ols_fit(&theta_hat, &y, None).ok()?;
            let omega = ehw_omega(&theta_hat, &fit.residuals).ok()?;
            let se = (omega / panel.n() as f64).sqrt();
            let ci_low = fit.beta_hat - z * se;
            let ci_high = fit.beta_hat + z * se;
            let err = fit.beta_hat - spec.beta;
            let mse_theta = match m {
                SimMethod::Oracle => 0.0,
                _ => {
                    theta_hat
                        .iter()
                        .zip(&truth.theta)
                        .map(|(e, t)| (e - t) * (e - t))
                        .sum::<f64>()
                        / panel.n() as f64
                }
            };
            Some(RepOutcome {
                beta_hat: fit.beta_hat,
                se,
                ci_low,
                ci_high,
                covers_true: ci_low <= spec.beta && spec.beta <= ci_high,
                sq_err: err * err,
                mse_theta,
            })
        })
        .collect()
}

/// HE-shaped weights built from the true signal variance:
/// `c_i = Var(theta) / (sigma2_i / J_i + Var(theta))`.
fn semi_oracle_estimates(panel: &PanelData, theta_var: f64) -> Option<Vec<f64>> {
    let sigma2_i = shrinkage::per_unit_sigma2(panel).ok()?;
    let means = unit_means(panel);
    let target = grand_mean(panel);
    Some(
        sigma2_i
            .iter()
            .zip(panel.units())
            .zip(&means)
            .map(|((s, u), m)| {
                let c = theta_var / (s / u.j() as f64 + theta_var);
                c * m + (1.0 - c) * target
            })
            .collect(),
    )
}

/// Aggregated metrics for one method.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: SimMethod,
    /// `sqrt(n * mean((beta_hat - beta)^2))` over successful replications.
    pub sqrt_n_mse_beta: f64,
    /// Percentage of successful replications whose CI covers the true beta.
    pub coverage_pct: f64,
    /// `|mean(beta_hat) - beta|`.
    pub abs_bias: f64,
    /// Mean over replications of `(1/n) Σ (theta_hat_i - theta_i)^2`.
    pub mse_theta: f64,
    /// Replications on which the method was undefined; excluded above.
    pub failed_reps: usize,
    /// `(grid beta, coverage fraction)` pairs when a curve was requested.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coverage_curve: Option<Vec<(f64, f64)>>,
}

/// Full simulation report; serializes byte-identically for identical
/// `(spec, methods, reps, level, master_seed)` inputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimReport {
    pub schema_version: u32,
    pub spec: DgpSpec,
    pub reps: usize,
    pub master_seed: u64,
    pub level: f64,
    pub methods: Vec<MethodReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta_grid: Option<Vec<f64>>,
}

pub const REPORT_SCHEMA_VERSION: u32 = 1;

fn aggregate(
    spec: &DgpSpec,
    methods: &[SimMethod],
    records: &[Vec<Option<RepOutcome>>],
    reps: usize,
    master_seed: u64,
    level: f64,
    beta_grid: Option<&[f64]>,
) -> SimReport {
    let n = spec.n as f64;
    let method_reports = methods
        .iter()
        .enumerate()
        .map(|(mi, &method)| {
            let mut count = 0usize;
            let mut covered = 0usize;
            let mut sum_sq = 0.0;
            let mut sum_beta = 0.0;
            let mut sum_mse_theta = 0.0;
            for record in records {
                if let Some(o) = &record[mi] {
                    count += 1;
                    covered += o.covers_true as usize;
                    sum_sq += o.sq_err;
                    sum_beta += o.beta_hat;
                    sum_mse_theta += o.mse_theta;
                }
            }
            let c = count as f64;
            let coverage_curve = beta_grid.map(|grid| {
                grid.iter()
                    .map(|&b| {
                        let hits = records
                            .iter()
                            .filter_map(|r| r[mi].as_ref())
                            .filter(|o| o.ci_low <= b && b <= o.ci_high)
                            .count();
                        (b, hits as f64 / c)
                    })
                    .collect()
            });
            MethodReport {
                method,
                sqrt_n_mse_beta: (n * sum_sq / c).sqrt(),
                coverage_pct: 100.0 * covered as f64 / c,
                abs_bias: (sum_beta / c - spec.beta).abs(),
                mse_theta: sum_mse_theta / c,
                failed_reps: reps - count,
                coverage_curve,
            }
        })
        .collect();
    SimReport {
        schema_version: REPORT_SCHEMA_VERSION,
        spec: spec.clone(),
        reps,
        master_seed,
        level,
        methods: method_reports,
        beta_grid: beta_grid.map(<[f64]>::to_vec),
    }
}

/// Runs the Monte Carlo experiment and aggregates coverage, bias and MSE
/// per method. Methods are reported in canonical order regardless of the
/// order requested.
pub fn run_monte_carlo(
    spec: &DgpSpec,
    methods: &[SimMethod],
    reps: usize,
    level: f64,
    master_seed: u64,
) -> Result<SimReport, SimError> {
    let methods = canonical_methods(methods);
    let records = run_replications(spec, &methods, reps, level, master_seed)?;
    Ok(aggregate(
        spec,
        &methods,
        &records,
        reps,
        master_seed,
        level,
        None,
    ))
}

/// Like `run_monte_carlo`, but also evaluates, for every grid value `b`,
/// the fraction of replications whose CI contains `b`. CIs are computed
/// once per replication and reused across the grid.
pub fn coverage_curve(
    spec: &DgpSpec,
    methods: &[SimMethod],
    beta_grid: &[f64],
    reps: usize,
    level: f64,
    master_seed: u64,
) -> Result<SimReport, SimError> {
    if beta_grid.is_empty() {
        return Err(SimError::EmptyGrid);
    }
    let methods = canonical_methods(methods);
    let records = run_replications(spec, &methods, reps, level, master_seed)?;
    Ok(aggregate(
        spec,
        &methods,
        &records,
        reps,
        master_seed,
        level,
        Some(beta_grid),
    ))
}

impl SimReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialization");
        s.push('\n');
        s
    }

    /// `method,sqrt_n_mse_beta,coverage_pct,abs_bias,mse_theta,failed_reps`.
    pub fn metrics_csv(&self) -> String {
        let mut out =
            String::from("method,sqrt_n_mse_beta,coverage_pct,abs_bias,mse_theta,failed_reps\n");
        for m in &self.methods {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                m.method, m.sqrt_n_mse_beta, m.coverage_pct, m.abs_bias, m.mse_theta, m.failed_reps
            ));
        }
        out
    }

    /// `beta,method,coverage` rows, grid-major then method order.
    pub fn curves_csv(&self) -> Option<String> {
        let grid = self.beta_grid.as_ref()?;
        let mut out = String::from("beta,method,coverage\n");
        for (gi, b) in grid.iter().enumerate() {
            for m in &self.methods {
                if let Some(curve) = &m.coverage_curve {
                    out.push_str(&format!("{},{},{}\n", b, m.method, curve[gi].1));
                }
            }
        }
        Some(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn set1_spec(n: usize) -> DgpSpec {
        DgpSpec {
            n,
            j_law: JLaw::Fixed(20),
            theta_law: ThetaLaw::Normal { mean: 0.0, sd: 1.0 },
            sigma2_law: Sigma2Law::ChiSq1,
            noise_family: NoiseFamily::Normal,
            alpha: 0.0,
            beta: 1.0,
            u_law: ULaw::Normal { sd: 1.0 },
            dependence: Dependence::Independent,
        }
    }

    #[test]
    fn mix_seed_is_stable_and_spreads() {
        assert_ne!(mix_seed(42, 0), mix_seed(42, 1));
        assert_ne!(mix_seed(42, 0), mix_seed(43, 0));
        assert_eq!(mix_seed(42, 7), mix_seed(42, 7));
    }

    #[test]
    fn spec_validation() {
        let mut s = set1_spec(100);
        assert!(s.validate().is_ok());
        s.j_law = JLaw::Fixed(1);
        assert!(s.validate().is_err());
        s.j_law = JLaw::CorrelatedPair;
        assert!(s.validate().is_err()); // dependence still independent
        s.sigma2_law = Sigma2Law::CorrelatedPair { gamma: 0.5 };
        s.dependence = Dependence::JSigmaCorrelated;
        assert!(s.validate().is_ok());
        s.sigma2_law = Sigma2Law::CorrelatedPair { gamma: 0.0 };
        assert!(s.validate().is_err());
    }

    #[test]
    fn fixed_j_panels_have_exact_j() {
        let (panel, truth) = draw_panel(&set1_spec(50), 99);
        assert_eq!(panel.n(), 50);
        assert!(panel.units().iter().all(|u| u.j() == 20));
        assert!(truth.j.iter().all(|&j| j == 20));
    }

    #[test]
    fn draw_panel_is_deterministic() {
        let spec = set1_spec(30);
        let (p1, t1) = draw_panel(&spec, 1234);
        let (p2, t2) = draw_panel(&spec, 1234);
        assert_eq!(p1, p2);
        assert_eq!(t1.theta, t2.theta);
        let (p3, _) = draw_panel(&spec, 1235);
        assert_ne!(p1, p3);
    }

    #[test]
    fn gamma_centered_noise_moments() {
        // moment oracle: mean within 3 MC standard errors of 0, variance
        // within 1% of sigma^2 = 1 (Var((chi2(2)-2)/2) = 1), 1e6 draws.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let chi2 = ChiSquared::new(2.0).unwrap();
        let n = 1_000_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| (chi2.sample(&mut rng) - 2.0) / 2.0)
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 3.0 / (n as f64).sqrt(), "mean = {mean}");
        assert!((var - 1.0).abs() < 0.01, "var = {var}");
    }

    #[test]
    fn correlated_pair_branches() {
        let spec = DgpSpec {
            n: 1000,
            j_law: JLaw::CorrelatedPair,
            sigma2_law: Sigma2Law::CorrelatedPair { gamma: 0.5 },
            dependence: Dependence::JSigmaCorrelated,
            ..set1_spec(1000)
        };
        let (_, truth) = draw_panel(&spec, 11);
        let j_hi = (2.0 * 1000f64.sqrt()).floor() as usize; // 63
        let j_lo = ((2.0 / 3.0) * 1000f64.sqrt()).floor() as usize; // 21
        let mut hi = 0;
        for (j, s2) in truth.j.iter().zip(&truth.sigma2) {
            if *j == j_hi {
                assert!((s2 - 12.0 * 0.5).abs() < 1e-12);
                hi += 1;
            } else {
                assert_eq!(*j, j_lo);
                assert!((s2 - 8.0 * 0.5).abs() < 1e-12);
            }
        }
        // branch frequency within 3 MC standard errors of 1/2
        let freq = hi as f64 / 1000.0;
        assert!(
            (freq - 0.5).abs() < 3.0 * 0.5 / 1000f64.sqrt(),
            "freq = {freq}"
        );
    }

    #[test]
    fn poisson_draws_floored_at_two() {
        let spec = DgpSpec {
            j_law: JLaw::Poisson { mean: 0.1 },
            ..set1_spec(500)
        };
        let (_, truth) = draw_panel(&spec, 3);
        assert!(truth.j.iter().all(|&j| j >= 2));
        assert!(truth.j.contains(&2));
    }

    #[test]
    fn single_rep_coverage_is_zero_or_hundred() {
        let report = run_monte_carlo(
            &set1_spec(200),
            &[SimMethod::Estimator(Method::He)],
            1,
            0.05,
            5,
        )
        .unwrap();
        let c = report.methods[0].coverage_pct;
        assert!(c == 0.0 || c == 100.0);
    }

    #[test]
    fn reports_are_deterministic() {
        let spec = set1_spec(100);
        let methods = [
            SimMethod::Oracle,
            SimMethod::Estimator(Method::He),
            SimMethod::Estimator(Method::Fe),
        ];
        let a = run_monte_carlo(&spec, &methods, 20, 0.05, 42).unwrap();
        let b = run_monte_carlo(&spec, &methods, 20, 0.05, 42).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(a.metrics_csv(), b.metrics_csv());

        // order of the requested set does not matter
        let shuffled = [
            SimMethod::Estimator(Method::Fe),
            SimMethod::Oracle,
            SimMethod::Estimator(Method::He),
        ];
        let c = run_monte_carlo(&spec, &shuffled, 20, 0.05, 42).unwrap();
        assert_eq!(a.to_json(), c.to_json());
    }

    #[test]
    fn curve_far_outside_all_cis_is_zero() {
        let report = coverage_curve(
            &set1_spec(100),
            &[SimMethod::Estimator(Method::He)],
            &[1.0, 1000.0],
            30,
            0.05,
            3,
        )
        .unwrap();
        let curve = report.methods[0].coverage_curve.as_ref().unwrap();
        assert_eq!(curve[1].1, 0.0);
        let csv = report.curves_csv().unwrap();
        assert!(csv.starts_with("beta,method,coverage\n"));
        assert_eq!(csv.lines().count(), 1 + 2);
    }

    #[test]
    fn failed_reps_counted_and_excluded() {
        // n = 4, J = 2 with huge noise: v_hat <= 0 happens often.
        let spec = DgpSpec {
            n: 4,
            j_law: JLaw::Fixed(2),
            sigma2_law: Sigma2Law::UniformTwoPoint {
                lo: 100.0,
                hi: 100.0,
            },
            ..set1_spec(4)
        };
        let report = run_monte_carlo(
            &spec,
            &[SimMethod::Estimator(Method::He), SimMethod::Oracle],
            200,
            0.05,
            9,
        )
        .unwrap();
        let he = &report.methods[1];
        assert_eq!(he.method, SimMethod::Estimator(Method::He));
        assert!(he.failed_reps > 0, "expected some v_hat <= 0 failures");
        let oracle = &report.methods[0];
        assert_eq!(oracle.failed_reps, 0);
        assert!(oracle.mse_theta == 0.0);
    }

    #[test]
    fn method_names_round_trip() {
        for m in SimMethod::ALL {
            assert_eq!(m.name().parse::<SimMethod>().unwrap(), m);
        }
    }
}
