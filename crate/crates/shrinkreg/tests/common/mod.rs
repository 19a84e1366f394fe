//! Helpers shared by the integration suites: canonical experiment specs,
//! independent brute-force oracles, and small random panel generators.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shrinkreg::panel::{PanelData, Unit};
use shrinkreg::simulation::{Dependence, DgpSpec, JLaw, NoiseFamily, Sigma2Law, ThetaLaw, ULaw};

/// First simulation design: fixed J, chi-squared noise variances,
/// standard normal latent effects and regression errors.
pub fn set1_spec(n: usize) -> DgpSpec {
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

/// Second design family: two-point noise variances on {1, 10}.
pub fn table1_spec(n: usize, j: u32) -> DgpSpec {
    DgpSpec {
        j_law: JLaw::Fixed(j),
        sigma2_law: Sigma2Law::UniformTwoPoint { lo: 1.0, hi: 10.0 },
        ..set1_spec(n)
    }
}

/// Third design family, independent case: Poisson numbers of measurements.
pub fn fig2_independent_spec() -> DgpSpec {
    DgpSpec {
        j_law: JLaw::Poisson { mean: 20.0 },
        ..set1_spec(1000)
    }
}

/// Third design family, correlated case: the endogenous-sampling pair.
pub fn fig2_correlated_spec(gamma: f64) -> DgpSpec {
    DgpSpec {
        j_law: JLaw::CorrelatedPair,
        sigma2_law: Sigma2Law::CorrelatedPair { gamma },
        dependence: Dependence::JSigmaCorrelated,
        ..set1_spec(1000)
    }
}

/// Independent double-loop computation of `v_hat`, written to mirror the
/// defining formula term by term rather than the library's code path.
pub fn brute_force_v_hat(p: &PanelData) -> f64 {
    let n = p.n();
    let mut means = Vec::new();
    for u in p.units() {
        let mut s = 0.0;
        for x in &u.measurements {
            s += x;
        }
        means.push(s / u.measurements.len() as f64);
    }
    let mut grand = 0.0;
    for m in &means {
        grand += m;
    }
    grand /= n as f64;

    let mut first = 0.0;
    for m in &means {
        first += (m - grand) * (m - grand);
    }
    first /= n as f64;

    let mut second = 0.0;
    for (u, m) in p.units().iter().zip(&means) {
        let j = u.measurements.len();
        let mut ss = 0.0;
        for x in &u.measurements {
            ss += (x - m) * (x - m);
        }
        let sigma2 = ss / (j - 1) as f64;
        second += sigma2 / j as f64;
    }
    second *= (n - 1) as f64 / (n * n) as f64;

    first - second
}

/// Independent double-loop computation of the HO components.
pub fn brute_force_ho(p: &PanelData) -> (f64, f64) {
    let n = p.n();
    let mut ss = 0.0;
    let mut dof = 0usize;
    let mut h1 = Vec::new();
    let mut h2 = Vec::new();
    for u in p.units() {
        let j = u.measurements.len();
        let mut mean = 0.0;
        for x in &u.measurements {
            mean += x;
        }
        mean /= j as f64;
        for x in &u.measurements {
            ss += (x - mean) * (x - mean);
        }
        dof += j - 1;

        let cut = j / 2 + j % 2;
        let mut a = 0.0;
        for x in &u.measurements[..cut] {
            a += x;
        }
        h1.push(a / cut as f64);
        let mut b = 0.0;
        for x in &u.measurements[cut..] {
            b += x;
        }
        h2.push(b / (j - cut) as f64);
    }
    let pooled = ss / dof as f64;

    let mut m1 = 0.0;
    let mut m2 = 0.0;
    for i in 0..n {
        m1 += h1[i];
        m2 += h2[i];
    }
    m1 /= n as f64;
    m2 /= n as f64;
    let mut cov = 0.0;
    for i in 0..n {
        cov += (h1[i] - m1) * (h2[i] - m2);
    }
    cov /= (n - 1) as f64;
    (pooled, cov)
}

/// EHW slope variance through the explicit matrix sandwich
/// `(X'X)^{-1} (X' diag(u^2) X) (X'X)^{-1}`, scaled to the `omega`
/// normalization (`omega = n * var_beta`).
pub fn matrix_sandwich_omega(theta: &[f64], residuals: &[f64]) -> f64 {
    use nalgebra::{DMatrix, DVector};
    let n = theta.len();
    let mut x = DMatrix::zeros(n, 2);
    for i in 0..n {
        x[(i, 0)] = 1.0;
        x[(i, 1)] = theta[i];
    }
    let xtx_inv = (x.transpose() * &x).try_inverse().expect("invertible");
    let u2 = DVector::from_iterator(n, residuals.iter().map(|u| u * u));
    let meat = x.transpose() * DMatrix::from_diagonal(&u2) * &x;
    let cov = &xtx_inv * meat * &xtx_inv;
    n as f64 * cov[(1, 1)]
}

/// Random small panel for algebra checks: n units, J_i in [2, j_max],
/// measurements centered on unit effects of spread comparable to the noise.
pub fn random_panel(rng: &mut ChaCha8Rng, n: usize, j_max: usize) -> PanelData {
    let units = (0..n)
        .map(|i| {
            let theta: f64 = rng.gen_range(-3.0..3.0);
            let sigma: f64 = rng.gen_range(0.2..2.0);
            let j = rng.gen_range(2..=j_max);
            Unit {
                id: format!("u{i}"),
                measurements: (0..j)
                    .map(|_| theta + sigma * rng.gen_range(-1.0..1.0))
                    .collect(),
                outcome: 0.5 + 1.5 * theta + rng.gen_range(-1.0..1.0),
                cluster: None,
                controls: Vec::new(),
            }
        })
        .collect();
    PanelData::new(units).expect("valid panel")
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
