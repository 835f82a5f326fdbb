//! Independent oracles shared by the integration and acceptance tests.
//!
//! Nothing here calls the library's marginal likelihood code: the oracles
//! integrate or sample from the model definitions directly.
#![allow(dead_code)]

use std::f64::consts::PI;

use bfsurf::hlm_bf::{HlmDataset, HlmGroup, HlmHypers, HlmModelKind};
use bfsurf::reg_bf::{RegressionData, RegressionHypers};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};

/// `log ∫ exp(f(t)) dt` by composite Simpson on `[lo, hi]` (`n` even).
pub fn log_simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
    assert!(n.is_multiple_of(2));
    let h = (hi - lo) / n as f64;
    let vals: Vec<f64> = (0..=n).map(|i| f(lo + i as f64 * h)).collect();
    let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut acc = 0.0;
    for (i, v) in vals.iter().enumerate() {
        let w = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += w * (v - max).exp();
    }
    max + (acc * h / 3.0).ln()
}

/// Log of the mean of `exp(logs)` and its delta-method standard error.
pub fn log_mean_se(logs: &[f64]) -> (f64, f64) {
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let n = logs.len() as f64;
    let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let mean = w.iter().sum::<f64>() / n;
    let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (max + mean.ln(), (var / n).sqrt() / mean)
}

/// Zellner–Siow Bayes factor by brute-force quadrature over `(log γ, log g)`.
///
/// Given `g` and `γ`, integrating the flat intercept and the slope
/// `β ~ N(0, g/(γ Σw²))` leaves `(1+g)^{-1/2} exp(γ g Szw² / (2 Sww (1+g)))`
/// times the intercept-only likelihood; the prior on `γ` is `1/γ`.
pub fn zs_oracle(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let xm = x.iter().sum::<f64>() / n;
    let ym = y.iter().sum::<f64>() / n;
    let sww: f64 = x.iter().map(|v| (v - xm).powi(2)).sum();
    let szz: f64 = y.iter().map(|v| (v - ym).powi(2)).sum();
    let szw: f64 = x.iter().zip(y).map(|(a, b)| (a - xm) * (b - ym)).sum();
    let shape = 0.5 * (n - 1.0);
    // γ-integrand on u = log γ: γ^{shape} exp(−γ S/2) (the 1/γ prior cancels the Jacobian).
    let gamma_integral = |s: f64| log_simpson(|u| shape * u - 0.5 * u.exp() * s, -25.0, 15.0, 4000);
    let log_m2 = gamma_integral(szz);
    let inner = |t: f64| {
        let g = t.exp();
        let s = szz - g * szw * szw / (sww * (1.0 + g));
        let log_m1_given_g = -0.5 * (1.0 + g).ln() + gamma_integral(s);
        let log_prior = 0.5 * (0.5 * n).ln() - 0.5 * PI.ln() - 1.5 * t - 0.5 * n / g;
        log_m1_given_g + log_prior + t
    };
    log_simpson(inner, -15.0, 15.0, 600) - log_m2
}

/// Fractional Bayes factor through its two marginals per model, each a
/// 1-D quadrature over `γ` under the reference prior `1/γ` with flat
/// coefficients.
pub fn fractional_oracle(data: &RegressionData, m: usize) -> f64 {
    let n = data.n() as f64;
    let b = m as f64 / n;
    let sww = data.sww();
    let rss1 = data.szz() - data.szw().powi(2) / sww;
    let rss2 = data.szz();
    // Coefficient integral of L^f over p flat coefficients with gram G:
    // (2π/(fγ))^{p/2} |G|^{-1/2}; |G| = n (M2) or n·Sww (M1) cancels in q_k.
    let log_marginal = |f: f64, p: f64, log_det_gram: f64, rss: f64| {
        let integrand = |u: f64| {
            let gamma = u.exp();
            -0.5 * f * n * (2.0 * PI).ln() + 0.5 * f * n * u + 0.5 * p * (2.0 * PI / (f * gamma)).ln()
                - 0.5 * log_det_gram
                - 0.5 * f * gamma * rss
        };
        // prior 1/γ with dγ = γ du; at m = 3 the left tail decays only like e^{u/2}
        log_simpson(integrand, -100.0, 20.0, 60_000)
    };
    let ld1 = n.ln() + sww.ln();
    let ld2 = n.ln();
    let q1 = log_marginal(1.0, 2.0, ld1, rss1) - log_marginal(b, 2.0, ld1, rss1);
    let q2 = log_marginal(1.0, 1.0, ld2, rss2) - log_marginal(b, 1.0, ld2, rss2);
    q1 - q2
}

/// Prior-sampling hierarchical oracle: draws `γ`, `θ` and every group's
/// coefficients from the priors and averages the full likelihood.
pub fn hlm_mc_log_marginal(
    data: &HlmDataset,
    kind: HlmModelKind,
    h: &HlmHypers,
    draws: usize,
    seed: u64,
) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gamma_prior = Gamma::new(0.5 * h.nu0, 2.0 / (h.nu0 * h.sigma0_sq)).unwrap();
    let z = Normal::new(0.0, 1.0).unwrap();
    let p = match kind {
        HlmModelKind::SlopesAndIntercepts => 2,
        HlmModelKind::MeansOnly => 1,
    };
    // Cholesky of Λ0 (or its intercept block).
    let l11 = h.lambda0[0][0].sqrt();
    let l21 = h.lambda0[1][0] / l11;
    let l22 = (h.lambda0[1][1] - l21 * l21).sqrt();
    // Group designs: raw predictor centered here, independently of the library.
    let designs: Vec<(Vec<f64>, Vec<f64>, f64, f64)> = data
        .groups()
        .iter()
        .map(|g: &HlmGroup| {
            let raw = g.raw_predictor();
            let mean = raw.iter().sum::<f64>() / raw.len() as f64;
            let w: Vec<f64> = raw.iter().map(|v| v - mean).collect();
            let sww: f64 = w.iter().map(|v| v * v).sum();
            (w, g.y().to_vec(), raw.len() as f64, sww)
        })
        .collect();
    let n_total: f64 = designs.iter().map(|d| d.2).sum();
    let mut logs = Vec::with_capacity(draws);
    for _ in 0..draws {
        let gamma: f64 = gamma_prior.sample(&mut rng);
        let (e1, e2): (f64, f64) = (z.sample(&mut rng), z.sample(&mut rng));
        let theta0 = h.mu0[0] + l11 * e1;
        let theta1 = h.mu0[1] + l21 * e1 + l22 * e2;
        let mut ll = 0.5 * n_total * (gamma / (2.0 * PI)).ln();
        for (w, y, nj, sww) in &designs {
            // Centered design: (XᵀX)⁻¹ = diag(1/n_j, 1/Sww_j).
            let b0 = theta0 + (h.g / (gamma * nj)).sqrt() * z.sample(&mut rng);
            let b1 = if p == 2 {
                theta1 + (h.g / (gamma * sww)).sqrt() * z.sample(&mut rng)
            } else {
                0.0
            };
            let ss: f64 = w.iter().zip(y).map(|(wi, yi)| (yi - b0 - b1 * wi).powi(2)).sum();
            ll -= 0.5 * gamma * ss;
        }
        logs.push(ll);
    }
    log_mean_se(&logs)
}

/// Small grouped data sets for the hierarchical oracle, with hyperparameters
/// chosen so the priors overlap the data.
pub fn hlm_oracle_cases() -> Vec<(HlmDataset, HlmHypers)> {
    let three = HlmDataset::new(vec![
        HlmGroup::new("1", vec![-1.0, 0.2, 0.9], vec![0.3, 1.1, 2.0]).unwrap(),
        HlmGroup::new("2", vec![0.5, -0.4, 1.3, -0.8], vec![1.5, 0.2, 2.4, -0.5]).unwrap(),
        HlmGroup::new("3", vec![0.0, 1.0, -1.2], vec![-0.6, 0.4, -1.9]).unwrap(),
    ])
    .unwrap();
    let two = HlmDataset::new(vec![
        HlmGroup::new("a", vec![1.0, 2.0, 3.0], vec![2.1, 2.9, 3.2]).unwrap(),
        HlmGroup::new("b", vec![0.5, 1.5, 2.5], vec![1.0, 1.2, 2.2]).unwrap(),
    ])
    .unwrap();
    vec![
        (
            three,
            HlmHypers {
                g: 3.0,
                mu0: [0.2, 1.0],
                lambda0: [[1.0, 0.2], [0.2, 0.8]],
                nu0: 4.0,
                sigma0_sq: 0.5,
            },
        ),
        (
            two,
            HlmHypers {
                g: 1.5,
                mu0: [2.0, 0.6],
                lambda0: [[0.8, -0.1], [-0.1, 0.4]],
                nu0: 6.0,
                sigma0_sq: 0.3,
            },
        ),
    ]
}

/// Dense GP conditional moments from the textbook formulas, native units.
///
/// `k(x, x')` is the kernel, `noise[i]` the observation noise variance of
/// `y[i]`, `mean` the plug-in constant mean.
pub fn dense_gp(
    k: impl Fn(&[f64], &[f64]) -> f64,
    x: &[Vec<f64>],
    y: &[f64],
    noise: &[f64],
    mean: f64,
    xs: &[Vec<f64>],
) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let mut kmat = nalgebra::DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            kmat[(i, j)] = k(&x[i], &x[j]) + if i == j { noise[i] } else { 0.0 };
        }
    }
    let kinv = kmat.try_inverse().expect("invertible covariance");
    let r = nalgebra::DVector::from_iterator(n, y.iter().map(|v| v - mean));
    let mut means = Vec::new();
    let mut vars = Vec::new();
    for s in xs {
        let ks = nalgebra::DVector::from_iterator(n, x.iter().map(|xi| k(xi, s)));
        means.push(mean + (ks.transpose() * &kinv * &r)[(0, 0)]);
        vars.push(k(s, s) - (ks.transpose() * &kinv * &ks)[(0, 0)]);
    }
    (means, vars)
}

/// Prior-sampling regression marginal: `β ~ N(μ, 1/φ)` (slope model only),
/// `γ ~ Gamma(a, rate b)`, flat intercept integrated in closed form.
pub fn reg_mc_log_marginal(
    x: &[f64],
    y: &[f64],
    h: &RegressionHypers,
    slope: bool,
    draws: usize,
    seed: u64,
) -> (f64, f64) {
    let n = x.len() as f64;
    let xm = x.iter().sum::<f64>() / n;
    let ym = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - xm).powi(2)).sum();
    let syy: f64 = y.iter().map(|v| (v - ym).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - xm) * (b - ym)).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gamma_prior = Gamma::new(h.a, 1.0 / h.b).unwrap();
    let beta_prior = Normal::new(h.mu, h.phi.powf(-0.5)).unwrap();
    let logs: Vec<f64> = (0..draws)
        .map(|_| {
            let gamma: f64 = gamma_prior.sample(&mut rng);
            let ss = if slope {
                let b: f64 = beta_prior.sample(&mut rng);
                syy - 2.0 * b * sxy + b * b * sxx
            } else {
                syy
            };
            // ∫ N(y; α + βx, 1/γ) dα = (γ/2π)^{(n-1)/2} n^{-1/2} exp(−γ ss/2)
            0.5 * (n - 1.0) * (gamma / (2.0 * PI)).ln() - 0.5 * n.ln() - 0.5 * gamma * ss
        })
        .collect();
    log_mean_se(&logs)
}
