//! Bayes factors for the slope of a simple linear regression.
//!
//! `M1` has a slope `β ~ N(μ, 1/φ)`, `M2` fixes `β = 0`; both share a flat
//! intercept and a `Gamma(a, b)` error precision. The flat intercept
//! contributes the same undetermined constant to both marginal likelihoods,
//! so every marginal here uses the convention `c = 1` and only differences
//! of marginals are meaningful.

use std::f64::consts::PI;
use std::io::{Read, Write};

use rand_distr::{Distribution, Gamma, Normal, Uniform};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::numerics::{self, Interval, QuadratureSpec};
use crate::rng;

/// Paired predictor/outcome data with the centered sufficient statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionData {
    x: Vec<f64>,
    y: Vec<f64>,
    w: Vec<f64>,
    z: Vec<f64>,
    x_mean: f64,
    y_mean: f64,
    sww: f64,
    szz: f64,
    szw: f64,
}

impl RegressionData {
    /// Builds the data set; needs matching lengths, at least two finite
    /// pairs. Methods that need more observations check for themselves.
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch(format!(
                "x has {} values but y has {}",
                x.len(),
                y.len()
            )));
        }
        if x.len() < 2 {
            return Err(Error::InsufficientSample {
                needed: 2,
                got: x.len(),
            });
        }
        if let Some(i) = x.iter().chain(&y).position(|v| !v.is_finite()) {
            let field = if i < x.len() { "x" } else { "y" };
            return Err(Error::param(field, "values must be finite"));
        }
        let n = x.len() as f64;
        let x_mean = x.iter().sum::<f64>() / n;
        let y_mean = y.iter().sum::<f64>() / n;
        let w: Vec<f64> = x.iter().map(|v| v - x_mean).collect();
        let z: Vec<f64> = y.iter().map(|v| v - y_mean).collect();
        let sww = w.iter().map(|v| v * v).sum();
        let szz = z.iter().map(|v| v * v).sum();
        let szw = w.iter().zip(&z).map(|(a, b)| a * b).sum();
        Ok(Self {
            x,
            y,
            w,
            z,
            x_mean,
            y_mean,
            sww,
            szz,
            szw,
        })
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }
    pub fn x(&self) -> &[f64] {
        &self.x
    }
    pub fn y(&self) -> &[f64] {
        &self.y
    }
    /// Predictor centered at its mean.
    pub fn w(&self) -> &[f64] {
        &self.w
    }
    /// Outcome centered at its mean.
    pub fn z(&self) -> &[f64] {
        &self.z
    }
    pub fn x_mean(&self) -> f64 {
        self.x_mean
    }
    pub fn y_mean(&self) -> f64 {
        self.y_mean
    }
    /// Σ w².
    pub fn sww(&self) -> f64 {
        self.sww
    }
    /// Σ z².
    pub fn szz(&self) -> f64 {
        self.szz
    }
    /// Σ z·w.
    pub fn szw(&self) -> f64 {
        self.szw
    }

    /// Residual sum of squares of the least-squares line.
    pub fn rss_slope(&self) -> f64 {
        if self.sww == 0.0 {
            return self.szz;
        }
        (self.szz - self.szw * self.szw / self.sww).max(0.0)
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers().map_err(|e| csv_err(&e, 1))?.clone();
        let col = |name: &str| {
            headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
                line: 1,
                message: format!("missing column `{name}` (expected header `x,y`)"),
            })
        };
        let (ix, iy) = (col("x")?, col("y")?);
        let (mut x, mut y) = (Vec::new(), Vec::new());
        for (row, rec) in rdr.records().enumerate() {
            let line = row + 2;
            let rec = rec.map_err(|e| csv_err(&e, line))?;
            x.push(parse_cell(rec.get(ix), line, "x")?);
            y.push(parse_cell(rec.get(iy), line, "y")?);
        }
        Self::new(x, y)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        wtr.write_record(["x", "y"]).map_err(io)?;
        for (x, y) in self.x.iter().zip(&self.y) {
            wtr.write_record([format!("{x:.16e}"), format!("{y:.16e}")])
                .map_err(io)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_err(e: &csv::Error, fallback_line: usize) -> Error {
    let line = e
        .position()
        .map(|p| p.line() as usize)
        .unwrap_or(fallback_line);
    Error::Parse {
        line,
        message: e.to_string(),
    }
}

pub(crate) fn parse_cell(cell: Option<&str>, line: usize, name: &str) -> Result<f64> {
    let raw = cell.ok_or_else(|| Error::Parse {
        line,
        message: format!("missing `{name}` cell"),
    })?;
    let v: f64 = raw.parse().map_err(|_| Error::Parse {
        line,
        message: format!("`{name}` is not a number: {raw:?}"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            message: format!("`{name}` is not finite: {raw:?}"),
        });
    }
    Ok(v)
}

/// Prior hyperparameters `(μ, φ, a, b)`: `β ~ N(μ, 1/φ)`, `γ ~ Gamma(a, rate b)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionHypers {
    pub mu: f64,
    pub phi: f64,
    pub a: f64,
    pub b: f64,
}

impl RegressionHypers {
    pub fn new(mu: f64, phi: f64, a: f64, b: f64) -> Result<Self> {
        let h = Self { mu, phi, a, b };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mu.is_finite() {
            return Err(Error::param("mu", "must be finite"));
        }
        for (name, v) in [("phi", self.phi), ("a", self.a), ("b", self.b)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(name, format!("must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

impl Default for RegressionHypers {
    fn default() -> Self {
        Self {
            mu: 0.0,
            phi: 1.0,
            a: 1.0,
            b: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BfMethod {
    ClosedQuadrature,
    ZellnerSiow,
    Bic,
    Fractional,
    MonteCarlo,
}

impl BfMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            BfMethod::ClosedQuadrature => "closed_quadrature",
            BfMethod::ZellnerSiow => "zellner_siow",
            BfMethod::Bic => "bic",
            BfMethod::Fractional => "fractional",
            BfMethod::MonteCarlo => "monte_carlo",
        }
    }
}

/// Natural-log Bayes factor of `M1` over `M2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogBf {
    pub value: f64,
    pub std_err: f64,
    pub method: BfMethod,
    /// Set when the evaluator had to leave its primary route.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl LogBf {
    fn exact(value: f64, method: BfMethod) -> Self {
        Self {
            value,
            std_err: 0.0,
            method,
            detail: None,
        }
    }

    /// The same comparison with the model roles swapped.
    pub fn reversed(&self) -> Self {
        Self {
            value: -self.value,
            ..self.clone()
        }
    }
}

/// Draws `x ~ U(0, 1)` and `y = α + βx + ε`, `ε ~ N(0, σ²)`.
pub fn simulate_regression(
    n: usize,
    alpha: f64,
    beta: f64,
    sigma2: f64,
    seed: u64,
) -> Result<RegressionData> {
    if n < 3 {
        return Err(Error::InsufficientSample { needed: 3, got: n });
    }
    if !(sigma2 >= 0.0 && sigma2.is_finite()) {
        return Err(Error::param("sigma2", "must be non-negative"));
    }
    let mut rng = rng::seeded(seed);
    let unif = Uniform::new(0.0, 1.0).expect("valid range");
    let x: Vec<f64> = (0..n).map(|_| unif.sample(&mut rng)).collect();
    let y = if sigma2 == 0.0 {
        x.iter().map(|xi| alpha + beta * xi).collect()
    } else {
        let noise = Normal::new(0.0, sigma2.sqrt()).expect("valid sd");
        x.iter()
            .map(|xi| alpha + beta * xi + noise.sample(&mut rng))
            .collect()
    };
    RegressionData::new(x, y)
}

fn log_normalizer(data: &RegressionData, hypers: &RegressionHypers) -> f64 {
    let n1 = (data.n() - 1) as f64;
    hypers.a * hypers.b.ln() - 0.5 * n1 * (2.0 * PI).ln() - ln_gamma(hypers.a)
        - 0.5 * (data.n() as f64).ln()
}

/// Closed-form log marginal likelihood of the no-slope model (`c = 1`).
pub fn log_marginal_m2(data: &RegressionData, hypers: &RegressionHypers) -> f64 {
    let shape = 0.5 * (data.n() - 1) as f64 + hypers.a;
    log_normalizer(data, hypers) + ln_gamma(shape) - shape * (hypers.b + 0.5 * data.szz()).ln()
}

/// Log of the slope model's integrand over the error precision `γ`,
/// without the constant prefactor.
pub fn m1_log_integrand(data: &RegressionData, hypers: &RegressionHypers, gamma: f64) -> f64 {
    if gamma <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let RegressionHypers { mu, phi, a, b } = *hypers;
    let n1 = (data.n() - 1) as f64;
    let denom = phi + gamma * data.sww();
    let lin = phi * mu + gamma * data.szw();
    0.5 * phi.ln() + (0.5 * n1 + a - 1.0) * gamma.ln() - 0.5 * denom.ln() - b * gamma
        - 0.5 * (phi * mu * mu + gamma * data.szz())
        + 0.5 * lin * lin / denom
}

/// Log marginal likelihood of the slope model (`c = 1`), integrating the
/// error precision on the log scale with the default mesh.
pub fn log_marginal_m1(data: &RegressionData, hypers: &RegressionHypers) -> Result<f64> {
    log_marginal_m1_with(data, hypers, &QuadratureSpec::log_precision())
}

pub fn log_marginal_m1_with(
    data: &RegressionData,
    hypers: &RegressionHypers,
    spec: &QuadratureSpec,
) -> Result<f64> {
    let integral = numerics::log_trapezoid(|g| m1_log_integrand(data, hypers, g), spec)?;
    Ok(log_normalizer(data, hypers) + integral)
}

/// `log p(y|M1) − log p(y|M2)` under the conjugate-style priors.
pub fn log_bf_12(data: &RegressionData, hypers: &RegressionHypers) -> Result<LogBf> {
    hypers.validate()?;
    let m1 = log_marginal_m1(data, hypers)?;
    let m2 = log_marginal_m2(data, hypers);
    Ok(LogBf::exact(m1 - m2, BfMethod::ClosedQuadrature))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Model {
    M1,
    M2,
}

/// Monte Carlo estimate of a log marginal likelihood and its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub log_marginal: f64,
    pub std_err: f64,
}

/// Smallest budget accepted by [`mc_oracle_log_marginal`].
pub const MC_ORACLE_MIN_DRAWS: usize = 10_000;

/// Prior-sampling estimate of a log marginal likelihood.
///
/// Draws `(β, γ)` from the priors and averages the intercept-integrated
/// likelihood in log space; the standard error is the delta-method error of
/// the log of the sample mean.
pub fn mc_oracle_log_marginal(
    data: &RegressionData,
    hypers: &RegressionHypers,
    model: Model,
    n_draws: usize,
    seed: u64,
) -> Result<McEstimate> {
    if n_draws < MC_ORACLE_MIN_DRAWS {
        return Err(Error::param(
            "n_draws",
            format!("need at least {MC_ORACLE_MIN_DRAWS}"),
        ));
    }
    mc_log_marginal(data, hypers, model, n_draws, seed)
}

fn mc_log_marginal(
    data: &RegressionData,
    hypers: &RegressionHypers,
    model: Model,
    n_draws: usize,
    seed: u64,
) -> Result<McEstimate> {
    hypers.validate()?;
    let mut rng = rng::seeded(seed);
    let gamma_prior = Gamma::new(hypers.a, 1.0 / hypers.b).expect("validated hypers");
    let beta_prior = Normal::new(hypers.mu, 1.0 / hypers.phi.sqrt()).expect("validated hypers");
    let n1 = (data.n() - 1) as f64;
    let konst = -0.5 * n1 * (2.0 * PI).ln() - 0.5 * (data.n() as f64).ln();
    let (szz, szw, sww) = (data.szz(), data.szw(), data.sww());

    let mut logs = Vec::with_capacity(n_draws);
    for _ in 0..n_draws {
        let gamma: f64 = gamma_prior.sample(&mut rng);
        let ss = match model {
            Model::M1 => {
                let beta: f64 = beta_prior.sample(&mut rng);
                (szz - 2.0 * beta * szw + beta * beta * sww).max(0.0)
            }
            Model::M2 => szz,
        };
        let ll = if gamma > 0.0 {
            konst + 0.5 * n1 * gamma.ln() - 0.5 * gamma * ss
        } else {
            f64::NEG_INFINITY
        };
        logs.push(ll);
    }
    Ok(log_mean_with_se(&logs))
}

/// Log of the mean of `exp(logs)` with its delta-method standard error.
pub fn log_mean_with_se(logs: &[f64]) -> McEstimate {
    let n = logs.len() as f64;
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return McEstimate {
            log_marginal: f64::NEG_INFINITY,
            std_err: f64::INFINITY,
        };
    }
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (k, l) in logs.iter().enumerate() {
        let w = (l - max).exp();
        let delta = w - mean;
        mean += delta / (k + 1) as f64;
        m2 += delta * (w - mean);
    }
    let var = if logs.len() > 1 { m2 / (n - 1.0) } else { 0.0 };
    McEstimate {
        log_marginal: max + mean.ln(),
        std_err: (var / n).sqrt() / mean,
    }
}

const ZS_LOG_G_RANGE: (f64, f64) = (-15.0, 15.0);

fn r_squared(data: &RegressionData) -> Result<f64> {
    if data.sww() <= 0.0 {
        return Err(Error::param("x", "predictor has no spread"));
    }
    if data.szz() <= 0.0 {
        return Err(Error::PerfectFit);
    }
    Ok((data.szw() * data.szw() / (data.sww() * data.szz())).min(1.0))
}

/// `log BF(M1:M2 | g)` for Zellner's g-prior on the centered slope.
pub fn zs_log_bf_given_g(n: usize, r2: f64, g: f64) -> f64 {
    let n = n as f64;
    0.5 * (n - 2.0) * g.ln_1p() - 0.5 * (n - 1.0) * (g * (1.0 - r2)).ln_1p()
}

/// Log density of the `IG(1/2, n/2)` mixing distribution on `g`.
pub fn zs_log_mixing_density(n: usize, g: f64) -> f64 {
    let half_n = 0.5 * n as f64;
    0.5 * half_n.ln() - 0.5 * PI.ln() - 1.5 * g.ln() - half_n / g
}

/// Zellner–Siow mixture g-prior Bayes factor.
///
/// The slope prior is `N(0, g/(γ Σw²))` with `p(α, γ) ∝ 1/γ` and
/// `g ~ IG(1/2, n/2)`. Given `g` the Bayes factor is closed form; the
/// remaining integral over `log g` uses a Laplace approximation with its
/// second-order correction (the plain one is about 0.08 low because the
/// mixing prior is skewed), falling back to the trapezoid rule on
/// `log g ∈ [-15, 15]` when that fails.
pub fn log_bf_zellner_siow(data: &RegressionData) -> Result<LogBf> {
    let r2 = r_squared(data)?;
    let n = data.n();
    if n < 3 {
        return Err(Error::InsufficientSample { needed: 3, got: n });
    }
    let f = |t: f64| {
        let g = t.exp();
        zs_log_bf_given_g(n, r2, g) + zs_log_mixing_density(n, g) + t
    };
    let (lo, hi) = ZS_LOG_G_RANGE;
    let init = (n as f64).ln();
    match numerics::laplace_corrected_log_integral(f, init, Interval::new(lo, hi)) {
        Ok(v) => Ok(LogBf::exact(v, BfMethod::ZellnerSiow)),
        Err(Error::LaplaceFailure(why)) => {
            let spec = QuadratureSpec::identity(lo, hi, numerics::DEFAULT_NODES);
            let v = numerics::log_trapezoid(f, &spec)?;
            Ok(LogBf {
                detail: Some(format!("laplace fallback to trapezoid: {why}")),
                ..LogBf::exact(v, BfMethod::ZellnerSiow)
            })
        }
        Err(e) => Err(e),
    }
}

/// Maximized Gaussian log-likelihood and BIC for the two least-squares fits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BicPair {
    pub bic_1: f64,
    pub bic_2: f64,
}

/// Parameter counts used in the BIC penalty (σ² counted).
pub const BIC_PARAMS_M1: usize = 3;
pub const BIC_PARAMS_M2: usize = 2;

pub fn gaussian_max_loglik(n: usize, rss: f64) -> f64 {
    let n = n as f64;
    -0.5 * n * ((2.0 * PI).ln() + (rss / n).ln() + 1.0)
}

pub fn bic_pair(data: &RegressionData) -> BicPair {
    let n = data.n();
    let ln_n = (n as f64).ln();
    BicPair {
        bic_1: -2.0 * gaussian_max_loglik(n, data.rss_slope()) + BIC_PARAMS_M1 as f64 * ln_n,
        bic_2: -2.0 * gaussian_max_loglik(n, data.szz()) + BIC_PARAMS_M2 as f64 * ln_n,
    }
}

/// `log BF ≈ −½ (BIC_1 − BIC_2)`.
pub fn log_bf_from_bic(bic_1: f64, bic_2: f64) -> f64 {
    -0.5 * (bic_1 - bic_2)
}

/// BIC approximation to the log Bayes factor.
pub fn log_bf_bic(data: &RegressionData) -> Result<LogBf> {
    let n = data.n();
    if n < 3 {
        return Err(Error::InsufficientSample { needed: 3, got: n });
    }
    let (rss1, rss2) = (data.rss_slope(), data.szz());
    let ln_n = (n as f64).ln();
    // Written through the RSS ratio so that a constant outcome (both fits
    // perfect) is a likelihood tie rather than ∞ − ∞.
    let loglik_diff = if rss2 == 0.0 {
        0.0
    } else if rss1 == 0.0 {
        return Err(Error::PerfectFit);
    } else {
        -0.5 * n as f64 * (rss1 / rss2).ln()
    };
    let penalty = (BIC_PARAMS_M1 - BIC_PARAMS_M2) as f64 * ln_n;
    Ok(LogBf::exact(loglik_diff - 0.5 * penalty, BfMethod::Bic))
}

/// Log of `q_k(b) = m_k / m_k^b` for a Gaussian linear model with `p`
/// coefficients under the reference prior `1/γ`; `|XᵀX|` and the improper
/// constant cancel.
fn log_fractional_q(n: usize, m: usize, p: usize, rss: f64) -> f64 {
    let (nf, mf, pf) = (n as f64, m as f64, p as f64);
    let b = mf / nf;
    -0.5 * nf * (1.0 - b) * (2.0 * PI).ln() + 0.5 * pf * b.ln() + ln_gamma(0.5 * (nf - pf))
        - ln_gamma(0.5 * (mf - pf))
        - 0.5 * (nf - pf) * (0.5 * rss).ln()
        + 0.5 * (mf - pf) * (0.5 * b * rss).ln()
}

/// Fractional Bayes factor with training fraction `b = m/n` under the
/// reference prior `p(α, β, γ) ∝ 1/γ`.
pub fn log_bf_fractional(data: &RegressionData, m: usize) -> Result<LogBf> {
    let n = data.n();
    if m < 3 || m > n {
        return Err(Error::InsufficientTrainingFraction { m, n });
    }
    if data.sww() <= 0.0 {
        return Err(Error::param("x", "predictor has no spread"));
    }
    let (rss1, rss2) = (data.rss_slope(), data.szz());
    if rss1 <= 0.0 || rss2 <= 0.0 {
        return Err(Error::PerfectFit);
    }
    if m == n {
        return Ok(LogBf::exact(0.0, BfMethod::Fractional));
    }
    let v = log_fractional_q(n, m, 2, rss1) - log_fractional_q(n, m, 1, rss2);
    Ok(LogBf::exact(v, BfMethod::Fractional))
}

/// Smallest draw budget accepted by [`noisy_log_bf`].
pub const NOISY_MIN_DRAWS: usize = 1_000;

/// Stochastic log Bayes factor: the difference of two prior-sampling
/// estimates at a fixed draw budget. Its noise level varies with the
/// hyperparameters, which makes it a cheap stand-in for MCMC-based evaluators.
pub fn noisy_log_bf(
    data: &RegressionData,
    hypers: &RegressionHypers,
    n_draws: usize,
    seed: u64,
) -> Result<LogBf> {
    if n_draws < NOISY_MIN_DRAWS {
        return Err(Error::param(
            "n_draws",
            format!("need at least {NOISY_MIN_DRAWS}"),
        ));
    }
    let m1 = mc_log_marginal(data, hypers, Model::M1, n_draws, rng::derive_seed(seed, &[1]))?;
    let m2 = mc_log_marginal(data, hypers, Model::M2, n_draws, rng::derive_seed(seed, &[2]))?;
    let value = m1.log_marginal - m2.log_marginal;
    if !value.is_finite() {
        return Err(Error::IntegrandUnderflow);
    }
    Ok(LogBf {
        value,
        std_err: m1.std_err.hypot(m2.std_err),
        method: BfMethod::MonteCarlo,
        detail: None,
    })
}

/// Classical least-squares summary for the slope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OlsSummary {
    pub intercept: f64,
    pub slope: f64,
    pub std_err: f64,
    pub t_stat: f64,
    pub p_value: f64,
}

pub fn ols_summary(data: &RegressionData) -> Result<OlsSummary> {
    let n = data.n();
    if n < 3 {
        return Err(Error::InsufficientSample { needed: 3, got: n });
    }
    if data.sww() <= 0.0 {
        return Err(Error::param("x", "predictor has no spread"));
    }
    let slope = data.szw() / data.sww();
    let intercept = data.y_mean() - slope * data.x_mean();
    let df = (n - 2) as f64;
    let sigma2 = data.rss_slope() / df;
    let std_err = (sigma2 / data.sww()).sqrt();
    let t_stat = slope / std_err;
    let t = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    let p_value = if t_stat.is_finite() {
        2.0 * t.sf(t_stat.abs())
    } else {
        0.0
    };
    Ok(OlsSummary {
        intercept,
        slope,
        std_err,
        t_stat,
        p_value,
    })
}

/// All four deterministic regression Bayes factors at once.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BfReport {
    pub closed_quadrature: LogBf,
    pub zellner_siow: LogBf,
    pub bic: LogBf,
    pub fractional: LogBf,
}

pub fn bf_report(data: &RegressionData, hypers: &RegressionHypers, m: usize) -> Result<BfReport> {
    Ok(BfReport {
        closed_quadrature: log_bf_12(data, hypers)?,
        zellner_siow: log_bf_zellner_siow(data)?,
        bic: log_bf_bic(data)?,
        fractional: log_bf_fractional(data, m)?,
    })
}

/// Normal density of the slope prior, for plotting.
pub fn beta_prior_log_density(hypers: &RegressionHypers, beta: f64) -> f64 {
    0.5 * (hypers.phi / (2.0 * PI)).ln() - 0.5 * hypers.phi * (beta - hypers.mu).powi(2)
}

/// Gamma density of the error-precision prior, for plotting.
pub fn gamma_prior_log_density(hypers: &RegressionHypers, gamma: f64) -> f64 {
    if gamma <= 0.0 {
        return f64::NEG_INFINITY;
    }
    hypers.a * hypers.b.ln() - ln_gamma(hypers.a) + (hypers.a - 1.0) * gamma.ln()
        - hypers.b * gamma
}

/// Seed of the demo data set: its least-squares slope is 2.45 with a
/// classical p-value of about 0.002.
pub const DEFAULT_STUDY_SEED: u64 = 9;

/// Seeded `n = 30`, `β = 2.5`, `σ² = 1` data set used by the demos.
pub fn default_study_data(seed: u64) -> RegressionData {
    simulate_regression(30, 0.0, 2.5, 1.0, seed).expect("valid settings")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demo_data() -> RegressionData {
        default_study_data(1)
    }

    #[test]
    fn zero_noise_simulation_is_exact() {
        let d = simulate_regression(5, 1.0, 2.0, 0.0, 7).unwrap();
        for (x, y) in d.x().iter().zip(d.y()) {
            assert_eq!(*y, 1.0 + 2.0 * x);
        }
    }

    #[test]
    fn simulation_is_deterministic() {
        assert_eq!(demo_data(), demo_data());
        assert_ne!(demo_data(), default_study_data(2));
    }

    #[test]
    fn simulation_needs_three_points() {
        assert!(matches!(
            simulate_regression(2, 0.0, 1.0, 1.0, 1),
            Err(Error::InsufficientSample { .. })
        ));
    }

    #[test]
    fn large_sample_slope_is_consistent() {
        let d = simulate_regression(10_000, 0.0, 2.5, 1.0, 1).unwrap();
        let s = ols_summary(&d).unwrap();
        assert!((s.slope - 2.5).abs() < 0.1, "{}", s.slope);
    }

    #[test]
    fn centering_sums_vanish() {
        let d = demo_data();
        assert!(d.w().iter().sum::<f64>().abs() < 1e-10);
        assert!(d.z().iter().sum::<f64>().abs() < 1e-10);
    }

    #[test]
    fn m2_closed_form_degenerate_case() {
        let d = RegressionData::new(vec![0.0, 1.0], vec![5.0, 5.0]).unwrap();
        let h = RegressionHypers::new(0.0, 1.0, 1.0, 1.0).unwrap();
        assert!((log_marginal_m2(&d, &h) - 0.25f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn m2_ignores_slope_hypers() {
        let d = demo_data();
        let a = RegressionHypers::new(0.0, 1.0, 2.0, 3.0).unwrap();
        let b = RegressionHypers::new(50.0, 100.0, 2.0, 3.0).unwrap();
        assert_eq!(log_marginal_m2(&d, &a), log_marginal_m2(&d, &b));
    }

    #[test]
    fn m2_decreases_in_spread() {
        let h = RegressionHypers::default();
        let mut last = f64::INFINITY;
        for scale in [0.5, 1.0, 2.0, 4.0] {
            let d = RegressionData::new(vec![0.0, 1.0, 2.0], vec![0.0, scale, -scale]).unwrap();
            let v = log_marginal_m2(&d, &h);
            assert!(v < last);
            last = v;
        }
    }

    #[test]
    fn point_mass_prior_recovers_m2() {
        let d = demo_data();
        let h = RegressionHypers::new(0.0, 1e10, 1.0, 1.0).unwrap();
        let m1 = log_marginal_m1(&d, &h).unwrap();
        let m2 = log_marginal_m2(&d, &h);
        assert!((m1 - m2).abs() < 1e-4, "{m1} vs {m2}");
    }

    #[test]
    fn m1_mesh_refinement() {
        let d = demo_data();
        for h in [
            RegressionHypers::new(0.0, 1.0, 1.0, 1.0).unwrap(),
            RegressionHypers::new(2.0, 1e-3, 0.5, 5.0).unwrap(),
            RegressionHypers::new(-3.0, 100.0, 5.0, 0.5).unwrap(),
        ] {
            let spec = QuadratureSpec::log_precision();
            let a = log_marginal_m1_with(&d, &h, &spec).unwrap();
            let b = log_marginal_m1_with(&d, &h, &spec.refined()).unwrap();
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn antisymmetry_and_constant_offsets() {
        let d = demo_data();
        let h = RegressionHypers::default();
        let bf = log_bf_12(&d, &h).unwrap();
        let m1 = log_marginal_m1(&d, &h).unwrap();
        let m2 = log_marginal_m2(&d, &h);
        assert_eq!(bf.reversed().value, m2 - m1);
        let kappa = 123.456;
        assert!(((m1 + kappa) - (m2 + kappa) - bf.value).abs() < 1e-9);
    }

    #[test]
    fn bic_constant_outcome() {
        let d = RegressionData::new(vec![0.1, 0.5, 0.9, 0.3], vec![2.0; 4]).unwrap();
        let v = log_bf_bic(&d).unwrap().value;
        assert!((v + 0.5 * 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn bic_tie_is_zero() {
        assert_eq!(log_bf_from_bic(100.25, 100.25), 0.0);
    }

    #[test]
    fn bic_matches_pair() {
        let d = demo_data();
        let pair = bic_pair(&d);
        let v = log_bf_bic(&d).unwrap().value;
        assert!((v - log_bf_from_bic(pair.bic_1, pair.bic_2)).abs() < 1e-9);
    }

    #[test]
    fn fractional_full_fraction_is_zero() {
        let d = demo_data();
        assert_eq!(log_bf_fractional(&d, d.n()).unwrap().value, 0.0);
        // The closed form itself also collapses at b = 1.
        let n = d.n();
        let v = log_fractional_q(n, n, 2, d.rss_slope()) - log_fractional_q(n, n, 1, d.szz());
        assert!(v.abs() < 1e-10);
    }

    #[test]
    fn fractional_rejects_small_training_sample() {
        let d = demo_data();
        assert!(matches!(
            log_bf_fractional(&d, 2),
            Err(Error::InsufficientTrainingFraction { m: 2, .. })
        ));
        assert!(log_bf_fractional(&d, 31).is_err());
    }

    #[test]
    fn zs_orthogonal_data_has_no_evidence() {
        let x = vec![-1.0, 0.0, 1.0, -1.0, 0.0, 1.0];
        let y = vec![1.0, -2.0, 1.0, 0.5, -1.0, 0.5];
        let d = RegressionData::new(x, y).unwrap();
        assert!(d.szw().abs() < 1e-12);
        assert!(log_bf_zellner_siow(&d).unwrap().value < 0.0);
    }

    #[test]
    fn noisy_requires_budget() {
        let d = demo_data();
        assert!(noisy_log_bf(&d, &RegressionHypers::default(), 999, 1).is_err());
        let v = noisy_log_bf(&d, &RegressionHypers::default(), 1000, 1).unwrap();
        assert!(v.std_err > 0.0);
        assert_eq!(v.method, BfMethod::MonteCarlo);
    }

    #[test]
    fn mc_oracle_requires_budget() {
        let d = demo_data();
        assert!(mc_oracle_log_marginal(&d, &RegressionHypers::default(), Model::M1, 100, 1).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let d = demo_data();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let back = RegressionData::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn csv_reports_bad_line() {
        let text = "x,y\n1,2\n3,oops\n";
        match RegressionData::read_csv(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn hypers_validation_names_field() {
        match RegressionHypers::new(0.0, -1.0, 1.0, 1.0) {
            Err(Error::InvalidParameter { field, .. }) => assert_eq!(field, "phi"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn log_bf_json_shape() {
        let v = serde_json::to_value(LogBf::exact(1.5, BfMethod::Bic)).unwrap();
        assert_eq!(v, serde_json::json!({"value": 1.5, "std_err": 0.0, "method": "bic"}));
    }
}
