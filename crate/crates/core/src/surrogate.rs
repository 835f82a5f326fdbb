//! Gaussian-process surrogates for log Bayes factor surfaces.
//!
//! Inputs live in the unit cube (see [`crate::design::HyperBox`]); outputs
//! are standardized internally to zero mean and unit variance. Replicated
//! observations are pooled per unique location, so the mean process is
//! conditioned on location means with per-location noise `σ²(x)/a`.
//!
//! Two fits share this machinery:
//!
//! * [`fit_gp`]: homoskedastic noise (fixed or estimated nugget);
//! * [`fit_hetgp`]: stochastic-kriging noise, where empirical log variances of
//!   the replicates are smoothed by a secondary GP, and the mean process is
//!   fit with that noise field held fixed.

use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::gamma::digamma;

use crate::design::HyperBox;
use crate::error::{Error, Result};
use crate::numerics::{self, SpdFactor};
use crate::rng;

/// Smallest per-observation noise variance, relative to the output variance.
pub const NOISE_FLOOR: f64 = 1e-8;
/// Lengthscale bounds in unit-cube coordinates.
pub const LENGTHSCALE_BOUNDS: (f64, f64) = (1e-2, 10.0);
/// Signal variance bounds on the standardized output scale.
pub const SIGNAL_VAR_BOUNDS: (f64, f64) = (1e-4, 1e2);
/// Bounds on an estimated nugget (standardized scale).
pub const NUGGET_BOUNDS: (f64, f64) = (NOISE_FLOOR, 1e1);
/// Locations with replicates needed before noise is smoothed.
pub const MIN_REPLICATED_LOCATIONS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    SquaredExponential,
    #[default]
    #[serde(rename = "matern_5_2")]
    Matern52,
}

/// Stationary anisotropic kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub lengthscales: Vec<f64>,
    pub signal_var: f64,
}

impl KernelSpec {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let r2: f64 = a
            .iter()
            .zip(b)
            .zip(&self.lengthscales)
            .map(|((x, y), l)| ((x - y) / l).powi(2))
            .sum();
        self.signal_var * self.profile(r2)
    }

    /// Correlation as a function of the scaled squared distance.
    fn profile(&self, r2: f64) -> f64 {
        match self.family {
            KernelFamily::SquaredExponential => (-0.5 * r2).exp(),
            KernelFamily::Matern52 => {
                let sr = (5.0 * r2).sqrt();
                (1.0 + sr + 5.0 * r2 / 3.0) * (-sr).exp()
            }
        }
    }

    /// `∂k/∂log ℓ_k = weight · Δ_k²/ℓ_k²`; returns `(k, weight)`.
    fn value_and_weight(&self, a: &[f64], b: &[f64]) -> (f64, f64) {
        let r2: f64 = a
            .iter()
            .zip(b)
            .zip(&self.lengthscales)
            .map(|((x, y), l)| ((x - y) / l).powi(2))
            .sum();
        match self.family {
            KernelFamily::SquaredExponential => {
                let k = self.signal_var * (-0.5 * r2).exp();
                (k, k)
            }
            KernelFamily::Matern52 => {
                let sr = (5.0 * r2).sqrt();
                let e = (-sr).exp();
                let k = self.signal_var * (1.0 + sr + 5.0 * r2 / 3.0) * e;
                (k, self.signal_var * 5.0 / 3.0 * (1.0 + sr) * e)
            }
        }
    }
}

/// Observations at one unique input location.
#[derive(Debug, Clone, PartialEq)]
pub struct RepGroup {
    pub x: Vec<f64>,
    /// Indices into the training observations.
    pub indices: Vec<usize>,
    pub mean: f64,
    /// Within-location sum of squared deviations from `mean`.
    pub ss: f64,
}

impl RepGroup {
    pub fn count(&self) -> usize {
        self.indices.len()
    }

    /// Sample variance (divisor `count − 1`); 0 for a single observation.
    pub fn var(&self) -> f64 {
        if self.count() < 2 {
            0.0
        } else {
            self.ss / (self.count() - 1) as f64
        }
    }
}

/// Scaled inputs, observations, and their grouping into unique locations.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    reps: Vec<RepGroup>,
}

impl TrainingSet {
    /// `x` rows must lie in `[0, 1]^d`. Identical rows form one location;
    /// locations keep their order of first appearance.
    pub fn new(x: Vec<Vec<f64>>, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} input rows but {} observations",
                x.len(),
                y.len()
            )));
        }
        if x.is_empty() {
            return Err(Error::Empty("training set has no observations".into()));
        }
        let d = x[0].len();
        if d == 0 {
            return Err(Error::Empty("training inputs have no columns".into()));
        }
        for (i, row) in x.iter().enumerate() {
            if row.len() != d {
                return Err(Error::DimensionMismatch(format!(
                    "row {i} has {} columns, expected {d}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !(-1e-9..=1.0 + 1e-9).contains(v)) {
                return Err(Error::param("x", format!("row {i} lies outside the unit cube")));
            }
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::param("y", format!("observation {i} is not finite")));
        }
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut reps: Vec<RepGroup> = Vec::new();
        for (i, row) in x.iter().enumerate() {
            let key: Vec<u64> = row.iter().map(|v| (v + 0.0).to_bits()).collect();
            let k = *index.entry(key).or_insert_with(|| {
                reps.push(RepGroup {
                    x: row.clone(),
                    indices: Vec::new(),
                    mean: 0.0,
                    ss: 0.0,
                });
                reps.len() - 1
            });
            reps[k].indices.push(i);
        }
        for r in &mut reps {
            let a = r.indices.len() as f64;
            r.mean = r.indices.iter().map(|&i| y[i]).sum::<f64>() / a;
            r.ss = r.indices.iter().map(|&i| (y[i] - r.mean).powi(2)).sum();
        }
        Ok(Self { x, y, reps })
    }

    /// Builds a training set from native-unit locations.
    pub fn from_native(bbox: &HyperBox, points: &[Vec<f64>], y: Vec<f64>) -> Result<Self> {
        if let Some(p) = points.iter().find(|p| p.len() != bbox.d()) {
            return Err(Error::DimensionMismatch(format!(
                "point {p:?} does not match the {}-dimensional box",
                bbox.d()
            )));
        }
        Self::new(points.iter().map(|p| bbox.to_unit(p)).collect(), y)
    }

    pub fn x(&self) -> &[Vec<f64>] {
        &self.x
    }
    pub fn y(&self) -> &[f64] {
        &self.y
    }
    pub fn reps(&self) -> &[RepGroup] {
        &self.reps
    }
    pub fn d(&self) -> usize {
        self.x[0].len()
    }
    pub fn n_obs(&self) -> usize {
        self.y.len()
    }
    pub fn n_locations(&self) -> usize {
        self.reps.len()
    }

    /// Randomly assigns whole locations to a holdout set of roughly
    /// `holdout_fraction` of the locations.
    pub fn split_locations(&self, holdout_fraction: f64, seed: u64) -> Result<(Self, Self)> {
        if !(0.0..1.0).contains(&holdout_fraction) || holdout_fraction == 0.0 {
            return Err(Error::param(
                "holdout_fraction",
                format!("must lie in (0, 1), got {holdout_fraction}"),
            ));
        }
        let m = self.reps.len();
        let n_hold = ((m as f64 * holdout_fraction).round() as usize).clamp(1, m.saturating_sub(1));
        if m < 2 {
            return Err(Error::InsufficientSample { needed: 2, got: m });
        }
        let mut order: Vec<usize> = (0..m).collect();
        order.shuffle(&mut rng::seeded(seed));
        let mut hold = vec![false; m];
        for &k in &order[..n_hold] {
            hold[k] = true;
        }
        let collect = |want: bool| {
            let (mut x, mut y) = (Vec::new(), Vec::new());
            for (k, r) in self.reps.iter().enumerate() {
                if hold[k] == want {
                    for &i in &r.indices {
                        x.push(self.x[i].clone());
                        y.push(self.y[i]);
                    }
                }
            }
            Self::new(x, y)
        };
        Ok((collect(false)?, collect(true)?))
    }
}

/// How the homoskedastic fit treats observation noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nugget {
    /// Per-observation noise variance as a fraction of the output variance.
    Fixed(f64),
    Estimated,
}

/// Optimizer and kernel settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GpOptions {
    pub family: KernelFamily,
    pub starts: usize,
    pub max_iter: usize,
    pub gtol: f64,
    /// Relative value change that also ends a start, as in L-BFGS-B.
    pub ftol: f64,
    pub seed: u64,
}

impl Default for GpOptions {
    fn default() -> Self {
        Self {
            family: KernelFamily::Matern52,
            starts: 5,
            max_iter: 500,
            gtol: 1e-5,
            ftol: 1e-10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum NoiseSpec {
    Fixed(f64),
    Estimated,
    /// Per-observation variance at each location.
    Known(Vec<f64>),
}

/// Log marginal likelihood of a constant-mean GP on standardized,
/// replicate-pooled data, as a function of log hyperparameters
/// `(log ℓ_1, …, log ℓ_d, log s², [log τ²])`.
///
/// The likelihood covers every observation, not just location means: the
/// within-location scatter contributes `Σ −(a−1)/2·log(2πσ²) − ½·log a −
/// SS/(2σ²)`. The constant mean is profiled out by generalized least
/// squares.
#[derive(Debug, Clone, PartialEq)]
pub struct GpProblem {
    family: KernelFamily,
    x: Vec<Vec<f64>>,
    z: Vec<f64>,
    counts: Vec<f64>,
    ss: Vec<f64>,
    noise: NoiseSpec,
}

struct Assembled {
    factor: SpdFactor,
    alpha: DVector<f64>,
    mean_const: f64,
    log_likelihood: f64,
}

impl GpProblem {
    fn new(family: KernelFamily, train: &TrainingSet, std: &Standardizer, noise: NoiseSpec) -> Self {
        Self {
            family,
            x: train.reps.iter().map(|r| r.x.clone()).collect(),
            z: train.reps.iter().map(|r| std.forward(r.mean)).collect(),
            counts: train.reps.iter().map(|r| r.count() as f64).collect(),
            ss: train.reps.iter().map(|r| r.ss / (std.scale * std.scale)).collect(),
            noise,
        }
    }

    /// Problem with a nugget on the standardized scale of `train`.
    pub fn homoskedastic(train: &TrainingSet, family: KernelFamily, nugget: Nugget) -> Self {
        let std = Standardizer::of(train.y());
        let noise = match nugget {
            Nugget::Fixed(v) => NoiseSpec::Fixed(v.max(NOISE_FLOOR)),
            Nugget::Estimated => NoiseSpec::Estimated,
        };
        Self::new(family, train, &std, noise)
    }

    pub fn d(&self) -> usize {
        self.x[0].len()
    }

    pub fn n_params(&self) -> usize {
        self.d() + 1 + usize::from(self.noise == NoiseSpec::Estimated)
    }

    /// Parameter bounds in log space.
    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.d();
        let mut lo = vec![LENGTHSCALE_BOUNDS.0.ln(); d];
        let mut hi = vec![LENGTHSCALE_BOUNDS.1.ln(); d];
        lo.push(SIGNAL_VAR_BOUNDS.0.ln());
        hi.push(SIGNAL_VAR_BOUNDS.1.ln());
        if self.noise == NoiseSpec::Estimated {
            lo.push(NUGGET_BOUNDS.0.ln());
            hi.push(NUGGET_BOUNDS.1.ln());
        }
        (lo, hi)
    }

    fn kernel(&self, theta: &[f64]) -> KernelSpec {
        let d = self.d();
        KernelSpec {
            family: self.family,
            lengthscales: theta[..d].iter().map(|v| v.exp()).collect(),
            signal_var: theta[d].exp(),
        }
    }

    /// Per-observation noise variance at each location.
    fn noise_vars(&self, theta: &[f64]) -> Vec<f64> {
        let n = self.x.len();
        match &self.noise {
            NoiseSpec::Fixed(v) => vec![*v; n],
            NoiseSpec::Estimated => vec![theta[self.d() + 1].exp(); n],
            NoiseSpec::Known(v) => v.clone(),
        }
    }

    fn assemble(&self, theta: &[f64]) -> Result<Assembled> {
        let n = self.x.len();
        let noise = self.noise_vars(theta);
        let k = covariance(&self.kernel(theta), &self.x, &noise, &self.counts);
        let factor = SpdFactor::new(&k)?;
        let ones = DVector::from_element(n, 1.0);
        let z = DVector::from_column_slice(&self.z);
        let kinv1 = factor.solve_vec(&ones);
        let kinvz = factor.solve_vec(&z);
        let mean_const = kinvz.sum() / kinv1.sum();
        let resid = z.add_scalar(-mean_const);
        // Same operation as on reload, so stored fits predict bit-identically.
        let alpha = factor.solve_vec(&resid);
        let mut ll = -0.5 * resid.dot(&alpha) - 0.5 * factor.log_det() - 0.5 * n as f64 * (2.0 * PI).ln();
        for i in 0..n {
            let a = self.counts[i];
            ll += -0.5 * (a - 1.0) * (2.0 * PI * noise[i]).ln() - 0.5 * a.ln() - 0.5 * self.ss[i] / noise[i];
        }
        Ok(Assembled {
            factor,
            alpha,
            mean_const,
            log_likelihood: ll,
        })
    }

    /// Log likelihood and its analytic gradient with respect to the log
    /// hyperparameters.
    pub fn eval(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        if theta.len() != self.n_params() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} hyperparameters, got {}",
                self.n_params(),
                theta.len()
            )));
        }
        let asm = self.assemble(theta)?;
        let n = self.x.len();
        let d = self.d();
        let kern = self.kernel(theta);
        let kinv = asm.factor.inverse();
        // W = ααᵀ − K⁻¹; ∂ll/∂θ = ½ tr(W ∂K/∂θ)
        let w = &asm.alpha * asm.alpha.transpose() - kinv;
        let mut grad = vec![0.0; self.n_params()];
        let mut sig = 0.0;
        for a in 0..n {
            sig += 0.5 * w[(a, a)] * kern.signal_var;
            for b in 0..a {
                let (kv, weight) = kern.value_and_weight(&self.x[a], &self.x[b]);
                let wab = w[(a, b)];
                sig += wab * kv;
                for j in 0..d {
                    let delta = (self.x[a][j] - self.x[b][j]) / kern.lengthscales[j];
                    grad[j] += wab * weight * delta * delta;
                }
            }
        }
        grad[d] = sig;
        if self.noise == NoiseSpec::Estimated {
            let tau2 = theta[d + 1].exp();
            let mut gt = 0.0;
            for a in 0..n {
                gt += 0.5 * w[(a, a)] * tau2 / self.counts[a];
                gt += -0.5 * (self.counts[a] - 1.0) + 0.5 * self.ss[a] / tau2;
            }
            grad[d + 1] = gt;
        }
        Ok((asm.log_likelihood, grad))
    }

    /// Log likelihood alone.
    pub fn log_likelihood(&self, theta: &[f64]) -> Result<f64> {
        Ok(self.assemble(theta)?.log_likelihood)
    }

    fn initial(&self, start: usize, seed: u64) -> Vec<f64> {
        let d = self.d();
        let mut theta = Vec::with_capacity(self.n_params());
        if start == 0 {
            theta.extend(std::iter::repeat_n((0.5f64).ln(), d));
            theta.push(0.0);
            if self.noise == NoiseSpec::Estimated {
                theta.push((0.05f64).ln());
            }
            return theta;
        }
        let mut rng = rng::stream(seed, start as u64);
        let mut uniform = |lo: f64, hi: f64| lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln());
        for _ in 0..d {
            theta.push(uniform(0.05, 2.0));
        }
        theta.push(uniform(0.1, 10.0));
        if self.noise == NoiseSpec::Estimated {
            theta.push(uniform(1e-6, 0.5));
        }
        theta
    }
}

/// Summary of one optimizer start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartSummary {
    pub initial_log_likelihood: f64,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct FitDiagnostics {
    /// Whether the returned hyperparameters come from a converged start.
    pub converged: bool,
    pub starts: Vec<StartSummary>,
    /// Number of noise-smoothing passes (0 for homoskedastic fits).
    pub passes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub smoother_converged: Option<bool>,
}

struct Optimized {
    theta: Vec<f64>,
    starts: Vec<StartSummary>,
    converged: bool,
}

/// Multi-start maximization; prefers converged starts, ties to the lowest
/// start index.
fn optimize(problem: &GpProblem, opts: &GpOptions) -> Result<Optimized> {
    let (lo, hi) = problem.bounds();
    let objective = |theta: &[f64]| -> Option<(f64, Vec<f64>)> {
        let (ll, g) = problem.eval(theta).ok()?;
        ll.is_finite().then(|| (-ll, g.into_iter().map(|v| -v).collect()))
    };
    let runs: Vec<Option<(Vec<f64>, StartSummary)>> = (0..opts.starts.max(1))
        .into_par_iter()
        .map(|s| {
            let init = problem.initial(s, opts.seed);
            let init_ll = problem.log_likelihood(&init).unwrap_or(f64::NEG_INFINITY);
            let value = |theta: &[f64]| problem.log_likelihood(theta).ok().filter(|v| v.is_finite()).map(|v| -v);
            let m = numerics::bfgs_bounded_split(value, objective, &init, &lo, &hi, opts.gtol, opts.ftol, opts.max_iter)?;
            Some((
                m.x,
                StartSummary {
                    initial_log_likelihood: init_ll,
                    log_likelihood: -m.value,
                    iterations: m.iterations,
                    grad_norm: m.grad_norm,
                    converged: m.converged,
                },
            ))
        })
        .collect();
    let mut best: Option<(usize, bool, f64)> = None;
    for (i, r) in runs.iter().enumerate() {
        if let Some((_, s)) = r {
            let better = match best {
                None => true,
                Some((_, bc, bll)) => (s.converged && !bc) || (s.converged == bc && s.log_likelihood > bll),
            };
            if better {
                best = Some((i, s.converged, s.log_likelihood));
            }
        }
    }
    let (idx, converged, _) = best.ok_or(Error::NotPositiveDefinite { jitter: 1e-6 })?;
    let theta = runs[idx].as_ref().expect("best start exists").0.clone();
    let starts = runs
        .into_iter()
        .map(|r| {
            r.map(|(_, s)| s).unwrap_or(StartSummary {
                initial_log_likelihood: f64::NEG_INFINITY,
                log_likelihood: f64::NEG_INFINITY,
                iterations: 0,
                grad_norm: f64::INFINITY,
                converged: false,
            })
        })
        .collect();
    Ok(Optimized {
        theta,
        starts,
        converged,
    })
}

/// Affine map between native outputs and the standardized scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Standardizer {
    center: f64,
    scale: f64,
}

impl Standardizer {
    fn of(y: &[f64]) -> Self {
        let n = y.len() as f64;
        let center = y.iter().sum::<f64>() / n;
        let var = if y.len() > 1 {
            y.iter().map(|v| (v - center).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let scale = if var.sqrt() > 1e-12 * center.abs().max(1e-300) && var > 0.0 {
            var.sqrt()
        } else {
            1.0
        };
        Self { center, scale }
    }

    fn forward(&self, v: f64) -> f64 {
        (v - self.center) / self.scale
    }

    fn back(&self, v: f64) -> f64 {
        v * self.scale + self.center
    }
}

/// A conditioned constant-mean GP on standardized outputs.
#[derive(Debug, Clone)]
pub struct GpModel {
    kernel: KernelSpec,
    x: Vec<Vec<f64>>,
    z: Vec<f64>,
    counts: Vec<f64>,
    ss: Vec<f64>,
    /// Per-observation noise variance at each location (standardized).
    noise: Vec<f64>,
    std: Standardizer,
    mean_const: f64,
    log_likelihood: f64,
    factor: SpdFactor,
    alpha: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GpModelRecord {
    kernel: KernelSpec,
    center: f64,
    scale: f64,
    mean_const: f64,
    log_likelihood: f64,
    x: Vec<Vec<f64>>,
    z: Vec<f64>,
    counts: Vec<f64>,
    ss: Vec<f64>,
    noise: Vec<f64>,
}

impl GpModel {
    fn build(problem: &GpProblem, theta: &[f64], std: Standardizer) -> Result<Self> {
        let asm = problem.assemble(theta)?;
        Ok(Self {
            kernel: problem.kernel(theta),
            x: problem.x.clone(),
            z: problem.z.clone(),
            counts: problem.counts.clone(),
            ss: problem.ss.clone(),
            noise: problem.noise_vars(theta),
            std,
            mean_const: asm.mean_const,
            log_likelihood: asm.log_likelihood,
            factor: asm.factor,
            alpha: asm.alpha,
        })
    }

    fn record(&self) -> GpModelRecord {
        GpModelRecord {
            kernel: self.kernel.clone(),
            center: self.std.center,
            scale: self.std.scale,
            mean_const: self.mean_const,
            log_likelihood: self.log_likelihood,
            x: self.x.clone(),
            z: self.z.clone(),
            counts: self.counts.clone(),
            ss: self.ss.clone(),
            noise: self.noise.clone(),
        }
    }

    fn from_record(r: GpModelRecord) -> Result<Self> {
        let n = r.x.len();
        if n == 0 || [r.z.len(), r.counts.len(), r.ss.len(), r.noise.len()].iter().any(|&l| l != n) {
            return Err(Error::DimensionMismatch("inconsistent stored training data".into()));
        }
        let k = covariance(&r.kernel, &r.x, &r.noise, &r.counts);
        let factor = SpdFactor::new(&k)?;
        let z = DVector::from_column_slice(&r.z);
        let alpha = factor.solve_vec(&z.add_scalar(-r.mean_const));
        Ok(Self {
            kernel: r.kernel,
            x: r.x,
            z: r.z,
            counts: r.counts,
            ss: r.ss,
            noise: r.noise,
            std: Standardizer {
                center: r.center,
                scale: r.scale,
            },
            mean_const: r.mean_const,
            log_likelihood: r.log_likelihood,
            factor,
            alpha,
        })
    }

    /// Standardized predictive mean and epistemic variance.
    fn predict_std(&self, xnew: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
        let n = self.x.len();
        let q = xnew.len();
        if q == 0 {
            return (Vec::new(), Vec::new());
        }
        let mut kstar = DMatrix::zeros(n, q);
        for (j, xs) in xnew.iter().enumerate() {
            for i in 0..n {
                kstar[(i, j)] = self.kernel.eval(&self.x[i], xs);
            }
        }
        let v = self.factor.solve(&kstar);
        let mean = (0..q)
            .map(|j| self.mean_const + kstar.column(j).dot(&self.alpha))
            .collect();
        let var = (0..q)
            .map(|j| (self.kernel.signal_var - kstar.column(j).dot(&v.column(j))).max(0.0))
            .collect();
        (mean, var)
    }
}

fn covariance(kernel: &KernelSpec, x: &[Vec<f64>], noise: &[f64], counts: &[f64]) -> DMatrix<f64> {
    let n = x.len();
    let mut k = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in 0..a {
            let v = kernel.eval(&x[a], &x[b]);
            k[(a, b)] = v;
            k[(b, a)] = v;
        }
        k[(a, a)] = kernel.signal_var + noise[a] / counts[a];
    }
    k
}

/// Noise model of a fitted surrogate.
#[derive(Debug, Clone)]
pub enum NoiseField {
    /// One per-observation variance everywhere (standardized).
    Constant { variance: f64, estimated: bool },
    /// Log per-observation variance (standardized) smoothed by a GP.
    Smoothed { smoother: Box<GpModel> },
}

/// A fitted surrogate: the mean process plus its noise field.
#[derive(Debug, Clone)]
pub struct HetGpFit {
    mean: GpModel,
    noise: NoiseField,
    diagnostics: FitDiagnostics,
    bbox: Option<HyperBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum NoiseRecord {
    Homoskedastic { variance: f64, estimated: bool },
    Heteroskedastic { smoother: GpModelRecord },
}

/// On-disk form of [`HetGpFit`]; the Cholesky factors are rebuilt on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FitRecord {
    format: String,
    kernel: KernelSpec,
    mean_const: f64,
    noise: NoiseRecord,
    #[serde(rename = "box", default, skip_serializing_if = "Option::is_none")]
    bbox: Option<HyperBox>,
    diagnostics: FitDiagnostics,
    model: GpModelRecord,
}

const FIT_FORMAT: &str = "bfsurf-gp-fit/1";

impl Serialize for HetGpFit {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let noise = match &self.noise {
            NoiseField::Constant { variance, estimated } => NoiseRecord::Homoskedastic {
                variance: *variance,
                estimated: *estimated,
            },
            NoiseField::Smoothed { smoother } => NoiseRecord::Heteroskedastic {
                smoother: smoother.record(),
            },
        };
        FitRecord {
            format: FIT_FORMAT.into(),
            kernel: self.mean.kernel.clone(),
            mean_const: self.mean.mean_const,
            noise,
            bbox: self.bbox.clone(),
            diagnostics: self.diagnostics.clone(),
            model: self.mean.record(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for HetGpFit {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let r = FitRecord::deserialize(d)?;
        if r.format != FIT_FORMAT {
            return Err(D::Error::custom(format!("unknown fit format `{}`", r.format)));
        }
        let mean = GpModel::from_record(r.model).map_err(D::Error::custom)?;
        let noise = match r.noise {
            NoiseRecord::Homoskedastic { variance, estimated } => NoiseField::Constant { variance, estimated },
            NoiseRecord::Heteroskedastic { smoother } => NoiseField::Smoothed {
                smoother: Box::new(GpModel::from_record(smoother).map_err(D::Error::custom)?),
            },
        };
        Ok(Self {
            mean,
            noise,
            diagnostics: r.diagnostics,
            bbox: r.bbox,
        })
    }
}

impl HetGpFit {
    /// Kernel of the mean process (signal variance on the standardized scale).
    pub fn kernel(&self) -> &KernelSpec {
        &self.mean.kernel
    }
    /// Generalized-least-squares constant mean, native units.
    pub fn mean_const(&self) -> f64 {
        self.mean.std.back(self.mean.mean_const)
    }
    /// Output center and scale used for standardization.
    pub fn output_scale(&self) -> (f64, f64) {
        (self.mean.std.center, self.mean.std.scale)
    }
    pub fn diagnostics(&self) -> &FitDiagnostics {
        &self.diagnostics
    }
    pub fn noise_field(&self) -> &NoiseField {
        &self.noise
    }
    pub fn is_heteroskedastic(&self) -> bool {
        matches!(self.noise, NoiseField::Smoothed { .. })
    }
    pub fn log_likelihood(&self) -> f64 {
        self.mean.log_likelihood
    }
    pub fn bbox(&self) -> Option<&HyperBox> {
        self.bbox.as_ref()
    }
    /// Attaches the box used to scale inputs, enabling native-unit queries.
    pub fn with_box(mut self, bbox: HyperBox) -> Self {
        self.bbox = Some(bbox);
        self
    }
    /// Unique training locations (unit cube).
    pub fn locations(&self) -> &[Vec<f64>] {
        &self.mean.x
    }
    /// Replicate counts per location.
    pub fn counts(&self) -> Vec<usize> {
        self.mean.counts.iter().map(|&c| c as usize).collect()
    }
    /// Replicate means per location, native units.
    pub fn location_means(&self) -> Vec<f64> {
        self.mean.z.iter().map(|&z| self.mean.std.back(z)).collect()
    }
    /// Per-observation noise variance at each training location, native units.
    pub fn noise_variances(&self) -> Vec<f64> {
        let s2 = self.mean.std.scale.powi(2);
        self.mean.noise.iter().map(|v| v * s2).collect()
    }
    /// Stored training covariance (standardized) and its factor, for
    /// verification.
    pub fn training_covariance(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let k = covariance(&self.mean.kernel, &self.mean.x, &self.mean.noise, &self.mean.counts);
        (k, self.mean.factor.l())
    }

    /// Per-observation noise variance at unit-cube inputs, standardized.
    fn noise_std(&self, xnew: &[Vec<f64>]) -> Vec<f64> {
        match &self.noise {
            NoiseField::Constant { variance, .. } => vec![*variance; xnew.len()],
            NoiseField::Smoothed { smoother } => {
                let (m, _) = smoother.predict_std(xnew);
                m.into_iter()
                    .map(|v| smoother.std.back(v).exp().max(NOISE_FLOOR))
                    .collect()
            }
        }
    }

    /// Predictions at unit-cube inputs.
    pub fn predict(&self, xnew: &[Vec<f64>]) -> Prediction {
        predict(self, xnew)
    }

    /// Predictions at native-unit inputs (requires an attached box).
    pub fn predict_native(&self, points: &[Vec<f64>]) -> Result<Prediction> {
        let bbox = self
            .bbox
            .as_ref()
            .ok_or_else(|| Error::param("box", "fit has no attached hyperbox"))?;
        let unit: Vec<Vec<f64>> = points.iter().map(|p| bbox.to_unit(p)).collect();
        Ok(predict(self, &unit))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Predictive moments, native units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Prediction {
    pub mean: Vec<f64>,
    /// Variance of the latent mean (epistemic).
    pub var_mean: Vec<f64>,
    /// Variance of a new observation: `var_mean` plus noise.
    pub var_obs: Vec<f64>,
    /// Rows outside the unit cube (extrapolation).
    pub extrapolated: Vec<bool>,
}

impl Prediction {
    pub fn len(&self) -> usize {
        self.mean.len()
    }
    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// Central `level` interval for new observations.
    pub fn interval(&self, level: f64) -> Vec<(f64, f64)> {
        let z = normal_quantile(level);
        self.mean
            .iter()
            .zip(&self.var_obs)
            .map(|(m, v)| (m - z * v.sqrt(), m + z * v.sqrt()))
            .collect()
    }

    /// Central `level` interval for the latent mean.
    pub fn mean_interval(&self, level: f64) -> Vec<(f64, f64)> {
        let z = normal_quantile(level);
        self.mean
            .iter()
            .zip(&self.var_mean)
            .map(|(m, v)| (m - z * v.sqrt(), m + z * v.sqrt()))
            .collect()
    }

    /// Writes `names…,mean,sd_mean,sd_obs`, one row per input.
    pub fn write_csv<W: std::io::Write>(&self, names: &[String], inputs: &[Vec<f64>], writer: W) -> Result<()> {
        if inputs.len() != self.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} inputs for {} predictions",
                inputs.len(),
                self.len()
            )));
        }
        let mut wtr = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        let mut header = names.to_vec();
        header.extend(["mean", "sd_mean", "sd_obs"].map(String::from));
        wtr.write_record(&header).map_err(io)?;
        for (i, x) in inputs.iter().enumerate() {
            let mut row: Vec<String> = x.iter().map(|v| format!("{v:.16e}")).collect();
            row.push(format!("{:.16e}", self.mean[i]));
            row.push(format!("{:.16e}", self.var_mean[i].sqrt()));
            row.push(format!("{:.16e}", self.var_obs[i].sqrt()));
            wtr.write_record(&row).map_err(io)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn normal_quantile(level: f64) -> f64 {
    Normal::new(0.0, 1.0)
        .expect("unit normal")
        .inverse_cdf(0.5 * (1.0 + level))
}

/// Homoskedastic GP fit with default options.
pub fn fit_gp(train: &TrainingSet, nugget: Nugget) -> Result<HetGpFit> {
    fit_gp_with(train, nugget, &GpOptions::default())
}

pub fn fit_gp_with(train: &TrainingSet, nugget: Nugget, opts: &GpOptions) -> Result<HetGpFit> {
    let needed = train.d() + 2;
    if train.n_locations() < needed {
        return Err(Error::InsufficientSample {
            needed,
            got: train.n_locations(),
        });
    }
    let std = Standardizer::of(train.y());
    let noise = match nugget {
        Nugget::Fixed(v) => NoiseSpec::Fixed(v.max(NOISE_FLOOR)),
        Nugget::Estimated => NoiseSpec::Estimated,
    };
    let problem = GpProblem::new(opts.family, train, &std, noise);
    let opt = optimize(&problem, opts)?;
    let mean = GpModel::build(&problem, &opt.theta, std)?;
    let variance = mean.noise[0];
    let fit = HetGpFit {
        mean,
        noise: NoiseField::Constant {
            variance,
            estimated: nugget == Nugget::Estimated,
        },
        diagnostics: FitDiagnostics {
            converged: opt.converged,
            starts: opt.starts,
            passes: 0,
            fallback: None,
            smoother_converged: None,
        },
        bbox: None,
    };
    finish(fit)
}

fn finish(fit: HetGpFit) -> Result<HetGpFit> {
    if fit.diagnostics.converged {
        return Ok(fit);
    }
    let diagnostics = fit
        .diagnostics
        .starts
        .iter()
        .enumerate()
        .map(|(i, s)| {
            format!(
                "start {i}: log-lik {:.6}, |grad| {:.2e} after {} iterations",
                s.log_likelihood, s.grad_norm, s.iterations
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    Err(Error::FitFailed {
        best: Box::new(fit),
        diagnostics: format!("no start converged ({diagnostics})"),
    })
}

/// Accepts a fit that missed the gradient tolerance, keeping its
/// diagnostics. Other errors pass through.
pub fn best_effort(result: Result<HetGpFit>) -> Result<HetGpFit> {
    match result {
        Err(Error::FitFailed { best, .. }) => Ok(*best),
        other => other,
    }
}

/// Heteroskedastic fit with default options.
pub fn fit_hetgp(train: &TrainingSet) -> Result<HetGpFit> {
    fit_hetgp_with(train, &GpOptions::default())
}

pub fn fit_hetgp_with(train: &TrainingSet, opts: &GpOptions) -> Result<HetGpFit> {
    let replicated = train.reps.iter().filter(|r| r.count() >= 2).count();
    if replicated < MIN_REPLICATED_LOCATIONS {
        let mut fit = best_effort(fit_gp_with(train, Nugget::Estimated, opts))?;
        fit.diagnostics.fallback = Some(format!(
            "only {replicated} location(s) with replicates; fitted a homoskedastic GP with estimated nugget"
        ));
        return finish(fit);
    }
    let needed = train.d() + 2;
    if train.n_locations() < needed {
        return Err(Error::InsufficientSample {
            needed,
            got: train.n_locations(),
        });
    }
    let std = Standardizer::of(train.y());
    let reps = &train.reps;

    // Pass 1: replicate sample variances, dof a − 1.
    let mut targets: Vec<(usize, f64, f64)> = reps
        .iter()
        .enumerate()
        .filter(|(_, r)| r.count() >= 2)
        .map(|(i, r)| {
            let dof = (r.count() - 1) as f64;
            (i, r.ss / (std.scale * std.scale) / dof, dof)
        })
        .collect();

    let mut smoother_converged = true;
    let mut result = None;
    for pass in 0..2 {
        let (smoother, ok) = smooth_log_variance(train, &targets, opts, pass)?;
        smoother_converged &= ok;
        let all_x: Vec<Vec<f64>> = reps.iter().map(|r| r.x.clone()).collect();
        let (lam, _) = smoother.predict_std(&all_x);
        let noise: Vec<f64> = lam
            .iter()
            .map(|&v| smoother.std.back(v).exp().max(NOISE_FLOOR))
            .collect();
        let problem = GpProblem::new(opts.family, train, &std, NoiseSpec::Known(noise));
        let opt = optimize(&problem, opts)?;
        let mean = GpModel::build(&problem, &opt.theta, std)?;
        if pass == 0 {
            // Pass 2: residuals about the fitted mean, dof a.
            let (mu, _) = mean.predict_std(&all_x);
            targets = reps
                .iter()
                .enumerate()
                .filter(|(_, r)| r.count() >= 2)
                .map(|(i, r)| {
                    let rss: f64 = r
                        .indices
                        .iter()
                        .map(|&k| (std.forward(train.y[k]) - mu[i]).powi(2))
                        .sum();
                    let a = r.count() as f64;
                    (i, (rss / a).max(NOISE_FLOOR), a)
                })
                .collect();
        }
        result = Some((mean, smoother, opt));
    }
    let (mean, smoother, opt) = result.expect("two passes ran");
    finish(HetGpFit {
        mean,
        noise: NoiseField::Smoothed {
            smoother: Box::new(smoother),
        },
        diagnostics: FitDiagnostics {
            converged: opt.converged,
            starts: opt.starts,
            passes: 2,
            fallback: None,
            smoother_converged: Some(smoother_converged),
        },
        bbox: None,
    })
}

/// Fits the secondary GP to bias-corrected log variances. `targets` holds
/// `(location, variance estimate, degrees of freedom)`; `log s²` has mean
/// `log σ² + ψ(k/2) − log(k/2)` and variance `ψ'(k/2)` under normal
/// replicates.
fn smooth_log_variance(
    train: &TrainingSet,
    targets: &[(usize, f64, f64)],
    opts: &GpOptions,
    pass: usize,
) -> Result<(GpModel, bool)> {
    let logs: Vec<f64> = targets
        .iter()
        .map(|&(_, s2, k)| s2.max(NOISE_FLOOR).ln() - digamma(k / 2.0) + (k / 2.0).ln())
        .collect();
    let std = Standardizer::of(&logs);
    let noise: Vec<f64> = targets
        .iter()
        .map(|&(_, _, k)| numerics::trigamma(k / 2.0) / (std.scale * std.scale))
        .collect();
    let n = targets.len();
    let problem = GpProblem {
        family: opts.family,
        x: targets.iter().map(|&(i, _, _)| train.reps[i].x.clone()).collect(),
        z: logs.iter().map(|&v| std.forward(v)).collect(),
        counts: vec![1.0; n],
        ss: vec![0.0; n],
        noise: NoiseSpec::Known(noise),
    };
    let sub = GpOptions {
        seed: rng::derive_seed(opts.seed, &[0x5e, pass as u64]),
        ..*opts
    };
    let opt = optimize(&problem, &sub)?;
    Ok((GpModel::build(&problem, &opt.theta, std)?, opt.converged))
}

/// Predictive moments at unit-cube inputs, native output units.
pub fn predict(fit: &HetGpFit, xnew: &[Vec<f64>]) -> Prediction {
    if xnew.is_empty() {
        return Prediction::default();
    }
    let (m, v) = fit.mean.predict_std(xnew);
    let noise = fit.noise_std(xnew);
    let std = fit.mean.std;
    let s2 = std.scale * std.scale;
    let var_mean: Vec<f64> = v.iter().map(|v| v * s2).collect();
    Prediction {
        mean: m.iter().map(|&z| std.back(z)).collect(),
        var_obs: var_mean.iter().zip(&noise).map(|(vm, nz)| vm + nz * s2).collect(),
        var_mean,
        extrapolated: xnew
            .iter()
            .map(|x| x.iter().any(|v| !(-1e-12..=1.0 + 1e-12).contains(v)))
            .collect(),
    }
}

/// Fraction of holdout observations inside the central `level` interval
/// for new observations.
pub fn coverage(fit: &HetGpFit, holdout: &TrainingSet, level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::param("level", format!("must lie in (0, 1), got {level}")));
    }
    let locs: Vec<Vec<f64>> = holdout.reps.iter().map(|r| r.x.clone()).collect();
    let bands = predict(fit, &locs).interval(level);
    let mut inside = 0usize;
    for (r, (lo, hi)) in holdout.reps.iter().zip(&bands) {
        inside += r
            .indices
            .iter()
            .filter(|&&i| holdout.y[i] >= *lo && holdout.y[i] <= *hi)
            .count();
    }
    Ok(inside as f64 / holdout.n_obs() as f64)
}
