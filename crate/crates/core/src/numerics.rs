//! Log-domain quadrature, Laplace approximation and small dense linear
//! algebra shared by the marginal likelihood and surrogate code.
//!
//! Every integrand is supplied as its natural logarithm so that the
//! enormous dynamic range of marginal likelihoods never leaves log space.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Default integration range on the log-precision scale, `log γ ∈ [-20, 15]`.
pub const LOG_PRECISION_RANGE: (f64, f64) = (-20.0, 15.0);
/// Default node count for log-precision quadrature.
pub const DEFAULT_NODES: usize = 2001;

/// Change of variable applied before the trapezoid rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    /// Integrate directly in the variable of the integrand.
    Identity,
    /// Integrate over `u = log x`; the Jacobian `e^u` is added in log space.
    Log,
}

/// Trapezoid mesh. Bounds are on the transformed scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSpec {
    pub lower: f64,
    pub upper: f64,
    pub n_nodes: usize,
    pub transform: Transform,
}

impl QuadratureSpec {
    pub fn identity(lower: f64, upper: f64, n_nodes: usize) -> Self {
        Self {
            lower,
            upper,
            n_nodes,
            transform: Transform::Identity,
        }
    }

    pub fn log_scale(lower: f64, upper: f64, n_nodes: usize) -> Self {
        Self {
            lower,
            upper,
            n_nodes,
            transform: Transform::Log,
        }
    }

    /// The default mesh for precision integrals: `log γ ∈ [-20, 15]`, 2001 nodes.
    pub fn log_precision() -> Self {
        Self::log_scale(LOG_PRECISION_RANGE.0, LOG_PRECISION_RANGE.1, DEFAULT_NODES)
    }

    /// Same range, refined to `2n - 1` nodes (every old node is kept).
    pub fn refined(&self) -> Self {
        Self {
            n_nodes: 2 * self.n_nodes - 1,
            ..*self
        }
    }

    pub fn with_nodes(&self, n_nodes: usize) -> Self {
        Self { n_nodes, ..*self }
    }

    fn validate(&self) -> Result<()> {
        if !(self.lower.is_finite() && self.upper.is_finite()) || self.upper <= self.lower {
            return Err(Error::InvalidQuadrature(format!(
                "need finite lower < upper, got [{}, {}]",
                self.lower, self.upper
            )));
        }
        if self.n_nodes < 2 {
            return Err(Error::InvalidQuadrature(format!(
                "need at least 2 nodes, got {}",
                self.n_nodes
            )));
        }
        Ok(())
    }
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self::log_precision()
    }
}

/// `log Σ exp(v_i)`, returning `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Log of a trapezoid-rule integral of `exp(f)` over the mesh described by `spec`.
///
/// With [`Transform::Log`] the mesh lives on `u = log x` and `f` is still
/// evaluated at `x = e^u`.
pub fn log_trapezoid<F>(f: F, spec: &QuadratureSpec) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    spec.validate()?;
    let n = spec.n_nodes;
    let h = (spec.upper - spec.lower) / (n - 1) as f64;
    let log_h = h.ln();
    let half = std::f64::consts::LN_2;

    let mut terms = Vec::with_capacity(n);
    for k in 0..n {
        let t = if k == n - 1 {
            spec.upper
        } else {
            spec.lower + k as f64 * h
        };
        let value = match spec.transform {
            Transform::Identity => f(t),
            Transform::Log => f(t.exp()) + t,
        };
        if value.is_nan() || value == f64::INFINITY {
            return Err(Error::InvalidIntegrand { at: t, value });
        }
        let weight = if k == 0 || k == n - 1 {
            log_h - half
        } else {
            log_h
        };
        terms.push(value + weight);
    }
    let total = log_sum_exp(&terms);
    if total == f64::NEG_INFINITY {
        return Err(Error::IntegrandUnderflow);
    }
    Ok(total)
}

/// Closed interval used to bound the mode search of [`laplace_log_integral`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn new(lower: f64, upper: f64) -> Self {
        Self { lower, upper }
    }

    fn clamp(&self, t: f64) -> f64 {
        t.clamp(self.lower, self.upper)
    }
}

/// Located mode and curvature of a Laplace approximation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaplaceResult {
    pub log_integral: f64,
    pub mode: f64,
    pub curvature: f64,
    pub iterations: usize,
}

const LAPLACE_MAX_ITER: usize = 200;

fn fd_step(t: f64) -> f64 {
    1e-3 * t.abs().max(1.0)
}

/// Laplace approximation `f(t*) + ½ log 2π − ½ log(−f''(t*))` of `log ∫ exp(f)`.
///
/// The mode is found by damped Newton iteration on finite-difference
/// derivatives. A mode pinned to the edge of `domain`, a failed search or a
/// non-negative curvature all produce [`Error::LaplaceFailure`]; callers are
/// expected to fall back to [`log_trapezoid`].
pub fn laplace_log_integral<F>(f: F, init: f64, domain: Interval) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    laplace_detail(f, init, domain).map(|r| r.log_integral)
}

pub fn laplace_detail<F>(f: F, init: f64, domain: Interval) -> Result<LaplaceResult>
where
    F: Fn(f64) -> f64,
{
    if !(domain.lower < domain.upper) {
        return Err(Error::LaplaceFailure(format!(
            "empty domain [{}, {}]",
            domain.lower, domain.upper
        )));
    }
    let mut t = domain.clamp(init);
    let mut ft = f(t);
    if !ft.is_finite() {
        return Err(Error::LaplaceFailure(format!(
            "integrand not finite at start {t}"
        )));
    }

    let span = domain.upper - domain.lower;
    let mut converged = false;
    let mut iterations = 0;
    for iter in 0..LAPLACE_MAX_ITER {
        iterations = iter + 1;
        let h = fd_step(t);
        let (fp, fm) = (f(t + h), f(t - h));
        let grad = (fp - fm) / (2.0 * h);
        let hess = (fp - 2.0 * ft + fm) / (h * h);
        if !grad.is_finite() {
            return Err(Error::LaplaceFailure(format!("gradient not finite at {t}")));
        }
        let mut step = if hess < 0.0 && hess.is_finite() {
            -grad / hess
        } else {
            // Concave region not reached yet: move uphill by a bounded amount.
            grad.signum() * (0.1 * span).min(1.0)
        };
        let mut accepted = false;
        for _ in 0..60 {
            let cand = domain.clamp(t + step);
            let fc = f(cand);
            if fc.is_finite() && fc >= ft {
                let moved = (cand - t).abs();
                t = cand;
                ft = fc;
                accepted = true;
                if moved <= 1e-10 * (1.0 + t.abs()) {
                    converged = true;
                }
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // No uphill move at any step length: t is a local maximum to
            // machine precision.
            converged = true;
        }
        if converged {
            break;
        }
    }
    if !converged {
        return Err(Error::LaplaceFailure(format!(
            "mode search did not converge in {LAPLACE_MAX_ITER} iterations"
        )));
    }

    let h = fd_step(t);
    let edge = (t - domain.lower).min(domain.upper - t);
    if edge <= 2.0 * h {
        return Err(Error::LaplaceFailure(format!(
            "maximum at domain boundary t = {t}"
        )));
    }
    let curvature = (f(t + h) - 2.0 * ft + f(t - h)) / (h * h);
    if !(curvature < 0.0) || !curvature.is_finite() {
        return Err(Error::LaplaceFailure(format!(
            "non-negative curvature {curvature} at mode {t}"
        )));
    }
    let log_integral =
        ft + 0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * (-curvature).ln();
    Ok(LaplaceResult {
        log_integral,
        mode: t,
        curvature,
        iterations,
    })
}

/// Laplace approximation with the second-order correction
/// `log(1 + f⁗σ⁴/8 + 5f‴²σ⁶/24)`, `σ² = −1/f''(t*)`.
///
/// Removes the leading skewness error of the plain approximation; the
/// derivatives are central differences on a step of `σ/20`. A correction
/// factor that is not positive is reported as [`Error::LaplaceFailure`].
pub fn laplace_corrected_log_integral<F>(f: F, init: f64, domain: Interval) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    let base = laplace_detail(&f, init, domain)?;
    let t = base.mode;
    let s2 = -1.0 / base.curvature;
    let h = 0.05 * s2.sqrt();
    let v: Vec<f64> = [-2.0, -1.0, 0.0, 1.0, 2.0].iter().map(|k| f(t + k * h)).collect();
    let d3 = (v[4] - 2.0 * v[3] + 2.0 * v[1] - v[0]) / (2.0 * h.powi(3));
    let d4 = (v[4] - 4.0 * v[3] + 6.0 * v[2] - 4.0 * v[1] + v[0]) / h.powi(4);
    let factor = 1.0 + d4 * s2 * s2 / 8.0 + 5.0 * d3 * d3 * s2.powi(3) / 24.0;
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(Error::LaplaceFailure(format!(
            "second-order correction factor {factor} at mode {t}"
        )));
    }
    Ok(base.log_integral + factor.ln())
}

/// Relative jitter levels tried, each multiplying the mean diagonal.
const JITTER_LADDER: [f64; 6] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

/// Cholesky factor of a symmetric positive definite matrix, possibly after
/// a small diagonal jitter.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
}

impl SpdFactor {
    /// Factorizes `a`, escalating jitter from 1e-10 to 1e-6 of the mean diagonal.
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "expected a square matrix, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        let n = a.nrows();
        let mean_diag = if n == 0 {
            0.0
        } else {
            a.diagonal().iter().sum::<f64>() / n as f64
        };
        let mut last = 0.0;
        for rel in JITTER_LADDER {
            let jitter = rel * mean_diag.abs();
            let mut m = a.clone();
            if jitter > 0.0 {
                for i in 0..n {
                    m[(i, i)] += jitter;
                }
            }
            if let Some(chol) = Cholesky::new(m) {
                let ok = chol.l_dirty().diagonal().iter().all(|d| d.is_finite() && *d > 0.0);
                if ok {
                    return Ok(Self { chol, jitter });
                }
            }
            last = jitter;
        }
        Err(Error::NotPositiveDefinite { jitter: last })
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    /// Absolute jitter that was added to the diagonal (0 when none was needed).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    pub fn solve_vec(&self, b: &nalgebra::DVector<f64>) -> nalgebra::DVector<f64> {
        self.chol.solve(b)
    }

    /// `A⁻¹ = L⁻ᵀ L⁻¹`. Inverting the triangle column by column touches
    /// only its nonzero part, several times faster than solving against
    /// the identity.
    pub fn inverse(&self) -> DMatrix<f64> {
        let linv = lower_triangular_inverse(self.chol.l_dirty());
        linv.transpose() * &linv
    }

    pub fn l(&self) -> DMatrix<f64> {
        self.chol.l()
    }
}

/// Inverse of the lower triangle of `l` (the strict upper part is ignored).
pub fn lower_triangular_inverse(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let mut inv = DMatrix::<f64>::zeros(n, n);
    let ls = l.as_slice();
    let xs = inv.as_mut_slice();
    // Column-major: column j of the inverse solves L x = e_j, and x is zero
    // above row j.
    for j in 0..n {
        let col = &mut xs[j * n..(j + 1) * n];
        col[j] = 1.0;
        for k in j..n {
            let lk = &ls[k * n..(k + 1) * n];
            let v = col[k] / lk[k];
            col[k] = v;
            if v != 0.0 {
                for (c, lv) in col[k + 1..].iter_mut().zip(&lk[k + 1..]) {
                    *c -= v * lv;
                }
            }
        }
    }
    inv
}

/// `(log det A, A⁻¹ B)` through a jittered Cholesky factorization.
pub fn chol_logdet_solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
    if b.nrows() != a.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "A is {}x{} but B has {} rows",
            a.nrows(),
            a.ncols(),
            b.nrows()
        )));
    }
    let factor = SpdFactor::new(a)?;
    Ok((factor.log_det(), factor.solve(b)))
}

/// Trigamma function ψ'(x) for x > 0.
pub fn trigamma(mut x: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NAN;
    }
    let mut acc = 0.0;
    while x < 20.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let r = 1.0 / (x * x);
    acc + 1.0 / x + r / 2.0
        + r / x * (1.0 / 6.0 - r * (1.0 / 30.0 - r * (1.0 / 42.0 - r / 30.0)))
}

/// Result of [`bfgs_bounded`].
#[derive(Debug, Clone, PartialEq)]
pub struct BoundedMinimum {
    pub x: Vec<f64>,
    pub value: f64,
    /// ∞-norm of the projected gradient at `x`.
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Quasi-Newton minimization inside a box. `f` returns the value and
/// gradient, or `None` where undefined. Components pinned at a bound with
/// the gradient pointing outward are frozen; convergence means the
/// projected gradient ∞-norm drops below `gtol`.
pub fn bfgs_bounded<F>(
    f: F,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    gtol: f64,
    max_iter: usize,
) -> Option<BoundedMinimum>
where
    F: Fn(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    bfgs_bounded_split(|x: &[f64]| f(x).map(|r| r.0), &f, x0, lower, upper, gtol, 0.0, max_iter)
}

/// [`bfgs_bounded`] with a separate value-only objective for line-search
/// trials; the gradient is computed only at accepted points. It also stops,
/// as converged, once a full step changes the value by at most `ftol`
/// relative to max(|f|, 1), or no step along the search direction can
/// promise more.
#[allow(clippy::too_many_arguments)]
pub fn bfgs_bounded_split<V, F>(
    value: V,
    f: F,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    gtol: f64,
    ftol: f64,
    max_iter: usize,
) -> Option<BoundedMinimum>
where
    V: Fn(&[f64]) -> Option<f64>,
    F: Fn(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    const MAX_STEP: f64 = 3.0;
    let n = x0.len();
    let clamp = |x: &mut [f64]| {
        for i in 0..n {
            x[i] = x[i].clamp(lower[i], upper[i]);
        }
    };
    let frozen = |x: &[f64], g: &[f64], i: usize| {
        (x[i] <= lower[i] && g[i] > 0.0) || (x[i] >= upper[i] && g[i] < 0.0)
    };
    let pg_norm = |x: &[f64], g: &[f64]| {
        (0..n)
            .filter(|&i| !frozen(x, g, i))
            .map(|i| g[i].abs())
            .fold(0.0, f64::max)
    };

    let mut x = x0.to_vec();
    clamp(&mut x);
    let (mut fx, mut g) = f(&x)?;
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut fresh = true;
    let mut flat = false;
    let mut iterations = 0;
    while iterations < max_iter {
        if pg_norm(&x, &g) < gtol {
            break;
        }
        iterations += 1;
        let free: Vec<bool> = (0..n).map(|i| !frozen(&x, &g, i)).collect();
        let mut d = vec![0.0; n];
        for i in (0..n).filter(|&i| free[i]) {
            d[i] = -(0..n).filter(|&j| free[j]).map(|j| h[(i, j)] * g[j]).sum::<f64>();
        }
        if d.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>() >= 0.0 {
            h = DMatrix::identity(n, n);
            fresh = true;
            for i in 0..n {
                d[i] = if free[i] { -g[i] } else { 0.0 };
            }
        }
        let longest = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if longest > MAX_STEP {
            d.iter_mut().for_each(|v| *v *= MAX_STEP / longest);
        }

        // Backtracking with a safeguarded quadratic model of f along the
        // (projected) path, so an overlong step shrinks in one or two trials.
        let mut t = 1.0;
        let mut accepted = None;
        let mut negligible = false;
        for _ in 0..40 {
            let mut xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            clamp(&mut xn);
            if xn == x {
                break;
            }
            let decrease: f64 = g.iter().zip(xn.iter().zip(&x)).map(|(gi, (a, b))| gi * (a - b)).sum();
            if -decrease <= ftol * fx.abs().max(1.0) {
                negligible = true;
                break;
            }
            let fv = value(&xn).filter(|v| v.is_finite());
            if let Some(fv) = fv {
                if fv <= fx + 1e-4 * decrease {
                    if let Some((fv, gv)) = f(&xn) {
                        accepted = Some((xn, fv, gv));
                        break;
                    }
                }
            }
            // f(x + s) ≈ fx + decrease + c, minimizer at scale −decrease/(2c).
            let shrink = match fv {
                Some(fv) if decrease < 0.0 => {
                    let c = fv - fx - decrease;
                    if c > 0.0 {
                        (-decrease / (2.0 * c)).clamp(0.1, 0.5)
                    } else {
                        0.5
                    }
                }
                _ => 0.1,
            };
            t *= shrink;
        }
        let Some((xn, fv, gv)) = accepted else {
            if negligible && fresh {
                flat = true;
                break;
            }
            if fresh {
                break;
            }
            h = DMatrix::identity(n, n);
            fresh = true;
            continue;
        };
        let was_fresh = fresh;
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gv.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let yy: f64 = y.iter().map(|v| v * v).sum();
        let ss: f64 = s.iter().map(|v| v * v).sum();
        if sy > 1e-12 * (ss * yy).sqrt() {
            if fresh {
                h = DMatrix::identity(n, n) * (sy / yy);
                fresh = false;
            }
            let rho = 1.0 / sy;
            let sv = DVector::from_vec(s);
            let yv = DVector::from_vec(y);
            let hy = &h * &yv;
            let yhy = yv.dot(&hy);
            // H ← H − ρ(H y sᵀ + s yᵀ H) + (ρ² yᵀHy + ρ) s sᵀ
            h -= (&hy * sv.transpose() + &sv * hy.transpose()) * rho;
            h += &sv * sv.transpose() * (rho * rho * yhy + rho);
        }
        // A backtracked step can be tiny on a curved ridge; only a full
        // quasi-Newton step that barely helps signals a flat optimum.
        let stalled = t == 1.0 && fx - fv <= ftol * fx.abs().max(fv.abs()).max(1.0);
        x = xn;
        fx = fv;
        g = gv;
        if stalled {
            // The curvature model may have collapsed; trust the stall only
            // when it also follows a steepest-descent restart.
            if was_fresh {
                flat = true;
                break;
            }
            h = DMatrix::identity(n, n);
            fresh = true;
        }
    }
    let grad_norm = pg_norm(&x, &g);
    Some(BoundedMinimum {
        x,
        value: fx,
        grad_norm,
        iterations,
        converged: flat || grad_norm < gtol,
    })
}

/// Result of [`nelder_mead`].
#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
}

/// Derivative-free simplex minimization. Stops when the spread of function
/// values across the simplex falls below `ftol` or after `max_iter` steps.
/// Non-finite objective values are treated as `+inf`.
pub fn nelder_mead<F>(f: F, start: &[f64], step: f64, ftol: f64, max_iter: usize) -> Minimum
where
    F: Fn(&[f64]) -> f64,
{
    let d = start.len();
    let eval = |x: &[f64]| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = (0..=d)
        .map(|k| {
            let mut x = start.to_vec();
            if k > 0 {
                x[k - 1] += step;
            }
            let v = eval(&x);
            (x, v)
        })
        .collect();
    let mut iterations = 0;
    while iterations < max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (best, worst) = (simplex[0].1, simplex[d].1);
        if best.is_finite() && (worst - best).abs() <= ftol * (1.0 + best.abs()) {
            break;
        }
        iterations += 1;
        let centroid: Vec<f64> = (0..d)
            .map(|j| simplex[..d].iter().map(|(x, _)| x[j]).sum::<f64>() / d as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[d].0)
                .map(|(c, w)| c + t * (w - c))
                .collect()
        };
        let xr = along(-1.0);
        let fr = eval(&xr);
        if fr < simplex[0].1 {
            let xe = along(-2.0);
            let fe = eval(&xe);
            simplex[d] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[d - 1].1 {
            simplex[d] = (xr, fr);
        } else {
            let xc = if fr < simplex[d].1 { along(-0.5) } else { along(0.5) };
            let fc = eval(&xc);
            if fc < fr.min(simplex[d].1) {
                simplex[d] = (xc, fc);
            } else {
                let x0 = simplex[0].0.clone();
                for (x, v) in simplex.iter_mut().skip(1) {
                    for (xi, bi) in x.iter_mut().zip(&x0) {
                        *xi = bi + 0.5 * (*xi - bi);
                    }
                    *v = eval(x);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, value) = simplex.swap_remove(0);
    Minimum {
        x,
        value,
        iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn trigamma_reference_values() {
        assert!((trigamma(1.0) - PI * PI / 6.0).abs() < 1e-12);
        assert!((trigamma(0.5) - PI * PI / 2.0).abs() < 1e-12);
        // ψ'(x) − ψ'(x + 1) = 1/x²
        for x in [0.3, 2.7, 9.1, 40.0] {
            assert!((trigamma(x) - trigamma(x + 1.0) - 1.0 / (x * x)).abs() < 1e-12);
        }
    }

    #[test]
    fn bounded_bfgs_on_quadratic() {
        // Unconstrained minimum at (2, -1); the box clips the first coordinate.
        let f = |x: &[f64]| {
            let v = (x[0] - 2.0).powi(2) + 3.0 * (x[1] + 1.0).powi(2) + x[0] * x[1];
            Some((v, vec![2.0 * (x[0] - 2.0) + x[1], 6.0 * (x[1] + 1.0) + x[0]]))
        };
        let free = bfgs_bounded(f, &[0.0, 0.0], &[-5.0, -5.0], &[5.0, 5.0], 1e-10, 200).unwrap();
        assert!(free.converged);
        // ∇ = 0: 2x + y = 4, x + 6y = -6
        let (x, y) = (30.0 / 11.0, -16.0 / 11.0);
        assert!((free.x[0] - x).abs() < 1e-8 && (free.x[1] - y).abs() < 1e-8);
        let boxed = bfgs_bounded(f, &[0.0, 0.0], &[-5.0, -5.0], &[1.0, 5.0], 1e-10, 200).unwrap();
        assert!(boxed.converged);
        assert_eq!(boxed.x[0], 1.0);
        assert!((boxed.x[1] + 7.0 / 6.0).abs() < 1e-8);
    }

    #[test]
    fn nelder_mead_finds_rosenbrock_minimum() {
        let rosen = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let m = nelder_mead(rosen, &[-1.2, 1.0], 0.5, 1e-14, 5000);
        assert!((m.x[0] - 1.0).abs() < 1e-4 && (m.x[1] - 1.0).abs() < 1e-4, "{:?}", m);
    }

    fn log_normal_pdf(t: f64, mean: f64, var: f64) -> f64 {
        -0.5 * (2.0 * PI * var).ln() - 0.5 * (t - mean).powi(2) / var
    }

    fn log_gamma_pdf(x: f64, shape: f64, rate: f64) -> f64 {
        if x <= 0.0 {
            return f64::NEG_INFINITY;
        }
        shape * rate.ln() - statrs::function::gamma::ln_gamma(shape) + (shape - 1.0) * x.ln()
            - rate * x
    }

    #[test]
    fn standard_normal_mass_is_one() {
        let spec = QuadratureSpec::identity(-8.0, 8.0, 2001);
        let v = log_trapezoid(|t| log_normal_pdf(t, 0.0, 1.0), &spec).unwrap();
        assert!(v.abs() < 1e-8, "{v}");
    }

    #[test]
    fn gamma_mass_on_log_scale() {
        let spec = QuadratureSpec::log_scale(-15.0, 10.0, 2001);
        let v = log_trapezoid(|g| log_gamma_pdf(g, 2.0, 3.0), &spec).unwrap();
        assert!(v.abs() < 1e-6, "{v}");
    }

    #[test]
    fn underflow_and_invalid_integrands() {
        let spec = QuadratureSpec::identity(0.0, 1.0, 11);
        assert!(matches!(
            log_trapezoid(|_| f64::NEG_INFINITY, &spec),
            Err(Error::IntegrandUnderflow)
        ));
        assert!(matches!(
            log_trapezoid(|t| if t > 0.5 { f64::NAN } else { 0.0 }, &spec),
            Err(Error::InvalidIntegrand { .. })
        ));
        assert!(matches!(
            log_trapezoid(|_| f64::INFINITY, &spec),
            Err(Error::InvalidIntegrand { .. })
        ));
    }

    #[test]
    fn partially_underflowing_integrand_is_fine() {
        let spec = QuadratureSpec::identity(-1.0, 1.0, 201);
        let v = log_trapezoid(|t| if t < 0.0 { f64::NEG_INFINITY } else { 0.0 }, &spec).unwrap();
        assert!((v - 1.0f64.ln()).abs() < 1e-2);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(log_trapezoid(|_| 0.0, &QuadratureSpec::identity(1.0, 1.0, 10)).is_err());
        assert!(log_trapezoid(|_| 0.0, &QuadratureSpec::identity(0.0, 1.0, 1)).is_err());
    }

    #[test]
    fn constant_integrand_is_exact() {
        let spec = QuadratureSpec::identity(0.0, 3.0, 2);
        let v = log_trapezoid(|_| 0.0, &spec).unwrap();
        assert!((v - 3.0f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn laplace_is_exact_for_gaussians() {
        let v = laplace_log_integral(|t| log_normal_pdf(t, 3.0, 4.0), 0.0, Interval::new(-50.0, 50.0))
            .unwrap();
        assert!(v.abs() < 1e-9, "{v}");
    }

    #[test]
    fn corrected_laplace_removes_skewness_error() {
        // log Gamma(4, 1) density on the log scale, total mass 1.
        let f = |u: f64| 4.0 * u - u.exp() - statrs::function::gamma::ln_gamma(4.0);
        let plain = laplace_log_integral(f, 0.0, Interval::new(-20.0, 10.0)).unwrap();
        let corrected = laplace_corrected_log_integral(f, 0.0, Interval::new(-20.0, 10.0)).unwrap();
        assert!(corrected.abs() < 0.2 * plain.abs(), "{plain} -> {corrected}");
        let gauss = |t: f64| -0.5 * (t - 1.0).powi(2) - 0.5 * (2.0 * PI).ln();
        assert!(laplace_corrected_log_integral(gauss, 0.0, Interval::new(-20.0, 20.0)).unwrap().abs() < 1e-6);
    }

    #[test]
    fn laplace_gamma_against_trapezoid() {
        let f = |t: f64| log_gamma_pdf(t, 20.0, 2.0);
        let trap = log_trapezoid(f, &QuadratureSpec::identity(1e-9, 60.0, 10_000)).unwrap();
        let lap = laplace_log_integral(f, 5.0, Interval::new(1e-6, 60.0)).unwrap();
        // Laplace error for a Gamma(20) kernel is O(1/shape).
        assert!(trap.abs() < 1e-6, "{trap}");
        assert!((lap - trap).abs() < 1e-2, "lap={lap} trap={trap}");
    }

    #[test]
    fn laplace_fails_at_boundary() {
        let r = laplace_log_integral(|t| -t, 5.0, Interval::new(0.0, 10.0));
        assert!(matches!(r, Err(Error::LaplaceFailure(_))), "{r:?}");
    }

    #[test]
    fn laplace_fails_without_curvature() {
        let r = laplace_log_integral(|_| 1.0, 0.0, Interval::new(-1.0, 1.0));
        assert!(matches!(r, Err(Error::LaplaceFailure(_))));
    }

    #[test]
    fn chol_identity() {
        let a = DMatrix::<f64>::identity(3, 3);
        let (ld, x) = chol_logdet_solve(&a, &a).unwrap();
        assert_eq!(ld, 0.0);
        assert_eq!(x, a);
    }

    #[test]
    fn chol_diagonal_determinant() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 8.0]));
        let (ld, _) = chol_logdet_solve(&a, &DMatrix::identity(2, 2)).unwrap();
        assert!((ld - 16f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn chol_one_by_one() {
        let a = DMatrix::from_element(1, 1, 7.25);
        let (ld, _) = chol_logdet_solve(&a, &DMatrix::identity(1, 1)).unwrap();
        assert_eq!(ld, 7.25f64.ln());
    }

    #[test]
    fn chol_random_spd_residual() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        // Wishart(I, 8) draw: G Gᵀ with G a 5x8 standard normal matrix.
        let g = DMatrix::<f64>::from_fn(5, 8, |_, _| rng.sample(rand_distr::StandardNormal));
        let a = &g * g.transpose();
        let b = DMatrix::<f64>::from_fn(5, 3, |_, _| rng.random::<f64>());
        let (_, x) = chol_logdet_solve(&a, &b).unwrap();
        let resid = (&a * &x - &b).abs().max();
        assert!(resid < 1e-10, "{resid}");
    }

    #[test]
    fn spd_inverse_matches_dense_solve() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        let g = DMatrix::<f64>::from_fn(40, 60, |_, _| rand::Rng::sample(&mut rng, rand_distr::StandardNormal));
        let a = &g * g.transpose();
        let f = SpdFactor::new(&a).unwrap();
        let resid = (&a * f.inverse() - DMatrix::<f64>::identity(40, 40)).abs().max();
        assert!(resid < 1e-9, "{resid}");
        let l = f.l();
        let prod = &l * lower_triangular_inverse(&l);
        assert!((prod - DMatrix::<f64>::identity(40, 40)).abs().max() < 1e-12);
    }

    #[test]
    fn chol_uses_jitter_for_semidefinite() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let f = SpdFactor::new(&a).unwrap();
        assert!(f.jitter() > 0.0);
    }

    #[test]
    fn chol_rejects_indefinite() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(
            chol_logdet_solve(&a, &DMatrix::identity(2, 2)),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn log_sum_exp_edge_cases() {
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]), f64::NEG_INFINITY);
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn trapezoid_shift_is_exact(kappa in -500.0f64..500.0, mean in -2.0f64..2.0) {
                let spec = QuadratureSpec::identity(-10.0, 10.0, 401);
                let base = log_trapezoid(|t| log_normal_pdf(t, mean, 1.5), &spec).unwrap();
                let shifted = log_trapezoid(|t| log_normal_pdf(t, mean, 1.5) + kappa, &spec).unwrap();
                prop_assert!((shifted - base - kappa).abs() <= 1e-12 * (1.0 + kappa.abs()));
            }

            #[test]
            fn laplace_matches_trapezoid_for_gaussians(
                mean in -3.0f64..3.0,
                var in 0.05f64..4.0,
                scale in -20.0f64..20.0,
            ) {
                let f = |t: f64| log_normal_pdf(t, mean, var) + scale;
                let lap = laplace_log_integral(f, 0.0, Interval::new(-40.0, 40.0)).unwrap();
                let trap = log_trapezoid(f, &QuadratureSpec::identity(-40.0, 40.0, 20_001)).unwrap();
                prop_assert!((lap - trap).abs() < 1e-8, "lap={} trap={}", lap, trap);
            }
        }
    }
}
