//! Hierarchical linear model evidence for grouped data.
//!
//! Both models share the structure
//!
//! ```text
//! y_j | β_j, γ   ~ N(X_j β_j, I/γ)
//! β_j | θ, γ     ~ N(θ, (g/γ) (X_jᵀX_j)⁻¹)
//! θ              ~ N(μ0, Λ0)
//! γ              ~ Gamma(ν0/2, ν0 σ0²/2)
//! ```
//!
//! with `X_j = [1, w_j]` (slopes and intercepts, `p = 2`) or `X_j = 1`
//! (means only, `p = 1`), where `w_j` is the predictor centered within its
//! group. The group effects and `θ` integrate analytically; the error
//! precision is integrated by the trapezoid rule on `log γ`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::Read;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::numerics::{self, QuadratureSpec, SpdFactor};
use crate::reg_bf::{csv_err, parse_cell, BfMethod, LogBf};
use crate::rng;

/// One group (school): outcomes and the within-group centered predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct HlmGroup {
    id: String,
    y: Vec<f64>,
    raw: Vec<f64>,
    w: Vec<f64>,
    sw2: f64,
    sy: f64,
    syy: f64,
    swy: f64,
}

impl HlmGroup {
    pub fn new(id: impl Into<String>, predictor: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let id = id.into();
        if predictor.len() != y.len() {
            return Err(Error::DimensionMismatch(format!(
                "group {id}: {} predictor values but {} outcomes",
                predictor.len(),
                y.len()
            )));
        }
        if y.len() < 2 {
            return Err(Error::GroupTooSmall {
                group: id,
                size: y.len(),
            });
        }
        let n = y.len() as f64;
        let mean = predictor.iter().sum::<f64>() / n;
        let w: Vec<f64> = predictor.iter().map(|v| v - mean).collect();
        let sw2 = w.iter().map(|v| v * v).sum();
        let sy = y.iter().sum();
        let syy = y.iter().map(|v| v * v).sum();
        let swy = w.iter().zip(&y).map(|(a, b)| a * b).sum();
        Ok(Self {
            id,
            y,
            raw: predictor,
            w,
            sw2,
            sy,
            syy,
            swy,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }
    pub fn len(&self) -> usize {
        self.y.len()
    }
    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
    pub fn y(&self) -> &[f64] {
        &self.y
    }
    /// Predictor as supplied.
    pub fn raw_predictor(&self) -> &[f64] {
        &self.raw
    }
    /// Predictor centered within the group.
    pub fn w(&self) -> &[f64] {
        &self.w
    }

    fn gram(&self, kind: HlmModelKind) -> DMatrix<f64> {
        match kind {
            HlmModelKind::MeansOnly => DMatrix::from_element(1, 1, self.len() as f64),
            HlmModelKind::SlopesAndIntercepts => {
                DMatrix::from_row_slice(2, 2, &[self.len() as f64, 0.0, 0.0, self.sw2])
            }
        }
    }

    fn xty(&self, kind: HlmModelKind) -> DVector<f64> {
        match kind {
            HlmModelKind::MeansOnly => DVector::from_element(1, self.sy),
            HlmModelKind::SlopesAndIntercepts => DVector::from_vec(vec![self.sy, self.swy]),
        }
    }

    fn check_design(&self, kind: HlmModelKind) -> Result<()> {
        if kind == HlmModelKind::SlopesAndIntercepts && !(self.sw2 > 0.0) {
            return Err(Error::DegenerateGroupDesign {
                group: self.id.clone(),
            });
        }
        Ok(())
    }

    /// Least-squares coefficients (intercept = group mean because the
    /// predictor is centered).
    pub fn least_squares(&self, kind: HlmModelKind) -> Result<Vec<f64>> {
        self.check_design(kind)?;
        let mean = self.sy / self.len() as f64;
        Ok(match kind {
            HlmModelKind::MeansOnly => vec![mean],
            HlmModelKind::SlopesAndIntercepts => vec![mean, self.swy / self.sw2],
        })
    }

    /// `y_jᵀ X_j β̂_j`, the fitted sum of squares.
    fn fitted_ss(&self, kind: HlmModelKind) -> f64 {
        let n = self.len() as f64;
        match kind {
            HlmModelKind::MeansOnly => self.sy * self.sy / n,
            HlmModelKind::SlopesAndIntercepts => self.sy * self.sy / n + self.swy * self.swy / self.sw2,
        }
    }

    fn rss(&self, kind: HlmModelKind) -> f64 {
        (self.syy - self.fitted_ss(kind)).max(0.0)
    }
}

/// Grouped outcome/predictor data.
#[derive(Debug, Clone, PartialEq)]
pub struct HlmDataset {
    groups: Vec<HlmGroup>,
}

impl HlmDataset {
    pub fn new(groups: Vec<HlmGroup>) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::Empty("no groups".into()));
        }
        Ok(Self { groups })
    }

    pub fn groups(&self) -> &[HlmGroup] {
        &self.groups
    }
    /// Number of groups `m`.
    pub fn m(&self) -> usize {
        self.groups.len()
    }
    /// Total number of observations `N`.
    pub fn n_total(&self) -> usize {
        self.groups.iter().map(HlmGroup::len).sum()
    }

    /// Reads `school,ses,mathscore` rows; groups appear in order of first
    /// appearance of each school id.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers().map_err(|e| csv_err(&e, 1))?.clone();
        let col = |name: &str| {
            headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
                line: 1,
                message: format!("missing column `{name}` (expected header `school,ses,mathscore`)"),
            })
        };
        let (is, ix, iy) = (col("school")?, col("ses")?, col("mathscore")?);
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut raw: Vec<(String, Vec<f64>, Vec<f64>)> = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let line = row + 2;
            let rec = rec.map_err(|e| csv_err(&e, line))?;
            let school = rec
                .get(is)
                .filter(|s| !s.is_empty())
                .ok_or_else(|| Error::Parse {
                    line,
                    message: "missing `school` cell".into(),
                })?
                .to_string();
            let ses = parse_cell(rec.get(ix), line, "ses")?;
            let score = parse_cell(rec.get(iy), line, "mathscore")?;
            let k = *index.entry(school.clone()).or_insert_with(|| {
                raw.push((school, Vec::new(), Vec::new()));
                raw.len() - 1
            });
            raw[k].1.push(ses);
            raw[k].2.push(score);
        }
        let groups = raw
            .into_iter()
            .map(|(id, x, y)| HlmGroup::new(id, x, y))
            .collect::<Result<Vec<_>>>()?;
        Self::new(groups)
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        wtr.write_record(["school", "ses", "mathscore"]).map_err(io)?;
        for g in &self.groups {
            for (x, y) in g.raw.iter().zip(&g.y) {
                wtr.write_record([g.id.clone(), format!("{x:.16e}"), format!("{y:.16e}")])
                    .map_err(io)?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Reads a grouped data file (`school,ses,mathscore`) from disk.
pub fn load_hlm_csv(path: impl AsRef<std::path::Path>) -> Result<HlmDataset> {
    HlmDataset::read_csv(std::fs::File::open(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HlmModelKind {
    /// `p = 2`: group-specific intercepts and slopes.
    SlopesAndIntercepts,
    /// `p = 1`: group-specific means only.
    MeansOnly,
}

impl HlmModelKind {
    pub fn p(&self) -> usize {
        match self {
            HlmModelKind::SlopesAndIntercepts => 2,
            HlmModelKind::MeansOnly => 1,
        }
    }
}

/// The full hyperparameter point. The means-only model reads only the
/// intercept components `mu0[0]` and `lambda0[0][0]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HlmHypers {
    pub g: f64,
    pub mu0: [f64; 2],
    pub lambda0: [[f64; 2]; 2],
    pub nu0: f64,
    pub sigma0_sq: f64,
}

impl HlmHypers {
    /// Defaults reported for the student math-score data.
    pub fn published_defaults() -> Self {
        Self {
            g: 7.44,
            mu0: [47.76, 2.37],
            lambda0: [[27.80, 1.33], [1.33, 10.10]],
            nu0: 1.0,
            sigma0_sq: 82.94,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("g", self.g), ("nu0", self.nu0), ("sigma0_sq", self.sigma0_sq)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(name, format!("must be positive, got {v}")));
            }
        }
        if !self.mu0.iter().all(|v| v.is_finite()) {
            return Err(Error::param("mu0", "must be finite"));
        }
        let l = self.lambda0;
        if l[0][1] != l[1][0] {
            return Err(Error::param("lambda0", "must be symmetric"));
        }
        let det = l[0][0] * l[1][1] - l[0][1] * l[1][0];
        if !(l[0][0] > 0.0 && l[1][1] > 0.0 && det > 0.0) || !det.is_finite() {
            return Err(Error::param("lambda0", "must be positive definite"));
        }
        Ok(())
    }

    fn mu0_for(&self, kind: HlmModelKind) -> DVector<f64> {
        match kind {
            HlmModelKind::MeansOnly => DVector::from_element(1, self.mu0[0]),
            HlmModelKind::SlopesAndIntercepts => DVector::from_row_slice(&self.mu0),
        }
    }

    fn lambda0_for(&self, kind: HlmModelKind) -> DMatrix<f64> {
        let l = self.lambda0;
        match kind {
            HlmModelKind::MeansOnly => DMatrix::from_element(1, 1, l[0][0]),
            HlmModelKind::SlopesAndIntercepts => {
                DMatrix::from_row_slice(2, 2, &[l[0][0], l[0][1], l[1][0], l[1][1]])
            }
        }
    }

    pub fn get(&self, param: HlmParam) -> f64 {
        match param {
            HlmParam::G => self.g,
            HlmParam::Mu0Intercept => self.mu0[0],
            HlmParam::Mu0Slope => self.mu0[1],
            HlmParam::Lambda0Intercept => self.lambda0[0][0],
            HlmParam::Lambda0Slope => self.lambda0[1][1],
            HlmParam::Lambda0Cov => self.lambda0[0][1],
            HlmParam::Lambda0Corr => {
                self.lambda0[0][1] / (self.lambda0[0][0] * self.lambda0[1][1]).sqrt()
            }
            HlmParam::Nu0 => self.nu0,
            HlmParam::Sigma0Sq => self.sigma0_sq,
        }
    }

    /// Returns a copy with one coordinate replaced. Setting a variance keeps
    /// the off-diagonal entry fixed; setting the correlation rescales it.
    pub fn with(&self, param: HlmParam, value: f64) -> Self {
        let mut h = *self;
        match param {
            HlmParam::G => h.g = value,
            HlmParam::Mu0Intercept => h.mu0[0] = value,
            HlmParam::Mu0Slope => h.mu0[1] = value,
            HlmParam::Lambda0Intercept => h.lambda0[0][0] = value,
            HlmParam::Lambda0Slope => h.lambda0[1][1] = value,
            HlmParam::Lambda0Cov => {
                h.lambda0[0][1] = value;
                h.lambda0[1][0] = value;
            }
            HlmParam::Lambda0Corr => {
                let c = value * (h.lambda0[0][0] * h.lambda0[1][1]).sqrt();
                h.lambda0[0][1] = c;
                h.lambda0[1][0] = c;
            }
            HlmParam::Nu0 => h.nu0 = value,
            HlmParam::Sigma0Sq => h.sigma0_sq = value,
        }
        h
    }
}

/// Scalar coordinates of [`HlmHypers`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HlmParam {
    #[serde(rename = "g")]
    G,
    #[serde(rename = "mu0_int")]
    Mu0Intercept,
    #[serde(rename = "mu0_slope")]
    Mu0Slope,
    #[serde(rename = "lambda0_int")]
    Lambda0Intercept,
    #[serde(rename = "lambda0_slope")]
    Lambda0Slope,
    #[serde(rename = "lambda0_cov")]
    Lambda0Cov,
    /// Off-diagonal expressed as a correlation; convenient for design boxes
    /// because every value in (-1, 1) keeps `Λ0` positive definite.
    #[serde(rename = "lambda0_corr")]
    Lambda0Corr,
    #[serde(rename = "nu0")]
    Nu0,
    #[serde(rename = "sigma0_sq")]
    Sigma0Sq,
}

impl HlmParam {
    /// The eight coordinates swept by [`hlm_slices`].
    pub const SLICED: [HlmParam; 8] = [
        HlmParam::G,
        HlmParam::Mu0Intercept,
        HlmParam::Mu0Slope,
        HlmParam::Lambda0Intercept,
        HlmParam::Lambda0Slope,
        HlmParam::Lambda0Cov,
        HlmParam::Nu0,
        HlmParam::Sigma0Sq,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            HlmParam::G => "g",
            HlmParam::Mu0Intercept => "mu0_int",
            HlmParam::Mu0Slope => "mu0_slope",
            HlmParam::Lambda0Intercept => "lambda0_int",
            HlmParam::Lambda0Slope => "lambda0_slope",
            HlmParam::Lambda0Cov => "lambda0_cov",
            HlmParam::Lambda0Corr => "lambda0_corr",
            HlmParam::Nu0 => "nu0",
            HlmParam::Sigma0Sq => "sigma0_sq",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        [
            HlmParam::G,
            HlmParam::Mu0Intercept,
            HlmParam::Mu0Slope,
            HlmParam::Lambda0Intercept,
            HlmParam::Lambda0Slope,
            HlmParam::Lambda0Cov,
            HlmParam::Lambda0Corr,
            HlmParam::Nu0,
            HlmParam::Sigma0Sq,
        ]
        .into_iter()
        .find(|p| p.name() == name)
    }
}

/// Group-summed statistics of one model at one `g`.
#[derive(Debug, Clone)]
pub struct HlmStats {
    /// `S1 = −2/(g+1) Σ X_jᵀ y_j` (stored as a column vector).
    pub s1: DVector<f64>,
    /// `S2 = 1/(g+1) Σ X_jᵀ X_j`.
    pub s2: DMatrix<f64>,
    /// `s3 = Σ [y_jᵀy_j − g/(g+1) y_jᵀ X_j β̂_j]`.
    pub s3: f64,
}

pub fn hlm_stats(data: &HlmDataset, kind: HlmModelKind, g: f64) -> Result<HlmStats> {
    let p = kind.p();
    let mut xty = DVector::zeros(p);
    let mut xtx = DMatrix::zeros(p, p);
    let mut yy = 0.0;
    let mut fitted = 0.0;
    for grp in &data.groups {
        grp.check_design(kind)?;
        xty += grp.xty(kind);
        xtx += grp.gram(kind);
        yy += grp.syy;
        fitted += grp.fitted_ss(kind);
    }
    let shrink = 1.0 / (g + 1.0);
    Ok(HlmStats {
        s1: xty * (-2.0 * shrink),
        s2: xtx * shrink,
        s3: yy - g * shrink * fitted,
    })
}

/// Log marginal likelihood with the default log-precision mesh.
pub fn log_marginal_hlm(data: &HlmDataset, kind: HlmModelKind, hypers: &HlmHypers) -> Result<f64> {
    log_marginal_hlm_with(data, kind, hypers, &QuadratureSpec::log_precision())
}

pub fn log_marginal_hlm_with(
    data: &HlmDataset,
    kind: HlmModelKind,
    hypers: &HlmHypers,
    spec: &QuadratureSpec,
) -> Result<f64> {
    hypers.validate()?;
    let stats = hlm_stats(data, kind, hypers.g)?;
    let mu0 = hypers.mu0_for(kind);
    let lambda0 = hypers.lambda0_for(kind);
    let lam_factor = SpdFactor::new(&lambda0)?;
    let lam_inv = lam_factor.inverse();
    let lam_inv_mu = &lam_inv * &mu0;

    let m = data.m() as f64;
    let n = data.n_total() as f64;
    let p = kind.p() as f64;
    let (g, nu0, s0) = (hypers.g, hypers.nu0, hypers.sigma0_sq);
    let prefactor = -0.5 * n * (2.0 * PI).ln() - 0.5 * lam_factor.log_det()
        - 0.5 * m * p * g.ln_1p()
        + 0.5 * nu0 * (0.5 * nu0 * s0).ln()
        - ln_gamma(0.5 * nu0)
        - 0.5 * mu0.dot(&lam_inv_mu);

    let power = 0.5 * n + 0.5 * nu0 - 1.0;
    let rate = 0.5 * nu0 * s0;
    let integrand = |gamma: f64| -> f64 {
        if gamma <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let a = &stats.s2 * gamma + &lam_inv;
        let h = &lam_inv_mu - &stats.s1 * (0.5 * gamma);
        let (log_det, quad) = match small_spd_logdet_quad(&a, &h) {
            Some(v) => v,
            None => return f64::NEG_INFINITY,
        };
        power * gamma.ln() - 0.5 * log_det - 0.5 * gamma * stats.s3 - rate * gamma + 0.5 * quad
    };
    let integral = numerics::log_trapezoid(integrand, spec)?;
    Ok(prefactor + integral)
}

/// `(log det A, hᵀ A⁻¹ h)` for 1×1 or 2×2 symmetric positive definite `A`.
fn small_spd_logdet_quad(a: &DMatrix<f64>, h: &DVector<f64>) -> Option<(f64, f64)> {
    match a.nrows() {
        1 => {
            let v = a[(0, 0)];
            (v > 0.0).then(|| (v.ln(), h[0] * h[0] / v))
        }
        2 => {
            let (p, q, r) = (a[(0, 0)], a[(0, 1)], a[(1, 1)]);
            let det = p * r - q * q;
            if !(p > 0.0 && det > 0.0) {
                return None;
            }
            let quad = (r * h[0] * h[0] - 2.0 * q * h[0] * h[1] + p * h[1] * h[1]) / det;
            Some((det.ln(), quad))
        }
        _ => {
            let f = SpdFactor::new(a).ok()?;
            Some((f.log_det(), h.dot(&f.solve_vec(h))))
        }
    }
}

/// `log p(y | slopes and intercepts) − log p(y | means only)`.
pub fn log_bf_hlm(data: &HlmDataset, hypers: &HlmHypers) -> Result<LogBf> {
    let m1 = log_marginal_hlm(data, HlmModelKind::SlopesAndIntercepts, hypers)?;
    let m2 = log_marginal_hlm(data, HlmModelKind::MeansOnly, hypers)?;
    Ok(LogBf {
        value: m1 - m2,
        std_err: 0.0,
        method: BfMethod::ClosedQuadrature,
        detail: None,
    })
}

/// Data-driven hyperparameters: moments of the per-group least-squares
/// fits, and `g` matched to their spread.
///
/// `μ0` and `Λ0` are the mean and sample covariance of the per-group
/// estimates, `σ0²` the pooled within-group residual variance, `ν0 = 1`,
/// and `g = γ̂ ⟨C, A⟩ / ⟨A, A⟩` projects the estimate covariance `C` onto
/// the average inverse Gram matrix `A` in the Frobenius inner product, with
/// `γ̂ = 1/σ0²`.
pub fn default_hlm_hypers(data: &HlmDataset) -> Result<HlmHypers> {
    let m = data.m();
    if m < 3 {
        return Err(Error::TooFewGroups(m));
    }
    let kind = HlmModelKind::SlopesAndIntercepts;
    let mut estimates = Vec::with_capacity(m);
    let mut avg_inv_gram = [0.0f64; 2];
    let (mut rss, mut dof) = (0.0, 0usize);
    for grp in &data.groups {
        estimates.push(grp.least_squares(kind)?);
        avg_inv_gram[0] += 1.0 / grp.len() as f64 / m as f64;
        avg_inv_gram[1] += 1.0 / grp.sw2 / m as f64;
        rss += grp.rss(kind);
        dof += grp.len() - 2;
    }
    if dof == 0 {
        return Err(Error::DegenerateCalibration(
            "no residual degrees of freedom (every group has exactly 2 observations)".into(),
        ));
    }
    let sigma0_sq = rss / dof as f64;
    if !(sigma0_sq > 0.0) {
        return Err(Error::DegenerateCalibration(
            "pooled residual variance is zero".into(),
        ));
    }

    let mf = m as f64;
    let mean = [0, 1].map(|k| estimates.iter().map(|e| e[k]).sum::<f64>() / mf);
    let mut cov = [[0.0f64; 2]; 2];
    for e in &estimates {
        for r in 0..2 {
            for c in 0..2 {
                cov[r][c] += (e[r] - mean[r]) * (e[c] - mean[c]) / (mf - 1.0);
            }
        }
    }
    let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
    let scale = cov[0][0].abs().max(cov[1][1].abs()).max(f64::MIN_POSITIVE);
    if !(cov[0][0] > 0.0 && cov[1][1] > 0.0 && det > 1e-12 * scale * scale) {
        return Err(Error::DegenerateCalibration(
            "covariance of per-group estimates is not positive definite".into(),
        ));
    }

    // A is diagonal because the predictor is centered within each group.
    let inner_ca = cov[0][0] * avg_inv_gram[0] + cov[1][1] * avg_inv_gram[1];
    let inner_aa = avg_inv_gram[0].powi(2) + avg_inv_gram[1].powi(2);
    let g = inner_ca / inner_aa / sigma0_sq;
    if !(g > 0.0) {
        return Err(Error::DegenerateCalibration(format!("calibrated g = {g}")));
    }
    Ok(HlmHypers {
        g,
        mu0: mean,
        lambda0: cov,
        nu0: 1.0,
        sigma0_sq,
    })
}

/// Sweep ranges for [`hlm_slices`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceRanges {
    /// `log10 g` range.
    pub log10_g: (f64, f64),
    /// Half-width of the `μ0` sweeps in prior standard deviations.
    pub mu0_sds: f64,
    /// Multiplicative span (each side) of the variance sweeps.
    pub variance_factor: f64,
    /// Largest |correlation| reached by the covariance sweep.
    pub max_corr: f64,
    /// Multiplicative span (each side) of the `ν0` and `σ0²` sweeps.
    pub precision_factor: f64,
}

impl Default for SliceRanges {
    fn default() -> Self {
        Self {
            log10_g: (-1.0, 4.0),
            mu0_sds: 3.0,
            variance_factor: 100.0,
            max_corr: 0.95,
            precision_factor: 10.0,
        }
    }
}

/// Where a slice grid lives and how it is spaced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliceAxis {
    pub lower: f64,
    pub upper: f64,
    pub log10: bool,
}

impl SliceAxis {
    pub fn grid(&self, count: usize, center: f64) -> Vec<f64> {
        if count <= 1 {
            return vec![center];
        }
        let (lo, hi) = if self.log10 {
            (self.lower.log10(), self.upper.log10())
        } else {
            (self.lower, self.upper)
        };
        (0..count)
            .map(|k| {
                let t = lo + (hi - lo) * k as f64 / (count - 1) as f64;
                if self.log10 {
                    10f64.powf(t)
                } else {
                    t
                }
            })
            .collect()
    }
}

pub fn slice_axis(param: HlmParam, center: &HlmHypers, ranges: &SliceRanges) -> SliceAxis {
    let v = center.get(param);
    let lin = |half: f64| SliceAxis {
        lower: v - half,
        upper: v + half,
        log10: false,
    };
    let log = |factor: f64| SliceAxis {
        lower: v / factor,
        upper: v * factor,
        log10: true,
    };
    let l = center.lambda0;
    match param {
        HlmParam::G => SliceAxis {
            lower: 10f64.powf(ranges.log10_g.0),
            upper: 10f64.powf(ranges.log10_g.1),
            log10: true,
        },
        HlmParam::Mu0Intercept => lin(ranges.mu0_sds * l[0][0].sqrt()),
        HlmParam::Mu0Slope => lin(ranges.mu0_sds * l[1][1].sqrt()),
        HlmParam::Lambda0Intercept | HlmParam::Lambda0Slope => log(ranges.variance_factor),
        HlmParam::Lambda0Cov => {
            let bound = ranges.max_corr * (l[0][0] * l[1][1]).sqrt();
            SliceAxis {
                lower: -bound,
                upper: bound,
                log10: false,
            }
        }
        HlmParam::Lambda0Corr => SliceAxis {
            lower: -ranges.max_corr,
            upper: ranges.max_corr,
            log10: false,
        },
        HlmParam::Nu0 | HlmParam::Sigma0Sq => log(ranges.precision_factor),
    }
}

/// One evaluated point on a slice. `log_bf` is `None` when the point was
/// skipped (`note` says why).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlicePoint {
    pub value: f64,
    pub log_bf: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HlmSlice {
    pub hyper: HlmParam,
    pub center: f64,
    pub points: Vec<SlicePoint>,
}

impl HlmSlice {
    /// Evaluated (non-skipped) `(value, log_bf)` pairs.
    pub fn evaluated(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.points
            .iter()
            .filter_map(|p| p.log_bf.map(|v| (p.value, v)))
    }

    /// max − min of the evaluated log Bayes factors.
    pub fn range(&self) -> f64 {
        let (lo, hi) = self
            .evaluated()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, v)| {
                (lo.min(v), hi.max(v))
            });
        hi - lo
    }
}

/// Evaluates one grid point of a slice, skipping values that leave the
/// hyperparameter domain.
pub fn slice_point(data: &HlmDataset, center: &HlmHypers, param: HlmParam, value: f64) -> Result<SlicePoint> {
    let h = center.with(param, value);
    if let Err(e) = h.validate() {
        return Ok(SlicePoint {
            value,
            log_bf: None,
            note: Some(format!("skipped: {e}")),
        });
    }
    Ok(SlicePoint {
        value,
        log_bf: Some(log_bf_hlm(data, &h)?.value),
        note: None,
    })
}

/// One-at-a-time sweeps of the eight hyperparameters around `center`.
pub fn hlm_slices(
    data: &HlmDataset,
    center: &HlmHypers,
    points_per_slice: usize,
) -> Result<Vec<HlmSlice>> {
    hlm_slices_with(data, center, points_per_slice, &SliceRanges::default())
}

pub fn hlm_slices_with(
    data: &HlmDataset,
    center: &HlmHypers,
    points_per_slice: usize,
    ranges: &SliceRanges,
) -> Result<Vec<HlmSlice>> {
    center.validate()?;
    HlmParam::SLICED
        .iter()
        .map(|&param| {
            let c = center.get(param);
            let grid = slice_axis(param, center, ranges).grid(points_per_slice, c);
            let points = grid
                .par_iter()
                .map(|&v| slice_point(data, center, param, v))
                .collect::<Result<Vec<_>>>()?;
            Ok(HlmSlice {
                hyper: param,
                center: c,
                points,
            })
        })
        .collect()
}

/// Writes slices as `hyper,grid_value,log_bf` (skipped points leave
/// `log_bf` empty).
pub fn write_slices_csv<W: std::io::Write>(slices: &[HlmSlice], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    wtr.write_record(["hyper", "grid_value", "log_bf"]).map_err(io)?;
    for s in slices {
        for p in &s.points {
            let bf = p.log_bf.map(|v| format!("{v:.16e}")).unwrap_or_default();
            wtr.write_record([s.hyper.name().to_string(), format!("{:.16e}", p.value), bf])
                .map_err(io)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Settings of the synthetic grouped-data generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticHlm {
    pub groups: usize,
    pub min_size: usize,
    pub max_size: usize,
    /// Mean group intercept and slope.
    pub theta: [f64; 2],
    /// Between-group covariance of (intercept, slope).
    pub effect_cov: [[f64; 2]; 2],
    /// Within-group noise variance.
    pub sigma2: f64,
    pub predictor_sd: f64,
    pub kind: HlmModelKind,
}

impl Default for SyntheticHlm {
    /// Roughly the shape of the student math-score data: 100 schools of
    /// about 20 students, modest intercept spread and little slope spread.
    fn default() -> Self {
        Self {
            groups: 100,
            min_size: 10,
            max_size: 30,
            theta: [47.76, 2.37],
            effect_cov: [[23.0, 1.0], [1.0, 3.5]],
            sigma2: 82.94,
            predictor_sd: 0.8,
            kind: HlmModelKind::SlopesAndIntercepts,
        }
    }
}

impl SyntheticHlm {
    /// Draws group effects from `N(θ, effect_cov)` (slopes fixed at zero
    /// for [`HlmModelKind::MeansOnly`]) and responses around them.
    pub fn generate(&self, seed: u64) -> Result<HlmDataset> {
        let c = self.effect_cov;
        if !(c[0][0] > 0.0 && c[1][1] >= 0.0 && c[0][0] * c[1][1] >= c[0][1] * c[1][0]) {
            return Err(Error::param("effect_cov", "must be positive semidefinite"));
        }
        let mut rng = rng::seeded(seed);
        let std = Normal::new(0.0, 1.0).expect("unit normal");
        let noise_sd = self.sigma2.sqrt();
        // Cholesky of the 2×2 effect covariance.
        let l11 = c[0][0].sqrt();
        let l21 = c[1][0] / l11;
        let l22 = (c[1][1] - l21 * l21).max(0.0).sqrt();
        let mut groups = Vec::with_capacity(self.groups);
        for j in 0..self.groups {
            let n = rng.random_range(self.min_size..=self.max_size);
            let ses: Vec<f64> = (0..n)
                .map(|_| self.predictor_sd * std.sample(&mut rng))
                .collect();
            let mean = ses.iter().sum::<f64>() / n as f64;
            let (e1, e2) = (std.sample(&mut rng), std.sample(&mut rng));
            let intercept = self.theta[0] + l11 * e1;
            let slope = match self.kind {
                HlmModelKind::SlopesAndIntercepts => self.theta[1] + l21 * e1 + l22 * e2,
                HlmModelKind::MeansOnly => 0.0,
            };
            let y = ses
                .iter()
                .map(|v| intercept + slope * (v - mean) + noise_sd * std.sample(&mut rng))
                .collect();
            groups.push(HlmGroup::new(format!("{}", j + 1), ses, y)?);
        }
        HlmDataset::new(groups)
    }
}

/// Seed of the bundled synthetic data set; its mixed-model BIC gap is
/// close to the 70 reported for the student math-score data.
pub const BUNDLED_HLM_SEED: u64 = 7;

/// The 100-group synthetic data set bundled for demos and tests.
pub fn synthetic_hlm(seed: u64) -> HlmDataset {
    SyntheticHlm::default()
        .generate(seed)
        .expect("default generator settings are valid")
}

/// Maximum-likelihood fit of a Gaussian linear mixed model whose random
/// effects mirror the fixed effects of `kind` (random intercepts, or
/// correlated random intercepts and slopes).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixedModelFit {
    pub kind: HlmModelKind,
    pub log_likelihood: f64,
    pub n_params: usize,
    pub bic: f64,
    pub fixed: Vec<f64>,
    pub sigma2: f64,
    pub random_cov: Vec<Vec<f64>>,
}

pub fn mixed_model_fit(data: &HlmDataset, kind: HlmModelKind) -> Result<MixedModelFit> {
    for grp in data.groups() {
        grp.check_design(kind)?;
    }
    let p = kind.p();
    // θ = (log σ², log L11, [L21, log L22]) with Ψ = L Lᵀ.
    let n_theta = if p == 1 { 2 } else { 4 };
    let pooled = data
        .groups()
        .iter()
        .map(|g| g.rss(kind))
        .sum::<f64>()
        / (data.n_total() - data.m() * p).max(1) as f64;
    let spread = {
        let means: Vec<f64> = data.groups().iter().map(|g| g.sy / g.len() as f64).collect();
        let mu = means.iter().sum::<f64>() / means.len() as f64;
        means.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / means.len().max(2) as f64
    };
    let mut start = vec![pooled.max(1e-8).ln(), 0.5 * spread.max(1e-8).ln()];
    if p == 2 {
        start.extend([0.0, 0.5 * (0.1 * spread).max(1e-8).ln()]);
    }
    debug_assert_eq!(start.len(), n_theta);

    let objective = |theta: &[f64]| -> f64 {
        match mixed_profile(data, kind, theta) {
            Some((ll, _)) => -ll,
            None => f64::INFINITY,
        }
    };
    let best = numerics::nelder_mead(objective, &start, 0.5, 1e-10, 4000);
    let (ll, fixed) = mixed_profile(data, kind, &best.x).ok_or_else(|| {
        Error::DegenerateCalibration("mixed model likelihood not finite at optimum".into())
    })?;
    let psi = psi_from_theta(&best.x, p);
    let n_params = p + 1 + p * (p + 1) / 2;
    Ok(MixedModelFit {
        kind,
        log_likelihood: ll,
        n_params,
        bic: -2.0 * ll + n_params as f64 * (data.n_total() as f64).ln(),
        fixed: fixed.iter().copied().collect(),
        sigma2: best.x[0].exp(),
        random_cov: (0..p).map(|r| (0..p).map(|c| psi[(r, c)]).collect()).collect(),
    })
}

fn psi_from_theta(theta: &[f64], p: usize) -> DMatrix<f64> {
    if p == 1 {
        return DMatrix::from_element(1, 1, (2.0 * theta[1]).exp());
    }
    let l = DMatrix::from_row_slice(2, 2, &[theta[1].exp(), 0.0, theta[2], theta[3].exp()]);
    &l * l.transpose()
}

/// Profile log-likelihood (fixed effects at their GLS estimate).
fn mixed_profile(data: &HlmDataset, kind: HlmModelKind, theta: &[f64]) -> Option<(f64, DVector<f64>)> {
    let p = kind.p();
    let sigma2 = theta[0].exp();
    let psi = psi_from_theta(theta, p);
    let psi_f = SpdFactor::new(&psi).ok()?;
    let psi_inv = psi_f.inverse();

    // Per group: V⁻¹ = (I − X M⁻¹ Xᵀ)/σ² with M = σ² Ψ⁻¹ + XᵀX.
    let mut xtvx = DMatrix::zeros(p, p);
    let mut xtvy = DVector::zeros(p);
    let mut log_det = 0.0;
    let mut parts = Vec::with_capacity(data.m());
    for grp in data.groups() {
        let xtx = grp.gram(kind);
        let xty = grp.xty(kind);
        let m = &psi_inv * sigma2 + &xtx;
        let mf = SpdFactor::new(&m).ok()?;
        let minv_xtx = mf.solve(&xtx);
        let minv_xty = mf.solve_vec(&xty);
        xtvx += (&xtx - &xtx * &minv_xtx) / sigma2;
        xtvy += (&xty - &xtx * &minv_xty) / sigma2;
        // log|V| = n log σ² + log|Ψ| + log|M| − p log σ²
        log_det += grp.len() as f64 * theta[0] + psi_f.log_det() + mf.log_det() - p as f64 * theta[0];
        parts.push((xtx, xty, mf, grp.syy));
    }
    let beta = SpdFactor::new(&xtvx).ok()?.solve_vec(&xtvy);
    let mut quad = 0.0;
    for (xtx, xty, mf, yy) in &parts {
        // r = y − Xβ;  rᵀV⁻¹r = (rᵀr − (Xᵀr)ᵀ M⁻¹ (Xᵀr)) / σ²
        let xtr = xty - xtx * &beta;
        let rr = yy - 2.0 * beta.dot(xty) + beta.dot(&(xtx * &beta));
        quad += (rr - xtr.dot(&mf.solve_vec(&xtr))) / sigma2;
    }
    let n = data.n_total() as f64;
    let ll = -0.5 * (n * (2.0 * PI).ln() + log_det + quad);
    ll.is_finite().then_some((ll, beta))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> HlmDataset {
        HlmDataset::new(vec![
            HlmGroup::new("a", vec![0.0, 1.0, 2.0], vec![1.0, 2.5, 2.9]).unwrap(),
            HlmGroup::new("b", vec![1.0, 3.0, 2.0], vec![0.2, 1.9, 1.1]).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn csv_construction() {
        let text = "school,ses,mathscore\n1,0.5,40\n1,1.5,45\n2,-1,50\n1,2.5,47\n2,0,52\n2,1,49\n";
        let d = HlmDataset::read_csv(text.as_bytes()).unwrap();
        assert_eq!(d.m(), 2);
        assert_eq!(d.n_total(), 6);
        for g in d.groups() {
            assert!(g.w().iter().sum::<f64>().abs() < 1e-12);
        }
        assert_eq!(d.groups()[0].id(), "1");
        assert_eq!(d.groups()[0].y(), &[40.0, 45.0, 47.0]);
    }

    #[test]
    fn csv_rejects_singleton_school() {
        let text = "school,ses,mathscore\n1,0.5,40\n1,1.5,45\n2,-1,50\n";
        assert!(matches!(
            HlmDataset::read_csv(text.as_bytes()),
            Err(Error::GroupTooSmall { ref group, size: 1 }) if group == "2"
        ));
    }

    #[test]
    fn csv_reports_line_of_bad_cell() {
        let text = "school,ses,mathscore\n1,0.5,40\n1,nan,45\n";
        match HlmDataset::read_csv(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let missing = "school,ses,mathscore\n1,0.5,\n";
        assert!(matches!(
            HlmDataset::read_csv(missing.as_bytes()),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn means_only_ignores_slope_hypers() {
        let d = tiny();
        let h = HlmHypers {
            g: 2.0,
            mu0: [1.0, 0.5],
            lambda0: [[2.0, 0.3], [0.3, 1.0]],
            nu0: 2.0,
            sigma0_sq: 1.0,
        };
        let other = h.with(HlmParam::Mu0Slope, 40.0).with(HlmParam::Lambda0Slope, 9.0);
        let a = log_marginal_hlm(&d, HlmModelKind::MeansOnly, &h).unwrap();
        let b = log_marginal_hlm(&d, HlmModelKind::MeansOnly, &other).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn quadrature_mesh_refinement() {
        let d = synthetic_hlm(3);
        let h = default_hlm_hypers(&d).unwrap();
        for kind in [HlmModelKind::SlopesAndIntercepts, HlmModelKind::MeansOnly] {
            let spec = QuadratureSpec::log_precision();
            let a = log_marginal_hlm_with(&d, kind, &h, &spec).unwrap();
            let b = log_marginal_hlm_with(&d, kind, &h, &spec.refined()).unwrap();
            assert!((a - b).abs() < 1e-6, "{kind:?}: {a} vs {b}");
        }
    }

    #[test]
    fn group_order_and_within_group_order_do_not_matter() {
        let d = synthetic_hlm(5);
        let h = default_hlm_hypers(&d).unwrap();
        let base = log_bf_hlm(&d, &h).unwrap().value;
        let mut groups = d.groups().to_vec();
        groups.reverse();
        let g0 = &groups[0];
        let mut pairs: Vec<(f64, f64)> = g0
            .raw_predictor()
            .iter()
            .copied()
            .zip(g0.y().iter().copied())
            .collect();
        pairs.reverse();
        let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        groups[0] = HlmGroup::new(g0.id(), x, y).unwrap();
        let shuffled = log_bf_hlm(&HlmDataset::new(groups).unwrap(), &h).unwrap().value;
        assert!((base - shuffled).abs() < 1e-8 * base.abs().max(1.0));
    }

    #[test]
    fn degenerate_design_names_group() {
        let d = HlmDataset::new(vec![
            HlmGroup::new("ok", vec![0.0, 1.0], vec![1.0, 2.0]).unwrap(),
            HlmGroup::new("flat", vec![2.0, 2.0], vec![1.0, 2.0]).unwrap(),
        ])
        .unwrap();
        let h = HlmHypers::published_defaults();
        assert!(matches!(
            log_marginal_hlm(&d, HlmModelKind::SlopesAndIntercepts, &h),
            Err(Error::DegenerateGroupDesign { ref group }) if group == "flat"
        ));
        assert!(log_marginal_hlm(&d, HlmModelKind::MeansOnly, &h).is_ok());
    }

    #[test]
    fn calibration_needs_three_groups() {
        assert!(matches!(default_hlm_hypers(&tiny()), Err(Error::TooFewGroups(2))));
    }

    #[test]
    fn identical_groups_cannot_calibrate() {
        let g = |id: &str| HlmGroup::new(id, vec![0.0, 1.0, 2.0], vec![1.0, 3.0, 2.0]).unwrap();
        let d = HlmDataset::new(vec![g("a"), g("b"), g("c")]).unwrap();
        assert!(matches!(
            default_hlm_hypers(&d),
            Err(Error::DegenerateCalibration(_))
        ));
    }

    #[test]
    fn calibration_recovers_generator() {
        let d = synthetic_hlm(11);
        let h = default_hlm_hypers(&d).unwrap();
        let truth = SyntheticHlm::default();
        assert!((h.sigma0_sq / truth.sigma2 - 1.0).abs() < 0.1, "{}", h.sigma0_sq);
        assert!((h.mu0[0] - truth.theta[0]).abs() < 2.0, "{:?}", h.mu0);
        assert!(h.g > 1.0 && h.g < 30.0, "g = {}", h.g);
        assert_eq!(h.nu0, 1.0);
    }

    #[test]
    fn single_point_slices_are_the_center() {
        let d = synthetic_hlm(2);
        let h = default_hlm_hypers(&d).unwrap();
        let center = log_bf_hlm(&d, &h).unwrap().value;
        let slices = hlm_slices(&d, &h, 1).unwrap();
        assert_eq!(slices.len(), 8);
        for s in slices {
            assert_eq!(s.points.len(), 1);
            assert_eq!(s.points[0].log_bf, Some(center));
        }
    }

    #[test]
    fn covariance_sweep_skips_non_spd_points() {
        let d = synthetic_hlm(2);
        let h = default_hlm_hypers(&d).unwrap();
        let ranges = SliceRanges {
            max_corr: 1.5,
            ..SliceRanges::default()
        };
        let slices = hlm_slices_with(&d, &h, 7, &ranges).unwrap();
        let cov = slices.iter().find(|s| s.hyper == HlmParam::Lambda0Cov).unwrap();
        let skipped = cov.points.iter().filter(|p| p.log_bf.is_none()).count();
        // grid correlations are ±1.5, ±1, ±0.5, 0; |ρ| >= 1 is not SPD
        assert_eq!(skipped, 4);
        assert!(cov.points.iter().all(|p| p.log_bf.is_some() || p.note.is_some()));
    }

    #[test]
    fn slices_csv_has_header_and_rows() {
        let d = synthetic_hlm(2);
        let h = default_hlm_hypers(&d).unwrap();
        let slices = hlm_slices(&d, &h, 3).unwrap();
        let mut buf = Vec::new();
        write_slices_csv(&slices, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("hyper,grid_value,log_bf\n"));
        assert_eq!(text.lines().count(), 1 + 8 * 3);
    }

    #[test]
    fn param_names_round_trip() {
        for p in HlmParam::SLICED.iter().chain([&HlmParam::Lambda0Corr]) {
            assert_eq!(HlmParam::parse(p.name()), Some(*p));
            let json = serde_json::to_string(p).unwrap();
            assert_eq!(json, format!("\"{}\"", p.name()));
        }
    }

    #[test]
    fn mixed_model_recovers_variances() {
        let d = SyntheticHlm {
            groups: 200,
            ..SyntheticHlm::default()
        }
        .generate(4)
        .unwrap();
        let fit = mixed_model_fit(&d, HlmModelKind::SlopesAndIntercepts).unwrap();
        assert!((fit.sigma2 / 82.94 - 1.0).abs() < 0.1, "{}", fit.sigma2);
        let means = mixed_model_fit(&d, HlmModelKind::MeansOnly).unwrap();
        assert!(fit.log_likelihood > means.log_likelihood);
        assert!(fit.bic < means.bic);
        assert_eq!(fit.n_params, 6);
        assert_eq!(means.n_params, 3);
    }
}
