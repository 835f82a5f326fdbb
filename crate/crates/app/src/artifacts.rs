//! The single serialization path. Every CLI export and every API result is
//! produced by one of these functions, so equal requests give equal bytes.

use std::sync::atomic::AtomicUsize;

use bfsurf::design::{self, Design, HyperBox};
use bfsurf::hlm_bf::{self, HlmDataset, HlmHypers, HlmSlice};
use bfsurf::reg_bf::{self, OlsSummary, RegressionData, RegressionHypers};
use bfsurf::surface::{self, EvaluatorKind, EvaluatorSpec, ExportFormat, SurfaceSample, SweepManifest};
use bfsurf::surrogate::{self, HetGpFit, Nugget};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};
use crate::schema::{BfRequest, DataInput, DesignRequest, SimulateRequest, SlicesRequest, SurfaceRequest};

/// Pretty JSON with a trailing newline.
pub fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value).map_err(bfsurf::Error::from)?;
    out.push(b'\n');
    Ok(out)
}

pub fn content_type(format: ExportFormat) -> &'static str {
    match format {
        ExportFormat::Csv => "text/csv",
        ExportFormat::Json => "application/json",
    }
}

pub fn extension(format: ExportFormat) -> &'static str {
    match format {
        ExportFormat::Csv => "csv",
        ExportFormat::Json => "json",
    }
}

/// `.json` paths are JSON, everything else CSV.
pub fn format_for_path(path: &std::path::Path) -> ExportFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("json") => ExportFormat::Json,
        _ => ExportFormat::Csv,
    }
}

pub fn simulate_data(req: &SimulateRequest) -> Result<RegressionData> {
    Ok(reg_bf::simulate_regression(req.n, req.alpha, req.beta, req.sigma2, req.seed)?)
}

#[derive(Debug, Clone, Serialize)]
struct SimulateDoc<'a> {
    n: usize,
    alpha: f64,
    beta: f64,
    sigma2: f64,
    seed: u64,
    x: &'a [f64],
    y: &'a [f64],
    ols: Option<OlsSummary>,
}

pub fn simulate(req: &SimulateRequest) -> Result<Vec<u8>> {
    let data = simulate_data(req)?;
    match req.format {
        ExportFormat::Csv => {
            let mut out = Vec::new();
            data.write_csv(&mut out)?;
            Ok(out)
        }
        ExportFormat::Json => json_bytes(&SimulateDoc {
            n: req.n,
            alpha: req.alpha,
            beta: req.beta,
            sigma2: req.sigma2,
            seed: req.seed,
            x: data.x(),
            y: data.y(),
            ols: reg_bf::ols_summary(&data).ok(),
        }),
    }
}

/// Regression data from a request; `None` is the demo data set.
pub fn regression_data(input: Option<&DataInput>) -> Result<RegressionData> {
    match input {
        None => Ok(reg_bf::default_study_data(reg_bf::DEFAULT_STUDY_SEED)),
        Some(DataInput::Points { x, y }) => Ok(RegressionData::new(x.clone(), y.clone())?),
        Some(DataInput::Csv { csv }) => Ok(RegressionData::read_csv(csv.as_bytes())?),
        Some(DataInput::Simulate { simulate }) => simulate_data(simulate),
        Some(DataInput::HlmCsv { .. } | DataInput::HlmSynthetic { .. }) => {
            Err(AppError::invalid("data", "grouped data given to a regression method"))
        }
    }
}

/// Grouped data from a request; `None` is the bundled synthetic set.
pub fn hlm_data(input: Option<&DataInput>) -> Result<HlmDataset> {
    match input {
        None => Ok(hlm_bf::synthetic_hlm(hlm_bf::BUNDLED_HLM_SEED)),
        Some(DataInput::HlmCsv { hlm_csv }) => Ok(HlmDataset::read_csv(hlm_csv.as_bytes())?),
        Some(DataInput::HlmSynthetic { hlm_synthetic }) => Ok(hlm_bf::synthetic_hlm(*hlm_synthetic)),
        Some(_) => Err(AppError::invalid("data", "regression data given to the hlm evaluator")),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BfEntry {
    pub method: String,
    pub log_bf: f64,
    pub std_err: f64,
    pub class: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BfResponse {
    pub n: usize,
    pub hypers: RegressionHypers,
    pub fractional_m: usize,
    pub methods: Vec<BfEntry>,
}

pub fn bf(req: &BfRequest) -> Result<BfResponse> {
    let hypers = req.hypers();
    hypers.validate()?;
    let data = regression_data(req.data.as_ref())?;
    let report = reg_bf::bf_report(&data, &hypers, req.fractional_m)?;
    let methods = [report.closed_quadrature, report.zellner_siow, report.bic, report.fractional]
        .into_iter()
        .map(|bf| {
            let class = surface::classify(bf.value)?.label();
            Ok(BfEntry {
                method: bf.method.as_str().to_string(),
                log_bf: bf.value,
                std_err: bf.std_err,
                class,
                detail: bf.detail,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BfResponse {
        n: data.n(),
        hypers,
        fractional_m: req.fractional_m,
        methods,
    })
}

/// One labeled line per method.
pub fn bf_text(resp: &BfResponse) -> String {
    resp.methods
        .iter()
        .map(|m| format!("{:<18} log BF12 = {:>12.6}  {}\n", m.method, m.log_bf, m.class))
        .collect()
}

fn parse_box(spec: &str, field: &str) -> Result<(HyperBox, Vec<Option<usize>>)> {
    HyperBox::parse(spec).map_err(|e| match AppError::from(e) {
        AppError::Invalid { field: f, message } => AppError::invalid(field, format!("{f}: {message}")),
        other => other,
    })
}

pub fn build_design(req: &DesignRequest) -> Result<Design> {
    let base = match (&req.grid, &req.box_spec) {
        (Some(grid), None) => {
            let (bbox, counts) = parse_box(grid, "grid")?;
            let counts = counts
                .into_iter()
                .zip(bbox.names())
                .map(|(c, n)| c.ok_or_else(|| AppError::invalid("grid", format!("dimension `{n}` has no count"))))
                .collect::<Result<Vec<_>>>()?;
            design::grid_design(&bbox, &counts)?
        }
        (None, Some(spec)) => {
            let (bbox, _) = parse_box(spec, "box")?;
            match (req.lhs, &req.design_csv) {
                (Some(n), None) if req.plain_lhs => design::plain_lhs(&bbox, n, req.design_seed)?,
                (Some(n), None) => design::lhs_maximin(&bbox, n, req.design_seed)?,
                (None, Some(text)) => Design::read_csv(bbox, text.as_bytes())?,
                _ => return Err(AppError::invalid("lhs", "a box needs exactly one of lhs or design_csv")),
            }
        }
        _ => return Err(AppError::invalid("grid", "give exactly one of grid or box")),
    };
    if req.replicates == 0 {
        return Err(AppError::invalid("replicates", "must be at least 1"));
    }
    if base.replicates > 1 && req.replicates > 1 {
        return Err(AppError::invalid("replicates", "design file already carries replicates"));
    }
    if req.replicates > 1 {
        Ok(design::with_replicates(&base, req.replicates)?)
    } else {
        Ok(base)
    }
}

pub fn design_csv(req: &DesignRequest) -> Result<Vec<u8>> {
    let d = build_design(req)?;
    let mut out = Vec::new();
    d.write_csv(&mut out)?;
    Ok(out)
}

/// A validated sweep, ready to run.
#[derive(Debug, Clone)]
pub struct PreparedSurface {
    pub spec: EvaluatorSpec,
    pub design: Design,
    pub seed: u64,
    pub format: ExportFormat,
}

pub struct SurfaceOutput {
    pub bytes: Vec<u8>,
    pub manifest: SweepManifest,
}

pub fn prepare_surface(req: &SurfaceRequest) -> Result<PreparedSurface> {
    let n_draws = req.n_draws.unwrap_or(reg_bf::NOISY_MIN_DRAWS);
    let kind = EvaluatorKind::parse(&req.evaluator, n_draws)
        .ok_or_else(|| AppError::invalid("evaluator", format!("unknown evaluator `{}`", req.evaluator)))?;
    if req.n_draws.is_some() && !matches!(kind, EvaluatorKind::RegNoisy { .. }) {
        return Err(AppError::invalid("n_draws", "only the reg_noisy evaluator draws samples"));
    }
    if n_draws < reg_bf::NOISY_MIN_DRAWS {
        return Err(AppError::invalid(
            "n_draws",
            format!("need at least {}", reg_bf::NOISY_MIN_DRAWS),
        ));
    }
    let design = build_design(&req.design)?;
    let mut spec = match kind {
        EvaluatorKind::Hlm => {
            if req.base.is_some() {
                return Err(AppError::invalid("base", "the hlm evaluator takes hlm_base"));
            }
            EvaluatorSpec::hlm(hlm_data(req.data.as_ref())?, req.hlm_base)?
        }
        _ => {
            if req.hlm_base.is_some() {
                return Err(AppError::invalid("hlm_base", "regression evaluators take base"));
            }
            let mut spec = EvaluatorSpec::regression(kind, regression_data(req.data.as_ref())?)?;
            if let Some(base) = req.base {
                base.validate()?;
                spec = spec.with_base(base);
            }
            spec.fractional_m = req.fractional_m;
            spec
        }
    };
    if let Some(m) = &req.mapping {
        spec = spec.with_mapping(m.clone());
    }
    spec.check(&design)?;
    Ok(PreparedSurface {
        spec,
        design,
        seed: req.seed,
        format: req.format,
    })
}

impl PreparedSurface {
    pub fn evaluations(&self) -> usize {
        self.design.evaluations()
    }

    pub fn run(&self, progress: Option<&AtomicUsize>) -> Result<SurfaceOutput> {
        let opts = surface::SweepOptions { serial: false, progress };
        let samples = surface::evaluate_surface_with(&self.spec, &self.design, self.seed, opts)?;
        let dims: Vec<String> = self.design.bbox.names().iter().map(|s| s.to_string()).collect();
        let bytes = surface::export_surface(&dims, &samples, self.format)?;
        let manifest = surface::manifest(&self.spec, &self.design, self.seed, &samples)?;
        Ok(SurfaceOutput { bytes, manifest })
    }
}

#[derive(Debug, Clone, Serialize)]
struct SlicesDoc<'a> {
    center: HlmHypers,
    slices: &'a [HlmSlice],
}

pub fn slices(req: &SlicesRequest) -> Result<Vec<u8>> {
    let data = hlm_data(req.data.as_ref())?;
    let center = match req.center {
        Some(c) => c,
        None => hlm_bf::default_hlm_hypers(&data)?,
    };
    let ranges = req.ranges.unwrap_or_default();
    let slices = hlm_bf::hlm_slices_with(&data, &center, req.points, &ranges)?;
    match req.format {
        ExportFormat::Csv => {
            let mut out = Vec::new();
            hlm_bf::write_slices_csv(&slices, &mut out)?;
            Ok(out)
        }
        ExportFormat::Json => json_bytes(&SlicesDoc { center, slices: &slices }),
    }
}

/// Parses surface export bytes.
pub fn load_surface(bytes: &[u8], format: ExportFormat) -> Result<(Vec<String>, Vec<SurfaceSample>)> {
    Ok(surface::import_surface(bytes, format)?)
}

fn check_dims(bbox: &HyperBox, dims: &[String]) -> Result<()> {
    let names = bbox.names();
    if names.len() != dims.len() || names.iter().zip(dims).any(|(a, b)| a != b) {
        return Err(AppError::invalid(
            "box",
            format!("box dimensions {names:?} do not match surface columns {dims:?}"),
        ));
    }
    Ok(())
}

fn fit_model(bbox: &HyperBox, dims: &[String], samples: &[SurfaceSample], het: bool) -> Result<HetGpFit> {
    check_dims(bbox, dims)?;
    let train = surface::training_set(bbox, samples)?;
    let fit = if het {
        surrogate::fit_hetgp(&train)
    } else {
        surrogate::fit_gp(&train, Nugget::Estimated)
    };
    Ok(surrogate::best_effort(fit)?.with_box(bbox.clone()))
}

/// Fits a surrogate to surface samples and serializes it.
pub fn fit(bbox: &HyperBox, dims: &[String], samples: &[SurfaceSample], het: bool) -> Result<Vec<u8>> {
    let mut out = fit_model(bbox, dims, samples, het)?.to_json()?.into_bytes();
    out.push(b'\n');
    Ok(out)
}

pub fn parse_fit(text: &str) -> Result<HetGpFit> {
    let fit = HetGpFit::from_json(text).map_err(|e| AppError::invalid("fit", e.to_string()))?;
    if fit.bbox().is_none() {
        return Err(AppError::invalid("fit", "fit document has no design box"));
    }
    Ok(fit)
}

/// Query points of a prediction request.
pub fn query_points(fit: &HetGpFit, grid: Option<&str>, points: Option<&[Vec<f64>]>) -> Result<Vec<Vec<f64>>> {
    let bbox = fit.bbox().ok_or_else(|| AppError::invalid("fit", "fit document has no design box"))?;
    match (grid, points) {
        (Some(spec), None) => {
            let (qbox, counts) = parse_box(spec, "grid")?;
            let qnames = qbox.names();
            if qnames != bbox.names() {
                return Err(AppError::invalid(
                    "grid",
                    format!("grid dimensions {qnames:?} differ from the fit's {:?}", bbox.names()),
                ));
            }
            let counts = counts
                .into_iter()
                .zip(&qnames)
                .map(|(c, n)| c.ok_or_else(|| AppError::invalid("grid", format!("dimension `{n}` has no count"))))
                .collect::<Result<Vec<_>>>()?;
            Ok(design::grid_design(&qbox, &counts)?.points)
        }
        (None, Some(p)) => {
            if p.is_empty() {
                return Err(AppError::invalid("points", "no query points"));
            }
            if let Some(bad) = p.iter().find(|q| q.len() != bbox.d()) {
                return Err(AppError::invalid(
                    "points",
                    format!("point has {} coordinates for {} dimensions", bad.len(), bbox.d()),
                ));
            }
            Ok(p.to_vec())
        }
        _ => Err(AppError::invalid("grid", "give exactly one of grid or points")),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionDoc {
    pub dims: Vec<String>,
    pub points: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub sd_mean: Vec<f64>,
    pub sd_obs: Vec<f64>,
    pub extrapolated: Vec<bool>,
}

pub fn predict(fit: &HetGpFit, points: &[Vec<f64>], format: ExportFormat) -> Result<Vec<u8>> {
    let pred = fit.predict_native(points)?;
    let dims: Vec<String> = fit
        .bbox()
        .expect("checked by parse_fit")
        .names()
        .iter()
        .map(|s| s.to_string())
        .collect();
    match format {
        ExportFormat::Csv => {
            let mut out = Vec::new();
            pred.write_csv(&dims, points, &mut out)?;
            Ok(out)
        }
        ExportFormat::Json => json_bytes(&PredictionDoc {
            dims,
            points: points.to_vec(),
            sd_mean: pred.var_mean.iter().map(|v| v.sqrt()).collect(),
            sd_obs: pred.var_obs.iter().map(|v| v.sqrt()).collect(),
            mean: pred.mean,
            extrapolated: pred.extrapolated,
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub coverage: f64,
    pub level: f64,
    pub holdout_fraction: f64,
    pub split_seed: u64,
    pub train_locations: usize,
    pub holdout_locations: usize,
    pub heteroskedastic: bool,
}

/// Splits surface samples by location, fits on the training part and
/// reports holdout coverage of the `level` predictive interval.
pub fn coverage(
    bbox: &HyperBox,
    dims: &[String],
    samples: &[SurfaceSample],
    het: bool,
    holdout_fraction: f64,
    split_seed: u64,
    level: f64,
) -> Result<CoverageReport> {
    check_dims(bbox, dims)?;
    let all = surface::training_set(bbox, samples)?;
    let (train, holdout) = all.split_locations(holdout_fraction, split_seed)?;
    let fit = if het {
        surrogate::fit_hetgp(&train)
    } else {
        surrogate::fit_gp(&train, Nugget::Estimated)
    };
    let fit = surrogate::best_effort(fit)?;
    Ok(CoverageReport {
        coverage: surrogate::coverage(&fit, &holdout, level)?,
        level,
        holdout_fraction,
        split_seed,
        train_locations: train.n_locations(),
        holdout_locations: holdout.n_locations(),
        heteroskedastic: fit.is_heteroskedastic(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub x: Vec<f64>,
    pub density: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorDensity {
    pub hypers: RegressionHypers,
    /// Slope prior over `μ ± 4/√φ`.
    pub beta: Curve,
    /// Error-precision prior over `(0, a/b + 6√a/b]`, midpoint nodes.
    pub gamma: Curve,
}

pub fn prior_density(hypers: &RegressionHypers, points: usize) -> Result<PriorDensity> {
    hypers.validate()?;
    if !(2..=10_000).contains(&points) {
        return Err(AppError::invalid("points", "must lie in 2..=10000"));
    }
    let half = 4.0 / hypers.phi.sqrt();
    let bx: Vec<f64> = (0..points)
        .map(|k| hypers.mu - half + 2.0 * half * k as f64 / (points - 1) as f64)
        .collect();
    let top = (hypers.a + 6.0 * hypers.a.sqrt()) / hypers.b;
    let gx: Vec<f64> = (0..points).map(|k| top * (k as f64 + 0.5) / points as f64).collect();
    Ok(PriorDensity {
        hypers: *hypers,
        beta: Curve {
            density: bx.iter().map(|&b| reg_bf::beta_prior_log_density(hypers, b).exp()).collect(),
            x: bx,
        },
        gamma: Curve {
            density: gx.iter().map(|&g| reg_bf::gamma_prior_log_density(hypers, g).exp()).collect(),
            x: gx,
        },
    })
}
