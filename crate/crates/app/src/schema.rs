//! Request bodies shared by the CLI and the HTTP API. The CLI builds the
//! same structs from its flags, so both front ends reach the artifact
//! functions with identical inputs.

use bfsurf::hlm_bf::{HlmHypers, SliceRanges};
use bfsurf::reg_bf::RegressionHypers;
use bfsurf::surface::ExportFormat;
use serde::{Deserialize, Serialize};

fn one() -> f64 {
    1.0
}
fn one_usize() -> usize {
    1
}
fn three() -> usize {
    3
}
fn fifteen() -> usize {
    15
}
fn json() -> ExportFormat {
    ExportFormat::Json
}
fn csv() -> ExportFormat {
    ExportFormat::Csv
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateRequest {
    pub n: usize,
    #[serde(default)]
    pub alpha: f64,
    pub beta: f64,
    pub sigma2: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "json")]
    pub format: ExportFormat,
}

/// A data set given inline, as CSV text, or by a generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DataInput {
    Points { x: Vec<f64>, y: Vec<f64> },
    Csv { csv: String },
    Simulate { simulate: SimulateRequest },
    HlmCsv { hlm_csv: String },
    HlmSynthetic { hlm_synthetic: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BfRequest {
    /// Defaults to the bundled demo regression data.
    #[serde(default)]
    pub data: Option<DataInput>,
    #[serde(default)]
    pub mu: f64,
    #[serde(default = "one")]
    pub phi: f64,
    #[serde(default = "one")]
    pub a: f64,
    #[serde(default = "one")]
    pub b: f64,
    #[serde(default = "three")]
    pub fractional_m: usize,
}

impl BfRequest {
    pub fn hypers(&self) -> RegressionHypers {
        RegressionHypers {
            mu: self.mu,
            phi: self.phi,
            a: self.a,
            b: self.b,
        }
    }
}

/// Where the design comes from: a grid spec with counts, an LHS over a box,
/// or explicit design CSV over a box.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DesignRequest {
    /// `name:scale:lower:upper:count,…`
    #[serde(default)]
    pub grid: Option<String>,
    /// `name:scale:lower:upper,…` for `lhs` or `design_csv`.
    #[serde(default, rename = "box")]
    pub box_spec: Option<String>,
    #[serde(default)]
    pub lhs: Option<usize>,
    #[serde(default)]
    pub plain_lhs: bool,
    #[serde(default)]
    pub design_seed: u64,
    #[serde(default)]
    pub design_csv: Option<String>,
    #[serde(default = "one_usize")]
    pub replicates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceRequest {
    /// `reg_closed`, `reg_zs`, `reg_bic`, `reg_fractional`, `reg_noisy` or `hlm`.
    pub evaluator: String,
    #[serde(default)]
    pub n_draws: Option<usize>,
    /// Defaults to the demo regression data or the bundled HLM data.
    #[serde(default)]
    pub data: Option<DataInput>,
    #[serde(flatten)]
    pub design: DesignRequest,
    #[serde(default)]
    pub seed: u64,
    /// Hyperparameter per design dimension; defaults to the dimension names.
    #[serde(default)]
    pub mapping: Option<Vec<String>>,
    /// Fixed regression hyperparameters for unmapped coordinates.
    #[serde(default)]
    pub base: Option<RegressionHypers>,
    /// Fixed HLM hyperparameters; defaults to the data-calibrated point.
    #[serde(default)]
    pub hlm_base: Option<HlmHypers>,
    #[serde(default = "three")]
    pub fractional_m: usize,
    #[serde(default = "csv")]
    pub format: ExportFormat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlicesRequest {
    #[serde(default)]
    pub data: Option<DataInput>,
    /// Slice center; defaults to the data-calibrated point.
    #[serde(default)]
    pub center: Option<HlmHypers>,
    #[serde(default = "fifteen")]
    pub points: usize,
    #[serde(default)]
    pub ranges: Option<SliceRanges>,
    #[serde(default = "json")]
    pub format: ExportFormat,
}

/// Fit a surrogate to a finished sweep job, or to surface CSV over a box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRequest {
    #[serde(default)]
    pub job_id: Option<String>,
    #[serde(default)]
    pub surface_csv: Option<String>,
    #[serde(default, rename = "box")]
    pub box_spec: Option<String>,
    #[serde(default)]
    pub het: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictRequest {
    /// A finished fit job.
    #[serde(default)]
    pub fit_job: Option<String>,
    /// A fit document as written by `fit`.
    #[serde(default)]
    pub fit: Option<serde_json::Value>,
    /// `name:scale:lower:upper:count,…` over the fit's dimensions.
    #[serde(default)]
    pub grid: Option<String>,
    /// Explicit query points in native units.
    #[serde(default)]
    pub points: Option<Vec<Vec<f64>>>,
    #[serde(default = "json")]
    pub format: ExportFormat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorDensityQuery {
    pub hypers: RegressionHypers,
    pub points: usize,
}
