//! Bayes factor surface sweeps: bind an evaluator to a design, evaluate
//! every (location, replicate), classify the evidence, and export.
//!
//! Output order is location-major regardless of how the sweep was
//! scheduled, and noisy evaluators draw from a stream derived from
//! `(seed, location, replicate)`, so parallel and serial sweeps agree
//! byte for byte.

use std::io::Read;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{Design, HyperBox};
use crate::error::{Error, Result};
use crate::hlm_bf::{self, HlmDataset, HlmHypers, HlmParam};
use crate::reg_bf::{self, csv_err, LogBf, RegressionData, RegressionHypers};
use crate::surrogate::TrainingSet;

/// Which Bayes factor is computed at each design point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EvaluatorKind {
    RegClosed,
    RegZs,
    RegBic,
    RegFractional,
    RegNoisy { n_draws: usize },
    Hlm,
}

impl EvaluatorKind {
    pub fn name(&self) -> &'static str {
        match self {
            EvaluatorKind::RegClosed => "reg_closed",
            EvaluatorKind::RegZs => "reg_zs",
            EvaluatorKind::RegBic => "reg_bic",
            EvaluatorKind::RegFractional => "reg_fractional",
            EvaluatorKind::RegNoisy { .. } => "reg_noisy",
            EvaluatorKind::Hlm => "hlm",
        }
    }

    /// Parses `reg_closed`, …, `reg_noisy` (with `n_draws`), `hlm`.
    pub fn parse(name: &str, n_draws: usize) -> Option<Self> {
        Some(match name {
            "reg_closed" => EvaluatorKind::RegClosed,
            "reg_zs" => EvaluatorKind::RegZs,
            "reg_bic" => EvaluatorKind::RegBic,
            "reg_fractional" => EvaluatorKind::RegFractional,
            "reg_noisy" => EvaluatorKind::RegNoisy { n_draws },
            "hlm" => EvaluatorKind::Hlm,
            _ => return None,
        })
    }

    pub fn is_deterministic(&self) -> bool {
        !matches!(self, EvaluatorKind::RegNoisy { .. })
    }

    fn is_regression(&self) -> bool {
        !matches!(self, EvaluatorKind::Hlm)
    }
}

/// Names accepted by every regression evaluator. The hyperparameter-free
/// baselines accept and ignore them, which yields the flat comparison
/// planes drawn over a regression surface.
pub const REGRESSION_HYPERS: [&str; 4] = ["mu", "phi", "a", "b"];

/// Data the evaluator runs against.
#[derive(Debug, Clone)]
pub enum EvalData {
    Regression(Arc<RegressionData>),
    Hlm(Arc<HlmDataset>),
}

/// An evaluator bound to its data, fixed hyperparameters and the mapping
/// from design dimensions to hyperparameter names.
#[derive(Debug, Clone)]
pub struct EvaluatorSpec {
    pub kind: EvaluatorKind,
    pub data: EvalData,
    /// Hyperparameter name per design dimension; `None` uses the design's
    /// dimension names.
    pub mapping: Option<Vec<String>>,
    pub reg_base: RegressionHypers,
    pub hlm_base: Option<HlmHypers>,
    /// Training sample size for the fractional evaluator.
    pub fractional_m: usize,
}

impl EvaluatorSpec {
    pub fn regression(kind: EvaluatorKind, data: RegressionData) -> Result<Self> {
        if !kind.is_regression() {
            return Err(Error::param("evaluator", "hlm evaluator needs grouped data"));
        }
        Ok(Self {
            kind,
            data: EvalData::Regression(Arc::new(data)),
            mapping: None,
            reg_base: RegressionHypers::default(),
            hlm_base: None,
            fractional_m: 3,
        })
    }

    /// HLM evaluator; unmapped hyperparameters sit at `base`, or at the
    /// data-calibrated defaults when `base` is `None`.
    pub fn hlm(data: HlmDataset, base: Option<HlmHypers>) -> Result<Self> {
        let base = match base {
            Some(b) => b,
            None => hlm_bf::default_hlm_hypers(&data)?,
        };
        base.validate()?;
        Ok(Self {
            kind: EvaluatorKind::Hlm,
            data: EvalData::Hlm(Arc::new(data)),
            mapping: None,
            reg_base: RegressionHypers::default(),
            hlm_base: Some(base),
            fractional_m: 3,
        })
    }

    pub fn with_mapping(mut self, mapping: Vec<String>) -> Self {
        self.mapping = Some(mapping);
        self
    }

    pub fn with_base(mut self, base: RegressionHypers) -> Self {
        self.reg_base = base;
        self
    }

    fn targets(&self, bbox: &HyperBox) -> Result<Vec<String>> {
        let names: Vec<String> = match &self.mapping {
            Some(m) => m.clone(),
            None => bbox.names().iter().map(|s| s.to_string()).collect(),
        };
        if names.len() != bbox.d() {
            return Err(Error::DimensionMismatch(format!(
                "mapping has {} entries for a {}-dimensional design",
                names.len(),
                bbox.d()
            )));
        }
        for (i, n) in names.iter().enumerate() {
            let accepted = match self.kind {
                EvaluatorKind::Hlm => HlmParam::parse(n).is_some(),
                EvaluatorKind::RegFractional => REGRESSION_HYPERS.contains(&n.as_str()) || n == "m",
                _ => REGRESSION_HYPERS.contains(&n.as_str()),
            };
            if !accepted {
                return Err(Error::param(
                    n,
                    format!("not a hyperparameter of the {} evaluator", self.kind.name()),
                ));
            }
            if names[..i].contains(n) {
                return Err(Error::param(n, "mapped by more than one design dimension"));
            }
        }
        Ok(names)
    }

    /// Checks that the spec can evaluate `design`.
    pub fn check(&self, design: &Design) -> Result<()> {
        self.targets(&design.bbox)?;
        match (&self.data, self.kind.is_regression()) {
            (EvalData::Regression(_), true) | (EvalData::Hlm(_), false) => Ok(()),
            _ => Err(Error::param("data", "data type does not match the evaluator")),
        }
    }

    /// Evaluates one point given the hyperparameter names from [`Self::targets`].
    fn evaluate(&self, names: &[String], point: &[f64], seed: u64) -> Result<LogBf> {
        match (&self.data, self.kind) {
            (EvalData::Hlm(data), EvaluatorKind::Hlm) => {
                let mut h = self.hlm_base.expect("hlm base set on construction");
                for (n, &v) in names.iter().zip(point) {
                    h = h.with(HlmParam::parse(n).expect("validated name"), v);
                }
                hlm_bf::log_bf_hlm(data, &h)
            }
            (EvalData::Regression(data), kind) => {
                let mut h = self.reg_base;
                let mut m = self.fractional_m;
                for (n, &v) in names.iter().zip(point) {
                    match n.as_str() {
                        "mu" => h.mu = v,
                        "phi" => h.phi = v,
                        "a" => h.a = v,
                        "b" => h.b = v,
                        "m" => m = v.round() as usize,
                        _ => unreachable!("validated name"),
                    }
                }
                h.validate()?;
                match kind {
                    EvaluatorKind::RegClosed => reg_bf::log_bf_12(data, &h),
                    EvaluatorKind::RegZs => reg_bf::log_bf_zellner_siow(data),
                    EvaluatorKind::RegBic => reg_bf::log_bf_bic(data),
                    EvaluatorKind::RegFractional => reg_bf::log_bf_fractional(data, m),
                    EvaluatorKind::RegNoisy { n_draws } => reg_bf::noisy_log_bf(data, &h, n_draws, seed),
                    EvaluatorKind::Hlm => unreachable!(),
                }
            }
            _ => Err(Error::param("data", "data type does not match the evaluator")),
        }
    }

    fn data_summary(&self) -> DataSummary {
        match &self.data {
            EvalData::Regression(d) => DataSummary::Regression { n: d.n() },
            EvalData::Hlm(d) => DataSummary::Hlm {
                groups: d.m(),
                n: d.n_total(),
            },
        }
    }
}

/// One evaluation. Failed points carry `error` and a NaN `log_bf`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceSample {
    pub location: Vec<f64>,
    pub replicate: usize,
    #[serde(with = "nan_as_null")]
    pub log_bf: f64,
    #[serde(with = "nan_as_null")]
    pub std_err: f64,
    #[serde(skip)]
    pub eval_seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl SurfaceSample {
    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }

    pub fn class(&self) -> Option<EvidenceClass> {
        classify(self.log_bf).ok().filter(|_| self.is_ok())
    }
}

mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

/// Sweep controls.
#[derive(Debug, Clone, Copy, Default)]
pub struct SweepOptions<'a> {
    pub serial: bool,
    /// Incremented once per finished evaluation.
    pub progress: Option<&'a AtomicUsize>,
}

/// Evaluates every (location, replicate) of `design` in parallel.
pub fn evaluate_surface(spec: &EvaluatorSpec, design: &Design, seed: u64) -> Result<Vec<SurfaceSample>> {
    evaluate_surface_with(spec, design, seed, SweepOptions::default())
}

pub fn evaluate_surface_with(
    spec: &EvaluatorSpec,
    design: &Design,
    seed: u64,
    opts: SweepOptions<'_>,
) -> Result<Vec<SurfaceSample>> {
    spec.check(design)?;
    if design.is_empty() {
        return Err(Error::Empty("design has no locations".into()));
    }
    let names = spec.targets(&design.bbox)?;
    let reps = design.replicates;
    let run = |idx: usize| -> SurfaceSample {
        let (loc, rep) = (idx / reps, idx % reps);
        let point = &design.points[loc];
        let start = Instant::now();
        let result = spec.evaluate(&names, point, Design::eval_seed(seed, loc, rep));
        let eval_seconds = start.elapsed().as_secs_f64();
        if let Some(p) = opts.progress {
            p.fetch_add(1, Ordering::Relaxed);
        }
        let (log_bf, std_err, error) = match result {
            Ok(bf) if bf.value.is_finite() => (bf.value, bf.std_err, None),
            Ok(bf) => (f64::NAN, f64::NAN, Some(format!("non-finite log Bayes factor {}", bf.value))),
            Err(e) => (f64::NAN, f64::NAN, Some(e.to_string())),
        };
        SurfaceSample {
            location: point.clone(),
            replicate: rep,
            log_bf,
            std_err,
            eval_seconds,
            error,
        }
    };
    let total = design.evaluations();
    let samples: Vec<SurfaceSample> = if opts.serial {
        (0..total).map(run).collect()
    } else {
        (0..total).into_par_iter().map(run).collect()
    };
    if samples.iter().all(|s| !s.is_ok()) {
        return Err(Error::SweepFailed(total));
    }
    Ok(samples)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strength {
    Negligible,
    Positive,
    Strong,
    VeryStrong,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    FavorsM1,
    FavorsM2,
}

/// Evidence category on the natural-log scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EvidenceClass {
    pub strength: Strength,
    pub direction: Direction,
}

impl EvidenceClass {
    /// Rank 0–3 by strength.
    pub fn rank(&self) -> u8 {
        self.strength as u8
    }

    /// `strength:direction`, e.g. `strong:favors_m1`.
    pub fn label(&self) -> String {
        let s = match self.strength {
            Strength::Negligible => "negligible",
            Strength::Positive => "positive",
            Strength::Strong => "strong",
            Strength::VeryStrong => "very_strong",
        };
        let d = match self.direction {
            Direction::FavorsM1 => "favors_m1",
            Direction::FavorsM2 => "favors_m2",
        };
        format!("{s}:{d}")
    }
}

/// Natural-log thresholds between the evidence classes.
pub const CLASS_THRESHOLDS: [f64; 3] = [1.0, 3.0, 5.0];

/// Classifies a log Bayes factor; thresholds belong to the lower class and
/// zero counts as favoring `M1`.
pub fn classify(log_bf: f64) -> Result<EvidenceClass> {
    if !log_bf.is_finite() {
        return Err(Error::param("log_bf", format!("cannot classify {log_bf}")));
    }
    let m = log_bf.abs();
    let strength = if m <= CLASS_THRESHOLDS[0] {
        Strength::Negligible
    } else if m <= CLASS_THRESHOLDS[1] {
        Strength::Positive
    } else if m <= CLASS_THRESHOLDS[2] {
        Strength::Strong
    } else {
        Strength::VeryStrong
    };
    let direction = if log_bf >= 0.0 {
        Direction::FavorsM1
    } else {
        Direction::FavorsM2
    };
    Ok(EvidenceClass { strength, direction })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ExportRow {
    location: Vec<f64>,
    replicate: usize,
    #[serde(with = "nan_as_null")]
    log_bf: f64,
    #[serde(with = "nan_as_null")]
    std_err: f64,
    class: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ExportDoc {
    dims: Vec<String>,
    samples: Vec<ExportRow>,
}

fn class_label(s: &SurfaceSample) -> String {
    s.class().map(|c| c.label()).unwrap_or_else(|| "error".into())
}

/// Serializes samples. CSV columns are `dims…,replicate,log_bf,std_err,class`
/// with 17 significant digits; failed points leave the numeric cells empty
/// and have class `error`. Wall times are not exported.
pub fn export_surface(dims: &[String], samples: &[SurfaceSample], format: ExportFormat) -> Result<Vec<u8>> {
    if samples.is_empty() {
        return Err(Error::Empty("no surface samples to export".into()));
    }
    if let Some(s) = samples.iter().find(|s| s.location.len() != dims.len()) {
        return Err(Error::DimensionMismatch(format!(
            "sample location has {} coordinates for {} dims",
            s.location.len(),
            dims.len()
        )));
    }
    match format {
        ExportFormat::Csv => {
            let mut buf = Vec::new();
            {
                let mut wtr = csv::Writer::from_writer(&mut buf);
                let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
                let mut header = dims.to_vec();
                header.extend(["replicate", "log_bf", "std_err", "class"].map(String::from));
                wtr.write_record(&header).map_err(io)?;
                for s in samples {
                    let mut row: Vec<String> = s.location.iter().map(|v| format!("{v:.16e}")).collect();
                    row.push(s.replicate.to_string());
                    if s.is_ok() {
                        row.push(format!("{:.16e}", s.log_bf));
                        row.push(format!("{:.16e}", s.std_err));
                    } else {
                        row.extend([String::new(), String::new()]);
                    }
                    row.push(class_label(s));
                    wtr.write_record(&row).map_err(io)?;
                }
                wtr.flush()?;
            }
            Ok(buf)
        }
        ExportFormat::Json => {
            let doc = ExportDoc {
                dims: dims.to_vec(),
                samples: samples
                    .iter()
                    .map(|s| ExportRow {
                        location: s.location.clone(),
                        replicate: s.replicate,
                        log_bf: s.log_bf,
                        std_err: s.std_err,
                        class: class_label(s),
                        error: s.error.clone(),
                    })
                    .collect(),
            };
            Ok(serde_json::to_vec_pretty(&doc)?)
        }
    }
}

/// Reads an export back. Returns the dimension names and the samples
/// (wall times are zero).
pub fn import_surface<R: Read>(reader: R, format: ExportFormat) -> Result<(Vec<String>, Vec<SurfaceSample>)> {
    match format {
        ExportFormat::Json => {
            let doc: ExportDoc = serde_json::from_reader(reader)?;
            let samples = doc
                .samples
                .into_iter()
                .map(|r| SurfaceSample {
                    location: r.location,
                    replicate: r.replicate,
                    log_bf: r.log_bf,
                    std_err: r.std_err,
                    eval_seconds: 0.0,
                    error: r.error.or_else(|| (r.class == "error").then(|| "failed".to_string())),
                })
                .collect();
            Ok((doc.dims, samples))
        }
        ExportFormat::Csv => {
            let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
            let headers = rdr.headers().map_err(|e| csv_err(&e, 1))?.clone();
            let cols: Vec<&str> = headers.iter().collect();
            let tail = ["replicate", "log_bf", "std_err", "class"];
            if cols.len() < tail.len() + 1 || cols[cols.len() - 4..] != tail {
                return Err(Error::Parse {
                    line: 1,
                    message: "expected header `dims…,replicate,log_bf,std_err,class`".into(),
                });
            }
            let d = cols.len() - 4;
            let dims: Vec<String> = cols[..d].iter().map(|s| s.to_string()).collect();
            let mut samples = Vec::new();
            for (row, rec) in rdr.records().enumerate() {
                let line = row + 2;
                let rec = rec.map_err(|e| csv_err(&e, line))?;
                let num = |i: usize| -> Result<f64> {
                    let cell = rec.get(i).unwrap_or("");
                    cell.parse::<f64>().map_err(|_| Error::Parse {
                        line,
                        message: format!("column `{}`: cannot parse `{cell}`", cols[i]),
                    })
                };
                let location = (0..d).map(num).collect::<Result<Vec<_>>>()?;
                let replicate = rec.get(d).unwrap_or("").parse::<usize>().map_err(|_| Error::Parse {
                    line,
                    message: "column `replicate`: expected a non-negative integer".into(),
                })?;
                let failed = rec.get(d + 3) == Some("error");
                let (log_bf, std_err) = if failed {
                    (f64::NAN, f64::NAN)
                } else {
                    (num(d + 1)?, num(d + 2)?)
                };
                samples.push(SurfaceSample {
                    location,
                    replicate,
                    log_bf,
                    std_err,
                    eval_seconds: 0.0,
                    error: failed.then(|| "failed".to_string()),
                });
            }
            if samples.is_empty() {
                return Err(Error::Empty("surface file has no rows".into()));
            }
            Ok((dims, samples))
        }
    }
}

/// Surrogate training data from successful samples.
pub fn training_set(bbox: &HyperBox, samples: &[SurfaceSample]) -> Result<TrainingSet> {
    let ok: Vec<&SurfaceSample> = samples.iter().filter(|s| s.is_ok()).collect();
    let points: Vec<Vec<f64>> = ok.iter().map(|s| s.location.clone()).collect();
    TrainingSet::from_native(bbox, &points, ok.iter().map(|s| s.log_bf).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DataSummary {
    Regression { n: usize },
    Hlm { groups: usize, n: usize },
}

/// Provenance of one sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepManifest {
    pub software: String,
    pub evaluator: EvaluatorKind,
    pub mapping: Vec<String>,
    pub regression_base: RegressionHypers,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hlm_base: Option<HlmHypers>,
    pub fractional_m: usize,
    pub data: DataSummary,
    pub design: Design,
    pub seed: u64,
    pub samples: usize,
    pub failed: usize,
    pub eval_seconds_total: f64,
}

pub fn manifest(spec: &EvaluatorSpec, design: &Design, seed: u64, samples: &[SurfaceSample]) -> Result<SweepManifest> {
    Ok(SweepManifest {
        software: format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION")),
        evaluator: spec.kind,
        mapping: spec.targets(&design.bbox)?,
        regression_base: spec.reg_base,
        hlm_base: spec.hlm_base,
        fractional_m: spec.fractional_m,
        data: spec.data_summary(),
        design: design.clone(),
        seed,
        samples: samples.len(),
        failed: samples.iter().filter(|s| !s.is_ok()).count(),
        eval_seconds_total: samples.iter().map(|s| s.eval_seconds).sum(),
    })
}
