//! `bfsurf` subcommands. Each one fills a request struct from its flags and
//! hands it to the same artifact function the HTTP API uses.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use bfsurf::design::HyperBox;
use bfsurf::hlm_bf::{self, HlmHypers};
use bfsurf::reg_bf::RegressionHypers;
use bfsurf::surface::{ExportFormat, SweepManifest};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::artifacts::{self, format_for_path, json_bytes};
use crate::error::{AppError, Result};
use crate::http::{self, ServeConfig};
use crate::schema::{BfRequest, DataInput, DesignRequest, SimulateRequest, SlicesRequest, SurfaceRequest};

#[derive(Debug, Parser)]
#[command(name = "bfsurf", version, about = "Bayes factor surfaces over prior hyperparameters")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
#[allow(clippy::large_enum_variant)]
pub enum Command {
    /// Simulate regression data (or write a synthetic grouped data set).
    Simulate(SimulateArgs),
    /// Print the four regression log Bayes factors side by side.
    Bf(BfArgs),
    /// Evaluate a log Bayes factor surface over a design.
    Surface(SurfaceArgs),
    /// One-at-a-time HLM hyperparameter slices.
    Slices(SlicesArgs),
    /// Write a grid or maximin LHS design.
    Design(DesignArgs),
    /// Fit a GP surrogate to a surface export.
    Fit(FitArgs),
    /// Predict from a fitted surrogate.
    Predict(PredictArgs),
    /// Holdout coverage of a surrogate fitted to part of a surface.
    Coverage(CoverageArgs),
    /// Start the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

impl From<Format> for ExportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => ExportFormat::Csv,
            Format::Json => ExportFormat::Json,
        }
    }
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct SimulateArgs {
    #[arg(long, required_unless_present = "hlm")]
    pub n: Option<usize>,
    #[arg(long, default_value_t = 0.0)]
    pub alpha: f64,
    #[arg(long, required_unless_present = "hlm")]
    pub beta: Option<f64>,
    #[arg(long, required_unless_present = "hlm")]
    pub sigma2: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the synthetic grouped data set for `--seed` instead.
    #[arg(long, conflicts_with_all = ["n", "beta", "sigma2"])]
    pub hlm: bool,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct BfArgs {
    /// `x,y` CSV; defaults to the demo data.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    pub mu: f64,
    #[arg(long, default_value_t = 1.0)]
    pub phi: f64,
    #[arg(long, default_value_t = 1.0)]
    pub a: f64,
    #[arg(long, default_value_t = 1.0)]
    pub b: f64,
    #[arg(long, default_value_t = 3)]
    pub fractional_m: usize,
    /// Print the API's JSON document instead of text lines.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct DesignFlags {
    /// `name:scale:lower:upper:count,…`
    #[arg(long, conflicts_with = "box_spec")]
    pub grid: Option<String>,
    /// `name:scale:lower:upper,…` for `--lhs` or `--design`.
    #[arg(long = "box")]
    pub box_spec: Option<String>,
    #[arg(long, requires = "box_spec")]
    pub lhs: Option<usize>,
    /// Plain rather than maximin LHS.
    #[arg(long, requires = "lhs")]
    pub plain_lhs: bool,
    #[arg(long, default_value_t = 0)]
    pub design_seed: u64,
    #[arg(long, default_value_t = 1)]
    pub replicates: usize,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct SurfaceArgs {
    #[arg(long)]
    pub evaluator: String,
    /// `x,y` CSV for regression evaluators or `school,ses,mathscore` CSV
    /// for `hlm`; defaults to the bundled data.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Synthetic grouped data from this seed (hlm only).
    #[arg(long, conflicts_with = "data")]
    pub synthetic_seed: Option<u64>,
    #[command(flatten)]
    pub design: DesignFlags,
    /// Design CSV written by `design`, over `--box`.
    #[arg(long = "design", requires = "box_spec", conflicts_with = "lhs")]
    pub design_file: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub n_draws: Option<usize>,
    /// Comma-separated hyperparameter per design dimension.
    #[arg(long, value_delimiter = ',')]
    pub mapping: Option<Vec<String>>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub phi: Option<f64>,
    #[arg(long)]
    pub a: Option<f64>,
    #[arg(long)]
    pub b: Option<f64>,
    /// `published` or a JSON file of HLM hyperparameters; defaults to the
    /// data-calibrated point.
    #[arg(long)]
    pub hlm_center: Option<String>,
    #[arg(long, default_value_t = 3)]
    pub fractional_m: usize,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Also writes `<out>.manifest.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SlicesArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, conflicts_with = "data")]
    pub synthetic_seed: Option<u64>,
    #[arg(long, default_value_t = 15)]
    pub points: usize,
    #[arg(long)]
    pub hlm_center: Option<String>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DesignArgs {
    #[command(flatten)]
    pub design: DesignFlags,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Surface export (CSV or JSON).
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Design box; defaults to the one in `<in>.manifest.json`.
    #[arg(long = "box")]
    pub box_spec: Option<String>,
    /// Heteroskedastic fit (falls back to a nugget GP without replicates).
    #[arg(long)]
    pub het: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub fit: PathBuf,
    /// `name:scale:lower:upper:count,…` over the fit's dimensions.
    #[arg(long, conflicts_with = "points")]
    pub grid: Option<String>,
    /// CSV of query points with one column per dimension.
    #[arg(long)]
    pub points: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CoverageArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long = "box")]
    pub box_spec: Option<String>,
    #[arg(long)]
    pub het: bool,
    #[arg(long, default_value_t = 0.2)]
    pub holdout_fraction: f64,
    #[arg(long, default_value_t = 1)]
    pub split_seed: u64,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "BFSURF_HOST", default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, env = "BFSURF_PORT", default_value_t = 8080)]
    pub port: u16,
    #[arg(long, env = "BFSURF_DATA_DIR", default_value = "bfsurf-data")]
    pub data_dir: PathBuf,
    /// Worker threads; 0 uses every core.
    #[arg(long, env = "BFSURF_WORKERS", default_value_t = 0)]
    pub workers: usize,
    /// Built UI bundle served under `/`.
    #[arg(long, env = "BFSURF_STATIC_DIR")]
    pub static_dir: Option<PathBuf>,
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code: 0 on success, 2 on usage errors, 1 on computation errors.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| AppError::io(format!("reading {}", path.display()), e))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| AppError::io(format!("reading {}", path.display()), e))
}

/// Writes to `out`, or stdout when absent.
fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, bytes).map_err(|e| AppError::io(format!("writing {}", p.display()), e)),
        None => std::io::stdout()
            .write_all(bytes)
            .map_err(|e| AppError::io("writing stdout", e)),
    }
}

/// Explicit flag, else the output extension, else `fallback`.
fn pick_format(flag: Option<Format>, out: Option<&Path>, fallback: ExportFormat) -> ExportFormat {
    match (flag, out) {
        (Some(f), _) => f.into(),
        (None, Some(p)) => format_for_path(p),
        (None, None) => fallback,
    }
}

/// Path of the sweep manifest written next to a surface export.
pub fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn hlm_input(data: Option<&Path>, seed: Option<u64>) -> Result<Option<DataInput>> {
    Ok(match (data, seed) {
        (Some(p), _) => Some(DataInput::HlmCsv { hlm_csv: read_text(p)? }),
        (None, Some(s)) => Some(DataInput::HlmSynthetic { hlm_synthetic: s }),
        (None, None) => None,
    })
}

fn hlm_center(spec: Option<&str>) -> Result<Option<HlmHypers>> {
    match spec {
        None => Ok(None),
        Some("published") => Ok(Some(HlmHypers::published_defaults())),
        Some(path) => {
            let text = read_text(Path::new(path))?;
            let h: HlmHypers =
                serde_json::from_str(&text).map_err(|e| AppError::invalid("hlm-center", e.to_string()))?;
            Ok(Some(h))
        }
    }
}

fn design_request(flags: &DesignFlags, design_csv: Option<String>) -> DesignRequest {
    DesignRequest {
        grid: flags.grid.clone(),
        box_spec: flags.box_spec.clone(),
        lhs: flags.lhs,
        plain_lhs: flags.plain_lhs,
        design_seed: flags.design_seed,
        design_csv,
        replicates: flags.replicates,
    }
}

/// Builds the request `surface` sends; exposed for parity tests.
pub fn surface_request(a: &SurfaceArgs) -> Result<SurfaceRequest> {
    let data = if a.evaluator == "hlm" {
        hlm_input(a.data.as_deref(), a.synthetic_seed)?
    } else {
        if a.synthetic_seed.is_some() {
            return Err(AppError::invalid("synthetic-seed", "only the hlm evaluator uses grouped data"));
        }
        match &a.data {
            Some(p) => Some(DataInput::Csv { csv: read_text(p)? }),
            None => None,
        }
    };
    let base = if [a.mu, a.phi, a.a, a.b].iter().any(Option::is_some) {
        let d = RegressionHypers::default();
        Some(RegressionHypers {
            mu: a.mu.unwrap_or(d.mu),
            phi: a.phi.unwrap_or(d.phi),
            a: a.a.unwrap_or(d.a),
            b: a.b.unwrap_or(d.b),
        })
    } else {
        None
    };
    let design_csv = match &a.design_file {
        Some(p) => Some(read_text(p)?),
        None => None,
    };
    Ok(SurfaceRequest {
        evaluator: a.evaluator.clone(),
        n_draws: a.n_draws,
        data,
        design: design_request(&a.design, design_csv),
        seed: a.seed,
        mapping: a.mapping.clone(),
        base,
        hlm_base: hlm_center(a.hlm_center.as_deref())?,
        fractional_m: a.fractional_m,
        format: pick_format(a.format, a.out.as_deref(), ExportFormat::Csv),
    })
}

/// Surface samples and the box they were drawn over.
fn load_surface_file(input: &Path, box_spec: Option<&str>) -> Result<(HyperBox, Vec<String>, Vec<bfsurf::surface::SurfaceSample>)> {
    let bbox = match box_spec {
        Some(spec) => HyperBox::parse(spec)?.0,
        None => {
            let mp = manifest_path(input);
            let text = read_text(&mp).map_err(|_| {
                AppError::invalid("box", format!("no --box given and no manifest at {}", mp.display()))
            })?;
            let m: SweepManifest = serde_json::from_str(&text).map_err(bfsurf::Error::from)?;
            m.design.bbox
        }
    };
    let (dims, samples) = artifacts::load_surface(&read_bytes(input)?, format_for_path(input))?;
    Ok((bbox, dims, samples))
}

fn read_points(path: &Path, dims: &[&str]) -> Result<Vec<Vec<f64>>> {
    let text = read_text(path)?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let bad = |line: usize, m: String| AppError::Compute(bfsurf::Error::Parse { line, message: m });
    let headers = rdr.headers().map_err(|e| bad(1, e.to_string()))?.clone();
    let cols = dims
        .iter()
        .map(|d| {
            headers
                .iter()
                .position(|h| h == *d)
                .ok_or_else(|| bad(1, format!("missing column `{d}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut points = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| bad(i + 2, e.to_string()))?;
        let p = cols
            .iter()
            .map(|&c| {
                rec.get(c)
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(|| bad(i + 2, format!("bad number in column {c}")))
            })
            .collect::<Result<Vec<_>>>()?;
        points.push(p);
    }
    Ok(points)
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Simulate(a) => {
            if a.hlm {
                let data = hlm_bf::synthetic_hlm(a.seed);
                let mut out = Vec::new();
                data.write_csv(&mut out)?;
                return emit(a.out.as_deref(), &out);
            }
            let req = SimulateRequest {
                n: a.n.expect("required by clap"),
                alpha: a.alpha,
                beta: a.beta.expect("required by clap"),
                sigma2: a.sigma2.expect("required by clap"),
                seed: a.seed,
                format: pick_format(a.format, a.out.as_deref(), ExportFormat::Csv),
            };
            emit(a.out.as_deref(), &artifacts::simulate(&req)?)
        }
        Command::Bf(a) => {
            let data = match &a.data {
                Some(p) => Some(DataInput::Csv { csv: read_text(p)? }),
                None => None,
            };
            let req = BfRequest {
                data,
                mu: a.mu,
                phi: a.phi,
                a: a.a,
                b: a.b,
                fractional_m: a.fractional_m,
            };
            let resp = artifacts::bf(&req)?;
            if a.json {
                emit(None, &json_bytes(&resp)?)
            } else {
                emit(None, artifacts::bf_text(&resp).as_bytes())
            }
        }
        Command::Surface(a) => {
            let req = surface_request(&a)?;
            let prepared = artifacts::prepare_surface(&req)?;
            let out = prepared.run(None)?;
            if let Some(p) = &a.out {
                emit(Some(&manifest_path(p)), &json_bytes(&out.manifest)?)?;
            }
            emit(a.out.as_deref(), &out.bytes)
        }
        Command::Slices(a) => {
            let req = SlicesRequest {
                data: hlm_input(a.data.as_deref(), a.synthetic_seed)?,
                center: hlm_center(a.hlm_center.as_deref())?,
                points: a.points,
                ranges: None,
                format: pick_format(a.format, a.out.as_deref(), ExportFormat::Csv),
            };
            emit(a.out.as_deref(), &artifacts::slices(&req)?)
        }
        Command::Design(a) => emit(a.out.as_deref(), &artifacts::design_csv(&design_request(&a.design, None))?),
        Command::Fit(a) => {
            let (bbox, dims, samples) = load_surface_file(&a.input, a.box_spec.as_deref())?;
            emit(a.out.as_deref(), &artifacts::fit(&bbox, &dims, &samples, a.het)?)
        }
        Command::Predict(a) => {
            let fit = artifacts::parse_fit(&read_text(&a.fit)?)?;
            let points = match &a.points {
                Some(p) => {
                    let names = fit.bbox().expect("checked by parse_fit").names();
                    Some(read_points(p, &names)?)
                }
                None => None,
            };
            let points = artifacts::query_points(&fit, a.grid.as_deref(), points.as_deref())?;
            let format = pick_format(a.format, a.out.as_deref(), ExportFormat::Csv);
            emit(a.out.as_deref(), &artifacts::predict(&fit, &points, format)?)
        }
        Command::Coverage(a) => {
            let (bbox, dims, samples) = load_surface_file(&a.input, a.box_spec.as_deref())?;
            let report = artifacts::coverage(&bbox, &dims, &samples, a.het, a.holdout_fraction, a.split_seed, a.level)?;
            emit(a.out.as_deref(), &json_bytes(&report)?)
        }
        Command::Serve(a) => {
            let workers = if a.workers == 0 {
                std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
            } else {
                a.workers
            };
            let config = ServeConfig {
                host: a.host,
                port: a.port,
                data_dir: a.data_dir,
                workers,
                static_dir: a.static_dir,
            };
            let rt = tokio::runtime::Runtime::new().map_err(|e| AppError::io("starting runtime", e))?;
            rt.block_on(http::serve(config))
        }
    }
}
