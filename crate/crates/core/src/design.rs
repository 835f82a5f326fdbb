//! Evaluation designs over hyperparameter boxes.
//!
//! Every design lives in two coordinate systems: native units (what the
//! evaluators consume) and the scaled unit cube `[0, 1]^d` (where spacing,
//! Latin hypercube strata and surrogate inputs are defined). `log10`
//! dimensions are linear in the exponent.

use std::io::Read;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reg_bf::{csv_err, parse_cell};
use crate::rng;

/// Default upper bound on the number of grid locations.
pub const GRID_CAP: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Linear,
    Log10,
}

impl Scale {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scale::Linear => "linear",
            Scale::Log10 => "log10",
        }
    }
}

/// One axis of a [`HyperBox`], bounds in native units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dim {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub scale: Scale,
}

impl Dim {
    pub fn linear(name: impl Into<String>, lower: f64, upper: f64) -> Self {
        Self {
            name: name.into(),
            lower,
            upper,
            scale: Scale::Linear,
        }
    }

    /// A log10 axis given by its exponent range, e.g. `(-3, 1)` for
    /// `[10^-3, 10]`.
    pub fn log10(name: impl Into<String>, lower_exp: f64, upper_exp: f64) -> Self {
        Self {
            name: name.into(),
            lower: 10f64.powf(lower_exp),
            upper: 10f64.powf(upper_exp),
            scale: Scale::Log10,
        }
    }

    fn scaled_bounds(&self) -> (f64, f64) {
        match self.scale {
            Scale::Linear => (self.lower, self.upper),
            Scale::Log10 => (self.lower.log10(), self.upper.log10()),
        }
    }

    /// Native value to `[0, 1]`.
    pub fn to_unit(&self, v: f64) -> f64 {
        let (lo, hi) = self.scaled_bounds();
        let s = match self.scale {
            Scale::Linear => v,
            Scale::Log10 => v.log10(),
        };
        (s - lo) / (hi - lo)
    }

    /// `[0, 1]` to native value. The endpoints map to the stored bounds
    /// exactly.
    pub fn from_unit(&self, u: f64) -> f64 {
        if u == 0.0 {
            return self.lower;
        }
        if u == 1.0 {
            return self.upper;
        }
        let (lo, hi) = self.scaled_bounds();
        let s = lo + u * (hi - lo);
        match self.scale {
            Scale::Linear => s,
            Scale::Log10 => 10f64.powf(s),
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        let tol = 1e-12 * (self.upper - self.lower).abs().max(self.upper.abs());
        v >= self.lower - tol && v <= self.upper + tol
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperBox {
    pub dims: Vec<Dim>,
}

impl HyperBox {
    pub fn new(dims: Vec<Dim>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::Empty("hyperbox has no dimensions".into()));
        }
        for d in &dims {
            if !(d.lower.is_finite() && d.upper.is_finite() && d.upper > d.lower) {
                return Err(Error::param(
                    &d.name,
                    format!("need finite lower < upper, got [{}, {}]", d.lower, d.upper),
                ));
            }
            if d.scale == Scale::Log10 && d.lower <= 0.0 {
                return Err(Error::param(&d.name, "log10 dimension needs lower > 0"));
            }
        }
        for (i, d) in dims.iter().enumerate() {
            if dims[..i].iter().any(|o| o.name == d.name) {
                return Err(Error::param(&d.name, "duplicate dimension name"));
            }
        }
        Ok(Self { dims })
    }

    pub fn d(&self) -> usize {
        self.dims.len()
    }

    pub fn names(&self) -> Vec<&str> {
        self.dims.iter().map(|d| d.name.as_str()).collect()
    }

    pub fn to_unit(&self, point: &[f64]) -> Vec<f64> {
        self.dims.iter().zip(point).map(|(d, &v)| d.to_unit(v)).collect()
    }

    pub fn from_unit(&self, unit: &[f64]) -> Vec<f64> {
        self.dims.iter().zip(unit).map(|(d, &u)| d.from_unit(u)).collect()
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        point.len() == self.d() && self.dims.iter().zip(point).all(|(d, &v)| d.contains(v))
    }

    /// Parses `name:scale:lower:upper[:count],…`. For `log10` dimensions the
    /// bounds are exponents. Returns the box and the per-dimension counts
    /// (`None` where omitted).
    pub fn parse(spec: &str) -> Result<(Self, Vec<Option<usize>>)> {
        let mut dims = Vec::new();
        let mut counts = Vec::new();
        for part in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let fields: Vec<&str> = part.split(':').map(str::trim).collect();
            if !(4..=5).contains(&fields.len()) {
                return Err(Error::param(
                    "grid",
                    format!("`{part}`: expected name:scale:lower:upper[:count]"),
                ));
            }
            let num = |s: &str, what: &str| -> Result<f64> {
                s.parse::<f64>()
                    .map_err(|_| Error::param(fields[0], format!("bad {what} `{s}`")))
            };
            let (lo, hi) = (num(fields[2], "lower bound")?, num(fields[3], "upper bound")?);
            let dim = match fields[1] {
                "linear" | "lin" => Dim::linear(fields[0], lo, hi),
                "log10" | "log" => Dim::log10(fields[0], lo, hi),
                other => {
                    return Err(Error::param(
                        fields[0],
                        format!("unknown scale `{other}` (expected linear or log10)"),
                    ))
                }
            };
            dims.push(dim);
            counts.push(match fields.get(4) {
                Some(c) => Some(
                    c.parse::<usize>()
                        .map_err(|_| Error::param(fields[0], format!("bad count `{c}`")))?,
                ),
                None => None,
            });
        }
        Ok((Self::new(dims)?, counts))
    }
}

/// Locations (native units, one row per location) and a replicate count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Design {
    #[serde(rename = "box")]
    pub bbox: HyperBox,
    pub points: Vec<Vec<f64>>,
    pub replicates: usize,
}

impl Design {
    pub fn new(bbox: HyperBox, points: Vec<Vec<f64>>, replicates: usize) -> Result<Self> {
        if replicates == 0 {
            return Err(Error::param("replicates", "must be at least 1"));
        }
        for (i, p) in points.iter().enumerate() {
            if !bbox.contains(p) {
                return Err(Error::param(
                    "points",
                    format!("row {i} {p:?} lies outside the box"),
                ));
            }
        }
        Ok(Self {
            bbox,
            points,
            replicates,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Number of pending evaluations, locations × replicates.
    pub fn evaluations(&self) -> usize {
        self.points.len() * self.replicates
    }

    pub fn unit_points(&self) -> Vec<Vec<f64>> {
        self.points.iter().map(|p| self.bbox.to_unit(p)).collect()
    }

    /// Seed for the evaluation at `(location, replicate)`.
    pub fn eval_seed(seed: u64, location: usize, replicate: usize) -> u64 {
        rng::derive_seed(seed, &[location as u64, replicate as u64])
    }

    /// Writes one row per (location, replicate) with header
    /// `dim1,…,dimk,replicate`.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        let mut header: Vec<String> = self.bbox.names().iter().map(|s| s.to_string()).collect();
        header.push("replicate".into());
        wtr.write_record(&header).map_err(io)?;
        for p in &self.points {
            for r in 0..self.replicates {
                let mut row: Vec<String> = p.iter().map(|v| format!("{v:.16e}")).collect();
                row.push(r.to_string());
                wtr.write_record(&row).map_err(io)?;
            }
        }
        wtr.flush()?;
        Ok(())
    }

    /// Reads a CSV written by [`Design::write_csv`] against a known box.
    /// Rows with replicate 0 define the locations.
    pub fn read_csv<R: Read>(bbox: HyperBox, reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers().map_err(|e| csv_err(&e, 1))?.clone();
        let cols = bbox
            .names()
            .iter()
            .map(|n| {
                headers.iter().position(|h| h == *n).ok_or_else(|| Error::Parse {
                    line: 1,
                    message: format!("missing column `{n}`"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let rep_col = headers.iter().position(|h| h == "replicate");
        let mut points = Vec::new();
        let mut max_rep = 0usize;
        for (row, rec) in rdr.records().enumerate() {
            let line = row + 2;
            let rec = rec.map_err(|e| csv_err(&e, line))?;
            let rep = match rep_col {
                Some(c) => parse_cell(rec.get(c), line, "replicate")? as usize,
                None => 0,
            };
            max_rep = max_rep.max(rep);
            if rep == 0 {
                let p = cols
                    .iter()
                    .zip(bbox.names())
                    .map(|(&c, n)| parse_cell(rec.get(c), line, n))
                    .collect::<Result<Vec<_>>>()?;
                points.push(p);
            }
        }
        Self::new(bbox, points, max_rep + 1)
    }
}

/// Full factorial grid, equispaced per dimension in scaled space. A count of
/// 1 places the single level at the midpoint.
pub fn grid_design(bbox: &HyperBox, counts: &[usize]) -> Result<Design> {
    grid_design_capped(bbox, counts, GRID_CAP)
}

pub fn grid_design_capped(bbox: &HyperBox, counts: &[usize], cap: usize) -> Result<Design> {
    if counts.len() != bbox.d() {
        return Err(Error::DimensionMismatch(format!(
            "{} counts for a {}-dimensional box",
            counts.len(),
            bbox.d()
        )));
    }
    if let Some(i) = counts.iter().position(|&c| c == 0) {
        return Err(Error::param(&bbox.dims[i].name, "grid count must be at least 1"));
    }
    let size = counts
        .iter()
        .try_fold(1usize, |acc, &c| acc.checked_mul(c))
        .unwrap_or(usize::MAX);
    if size > cap {
        return Err(Error::GridTooLarge { size, cap });
    }
    let levels: Vec<Vec<f64>> = bbox
        .dims
        .iter()
        .zip(counts)
        .map(|(dim, &c)| {
            if c == 1 {
                vec![dim.from_unit(0.5)]
            } else {
                (0..c)
                    .map(|k| dim.from_unit(k as f64 / (c - 1) as f64))
                    .collect()
            }
        })
        .collect();
    // Last dimension varies fastest.
    let mut points = Vec::with_capacity(size);
    let mut idx = vec![0usize; counts.len()];
    for _ in 0..size {
        points.push(idx.iter().enumerate().map(|(k, &i)| levels[k][i]).collect());
        for k in (0..counts.len()).rev() {
            idx[k] += 1;
            if idx[k] < counts[k] {
                break;
            }
            idx[k] = 0;
        }
    }
    Design::new(bbox.clone(), points, 1)
}

/// Tuning of [`lhs_maximin_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LhsOptions {
    pub restarts: usize,
    pub sweeps: usize,
}

impl Default for LhsOptions {
    fn default() -> Self {
        Self {
            restarts: 20,
            sweeps: 50,
        }
    }
}

/// Maximin Latin hypercube sample with default tuning.
pub fn lhs_maximin(bbox: &HyperBox, n: usize, seed: u64) -> Result<Design> {
    lhs_maximin_with(bbox, n, seed, LhsOptions::default())
}

pub fn lhs_maximin_with(bbox: &HyperBox, n: usize, seed: u64, opts: LhsOptions) -> Result<Design> {
    if n < 2 {
        return Err(Error::InsufficientSample { needed: 2, got: n });
    }
    let restarts = opts.restarts.max(1);
    let d = bbox.d();
    let best = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng::stream(seed, r as u64);
            let mut state = Maximin::new(jittered_lhs(n, d, &mut rng));
            state.optimize(opts.sweeps, &mut rng);
            (state.min_dist2(), r, state.pts)
        })
        // Ties go to the lowest restart index.
        .reduce_with(|a, b| if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a })
        .expect("at least one restart");
    let points = best.2.iter().map(|u| bbox.from_unit(u)).collect();
    Design::new(bbox.clone(), points, 1)
}

/// Plain (unoptimized) jittered LHS; identical to the starting point of the
/// first maximin restart for the same seed.
pub fn plain_lhs(bbox: &HyperBox, n: usize, seed: u64) -> Result<Design> {
    if n < 2 {
        return Err(Error::InsufficientSample { needed: 2, got: n });
    }
    let mut rng = rng::stream(seed, 0);
    let pts = jittered_lhs(n, bbox.d(), &mut rng);
    Design::new(bbox.clone(), pts.iter().map(|u| bbox.from_unit(u)).collect(), 1)
}

/// Returns the design with the replicate count replaced.
pub fn with_replicates(design: &Design, r: usize) -> Result<Design> {
    Design::new(design.bbox.clone(), design.points.clone(), r)
}

fn jittered_lhs(n: usize, d: usize, rng: &mut rng::Rng) -> Vec<Vec<f64>> {
    let mut pts = vec![vec![0.0; d]; n];
    let mut perm: Vec<usize> = (0..n).collect();
    for k in 0..d {
        perm.shuffle(rng);
        for (i, &bin) in perm.iter().enumerate() {
            let u = (bin as f64 + rng.random::<f64>()) / n as f64;
            // Keep the point strictly inside its bin.
            pts[i][k] = u.min((bin as f64 + 1.0) / n as f64 - f64::EPSILON);
        }
    }
    pts
}

/// Smallest pairwise Euclidean distance.
pub fn min_distance(points: &[Vec<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..points.len() {
        for j in 0..i {
            best = best.min(dist2(&points[i], &points[j]));
        }
    }
    best.sqrt()
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Swap-based maximin state tracking each row's nearest neighbour.
struct Maximin {
    pts: Vec<Vec<f64>>,
    nn_d2: Vec<f64>,
    nn_idx: Vec<usize>,
}

impl Maximin {
    fn new(pts: Vec<Vec<f64>>) -> Self {
        let n = pts.len();
        let mut s = Self {
            pts,
            nn_d2: vec![f64::INFINITY; n],
            nn_idx: vec![0; n],
        };
        for r in 0..n {
            s.refresh(r);
        }
        s
    }

    fn refresh(&mut self, r: usize) {
        let (mut best, mut arg) = (f64::INFINITY, r);
        for s in 0..self.pts.len() {
            if s != r {
                let d = dist2(&self.pts[r], &self.pts[s]);
                if d < best {
                    best = d;
                    arg = s;
                }
            }
        }
        self.nn_d2[r] = best;
        self.nn_idx[r] = arg;
    }

    fn min_dist2(&self) -> f64 {
        self.nn_d2.iter().copied().fold(f64::INFINITY, f64::min)
    }

    fn critical_row(&self) -> usize {
        let mut arg = 0;
        for r in 1..self.nn_d2.len() {
            if self.nn_d2[r] < self.nn_d2[arg] {
                arg = r;
            }
        }
        arg
    }

    /// Swaps column `k` between rows `i` and `j` and updates the
    /// nearest-neighbour bookkeeping.
    fn swap(&mut self, i: usize, j: usize, k: usize) {
        let tmp = self.pts[i][k];
        self.pts[i][k] = self.pts[j][k];
        self.pts[j][k] = tmp;
        for r in 0..self.pts.len() {
            if r == i || r == j {
                continue;
            }
            if self.nn_idx[r] == i || self.nn_idx[r] == j {
                self.refresh(r);
            } else {
                for s in [i, j] {
                    let d = dist2(&self.pts[r], &self.pts[s]);
                    if d < self.nn_d2[r] {
                        self.nn_d2[r] = d;
                        self.nn_idx[r] = s;
                    }
                }
            }
        }
        self.refresh(i);
        self.refresh(j);
    }

    fn optimize(&mut self, sweeps: usize, rng: &mut rng::Rng) {
        let n = self.pts.len();
        let d = self.pts[0].len();
        if n < 3 {
            return;
        }
        let mut current = self.min_dist2();
        for _ in 0..sweeps {
            for _ in 0..2 * d {
                let a = self.critical_row();
                let i = if rng.random::<bool>() { a } else { self.nn_idx[a] };
                let mut j = rng.random_range(0..n - 1);
                if j >= i {
                    j += 1;
                }
                let k = rng.random_range(0..d);
                let saved = (self.nn_d2.clone(), self.nn_idx.clone());
                self.swap(i, j, k);
                let proposed = self.min_dist2();
                if proposed > current {
                    current = proposed;
                } else {
                    let tmp = self.pts[i][k];
                    self.pts[i][k] = self.pts[j][k];
                    self.pts[j][k] = tmp;
                    (self.nn_d2, self.nn_idx) = saved;
                }
            }
        }
    }
}

/// True when every column of `unit` puts exactly one point in each of the
/// `n` equal-width bins.
pub fn is_stratified(unit: &[Vec<f64>]) -> bool {
    let n = unit.len();
    if n == 0 {
        return true;
    }
    (0..unit[0].len()).all(|k| {
        let mut seen = vec![false; n];
        unit.iter().all(|row| {
            let bin = ((row[k] * n as f64).floor() as usize).min(n - 1);
            !std::mem::replace(&mut seen[bin], true)
        })
    })
}
