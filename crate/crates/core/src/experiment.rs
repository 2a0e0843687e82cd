//! Sweeps of the full recovery pipeline (draw signal, draw ensemble, certify,
//! measure, solve, check the error bound) and their CSV/summary reports.
//!
//! Trial `t` of a cell uses the stream
//! `derive(master_seed, [N, L, s, n, eta bits, t])`, so records do not depend
//! on the other cells in the config or on scheduling.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use num_complex::Complex64;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certificate::certify;
use crate::error::{Error, Result};
use crate::fourier::{norm2, PrimeModulus};
use crate::kv::KvDocument;
use crate::lab::wilson_interval;
use crate::operator::{MeasurementData, MeasurementMode, MinkowskiEnsemble, Support, DEFAULT_EXPLICIT_CAP};
use crate::rng::SplitMix64;
use crate::solver::{best_s_term_support, solve_bpdn, theorem_error_bound, SolverConfig};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;
pub const TIMING_COLUMNS: [&str; 4] = ["time_sample_ms", "time_certify_ms", "time_solve_ms", "time_total_ms"];
/// Wilson lower bound on the success rate that defines `n*`.
pub const N_STAR_LEVEL: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub enum SignalModel {
    /// Unit-modulus entries with uniform phases on a uniform random support.
    UnitPhase,
    /// Standard complex Gaussian entries on a uniform random support.
    Gaussian,
    /// A fixed signal of length `N`, one `re im` pair per line.
    File(PathBuf),
}

impl SignalModel {
    fn parse(raw: &str) -> Result<Self> {
        match raw {
            "unit_phase" => Ok(Self::UnitPhase),
            "gaussian" => Ok(Self::Gaussian),
            other => match other.strip_prefix("file:") {
                Some(path) => Ok(Self::File(PathBuf::from(path.trim()))),
                None => Err(Error::Parse(format!("unknown signal_model `{other}`"))),
            },
        }
    }

    fn render(&self) -> String {
        match self {
            Self::UnitPhase => "unit_phase".into(),
            Self::Gaussian => "gaussian".into(),
            Self::File(p) => format!("file:{}", p.display()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub modulus: u64,
    pub l_values: Vec<u32>,
    pub s_values: Vec<usize>,
    pub n_grid: Vec<usize>,
    pub eta: f64,
    pub signal_model: SignalModel,
    pub trials_per_cell: u64,
    pub master_seed: u64,
    pub output_dir: PathBuf,
    pub success_tol: f64,
    pub measurement_mode: MeasurementMode,
    pub solver: SolverConfig,
}

impl Default for ExperimentConfig {
    /// Desk-scale sweep around `N = 509`.
    fn default() -> Self {
        Self {
            modulus: 509,
            l_values: vec![1, 2, 3],
            s_values: vec![1, 5],
            n_grid: vec![5, 10, 20, 40, 80],
            eta: 0.0,
            signal_model: SignalModel::UnitPhase,
            trials_per_cell: 50,
            master_seed: 20_240_601,
            output_dir: PathBuf::from("results"),
            success_tol: 1e-4,
            measurement_mode: MeasurementMode::Reduced,
            solver: SolverConfig::default(),
        }
    }
}

/// Parses `geometric(start, ratio, count)` into rounded, deduplicated sizes.
fn parse_geometric(raw: &str) -> Result<Option<Vec<usize>>> {
    let Some(inner) = raw.strip_prefix("geometric(").and_then(|r| r.strip_suffix(')')) else {
        return Ok(None);
    };
    let parts: Vec<&str> = inner.split(',').map(str::trim).collect();
    let bad = || Error::Parse(format!("bad geometric spec `{raw}`"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let start: f64 = parts[0].parse().map_err(|_| bad())?;
    let ratio: f64 = parts[1].parse().map_err(|_| bad())?;
    let count: usize = parts[2].parse().map_err(|_| bad())?;
    if !(start >= 1.0 && ratio > 1.0) {
        return Err(bad());
    }
    let mut out: Vec<usize> = (0..count)
        .map(|k| (start * ratio.powi(k as i32)).round() as usize)
        .collect();
    out.dedup();
    Ok(Some(out))
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let m = PrimeModulus::new(self.modulus)?;
        if self.l_values.is_empty() || self.s_values.is_empty() || self.n_grid.is_empty() {
            return Err(Error::InvalidArgument("L_values, s_values and n_grid must be non-empty".into()));
        }
        if self.trials_per_cell == 0 {
            return Err(Error::InvalidArgument("trials_per_cell must be >= 1".into()));
        }
        if self.l_values.contains(&0) || self.n_grid.contains(&0) {
            return Err(Error::InvalidArgument("L and n values must be positive".into()));
        }
        if self.s_values.iter().any(|&s| s == 0 || s > m.as_usize()) {
            return Err(Error::InvalidArgument("s values must lie in [1, N]".into()));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) || !(self.success_tol > 0.0) {
            return Err(Error::InvalidArgument("eta must be >= 0 and success_tol > 0".into()));
        }
        if self.measurement_mode == MeasurementMode::Explicit {
            for &l in &self.l_values {
                for &n in &self.n_grid {
                    if !matches!((n as u64).checked_pow(l), Some(r) if r <= DEFAULT_EXPLICIT_CAP) {
                        return Err(Error::Capacity(format!("explicit mode with n = {n}, L = {l}")));
                    }
                }
            }
        }
        self.solver.validate()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let doc = KvDocument::parse(text)?;
        let version: u32 = doc.parse_value("schema_version")?;
        if version != CONFIG_SCHEMA_VERSION {
            return Err(Error::Parse(format!("unsupported config schema_version {version}")));
        }
        let known = [
            "schema_version",
            "N",
            "L_values",
            "s_values",
            "n_grid",
            "eta",
            "signal_model",
            "trials_per_cell",
            "master_seed",
            "output_dir",
            "success_tol",
            "measurement_mode",
            "solver.max_iters",
            "solver.primal_tol",
            "solver.feasibility_tol",
            "solver.step_scale",
        ];
        if let Some(k) = doc.keys().find(|k| !known.contains(k)) {
            return Err(Error::Parse(format!("unknown config key `{k}`")));
        }
        let d = Self::default();
        let n_grid = match doc.get("n_grid") {
            Some(raw) => match parse_geometric(raw)? {
                Some(g) => g,
                None => doc.parse_list("n_grid")?,
            },
            None => d.n_grid,
        };
        let measurement_mode = match doc.get("measurement_mode").unwrap_or("reduced") {
            "reduced" => MeasurementMode::Reduced,
            "explicit" => MeasurementMode::Explicit,
            other => return Err(Error::Parse(format!("unknown measurement_mode `{other}`"))),
        };
        let cfg = Self {
            modulus: doc.parse_value("N")?,
            l_values: if doc.get("L_values").is_some() { doc.parse_list("L_values")? } else { d.l_values },
            s_values: if doc.get("s_values").is_some() { doc.parse_list("s_values")? } else { d.s_values },
            n_grid,
            eta: doc.parse_or("eta", d.eta)?,
            signal_model: match doc.get("signal_model") {
                Some(raw) => SignalModel::parse(raw)?,
                None => d.signal_model,
            },
            trials_per_cell: doc.parse_or("trials_per_cell", d.trials_per_cell)?,
            master_seed: doc.parse_or("master_seed", d.master_seed)?,
            output_dir: doc.get("output_dir").map_or(d.output_dir, PathBuf::from),
            success_tol: doc.parse_or("success_tol", d.success_tol)?,
            measurement_mode,
            solver: SolverConfig {
                max_iters: doc.parse_or("solver.max_iters", d.solver.max_iters)?,
                primal_tol: doc.parse_or("solver.primal_tol", d.solver.primal_tol)?,
                feasibility_tol: doc.parse_or("solver.feasibility_tol", d.solver.feasibility_tol)?,
                step_scale: doc.parse_or("solver.step_scale", d.solver.step_scale)?,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn render(&self) -> String {
        let mut doc = KvDocument::new();
        doc.set("schema_version", CONFIG_SCHEMA_VERSION);
        doc.set("N", self.modulus);
        doc.set_list("L_values", &self.l_values);
        doc.set_list("s_values", &self.s_values);
        doc.set_list("n_grid", &self.n_grid);
        doc.set("eta", self.eta);
        doc.set("signal_model", self.signal_model.render());
        doc.set("trials_per_cell", self.trials_per_cell);
        doc.set("master_seed", self.master_seed);
        doc.set("output_dir", self.output_dir.display());
        doc.set("success_tol", self.success_tol);
        doc.set(
            "measurement_mode",
            match self.measurement_mode {
                MeasurementMode::Reduced => "reduced",
                MeasurementMode::Explicit => "explicit",
            },
        );
        doc.set("solver.max_iters", self.solver.max_iters);
        doc.set("solver.primal_tol", self.solver.primal_tol);
        doc.set("solver.feasibility_tol", self.solver.feasibility_tol);
        doc.set("solver.step_scale", self.solver.step_scale);
        format!("# Minkowski partial Fourier recovery sweep\n{}", doc.render())
    }

    /// Cells in config order: `L`, then `s`, then `n`.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &order in &self.l_values {
            for &s in &self.s_values {
                for &n in &self.n_grid {
                    out.push(Cell {
                        modulus: self.modulus,
                        order,
                        s,
                        n,
                        eta: self.eta,
                    });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub modulus: u64,
    pub order: u32,
    pub s: usize,
    pub n: usize,
    pub eta: f64,
}

impl Cell {
    pub fn stream_id(&self, trial: u64) -> u64 {
        SplitMix64::derive_seed(
            0,
            &[self.modulus, self.order as u64, self.s as u64, self.n as u64, self.eta.to_bits(), trial],
        )
    }
}

/// One row of `trials.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    #[serde(rename = "N")]
    pub modulus: u64,
    pub s: usize,
    pub n: usize,
    #[serde(rename = "L")]
    pub order: u32,
    pub eta: f64,
    pub trial_index: u64,
    pub stream_id: u64,
    pub entropy_bits: f64,
    pub gram_norm: f64,
    pub v_norm: Option<f64>,
    pub u_inf_offsupport: Option<f64>,
    pub passes_conditioning: bool,
    pub passes_v: bool,
    pub passes_u: bool,
    pub certified: bool,
    pub solver_iterations: usize,
    pub solver_converged: bool,
    pub residual: f64,
    pub l1_value: f64,
    pub err_l2: f64,
    pub theorem_bound: f64,
    pub bound_satisfied: bool,
    pub success: bool,
    pub time_sample_ms: f64,
    pub time_certify_ms: f64,
    pub time_solve_ms: f64,
    pub time_total_ms: f64,
}

fn load_signal(path: &Path, len: usize) -> Result<Vec<Complex64>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::with_capacity(len);
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::Parse(format!("{}:{}: bad number `{s}`", path.display(), k + 1)))
        };
        match parts.as_slice() {
            [re] => out.push(Complex64::new(parse(re)?, 0.0)),
            [re, im] => out.push(Complex64::new(parse(re)?, parse(im)?)),
            _ => return Err(Error::Parse(format!("{}:{}: expected `re [im]`", path.display(), k + 1))),
        }
    }
    if out.len() != len {
        return Err(Error::Shape(format!("signal file has {} entries but N = {len}", out.len())));
    }
    Ok(out)
}

fn complex_normal(rng: &mut SplitMix64) -> Complex64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re, im)
}

fn draw_signal(model: &SignalModel, len: usize, s: usize, rng: &mut SplitMix64, fixed: Option<&[Complex64]>) -> Vec<Complex64> {
    if let (SignalModel::File(_), Some(x)) = (model, fixed) {
        return x.to_vec();
    }
    let mut x = vec![Complex64::new(0.0, 0.0); len];
    for j in rng.subset(len, s) {
        x[j] = match model {
            SignalModel::Gaussian => complex_normal(rng),
            _ => Complex64::from_polar(1.0, std::f64::consts::TAU * rng.unit_f64()),
        };
    }
    x
}

/// Noise uniform on the sphere of radius `eta` in the explicit space `C^m`,
/// represented in reduced coordinates: the projection onto the span of merged
/// rows plus the squared norm of the orthogonal remainder.
fn reduced_sphere_noise(e: &MinkowskiEnsemble, eta: f64, rng: &mut SplitMix64) -> Result<(Vec<Complex64>, f64)> {
    let k = e.reduced_weights().len();
    let zero = Complex64::new(0.0, 0.0);
    if eta == 0.0 {
        return Ok((vec![zero; k], 0.0));
    }
    let m = (e.num_seeds() as f64).powi(e.order() as i32);
    let g: Vec<Complex64> = (0..k).map(|_| complex_normal(rng)).collect();
    let dof = 2.0 * (m - k as f64);
    let perp = if dof > 0.0 {
        ChiSquared::new(dof)
            .map_err(|err| Error::Numerical(err.to_string()))?
            .sample(rng)
    } else {
        0.0
    };
    let g_sq: f64 = g.iter().map(|v| v.norm_sqr()).sum();
    let scale = eta / (g_sq + perp).sqrt();
    Ok((g.into_iter().map(|v| v * scale).collect(), perp * scale * scale))
}

fn explicit_sphere_noise(rows: usize, eta: f64, rng: &mut SplitMix64) -> Vec<Complex64> {
    if eta == 0.0 {
        return vec![Complex64::new(0.0, 0.0); rows];
    }
    let g: Vec<Complex64> = (0..rows).map(|_| complex_normal(rng)).collect();
    let scale = eta / norm2(&g);
    g.into_iter().map(|v| v * scale).collect()
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Runs one trial of the pipeline; deterministic given `(cfg, cell, trial)`
/// apart from the timing fields.
pub fn run_trial(cfg: &ExperimentConfig, cell: &Cell, trial: u64, fixed: Option<&[Complex64]>) -> Result<TrialRecord> {
    let start = Instant::now();
    let stream = SplitMix64::derive_seed(cfg.master_seed, &[cell.stream_id(trial)]);
    let mut signal_rng = SplitMix64::derive(stream, &[0]);
    let mut noise_rng = SplitMix64::derive(stream, &[2]);
    let m = PrimeModulus::new(cell.modulus)?;
    let len = m.as_usize();

    let x = draw_signal(&cfg.signal_model, len, cell.s, &mut signal_rng, fixed);
    let e = MinkowskiEnsemble::sample(cell.modulus, cell.n, cell.order, SplitMix64::derive_seed(stream, &[1]))?;
    let time_sample_ms = ms(start);

    let t0 = Instant::now();
    let support = Support::new(best_s_term_support(&x, cell.s), m)?;
    let sign: Vec<Complex64> = support
        .indices()
        .iter()
        .map(|&j| if x[j].norm() > 0.0 { x[j] / x[j].norm() } else { Complex64::new(1.0, 0.0) })
        .collect();
    let report = certify(&e, &support, &sign)?;
    let time_certify_ms = ms(t0);

    let t0 = Instant::now();
    let y = match cfg.measurement_mode {
        MeasurementMode::Reduced => {
            let (freqs, mut values) = e.forward_reduced(&x)?;
            let (noise, offrange) = reduced_sphere_noise(&e, cell.eta, &mut noise_rng)?;
            values.iter_mut().zip(&noise).for_each(|(v, w)| *v += w);
            MeasurementData::reduced(freqs, values, offrange)?
        }
        MeasurementMode::Explicit => {
            let mut y = e.apply_forward(&x, MeasurementMode::Explicit)?;
            let noise = explicit_sphere_noise(y.values().len(), cell.eta, &mut noise_rng);
            y.values_mut().iter_mut().zip(&noise).for_each(|(v, w)| *v += w);
            y
        }
    }
    .with_eta(cell.eta);
    let rec = solve_bpdn(&e, &y, cell.eta, &cfg.solver)?;
    let time_solve_ms = ms(t0);

    let bound = theorem_error_bound(cell.s, cell.eta, &x, &rec.x_hat)?;
    Ok(TrialRecord {
        modulus: cell.modulus,
        s: cell.s,
        n: cell.n,
        order: cell.order,
        eta: cell.eta,
        trial_index: trial,
        stream_id: stream,
        entropy_bits: e.entropy_bits(),
        gram_norm: report.gram_norm,
        v_norm: report.v_norm,
        u_inf_offsupport: report.u_inf_offsupport,
        passes_conditioning: report.passes_conditioning,
        passes_v: report.passes_v,
        passes_u: report.passes_u,
        certified: report.passes_all(),
        solver_iterations: rec.iterations,
        solver_converged: rec.converged,
        residual: rec.residual,
        l1_value: rec.l1_value,
        err_l2: bound.err,
        theorem_bound: bound.bound,
        bound_satisfied: bound.satisfied,
        success: bound.err <= cfg.success_tol,
        time_sample_ms,
        time_certify_ms,
        time_solve_ms,
        time_total_ms: ms(start),
    })
}

fn fixed_signal(cfg: &ExperimentConfig) -> Result<Option<Vec<Complex64>>> {
    match &cfg.signal_model {
        SignalModel::File(p) => Ok(Some(load_signal(p, cfg.modulus as usize)?)),
        _ => Ok(None),
    }
}

/// All trials of one cell, ordered by trial index.
pub fn run_cell(cfg: &ExperimentConfig, cell: &Cell) -> Result<Vec<TrialRecord>> {
    cfg.validate()?;
    let fixed = fixed_signal(cfg)?;
    (0..cfg.trials_per_cell)
        .into_par_iter()
        .map(|t| run_trial(cfg, cell, t, fixed.as_deref()))
        .collect()
}

/// Every cell of the config, sorted by (cell order, trial index).
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<Vec<TrialRecord>> {
    cfg.validate()?;
    let fixed = fixed_signal(cfg)?;
    let cells = cfg.cells();
    let jobs: Vec<(usize, u64)> = (0..cells.len())
        .flat_map(|c| (0..cfg.trials_per_cell).map(move |t| (c, t)))
        .collect();
    let mut out: Vec<(usize, TrialRecord)> = jobs
        .into_par_iter()
        .map(|(c, t)| run_trial(cfg, &cells[c], t, fixed.as_deref()).map(|r| (c, r)))
        .collect::<Result<_>>()?;
    out.sort_by_key(|(c, r)| (*c, r.trial_index));
    Ok(out.into_iter().map(|(_, r)| r).collect())
}

/// One row of `cells.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    #[serde(rename = "N")]
    pub modulus: u64,
    #[serde(rename = "L")]
    pub order: u32,
    pub s: usize,
    pub n: usize,
    pub eta: f64,
    pub trials: u64,
    pub successes: u64,
    pub success_rate: f64,
    pub success_wilson_lower: f64,
    pub success_wilson_upper: f64,
    pub certified: u64,
    pub certified_rate: f64,
    pub certified_wilson_lower: f64,
    pub certified_wilson_upper: f64,
    pub certified_successes: u64,
    pub certified_bound_satisfied: u64,
    pub bound_satisfied: u64,
    pub solver_nonconverged: u64,
    pub entropy_bits: f64,
}

/// Aggregates records into cells, keeping first-appearance order.
pub fn aggregate(records: &[TrialRecord]) -> Vec<CellSummary> {
    let mut order: Vec<(u64, u32, usize, usize, u64)> = Vec::new();
    let mut groups: BTreeMap<(u64, u32, usize, usize, u64), Vec<&TrialRecord>> = BTreeMap::new();
    for r in records {
        let key = (r.modulus, r.order, r.s, r.n, r.eta.to_bits());
        if !groups.contains_key(&key) {
            order.push(key);
        }
        groups.entry(key).or_default().push(r);
    }
    order
        .iter()
        .map(|key| {
            let g = &groups[key];
            let r0 = g[0];
            let trials = g.len() as u64;
            let count = |f: &dyn Fn(&TrialRecord) -> bool| g.iter().filter(|r| f(r)).count() as u64;
            let successes = count(&|r| r.success);
            let certified = count(&|r| r.certified);
            let (sl, su) = wilson_interval(successes, trials);
            let (cl, cu) = wilson_interval(certified, trials);
            CellSummary {
                modulus: r0.modulus,
                order: r0.order,
                s: r0.s,
                n: r0.n,
                eta: r0.eta,
                trials,
                successes,
                success_rate: successes as f64 / trials as f64,
                success_wilson_lower: sl,
                success_wilson_upper: su,
                certified,
                certified_rate: certified as f64 / trials as f64,
                certified_wilson_lower: cl,
                certified_wilson_upper: cu,
                certified_successes: count(&|r| r.certified && r.success),
                certified_bound_satisfied: count(&|r| r.certified && r.bound_satisfied),
                bound_satisfied: count(&|r| r.bound_satisfied),
                solver_nonconverged: count(&|r| !r.solver_converged),
                entropy_bits: r0.n as f64 * (r0.modulus as f64).log2(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NStar {
    #[serde(rename = "L")]
    pub order: u32,
    pub s: usize,
    pub n_star: Option<usize>,
    pub entropy_bits: Option<f64>,
}

/// Smallest grid `n` per `(L, s)` whose success Wilson lower bound reaches 0.9.
pub fn n_star_table(cells: &[CellSummary]) -> Vec<NStar> {
    let mut keys: Vec<(u32, usize)> = Vec::new();
    for c in cells {
        if !keys.contains(&(c.order, c.s)) {
            keys.push((c.order, c.s));
        }
    }
    keys.into_iter()
        .map(|(order, s)| {
            let best = cells
                .iter()
                .filter(|c| c.order == order && c.s == s && c.success_wilson_lower >= N_STAR_LEVEL)
                .min_by_key(|c| c.n);
            NStar {
                order,
                s,
                n_star: best.map(|c| c.n),
                entropy_bits: best.map(|c| c.entropy_bits),
            }
        })
        .collect()
}

/// Outcome of the invariants a sweep is expected to satisfy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantCheck {
    pub certified_noiseless: u64,
    pub certified_noiseless_failures: u64,
    pub certified_noisy: u64,
    pub certified_noisy_bound_violations: u64,
    pub entropy_mismatches: u64,
    pub holds: bool,
}

pub fn check_invariants(records: &[TrialRecord]) -> InvariantCheck {
    let noiseless: Vec<&TrialRecord> = records.iter().filter(|r| r.certified && r.eta == 0.0).collect();
    let noisy: Vec<&TrialRecord> = records.iter().filter(|r| r.certified && r.eta > 0.0).collect();
    let failures = noiseless.iter().filter(|r| !r.success).count() as u64;
    let violations = noisy.iter().filter(|r| !r.bound_satisfied).count() as u64;
    let entropy_mismatches = records
        .iter()
        .filter(|r| (r.entropy_bits - r.n as f64 * (r.modulus as f64).log2()).abs() > 1e-9 * r.entropy_bits.max(1.0))
        .count() as u64;
    InvariantCheck {
        certified_noiseless: noiseless.len() as u64,
        certified_noiseless_failures: failures,
        certified_noisy: noisy.len() as u64,
        certified_noisy_bound_violations: violations,
        entropy_mismatches,
        holds: failures == 0 && violations == 0 && entropy_mismatches == 0,
    }
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Fails with an I/O error unless `dir` exists (or can be created) and accepts files.
pub fn ensure_writable(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let probe = dir.join(".write_probe");
    fs::write(&probe, b"")?;
    fs::remove_file(&probe)?;
    Ok(())
}

const PLOT_SCRIPT: &str = r#"#!/usr/bin/env python3
"""Success and certificate-pass frequency versus n, one panel per (L, s)."""
import csv
import sys
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

src = sys.argv[1] if len(sys.argv) > 1 else "cells.csv"
out = sys.argv[2] if len(sys.argv) > 2 else "success_curves.png"

groups = defaultdict(list)
with open(src, newline="") as fh:
    for row in csv.DictReader(fh):
        groups[(int(row["L"]), int(row["s"]))].append(row)

keys = sorted(groups)
fig, axes = plt.subplots(1, len(keys), figsize=(4 * len(keys), 3.5), squeeze=False)
for ax, key in zip(axes[0], keys):
    rows = sorted(groups[key], key=lambda r: int(r["n"]))
    n = [int(r["n"]) for r in rows]
    for name, label in (("success", "recovered"), ("certified", "certified")):
        rate = [float(r[f"{name}_rate"]) for r in rows]
        lo = [float(r[f"{name}_wilson_lower"]) for r in rows]
        hi = [float(r[f"{name}_wilson_upper"]) for r in rows]
        ax.plot(n, rate, marker="o", label=label)
        ax.fill_between(n, lo, hi, alpha=0.2)
    ax.set_xscale("log")
    ax.set_ylim(-0.02, 1.02)
    ax.set_xlabel("n (seeds)")
    ax.set_title(f"L = {key[0]}, s = {key[1]}")
    ax.legend(loc="lower right")
axes[0][0].set_ylabel("frequency")
fig.tight_layout()
fig.savefig(out, dpi=120)
"#;

fn summary_text(records: &[TrialRecord], cells: &[CellSummary]) -> String {
    let mut out = String::new();
    let inv = check_invariants(records);
    let _ = writeln!(out, "records: {}", records.len());
    let _ = writeln!(out, "cells: {}", cells.len());
    let _ = writeln!(out);
    let _ = writeln!(out, "n* (smallest n with success Wilson lower bound >= {N_STAR_LEVEL}):");
    for row in n_star_table(cells) {
        match (row.n_star, row.entropy_bits) {
            (Some(n), Some(bits)) => {
                let _ = writeln!(out, "  L = {}, s = {}: n* = {n}, entropy = {bits:.2} bits", row.order, row.s);
            }
            _ => {
                let _ = writeln!(out, "  L = {}, s = {}: n* not reached on this grid", row.order, row.s);
            }
        }
    }
    let _ = writeln!(out);
    let rate = |num: u64, den: u64| {
        if den == 0 {
            "n/a".to_string()
        } else {
            format!("{:.4}", num as f64 / den as f64)
        }
    };
    let _ = writeln!(
        out,
        "certified noiseless trials recovered: {}/{} ({})",
        inv.certified_noiseless - inv.certified_noiseless_failures,
        inv.certified_noiseless,
        rate(inv.certified_noiseless - inv.certified_noiseless_failures, inv.certified_noiseless)
    );
    let _ = writeln!(
        out,
        "certified noisy trials within the error bound: {}/{} ({})",
        inv.certified_noisy - inv.certified_noisy_bound_violations,
        inv.certified_noisy,
        rate(inv.certified_noisy - inv.certified_noisy_bound_violations, inv.certified_noisy)
    );
    let total_bound = records.iter().filter(|r| r.bound_satisfied).count() as u64;
    let _ = writeln!(
        out,
        "all trials within the error bound: {}/{} ({})",
        total_bound,
        records.len(),
        rate(total_bound, records.len() as u64)
    );
    let _ = writeln!(out, "entropy column mismatches: {}", inv.entropy_mismatches);
    let _ = writeln!(out, "invariants hold: {}", inv.holds);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub trials_csv: PathBuf,
    pub cells_csv: PathBuf,
    pub summary: PathBuf,
    pub plot_script: PathBuf,
}

/// Writes `trials.csv`, `cells.csv`, `summary.txt` and `plot_success.py`.
pub fn report(records: &[TrialRecord], dir: &Path) -> Result<ReportFiles> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("no records to report".into()));
    }
    ensure_writable(dir)?;
    let cells = aggregate(records);
    let files = ReportFiles {
        trials_csv: dir.join("trials.csv"),
        cells_csv: dir.join("cells.csv"),
        summary: dir.join("summary.txt"),
        plot_script: dir.join("plot_success.py"),
    };
    write_csv(&files.trials_csv, records)?;
    write_csv(&files.cells_csv, &cells)?;
    fs::write(&files.summary, summary_text(records, &cells))?;
    fs::write(&files.plot_script, PLOT_SCRIPT)?;
    Ok(files)
}

/// Checks the output directory, runs the sweep, and writes the report.
pub fn sweep(cfg: &ExperimentConfig) -> Result<(Vec<TrialRecord>, ReportFiles)> {
    cfg.validate()?;
    ensure_writable(&cfg.output_dir)?;
    let records = run_sweep(cfg)?;
    let files = report(&records, &cfg.output_dir)?;
    Ok((records, files))
}

/// CSV text with the named columns removed, for byte comparisons.
pub fn strip_columns(csv_text: &str, drop: &[&str]) -> Result<String> {
    let mut reader = csv::Reader::from_reader(csv_text.as_bytes());
    let headers = reader.headers()?.clone();
    let keep: Vec<usize> = (0..headers.len()).filter(|&i| !drop.contains(&&headers[i])).collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(keep.iter().map(|&i| &headers[i]))?;
    for row in reader.records() {
        let row = row?;
        w.write_record(keep.iter().map(|&i| &row[i]))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
}
