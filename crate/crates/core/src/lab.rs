//! Monte-Carlo and exhaustive checks of the probabilistic and combinatorial
//! facts behind the recovery guarantee: coherence tails, Gram conditioning
//! tails, the decoupled matrix process, moment bounds and the rank bound for
//! aggregated linear constraints.
//!
//! Every trial draws its randomness from `SplitMix64::derive(seed, [trial])`,
//! so results do not depend on how rayon schedules the work.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certificate::gram_conditioning_norm;
use crate::error::{Error, Result};
use crate::fourier::{unit_root, DftPlan, PrimeModulus};
use crate::operator::{MinkowskiEnsemble, Support};
use crate::rng::SplitMix64;

/// Two-sided 95% normal quantile.
pub const WILSON_Z: f64 = 1.959_963_984_540_054;
pub const DECOUPLED_MAX_SUPPORT: usize = 512;
pub const ENUMERATION_CAP: u64 = 100_000;
pub const RANK_EXHAUSTIVE_CAP: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailEstimate {
    pub threshold: f64,
    pub violation_count: u64,
    pub trials: u64,
    pub rate: f64,
    pub wilson_lower_95: f64,
    pub wilson_upper_95: f64,
}

impl TailEstimate {
    pub fn new(threshold: f64, violation_count: u64, trials: u64) -> Self {
        let (lo, hi) = wilson_interval(violation_count, trials);
        Self {
            threshold,
            violation_count,
            trials,
            rate: if trials == 0 { 0.0 } else { violation_count as f64 / trials as f64 },
            wilson_lower_95: lo,
            wilson_upper_95: hi,
        }
    }
}

/// 95% Wilson score interval for `k` successes in `n` trials.
pub fn wilson_interval(k: u64, n: u64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n_f = n as f64;
    let p = k as f64 / n_f;
    let z2 = WILSON_Z * WILSON_Z;
    let denom = 1.0 + z2 / n_f;
    let center = (p + z2 / (2.0 * n_f)) / denom;
    let half = WILSON_Z / denom * (p * (1.0 - p) / n_f + z2 / (4.0 * n_f * n_f)).sqrt();
    let lo = if k == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if k == n { 1.0 } else { (center + half).min(1.0) };
    (lo, hi)
}

fn check_trials(trials: u64) -> Result<()> {
    if trials < 100 {
        return Err(Error::InvalidArgument(format!("need at least 100 trials, got {trials}")));
    }
    Ok(())
}

fn count_violations(trials: u64, seed: u64, f: impl Fn(&mut SplitMix64) -> Result<bool> + Sync) -> Result<u64> {
    let flags: Result<Vec<bool>> = (0..trials)
        .into_par_iter()
        .map(|t| f(&mut SplitMix64::derive(seed, &[t])))
        .collect();
    Ok(flags?.into_iter().filter(|&v| v).count() as u64)
}

/// `t = sqrt(2 n ln(12 N^2 / eps))`, the level at which `4 N^2 exp(-t^2 / 2n) = eps / 3`.
pub fn coherence_threshold(modulus: u64, n: usize, epsilon: f64) -> f64 {
    let nn = modulus as f64;
    (2.0 * n as f64 * (12.0 * nn * nn / epsilon).ln()).sqrt()
}

/// Largest off-peak Dirichlet magnitude `max_{d != 0} |S(d)|`.
pub fn max_offpeak(e: &MinkowskiEnsemble) -> f64 {
    e.dirichlet_profile().values()[1..].iter().map(|v| v.norm()).fold(0.0, f64::max)
}

/// Empirical rate at which `max_{d != 0} |S(d)|` exceeds the Hoeffding threshold.
pub fn coherence_tail(modulus: u64, n: usize, order: u32, epsilon: f64, trials: u64, seed: u64) -> Result<TailEstimate> {
    check_trials(trials)?;
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidArgument(format!("epsilon = {epsilon} not in (0, 1)")));
    }
    PrimeModulus::new(modulus)?;
    let t = coherence_threshold(modulus, n, epsilon);
    let hits = count_violations(trials, seed, |rng| {
        let e = MinkowskiEnsemble::sample(modulus, n, order, rng.next())?;
        Ok(max_offpeak(&e) > t)
    })?;
    Ok(TailEstimate::new(t, hits, trials))
}

/// Rate at which a random support of size `s` violates `||A_T^* A_T - I|| <= 1/e`.
pub fn conditioning_tail(modulus: u64, n: usize, order: u32, s: usize, trials: u64, seed: u64) -> Result<TailEstimate> {
    check_trials(trials)?;
    if s == 0 || s as u64 > modulus {
        return Err(Error::InvalidArgument(format!("s = {s} not in [1, N]")));
    }
    let m = PrimeModulus::new(modulus)?;
    let limit = (-1.0f64).exp();
    let hits = count_violations(trials, seed, |rng| {
        let e = MinkowskiEnsemble::sample(modulus, n, order, rng.next())?;
        let t = Support::new(rng.subset(m.as_usize(), s), m)?;
        Ok(gram_conditioning_norm(&e.gram_on_support(&t))? > limit)
    })?;
    Ok(TailEstimate::new(limit, hits, trials))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub order: u32,
    pub s: usize,
    pub modulus: u64,
    pub curve: Vec<(usize, TailEstimate)>,
    /// Smallest grid `n` whose Wilson upper bound is at most 0.1.
    pub n_star: Option<usize>,
}

/// Conditioning tails along a grid of `n` values.
pub fn conditioning_calibration(
    modulus: u64,
    order: u32,
    s: usize,
    n_grid: &[usize],
    trials: u64,
    seed: u64,
) -> Result<Calibration> {
    let mut curve = Vec::with_capacity(n_grid.len());
    for (k, &n) in n_grid.iter().enumerate() {
        let stream = SplitMix64::derive_seed(seed, &[k as u64]);
        curve.push((n, conditioning_tail(modulus, n, order, s, trials, stream)?));
    }
    let n_star = curve
        .iter()
        .filter(|(_, t)| t.wilson_upper_95 <= 0.1)
        .map(|&(n, _)| n)
        .min();
    Ok(Calibration {
        order,
        s,
        modulus,
        curve,
        n_star,
    })
}

/// State of the decoupled process after `level` steps on support `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoupledProcessState {
    pub level: usize,
    pub seed_banks: Vec<Vec<u64>>,
    pub support: Support,
    pub entries: DMatrix<Complex64>,
    /// `||X_q||` for `q = 0..=level`.
    pub spectral_norms: Vec<f64>,
    /// `n max_t ||X_q e_t||^2` for `q = 0..=level`.
    pub sigma_sq: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoupledSummary {
    pub level: usize,
    pub support: Vec<usize>,
    pub spectral_norms: Vec<f64>,
    pub sigma_sq: Vec<f64>,
}

impl DecoupledProcessState {
    pub fn summary(&self) -> DecoupledSummary {
        DecoupledSummary {
            level: self.level,
            support: self.support.indices().to_vec(),
            spectral_norms: self.spectral_norms.clone(),
            sigma_sq: self.sigma_sq.clone(),
        }
    }
}

fn hermitian_norm(x: &DMatrix<Complex64>) -> f64 {
    if x.nrows() == 0 {
        return 0.0;
    }
    let sym = (x + x.adjoint()) * Complex64::new(0.5, 0.0);
    sym.symmetric_eigenvalues().iter().fold(0.0f64, |m, l| m.max(l.abs()))
}

/// `n max_t ||X e_t||_2^2`.
pub fn sigma_sq(x: &DMatrix<Complex64>, n: usize) -> f64 {
    let best = x
        .column_iter()
        .map(|c| c.iter().map(|v| v.norm_sqr()).sum::<f64>())
        .fold(0.0, f64::max);
    n as f64 * best
}

fn bank_profile(plan: &DftPlan, bank: &[u64]) -> Result<Vec<Complex64>> {
    let mut counts = vec![Complex64::new(0.0, 0.0); plan.len()];
    for &b in bank {
        counts[b as usize] += 1.0;
    }
    plan.dft(&counts)
}

fn check_banks(m: PrimeModulus, banks: &[Vec<u64>], support: &Support) -> Result<usize> {
    if support.len() > DECOUPLED_MAX_SUPPORT {
        return Err(Error::Capacity(format!(
            "support size {} exceeds {DECOUPLED_MAX_SUPPORT}",
            support.len()
        )));
    }
    let n = banks.first().map_or(0, |b| b.len());
    if banks.iter().any(|b| b.len() != n || b.iter().any(|&x| x >= m.get())) {
        return Err(Error::InvalidArgument("seed banks must share a length and lie in [0, N)".into()));
    }
    Ok(n)
}

/// Runs the process with the product closed form
/// `X_q(t, u) = prod_{r <= q} S_r(u - t)` off the diagonal.
pub fn decoupled_process_with(
    modulus: u64,
    banks: &[Vec<u64>],
    support: &Support,
) -> Result<DecoupledProcessState> {
    let m = PrimeModulus::new(modulus)?;
    let n = check_banks(m, banks, support)?;
    let plan = DftPlan::shared(m.as_usize())?;
    let idx = support.indices();
    let s = idx.len();
    let len = m.as_usize();
    let mut x = DMatrix::from_fn(s, s, |a, b| {
        Complex64::new(if a == b { 0.0 } else { 1.0 }, 0.0)
    });
    let mut spectral_norms = vec![hermitian_norm(&x)];
    let mut sig = vec![sigma_sq(&x, n)];
    for bank in banks {
        let profile = bank_profile(&plan, bank)?;
        for a in 0..s {
            for b in 0..s {
                if a != b {
                    let d = (idx[b] + len - idx[a]) % len;
                    x[(a, b)] *= profile[d];
                }
            }
        }
        spectral_norms.push(hermitian_norm(&x));
        sig.push(sigma_sq(&x, n));
    }
    Ok(DecoupledProcessState {
        level: banks.len(),
        seed_banks: banks.to_vec(),
        support: support.clone(),
        entries: x,
        spectral_norms,
        sigma_sq: sig,
    })
}

/// `X_q` from the defining sum over all index tuples in `[n]^q` of
/// `D_{b_q} ... D_{b_1} X_0 D_{b_1}^* ... D_{b_q}^*`, with `D_x = diag(e_N(-x t))`.
pub fn decoupled_enumeration(modulus: u64, banks: &[Vec<u64>], support: &Support) -> Result<DMatrix<Complex64>> {
    let m = PrimeModulus::new(modulus)?;
    let n = check_banks(m, banks, support)?;
    let count = (n as u64).checked_pow(banks.len() as u32);
    if !matches!(count, Some(c) if c <= ENUMERATION_CAP) {
        return Err(Error::Capacity(format!(
            "n^level = {n}^{} exceeds {ENUMERATION_CAP}",
            banks.len()
        )));
    }
    let idx = support.indices();
    let s = idx.len();
    let nmod = m.get();
    let mut out = DMatrix::zeros(s, s);
    let mut tuple = vec![0usize; banks.len()];
    loop {
        // Conjugating by D_x multiplies entry (t, u) by e_N(-x t) e_N(x u).
        let shift = banks
            .iter()
            .zip(&tuple)
            .fold(0u64, |acc, (bank, &i)| (acc + bank[i]) % nmod);
        for a in 0..s {
            for b in 0..s {
                if a != b {
                    let phase = (shift as u128 * ((idx[b] as u64 + nmod - idx[a] as u64) % nmod) as u128
                        % nmod as u128) as u64;
                    out[(a, b)] += unit_root(phase, nmod);
                }
            }
        }
        let mut k = 0;
        loop {
            if k == tuple.len() {
                return Ok(out);
            }
            tuple[k] += 1;
            if tuple[k] < n {
                break;
            }
            tuple[k] = 0;
            k += 1;
        }
    }
}

/// Draws `levels` independent seed banks and a random support, then runs the process.
pub fn decoupled_process(modulus: u64, n: usize, s: usize, levels: usize, seed: u64) -> Result<DecoupledProcessState> {
    let m = PrimeModulus::new(modulus)?;
    if s == 0 || s > m.as_usize() {
        return Err(Error::InvalidArgument(format!("s = {s} not in [1, N]")));
    }
    if s > DECOUPLED_MAX_SUPPORT {
        return Err(Error::Capacity(format!("support size {s} exceeds {DECOUPLED_MAX_SUPPORT}")));
    }
    let mut rng = SplitMix64::new(seed);
    let support = Support::new(rng.subset(m.as_usize(), s), m)?;
    let banks: Vec<Vec<u64>> = (0..levels)
        .map(|_| (0..n).map(|_| rng.below(m.get())).collect())
        .collect();
    decoupled_process_with(modulus, &banks, &support)
}

/// `c n^{L/2} s^{1/2} ln^{3L/2}(N / alpha)`.
pub fn decoupled_threshold(modulus: u64, n: usize, s: usize, order: u32, alpha: f64, constant: f64) -> f64 {
    let l = order as f64;
    constant
        * (n as f64).powf(l / 2.0)
        * (s as f64).sqrt()
        * (modulus as f64 / alpha).ln().powf(1.5 * l)
}

/// Rate at which some level `1..=L` of the process exceeds the threshold.
#[allow(clippy::too_many_arguments)]
pub fn decoupled_tail(
    modulus: u64,
    n: usize,
    s: usize,
    order: u32,
    alpha: f64,
    constant: f64,
    trials: u64,
    seed: u64,
) -> Result<TailEstimate> {
    check_trials(trials)?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha = {alpha} not in (0, 1)")));
    }
    let t = decoupled_threshold(modulus, n, s, order, alpha, constant);
    let hits = count_violations(trials, seed, |rng| {
        let state = decoupled_process(modulus, n, s, order as usize, rng.next())?;
        Ok(state.spectral_norms[1..].iter().any(|&v| v > t))
    })?;
    Ok(TailEstimate::new(t, hits, trials))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub estimate: f64,
    pub paper_bound: f64,
    pub ratio: f64,
    pub eta: f64,
    pub trials: u64,
}

/// `ln(2 eta^{2 eta} (s^{1/L} / n)^{eta / 2})` with `eta = (k + 1) L p`.
pub fn moment_log_bound(n: usize, order: u32, s: usize, k: usize, p: f64) -> f64 {
    let eta = (k as f64 + 1.0) * order as f64 * p;
    let base = (s as f64).powf(1.0 / order as f64) / n as f64;
    2f64.ln() + 2.0 * eta * eta.ln() + 0.5 * eta * base.ln()
}

/// `a_u^* A_T (I - G)^k z` for a given support and off-support column.
pub fn moment_quantity(e: &MinkowskiEnsemble, support: &Support, u: usize, k: usize, z: &[Complex64]) -> Result<Complex64> {
    let row = e.cross_gram_row(u, support)?;
    let g = e.gram_on_support(support);
    let h = DMatrix::<Complex64>::identity(g.nrows(), g.ncols()) - g;
    let mut w = DVector::from_column_slice(z);
    for _ in 0..k {
        w = &h * w;
    }
    Ok(row.iter().zip(w.iter()).map(|(a, b)| a * b).sum())
}

/// Monte-Carlo mean of `|a_u^* A_T (I - G)^k 1|^p` over fresh ensembles,
/// supports and off-support columns.
#[allow(clippy::too_many_arguments)]
pub fn moment_estimate(
    modulus: u64,
    n: usize,
    order: u32,
    s: usize,
    k: usize,
    p: f64,
    trials: u64,
    seed: u64,
) -> Result<MomentEstimate> {
    let m = PrimeModulus::new(modulus)?;
    if (n as f64) < 2.0 * (s as f64).powf(1.0 / order as f64) {
        return Err(Error::Precondition(format!("n = {n} < 2 s^(1/L) for s = {s}, L = {order}")));
    }
    if !(p >= 2.0) {
        return Err(Error::InvalidArgument(format!("p = {p} must be >= 2")));
    }
    if s == 0 || s >= m.as_usize() || trials == 0 {
        return Err(Error::InvalidArgument(format!("need 1 <= s < N and trials >= 1, got s = {s}")));
    }
    let ones = vec![Complex64::new(1.0, 0.0); s];
    let values: Result<Vec<f64>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = SplitMix64::derive(seed, &[t]);
            let e = MinkowskiEnsemble::sample(modulus, n, order, rng.next())?;
            let picked = rng.subset(m.as_usize(), s + 1);
            // The extra index, chosen at a uniform position, is the off-support column.
            let at = rng.below((s + 1) as u64) as usize;
            let u = picked[at];
            let rest: Vec<usize> = picked.iter().copied().filter(|&j| j != u).collect();
            let support = Support::new(rest, m)?;
            Ok(moment_quantity(&e, &support, u, k, &ones)?.norm().powf(p))
        })
        .collect();
    let estimate = values?.iter().sum::<f64>() / trials as f64;
    let log_bound = moment_log_bound(n, order, s, k, p);
    Ok(MomentEstimate {
        estimate,
        paper_bound: log_bound.exp(),
        ratio: if estimate > 0.0 { (estimate.ln() - log_bound).exp() } else { 0.0 },
        eta: (k as f64 + 1.0) * order as f64 * p,
        trials,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RankMode {
    Exhaustive,
    Sampled(u64),
}

/// Constraint vectors for one map `j : [k+1] x [2M] x [L] -> [n]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConstraintSystem {
    pub k: usize,
    pub m_half: usize,
    pub order: usize,
    pub n: usize,
    /// `j(h, p, q)` stored at `(h * 2M + p) * L + q`, all 0-based.
    pub j_map: Vec<usize>,
    /// `n` rows of length `(k+1) 2M`; row `i` is the sum of the basis vectors
    /// `b_{h,p}` over the preimage of `i`.
    pub matrix: Vec<Vec<i64>>,
}

impl ConstraintSystem {
    pub fn new(k: usize, m_half: usize, order: usize, n: usize, j_map: Vec<usize>) -> Result<Self> {
        let cols = (k + 1) * 2 * m_half;
        if j_map.len() != cols * order || j_map.iter().any(|&i| i >= n) {
            return Err(Error::InvalidArgument("j map has the wrong domain or range".into()));
        }
        let mut matrix = vec![vec![0i64; cols]; n];
        for h in 0..=k {
            for p in 0..2 * m_half {
                // With 1-based p the basis sign is (-1)^p, i.e. -1 for 0-based even p.
                let sign = if p % 2 == 0 { -1 } else { 1 };
                for q in 0..order {
                    let row = &mut matrix[j_map[(h * 2 * m_half + p) * order + q]];
                    row[h * 2 * m_half + p] += sign;
                    if h > 0 {
                        row[(h - 1) * 2 * m_half + p] -= sign;
                    }
                }
            }
        }
        Ok(Self {
            k,
            m_half,
            order,
            n,
            j_map,
            matrix,
        })
    }

    pub fn image_size(&self) -> usize {
        let mut seen = vec![false; self.n];
        self.j_map.iter().for_each(|&i| seen[i] = true);
        seen.iter().filter(|&&v| v).count()
    }

    pub fn required_rank(&self) -> usize {
        self.image_size().div_ceil(self.order)
    }

    pub fn rank(&self) -> usize {
        integer_rank(&self.matrix)
    }
}

/// Rank of an integer matrix by fraction-free (Bareiss) elimination.
pub fn integer_rank(rows: &[Vec<i64>]) -> usize {
    let mut a: Vec<Vec<i128>> = rows.iter().map(|r| r.iter().map(|&v| v as i128).collect()).collect();
    let nrows = a.len();
    let ncols = a.first().map_or(0, |r| r.len());
    let mut rank = 0;
    let mut prev = 1i128;
    for col in 0..ncols {
        let Some(piv) = (rank..nrows).find(|&r| a[r][col] != 0) else {
            continue;
        };
        a.swap(rank, piv);
        for r in rank + 1..nrows {
            for c in col + 1..ncols {
                a[r][c] = (a[rank][col] * a[r][c] - a[r][col] * a[rank][c]) / prev;
            }
            a[r][col] = 0;
        }
        prev = a[rank][col];
        rank += 1;
        if rank == nrows {
            break;
        }
    }
    rank
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankCheckReport {
    pub k: usize,
    pub m_half: usize,
    pub order: usize,
    pub n: usize,
    pub checked: u64,
    pub counterexamples: u64,
    pub min_rank_ratio: f64,
    pub all_pass: bool,
}

/// Number of maps `[k+1] x [2M] x [L] -> [n]`, if it fits in 64 bits.
pub fn map_count(k: usize, m_half: usize, order: usize, n: usize) -> Option<u64> {
    let domain = u32::try_from((k + 1) * 2 * m_half * order).ok()?;
    (n as u64).checked_pow(domain)
}

/// Checks `rank >= ceil(m / L)` for every map (or `t` random maps).
pub fn rank_lower_bound_check(k: usize, m_half: usize, order: usize, n: usize, mode: RankMode, seed: u64) -> Result<RankCheckReport> {
    if m_half == 0 || order == 0 || n == 0 {
        return Err(Error::InvalidArgument("M, L and n must be positive".into()));
    }
    let domain = (k + 1) * 2 * m_half * order;
    let decode = |mut code: u64| -> Vec<usize> {
        (0..domain)
            .map(|_| {
                let d = (code % n as u64) as usize;
                code /= n as u64;
                d
            })
            .collect()
    };
    let count = match mode {
        RankMode::Exhaustive => match map_count(k, m_half, order, n) {
            Some(c) if c <= RANK_EXHAUSTIVE_CAP => c,
            _ => {
                return Err(Error::Capacity(format!(
                    "{n}^{domain} maps exceed the exhaustive cap {RANK_EXHAUSTIVE_CAP}"
                )))
            }
        },
        RankMode::Sampled(t) => t,
    };
    let ratios: Result<Vec<f64>> = (0..count)
        .into_par_iter()
        .map(|c| {
            let map = match mode {
                RankMode::Exhaustive => decode(c),
                RankMode::Sampled(_) => {
                    let mut rng = SplitMix64::derive(seed, &[c]);
                    (0..domain).map(|_| rng.below(n as u64) as usize).collect()
                }
            };
            let sys = ConstraintSystem::new(k, m_half, order, n, map)?;
            Ok(sys.rank() as f64 / sys.required_rank() as f64)
        })
        .collect();
    let ratios = ratios?;
    let counterexamples = ratios.iter().filter(|&&r| r < 1.0).count() as u64;
    Ok(RankCheckReport {
        k,
        m_half,
        order,
        n,
        checked: count,
        counterexamples,
        min_rank_ratio: ratios.iter().copied().fold(f64::INFINITY, f64::min),
        all_pass: counterexamples == 0,
    })
}
