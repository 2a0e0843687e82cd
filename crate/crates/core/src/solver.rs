//! Basis pursuit denoising: minimize `||z||_1` subject to `||A z - y||_2 <= eta`.
//!
//! The program is solved in reduced form. Rows of `A` that sample the same
//! frequency are merged into one weighted row, and the part of explicit data
//! orthogonal to those merged rows is carried as a constant, so the reduced
//! program has exactly the same feasible set and minimizers as the explicit one.
//!
//! The main loop is a primal-dual (Chambolle-Pock) splitting with the soft
//! threshold as primal prox and a ball projection in the dual. Because
//! `A A^*` is diagonal in reduced form, the constraint set also has a cheap
//! exact projection; it is applied to the final iterate so the returned point
//! is feasible to rounding. Two candidates computed on the detected support, a
//! least-squares refit and (for positive radius) a reweighted solve with the
//! constraint active, are kept whenever feasible with a smaller objective.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fourier::{norm1, norm2, ComplexVector};
use crate::operator::{MeasurementData, MinkowskiEnsemble, Samples, Support};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_iters: usize,
    pub primal_tol: f64,
    pub feasibility_tol: f64,
    pub step_scale: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 20_000,
            primal_tol: 1e-7,
            feasibility_tol: 1e-9,
            step_scale: 0.99,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.max_iters > 0
            && self.primal_tol > 0.0
            && self.feasibility_tol > 0.0
            && self.step_scale > 0.0
            && self.step_scale <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid solver config {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryResult {
    pub x_hat: ComplexVector,
    pub iterations: usize,
    /// `||A x_hat - y||_2` in the explicit measurement space.
    pub residual: f64,
    pub l1_value: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorBound {
    pub err: f64,
    pub bound: f64,
    pub satisfied: bool,
}

/// `z max(1 - tau/|z|, 0)`.
pub fn soft_threshold(z: Complex64, tau: f64) -> Result<Complex64> {
    if !(tau >= 0.0) {
        return Err(Error::InvalidArgument(format!("threshold {tau} must be >= 0")));
    }
    Ok(shrink(z, tau))
}

#[inline]
fn shrink(z: Complex64, tau: f64) -> Complex64 {
    let r = z.norm();
    if r <= tau {
        Complex64::new(0.0, 0.0)
    } else {
        z * (1.0 - tau / r)
    }
}

/// Indices of the `s` largest-magnitude entries, ties broken by lowest index,
/// returned ascending.
pub fn best_s_term_support(x: &[Complex64], s: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[b].norm().total_cmp(&x[a].norm()).then(a.cmp(&b)));
    order.truncate(s);
    order.sort_unstable();
    order
}

/// `||x - x_s||_1` for the best `s`-term approximation `x_s`.
pub fn best_s_term_tail(x: &[Complex64], s: usize) -> f64 {
    let keep = best_s_term_support(x, s);
    let mut tail = 0.0;
    let mut k = 0;
    for (j, v) in x.iter().enumerate() {
        if k < keep.len() && keep[k] == j {
            k += 1;
        } else {
            tail += v.norm();
        }
    }
    tail
}

/// The recovery guarantee `||x_hat - x||_2 <= 25 (sqrt(s) eta + ||x - x_s||_1)`.
pub fn theorem_error_bound(s: usize, eta: f64, x: &[Complex64], x_hat: &[Complex64]) -> Result<ErrorBound> {
    if x.len() != x_hat.len() {
        return Err(Error::Shape(format!("lengths {} and {}", x.len(), x_hat.len())));
    }
    if s == 0 || s > x.len() {
        return Err(Error::InvalidArgument(format!("s = {s} not in [1, {}]", x.len())));
    }
    let diff: Vec<Complex64> = x.iter().zip(x_hat).map(|(a, b)| a - b).collect();
    let err = norm2(&diff);
    let bound = 25.0 * ((s as f64).sqrt() * eta + best_s_term_tail(x, s));
    Ok(ErrorBound {
        err,
        bound,
        satisfied: err <= bound + 1e-6,
    })
}

/// The program in reduced coordinates: `||A_red z - target||^2 <= radius^2`.
struct Reduced<'a> {
    e: &'a MinkowskiEnsemble,
    target: Vec<Complex64>,
    radius: f64,
    offrange: f64,
}

impl<'a> Reduced<'a> {
    fn new(e: &'a MinkowskiEnsemble, y: &MeasurementData, eta: f64, feas_tol: f64) -> Result<Self> {
        let folded = match y.samples() {
            Samples::Explicit(_) => e.fold_to_reduced(y)?,
            Samples::Reduced { .. } => y.clone(),
        };
        let target = match folded.samples() {
            Samples::Reduced { frequencies, values } => {
                let weights = e.reduced_weights();
                if frequencies.len() != weights.len()
                    || frequencies.iter().zip(weights).any(|(&f, &(r, _))| f != r)
                {
                    return Err(Error::Shape("measurement frequencies do not match the ensemble".into()));
                }
                values.clone()
            }
            Samples::Explicit(_) => unreachable!("folded data is reduced"),
        };
        let offrange = folded.offrange_energy();
        let slack = eta * eta - offrange;
        let radius = if slack >= 0.0 {
            slack.sqrt()
        } else if offrange.sqrt() <= eta + feas_tol {
            0.0
        } else {
            return Err(Error::Precondition(format!(
                "infeasible program: the data lies {:e} outside the range of A but eta = {eta:e}",
                offrange.sqrt()
            )));
        };
        Ok(Self {
            e,
            target,
            radius,
            offrange,
        })
    }

    fn forward(&self, z: &[Complex64]) -> Result<Vec<Complex64>> {
        Ok(self.e.forward_reduced(z)?.1)
    }

    fn adjoint(&self, p: &[Complex64]) -> Result<Vec<Complex64>> {
        self.e.adjoint_reduced(p)
    }

    fn misfit(&self, z: &[Complex64]) -> Result<f64> {
        let az = self.forward(z)?;
        Ok(az.iter().zip(&self.target).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt())
    }

    /// Residual in the explicit space.
    fn explicit_residual(&self, z: &[Complex64]) -> Result<f64> {
        let m = self.misfit(z)?;
        Ok((m * m + self.offrange).sqrt())
    }

    /// Euclidean projection onto `{z : ||A_red z - target|| <= radius}`.
    /// In the DFT domain `A_red` is a diagonal selection with weights `d`, so
    /// the projection shrinks each sampled coefficient toward `target / d`
    /// by a common multiplier found by a scalar root search.
    fn project(&self, z: &[Complex64]) -> Result<Vec<Complex64>> {
        let plan = self.e.plan();
        let n = plan.len() as f64;
        let mut w = plan.dft(z)?;
        let weights = self.e.reduced_weights();
        let gaps: Vec<f64> = weights
            .iter()
            .zip(&self.target)
            .map(|(&(r, d), t)| (w[r] * d - t).norm_sqr())
            .collect();
        let misfit_sq: f64 = gaps.iter().sum();
        if misfit_sq <= self.radius * self.radius {
            return Ok(z.to_vec());
        }
        if self.radius == 0.0 {
            for (&(r, d), t) in weights.iter().zip(&self.target) {
                w[r] = t / d;
            }
        } else {
            let residual = |lambda: f64| -> f64 {
                weights
                    .iter()
                    .zip(&gaps)
                    .map(|(&(_, d), g)| g / (1.0 + n * lambda * d * d).powi(2))
                    .sum::<f64>()
                    .sqrt()
            };
            let mut hi = 1.0;
            while residual(hi) > self.radius {
                hi *= 2.0;
                if hi > 1e300 {
                    break;
                }
            }
            let mut lo = 0.0;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if residual(mid) > self.radius {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let lambda = hi;
            for (&(r, d), t) in weights.iter().zip(&self.target) {
                let k = n * lambda * d;
                w[r] = (w[r] + t * k) / (1.0 + k * d);
            }
        }
        plan.idft(&w)
    }

    /// Largest singular value of `A_red` by power iteration on `A^* A`.
    fn operator_norm(&self) -> Result<f64> {
        let len = self.e.len();
        let mut x: Vec<Complex64> = (0..len)
            .map(|j| {
                let t = j as f64 + 1.0;
                Complex64::new(1.0 + 0.5 * (t * 0.37).sin(), 0.5 * (t * 1.91).cos())
            })
            .collect();
        let mut estimate = 0.0;
        for _ in 0..1000 {
            let nx = norm2(&x);
            if nx == 0.0 {
                return Ok(0.0);
            }
            x.iter_mut().for_each(|v| *v /= nx);
            let ax = self.forward(&x)?;
            let next = norm2(&ax);
            let done = (next - estimate).abs() <= 1e-12 * next;
            estimate = next;
            if done {
                break;
            }
            x = self.adjoint(&ax)?;
        }
        Ok(estimate)
    }

    /// Least-squares refit restricted to `support`.
    fn refit(&self, support: &[usize]) -> Result<Option<Vec<Complex64>>> {
        let len = self.e.len();
        let t = Support::new(support.to_vec(), self.e.modulus())?;
        let g = self.e.gram_on_support(&t);
        let rhs_full = self.adjoint(&self.target)?;
        let rhs = DVector::from_iterator(t.len(), t.indices().iter().map(|&j| rhs_full[j]));
        let Some(chol) = DMatrix::cholesky(g) else {
            return Ok(None);
        };
        let sol = chol.solve(&rhs);
        let mut z = vec![Complex64::new(0.0, 0.0); len];
        for (k, &j) in t.indices().iter().enumerate() {
            z[j] = sol[k];
        }
        Ok(Some(z))
    }

    /// Reweighted solve of the program restricted to `support` with the
    /// constraint active: `z = (G + lambda D)^{-1} A_T^* y`, `D = diag(1/|z|)`,
    /// with `lambda` chosen so the misfit equals the radius.
    fn polish(&self, support: &[usize], start: &[Complex64]) -> Result<Option<Vec<Complex64>>> {
        let t = Support::new(support.to_vec(), self.e.modulus())?;
        let s = t.len();
        let g = self.e.gram_on_support(&t);
        let rhs_full = self.adjoint(&self.target)?;
        let b = DVector::from_iterator(s, t.indices().iter().map(|&j| rhs_full[j]));
        let target_sq: f64 = self.target.iter().map(|v| v.norm_sqr()).sum();
        let radius_sq = self.radius * self.radius;
        if target_sq <= radius_sq {
            return Ok(None);
        }
        let misfit_sq = |z: &DVector<Complex64>| {
            let gz = &g * z;
            (z.dotc(&gz).re - 2.0 * z.dotc(&b).re + target_sq).max(0.0)
        };
        let solve = |lambda: f64, w: &[f64]| {
            let mut m = g.clone();
            for k in 0..s {
                m[(k, k)] += Complex64::new(lambda * w[k], 0.0);
            }
            DMatrix::cholesky(m).map(|c| c.solve(&b))
        };

        let mut z = DVector::from_iterator(s, t.indices().iter().map(|&j| start[j]));
        for _ in 0..200 {
            let w: Vec<f64> = z.iter().map(|v| 1.0 / v.norm().max(1e-300)).collect();
            let Some(z0) = solve(0.0, &w) else {
                return Ok(None);
            };
            if misfit_sq(&z0) > radius_sq {
                return Ok(None);
            }
            let mut hi = 1e-12;
            let z_hi = loop {
                let Some(zh) = solve(hi, &w) else {
                    return Ok(None);
                };
                if misfit_sq(&zh) > radius_sq || hi > 1e12 {
                    break zh;
                }
                hi *= 4.0;
            };
            if misfit_sq(&z_hi) <= radius_sq {
                return Ok(None);
            }
            let mut lo = 0.0;
            let mut next = z0;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                let Some(zm) = solve(mid, &w) else {
                    return Ok(None);
                };
                if misfit_sq(&zm) <= radius_sq {
                    lo = mid;
                    next = zm;
                } else {
                    hi = mid;
                }
            }
            let change = (&next - &z).norm();
            z = next;
            if change <= 1e-15 * z.norm() {
                break;
            }
        }
        let mut out = vec![Complex64::new(0.0, 0.0); self.e.len()];
        for (k, &j) in t.indices().iter().enumerate() {
            out[j] = z[k];
        }
        Ok(Some(out))
    }
}

/// Solves the basis pursuit denoising program for data `y` and radius `eta`.
pub fn solve_bpdn(e: &MinkowskiEnsemble, y: &MeasurementData, eta: f64, cfg: &SolverConfig) -> Result<RecoveryResult> {
    cfg.validate()?;
    if !(eta >= 0.0) || !eta.is_finite() {
        return Err(Error::InvalidArgument(format!("eta = {eta} must be finite and >= 0")));
    }
    let prob = Reduced::new(e, y, eta, cfg.feasibility_tol)?;
    let len = e.len();
    let zero = Complex64::new(0.0, 0.0);

    if norm2(&prob.target) <= prob.radius {
        let z = vec![zero; len];
        return finish(&prob, z, 0, true, eta, cfg);
    }

    let op_norm = prob.operator_norm()?;
    let tau = cfg.step_scale / op_norm;
    let sigma = cfg.step_scale / op_norm;

    let mut z = vec![zero; len];
    let mut zbar = z.clone();
    let mut p = vec![zero; prob.target.len()];
    let mut converged = false;
    let mut iterations = 0;
    let mut az_bar = prob.forward(&zbar)?;
    for it in 1..=cfg.max_iters {
        iterations = it;
        // Dual step: prox of sigma g^* with g the indicator of the ball.
        for (pk, a) in p.iter_mut().zip(&az_bar) {
            *pk += a * sigma;
        }
        let mut dev: Vec<Complex64> = p.iter().zip(&prob.target).map(|(q, t)| q / sigma - t).collect();
        let dn = norm2(&dev);
        if dn > prob.radius {
            let f = if dn > 0.0 { prob.radius / dn } else { 0.0 };
            dev.iter_mut().for_each(|v| *v *= f);
        }
        for ((pk, d), t) in p.iter_mut().zip(&dev).zip(&prob.target) {
            *pk -= (t + d) * sigma;
        }
        // Primal step.
        let atp = prob.adjoint(&p)?;
        let mut change = 0.0;
        let mut size = 0.0;
        for j in 0..len {
            let next = shrink(z[j] - atp[j] * tau, tau);
            zbar[j] = next * 2.0 - z[j];
            change += (next - z[j]).norm_sqr();
            size += next.norm_sqr();
            z[j] = next;
        }
        az_bar = prob.forward(&zbar)?;
        if change.sqrt() <= cfg.primal_tol * size.sqrt().max(1e-12) {
            let misfit = prob.misfit(&z)?;
            if misfit <= prob.radius + cfg.primal_tol.sqrt() * norm2(&prob.target) {
                converged = true;
                break;
            }
        }
    }
    finish(&prob, z, iterations, converged, eta, cfg)
}

fn finish(
    prob: &Reduced<'_>,
    z: Vec<Complex64>,
    iterations: usize,
    converged: bool,
    eta: f64,
    cfg: &SolverConfig,
) -> Result<RecoveryResult> {
    let mut best = prob.project(&z)?;
    let mut best_l1 = norm1(&best);

    let peak = z.iter().map(|v| v.norm()).fold(0.0, f64::max);
    if peak > 0.0 {
        let support: Vec<usize> = (0..z.len()).filter(|&j| z[j].norm() > 1e-6 * peak).collect();
        let rows = prob.target.len();
        let mut candidates = Vec::new();
        if !support.is_empty() && support.len() * 2 <= rows {
            if let Some(cand) = prob.refit(&support)? {
                candidates.push(if prob.radius > 0.0 { prob.project(&cand)? } else { cand });
            }
        }
        if prob.radius > 0.0 && !support.is_empty() && support.len() <= rows {
            candidates.extend(prob.polish(&support, &z)?);
        }
        for cand in candidates {
            let l1 = norm1(&cand);
            if prob.misfit(&cand)? <= prob.radius + 0.1 * cfg.feasibility_tol && l1 <= best_l1 {
                best = cand;
                best_l1 = l1;
            }
        }
    }

    let residual = prob.explicit_residual(&best)?;
    let feasible = residual <= eta + cfg.feasibility_tol;
    Ok(RecoveryResult {
        l1_value: best_l1,
        x_hat: ComplexVector::new(best)?,
        iterations,
        residual,
        converged: converged && feasible,
    })
}
