//! Approximate dual certificates for exact support recovery.
//!
//! For a support `T` and sign pattern `p` the certificate is
//! `v = A_T (A_T^* A_T)^{-1} p` and `u = A^* v`. Recovery of every signal with
//! support `T` and phases `p` is guaranteed when `||A_T^* A_T - I|| <= 1/2`,
//! `||v||_2 <= sqrt(2s)` and `max_{j not in T} |u_j| <= 1/2`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fourier::norm2;
use crate::operator::{MinkowskiEnsemble, Support};

/// Largest support handled by the dense Hermitian eigensolver.
pub const DENSE_EIGEN_MAX: usize = 512;
pub const HERMITIAN_TOL: f64 = 1e-10;
pub const POWER_TOL: f64 = 1e-10;
pub const POWER_MAX_ITERS: usize = 10_000;
pub const RECONSTRUCTION_TOL: f64 = 1e-8;
pub const UNIMODULAR_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CertificateMethod {
    Direct,
    /// Partial sum of the first `terms` Neumann terms.
    Neumann(usize),
}

/// Number of Neumann terms `ceil(2 ln N)` used in the recovery argument.
pub fn default_neumann_terms(modulus: u64) -> usize {
    (2.0 * (modulus as f64).ln()).ceil() as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    /// `c` with `v = A_T c`.
    pub coefficients: Vec<Complex64>,
    pub v_norm: f64,
    pub gram_norm: f64,
    pub neumann_terms_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub s: usize,
    pub gram_norm: f64,
    /// `None` when conditioning failed and the certificate was not built.
    pub v_norm: Option<f64>,
    pub u_inf_offsupport: Option<f64>,
    /// `||u_T - p||_inf`.
    pub reconstruction_error: Option<f64>,
    pub passes_conditioning: bool,
    pub passes_v: bool,
    pub passes_u: bool,
    pub neumann_terms_used: usize,
    pub sign_pattern: Vec<Complex64>,
}

impl CertificateReport {
    pub fn passes_all(&self) -> bool {
        self.passes_conditioning && self.passes_v && self.passes_u
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

fn check_hermitian(g: &DMatrix<Complex64>) -> Result<()> {
    if !g.is_square() {
        return Err(Error::InvalidMatrix(format!("matrix is {}x{}", g.nrows(), g.ncols())));
    }
    let s = g.nrows();
    for a in 0..s {
        for b in a..s {
            let d = (g[(a, b)] - g[(b, a)].conj()).norm();
            if !(d <= HERMITIAN_TOL) {
                return Err(Error::InvalidMatrix(format!(
                    "not Hermitian: |G[{a},{b}] - conj G[{b},{a}]| = {d:e}"
                )));
            }
        }
    }
    Ok(())
}

/// `||G - I||_{2->2}` for a Hermitian `G`.
pub fn gram_conditioning_norm(g: &DMatrix<Complex64>) -> Result<f64> {
    check_hermitian(g)?;
    if g.nrows() <= DENSE_EIGEN_MAX {
        Ok(dense_deviation_norm(g))
    } else {
        power_deviation_norm(g)
    }
}

fn deviation(g: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let s = g.nrows();
    let mut h = g.clone();
    for a in 0..s {
        h[(a, a)] -= Complex64::new(1.0, 0.0);
    }
    // Symmetrize away rounding so the eigensolver sees an exactly Hermitian input.
    (&h + h.adjoint()) * Complex64::new(0.5, 0.0)
}

fn dense_deviation_norm(g: &DMatrix<Complex64>) -> f64 {
    if g.nrows() == 0 {
        return 0.0;
    }
    let h = deviation(g);
    h.symmetric_eigenvalues().iter().fold(0.0f64, |m, l| m.max(l.abs()))
}

/// Power iteration on `(G - I)^2`; exposed so both paths can be compared.
pub fn power_deviation_norm(g: &DMatrix<Complex64>) -> Result<f64> {
    check_hermitian(g)?;
    let s = g.nrows();
    if s == 0 {
        return Ok(0.0);
    }
    let h = deviation(g);
    // Deterministic start with no special alignment to the Fourier structure.
    let mut x = DVector::from_fn(s, |i, _| {
        let t = i as f64 + 1.0;
        Complex64::new(1.0 + 0.1 * (t * 0.7).sin(), 0.1 * (t * 1.3).cos())
    });
    x /= Complex64::new(x.norm(), 0.0);
    let mut estimate = 0.0;
    for _ in 0..POWER_MAX_ITERS {
        let hx = &h * &x;
        let next = hx.norm();
        if next == 0.0 {
            return Ok(0.0);
        }
        let h2x = &h * &hx;
        let n2 = h2x.norm();
        if n2 == 0.0 {
            return Ok(next);
        }
        // ||H x|| for unit x is the Rayleigh estimate sqrt(x* H^2 x).
        let converged = (next - estimate).abs() <= POWER_TOL * next.max(1e-300);
        estimate = next;
        if converged {
            return Ok(estimate);
        }
        x = h2x / Complex64::new(n2, 0.0);
    }
    Ok(estimate)
}

fn check_sign_pattern(support: &Support, sign: &[Complex64]) -> Result<()> {
    if sign.len() != support.len() {
        return Err(Error::Shape(format!(
            "sign pattern has length {} but |T| = {}",
            sign.len(),
            support.len()
        )));
    }
    if let Some(p) = sign.iter().find(|p| !((p.norm() - 1.0).abs() <= UNIMODULAR_TOL)) {
        return Err(Error::InvalidArgument(format!("sign entry {p} is not unimodular")));
    }
    Ok(())
}

/// Builds `c = (A_T^* A_T)^{-1} p` by a dense Cholesky solve or a truncated
/// Neumann series.
pub fn build_certificate(
    e: &MinkowskiEnsemble,
    support: &Support,
    sign: &[Complex64],
    method: CertificateMethod,
) -> Result<Certificate> {
    check_sign_pattern(support, sign)?;
    let g = e.gram_on_support(support);
    let gram_norm = gram_conditioning_norm(&g)?;
    if !(gram_norm < 1.0) {
        return Err(Error::CertificateInfeasible(gram_norm));
    }
    let p = DVector::from_column_slice(sign);
    let (c, terms) = match method {
        CertificateMethod::Direct => {
            let chol = g
                .clone()
                .cholesky()
                .ok_or_else(|| Error::Numerical("Gram matrix is not positive definite".into()))?;
            (chol.solve(&p), 0)
        }
        CertificateMethod::Neumann(terms) => {
            let mut h = -g.clone();
            for a in 0..h.nrows() {
                h[(a, a)] += Complex64::new(1.0, 0.0);
            }
            let mut term = p.clone();
            let mut sum = DVector::zeros(p.len());
            for _ in 0..terms {
                sum += &term;
                term = &h * term;
            }
            (sum, terms)
        }
    };
    let v_sq = (c.adjoint() * &g * &c)[(0, 0)].re;
    Ok(Certificate {
        coefficients: c.iter().copied().collect(),
        v_norm: v_sq.max(0.0).sqrt(),
        gram_norm,
        neumann_terms_used: terms,
    })
}

/// `u_j = sum_t c_t <a_j, a_t>` for every column `j`.
pub fn certificate_vector(e: &MinkowskiEnsemble, support: &Support, c: &[Complex64]) -> Result<Vec<Complex64>> {
    if c.len() != support.len() {
        return Err(Error::Shape(format!("{} coefficients but |T| = {}", c.len(), support.len())));
    }
    let kernel = e.gram_kernel();
    let n = kernel.len();
    Ok((0..n)
        .map(|j| {
            support
                .indices()
                .iter()
                .zip(c)
                .map(|(&t, ct)| ct * kernel[(t + n - j) % n])
                .sum()
        })
        .collect())
}

/// `max_{j not in T} |u_j|`.
pub fn offsupport_sup(e: &MinkowskiEnsemble, support: &Support, c: &[Complex64]) -> Result<f64> {
    let u = certificate_vector(e, support, c)?;
    Ok(u.iter()
        .enumerate()
        .filter(|(j, _)| !support.contains(*j))
        .map(|(_, v)| v.norm())
        .fold(0.0, f64::max))
}

/// Checks the three certificate conditions with the direct solve.
pub fn certify(e: &MinkowskiEnsemble, support: &Support, sign: &[Complex64]) -> Result<CertificateReport> {
    certify_with(e, support, sign, CertificateMethod::Direct)
}

pub fn certify_with(
    e: &MinkowskiEnsemble,
    support: &Support,
    sign: &[Complex64],
    method: CertificateMethod,
) -> Result<CertificateReport> {
    check_sign_pattern(support, sign)?;
    let s = support.len();
    let mut report = CertificateReport {
        s,
        gram_norm: 0.0,
        v_norm: None,
        u_inf_offsupport: None,
        reconstruction_error: None,
        passes_conditioning: false,
        passes_v: false,
        passes_u: false,
        neumann_terms_used: 0,
        sign_pattern: sign.to_vec(),
    };
    let cert = match build_certificate(e, support, sign, method) {
        Ok(c) => c,
        Err(Error::CertificateInfeasible(g)) => {
            report.gram_norm = g;
            return Ok(report);
        }
        Err(other) => return Err(other),
    };
    let u = certificate_vector(e, support, &cert.coefficients)?;
    let mut u_off = 0.0f64;
    let mut recon = 0.0f64;
    for (j, uj) in u.iter().enumerate() {
        match support.position(j) {
            Some(k) => recon = recon.max((uj - sign[k]).norm()),
            None => u_off = u_off.max(uj.norm()),
        }
    }
    if method == CertificateMethod::Direct && !(recon <= RECONSTRUCTION_TOL) {
        return Err(Error::Numerical(format!("certificate reconstruction error {recon:e}")));
    }
    report.gram_norm = cert.gram_norm;
    report.v_norm = Some(cert.v_norm);
    report.u_inf_offsupport = Some(u_off);
    report.reconstruction_error = Some(recon);
    report.passes_conditioning = cert.gram_norm <= 0.5;
    report.passes_v = cert.v_norm <= (2.0 * s as f64).sqrt();
    report.passes_u = u_off <= 0.5;
    report.neumann_terms_used = cert.neumann_terms_used;
    Ok(report)
}

/// `||c_direct - c_neumann||_2`.
pub fn neumann_gap(e: &MinkowskiEnsemble, support: &Support, sign: &[Complex64], terms: usize) -> Result<f64> {
    let direct = build_certificate(e, support, sign, CertificateMethod::Direct)?;
    let series = build_certificate(e, support, sign, CertificateMethod::Neumann(terms))?;
    let diff: Vec<Complex64> = direct
        .coefficients
        .iter()
        .zip(&series.coefficients)
        .map(|(a, b)| a - b)
        .collect();
    Ok(norm2(&diff))
}
