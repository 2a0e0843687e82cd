//! Arithmetic over Z/NZ and prime-length discrete Fourier kernels.
//!
//! The transform convention throughout the crate is
//! `w[r] = sum_j v[j] * e_N(r*j)` with `e_N(x) = exp(2 pi i x / N)`, i.e. the
//! positive-exponent DFT. Arbitrary (in particular prime) lengths are handled
//! by the chirp-z reduction onto a power-of-two circular convolution.

use std::f64::consts::PI;
use std::collections::HashMap;
use std::fmt;
use std::ops::Deref;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Deterministic Miller-Rabin, exact for every 64-bit input.
pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    const SMALL: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    for p in SMALL {
        if n % p == 0 {
            return n == p;
        }
    }
    let mut d = n - 1;
    let mut r = 0;
    while d % 2 == 0 {
        d /= 2;
        r += 1;
    }
    'witness: for a in SMALL {
        let mut x = pow_mod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..r {
            x = mul_mod(x, x, n);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

fn mul_mod(a: u64, b: u64, m: u64) -> u64 {
    ((a as u128 * b as u128) % m as u128) as u64
}

fn pow_mod(mut base: u64, mut exp: u64, m: u64) -> u64 {
    let mut acc = 1u64;
    base %= m;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = mul_mod(acc, base, m);
        }
        base = mul_mod(base, base, m);
        exp >>= 1;
    }
    acc
}

/// A prime modulus `N >= 3`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u64", into = "u64")]
pub struct PrimeModulus(u64);

impl PrimeModulus {
    pub fn new(n: u64) -> Result<Self> {
        if n >= 3 && is_prime(n) {
            Ok(Self(n))
        } else {
            Err(Error::InvalidModulus(n))
        }
    }

    pub fn get(self) -> u64 {
        self.0
    }

    pub fn as_usize(self) -> usize {
        self.0 as usize
    }
}

impl TryFrom<u64> for PrimeModulus {
    type Error = Error;
    fn try_from(n: u64) -> Result<Self> {
        Self::new(n)
    }
}

impl From<PrimeModulus> for u64 {
    fn from(m: PrimeModulus) -> u64 {
        m.0
    }
}

impl fmt::Display for PrimeModulus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// An element of Z/NZ stored as its canonical representative in `[0, N)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Residue {
    value: u64,
    modulus: PrimeModulus,
}

impl Residue {
    pub fn new(value: u64, modulus: PrimeModulus) -> Result<Self> {
        if value >= modulus.get() {
            return Err(Error::Index(format!(
                "residue {value} not in [0, {modulus})"
            )));
        }
        Ok(Self { value, modulus })
    }

    /// Reduces an arbitrary signed integer modulo `N`.
    pub fn reduce(x: i128, modulus: PrimeModulus) -> Self {
        let value = x.rem_euclid(modulus.get() as i128) as u64;
        Self { value, modulus }
    }

    pub fn value(self) -> u64 {
        self.value
    }

    pub fn modulus(self) -> PrimeModulus {
        self.modulus
    }

    pub fn add(self, other: Self) -> Self {
        Self::reduce(self.value as i128 + other.value as i128, self.modulus)
    }

    pub fn sub(self, other: Self) -> Self {
        Self::reduce(self.value as i128 - other.value as i128, self.modulus)
    }

    pub fn mul(self, other: Self) -> Self {
        Self {
            value: mul_mod(self.value, other.value, self.modulus.get()),
            modulus: self.modulus,
        }
    }
}

/// A non-empty vector of finite complex numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Complex64>", into = "Vec<Complex64>")]
pub struct ComplexVector(Vec<Complex64>);

impl ComplexVector {
    pub fn new(entries: Vec<Complex64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidLength("complex vector must be non-empty".into()));
        }
        if let Some(i) = entries.iter().position(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite entry at index {i}")));
        }
        Ok(Self(entries))
    }

    pub fn zeros(len: usize) -> Result<Self> {
        Self::new(vec![Complex64::new(0.0, 0.0); len])
    }

    pub fn into_inner(self) -> Vec<Complex64> {
        self.0
    }

    pub fn norm2(&self) -> f64 {
        norm2(&self.0)
    }
}

impl Deref for ComplexVector {
    type Target = [Complex64];
    fn deref(&self) -> &[Complex64] {
        &self.0
    }
}

impl TryFrom<Vec<Complex64>> for ComplexVector {
    type Error = Error;
    fn try_from(v: Vec<Complex64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ComplexVector> for Vec<Complex64> {
    fn from(v: ComplexVector) -> Self {
        v.0
    }
}

pub fn norm2(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn norm1(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm()).sum()
}

pub fn norm_inf(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// `e_N(x) = exp(2 pi i x / N)`, with `x` reduced modulo `N` before the
/// floating-point evaluation so that large arguments lose no phase accuracy.
pub fn eval_unit_root(x: i64, n: u64) -> Result<Complex64> {
    if n == 0 {
        return Err(Error::InvalidModulus(0));
    }
    let r = (x as i128).rem_euclid(n as i128) as u64;
    Ok(unit_root(r, n))
}

/// `e_N(r)` for an already-reduced `r`.
pub(crate) fn unit_root(r: u64, n: u64) -> Complex64 {
    Complex64::from_polar(1.0, 2.0 * PI * r as f64 / n as f64)
}

/// Precomputed chirp-z plan for one transform length. Immutable after
/// construction and safe to share across threads.
pub struct DftPlan {
    len: usize,
    chirp: Vec<Complex64>,
    kernel_hat: Vec<Complex64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for DftPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DftPlan")
            .field("len", &self.len)
            .field("padded_len", &self.kernel_hat.len())
            .finish()
    }
}

impl DftPlan {
    pub fn new(len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::InvalidLength("transform length must be positive".into()));
        }
        let padded = (2 * len - 1).next_power_of_two();
        let mut planner = FftPlanner::<f64>::new();
        let forward = planner.plan_fft_forward(padded);
        let inverse = planner.plan_fft_inverse(padded);

        // c_k = exp(i pi k^2 / N), with k^2 reduced mod 2N.
        let two_n = 2 * len as u128;
        let chirp: Vec<Complex64> = (0..len)
            .map(|k| {
                let q = (k as u128 * k as u128) % two_n;
                Complex64::from_polar(1.0, PI * q as f64 / len as f64)
            })
            .collect();

        let scale = 1.0 / padded as f64;
        let mut kernel = vec![Complex64::new(0.0, 0.0); padded];
        kernel[0] = chirp[0].conj() * scale;
        for k in 1..len {
            let c = chirp[k].conj() * scale;
            kernel[k] = c;
            kernel[padded - k] = c;
        }
        forward.process(&mut kernel);

        Ok(Self {
            len,
            chirp,
            kernel_hat: kernel,
            forward,
            inverse,
        })
    }

    /// Process-wide shared plan for `len`. Plans are immutable once built, so
    /// handing out clones of the same `Arc` is safe from any thread.
    pub fn shared(len: usize) -> Result<Arc<Self>> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<DftPlan>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        if let Some(p) = cache.lock().expect("plan cache poisoned").get(&len) {
            return Ok(Arc::clone(p));
        }
        let plan = Arc::new(Self::new(len)?);
        let mut guard = cache.lock().expect("plan cache poisoned");
        Ok(Arc::clone(guard.entry(len).or_insert(plan)))
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `w[r] = sum_j v[j] e_N(r j)`.
    pub fn dft(&self, v: &[Complex64]) -> Result<Vec<Complex64>> {
        self.check(v.len())?;
        let mut buf = vec![Complex64::new(0.0, 0.0); self.kernel_hat.len()];
        for ((b, x), c) in buf.iter_mut().zip(v).zip(&self.chirp) {
            *b = x * c;
        }
        self.forward.process(&mut buf);
        for (b, k) in buf.iter_mut().zip(&self.kernel_hat) {
            *b *= k;
        }
        self.inverse.process(&mut buf);
        Ok(buf
            .iter()
            .zip(&self.chirp)
            .map(|(b, c)| b * c)
            .collect())
    }

    /// Inverse of [`DftPlan::dft`]: `v[j] = (1/N) sum_r w[r] e_N(-r j)`.
    pub fn idft(&self, w: &[Complex64]) -> Result<Vec<Complex64>> {
        self.check(w.len())?;
        let conj: Vec<Complex64> = w.iter().map(|z| z.conj()).collect();
        let inv_n = 1.0 / self.len as f64;
        Ok(self
            .dft(&conj)?
            .into_iter()
            .map(|z| z.conj() * inv_n)
            .collect())
    }

    fn check(&self, got: usize) -> Result<()> {
        if got == 0 {
            return Err(Error::InvalidLength("empty input".into()));
        }
        if got != self.len {
            return Err(Error::Shape(format!(
                "plan length {} but input length {got}",
                self.len
            )));
        }
        Ok(())
    }
}

pub fn dft(v: &[Complex64]) -> Result<Vec<Complex64>> {
    DftPlan::shared(v.len())?.dft(v)
}

pub fn idft(w: &[Complex64]) -> Result<Vec<Complex64>> {
    DftPlan::shared(w.len())?.idft(w)
}

/// `c[r] = sum_t a[t] b[(r - t) mod N]`.
pub fn cyclic_convolve(a: &[Complex64], b: &[Complex64]) -> Result<Vec<Complex64>> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "cyclic convolution of lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let plan = DftPlan::shared(a.len())?;
    cyclic_convolve_with(&plan, a, b)
}

pub(crate) fn cyclic_convolve_with(
    plan: &DftPlan,
    a: &[Complex64],
    b: &[Complex64],
) -> Result<Vec<Complex64>> {
    let fa = plan.dft(a)?;
    let fb = plan.dft(b)?;
    let prod: Vec<Complex64> = fa.iter().zip(&fb).map(|(x, y)| x * y).collect();
    plan.idft(&prod)
}

/// Largest allowed distance between a convolved count and its rounding.
pub const COUNT_ROUNDING_TOL: f64 = 1e-6;

/// Cyclic convolution of nonnegative integer count vectors. The transform
/// result is rounded; if any entry sits farther than [`COUNT_ROUNDING_TOL`]
/// from an integer the exact quadratic-time sum is used instead.
pub fn cyclic_convolve_counts(a: &[u64], b: &[u64]) -> Result<Vec<u64>> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "cyclic convolution of lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let plan = DftPlan::shared(a.len())?;
    cyclic_convolve_counts_with(&plan, a, b)
}

pub(crate) fn cyclic_convolve_counts_with(plan: &DftPlan, a: &[u64], b: &[u64]) -> Result<Vec<u64>> {
    let to_c = |v: &[u64]| -> Vec<Complex64> {
        v.iter().map(|&x| Complex64::new(x as f64, 0.0)).collect()
    };
    let raw = cyclic_convolve_with(plan, &to_c(a), &to_c(b))?;
    let mut worst = 0.0f64;
    let rounded: Vec<u64> = raw
        .iter()
        .map(|z| {
            let r = z.re.round().max(0.0);
            worst = worst.max((z.re - r).abs()).max(z.im.abs());
            r as u64
        })
        .collect();
    let total = a.iter().sum::<u64>().checked_mul(b.iter().sum::<u64>());
    if worst <= COUNT_ROUNDING_TOL && total == Some(rounded.iter().sum::<u64>()) {
        return Ok(rounded);
    }
    exact_cyclic_convolve_counts(a, b)
}

fn exact_cyclic_convolve_counts(a: &[u64], b: &[u64]) -> Result<Vec<u64>> {
    let n = a.len();
    let mut out = vec![0u64; n];
    for (t, &x) in a.iter().enumerate().filter(|(_, &x)| x > 0) {
        for (u, &y) in b.iter().enumerate().filter(|(_, &y)| y > 0) {
            let r = (t + u) % n;
            out[r] = x
                .checked_mul(y)
                .and_then(|p| out[r].checked_add(p))
                .ok_or_else(|| Error::Capacity("count convolution overflows u64".into()))?;
        }
    }
    Ok(out)
}
