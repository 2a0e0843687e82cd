//! The Minkowski partial Fourier ensemble and its measurement operator.
//!
//! Rows of `A` are indexed by tuples `(i_1, ..., i_L)` of seed indices and
//! columns by residues `j` mod `N`; the entry is
//! `n^{-L/2} e_N((b_{i_1} + ... + b_{i_L}) j)`. Every row is therefore a
//! scaled row of the `N`-point DFT, and the whole operator is determined by
//! the multiplicity with which each frequency is hit. Inner products between
//! columns only depend on `u - t` and equal `n^{-L} S(u - t)^L` where
//! `S(d) = sum_i e_N(b_i d)` is the Dirichlet profile of the seeds.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fourier::{cyclic_convolve_counts_with, unit_root, ComplexVector, DftPlan, PrimeModulus};
use crate::kv::KvDocument;
use crate::rng::SplitMix64;

/// Default cap on `n^L` for explicit-row measurement mode.
pub const DEFAULT_EXPLICIT_CAP: u64 = 1 << 24;

/// Cap on `n^L` for anything that materializes dense rows (tests, oracles).
pub const DENSE_CAP: u64 = 1 << 14;

pub const ENSEMBLE_SCHEMA_VERSION: u32 = 1;

/// `S(d) = sum_i e_N(b_i d)` for `d = 0..N`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletProfile {
    values: Vec<Complex64>,
}

impl DirichletProfile {
    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    /// `S(d)` for an arbitrary signed shift.
    pub fn at(&self, d: i64) -> Complex64 {
        self.values[d.rem_euclid(self.values.len() as i64) as usize]
    }
}

/// Number of row tuples whose seed sum lands on each frequency.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiplicityVector {
    counts: Vec<u64>,
}

impl MultiplicityVector {
    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Frequencies with nonzero multiplicity, ascending.
    pub fn sampled_frequencies(&self) -> Vec<usize> {
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(r, _)| r)
            .collect()
    }
}

/// A set of distinct column indices, kept sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Support {
    indices: Vec<usize>,
}

impl Support {
    pub fn new(mut indices: Vec<usize>, modulus: PrimeModulus) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidSupport("support must be non-empty".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&t| t as u64 >= modulus.get()) {
            return Err(Error::Index(format!("support index {bad} not in [0, {modulus})")));
        }
        indices.sort_unstable();
        if let Some(w) = indices.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidSupport(format!("duplicate index {}", w[0])));
        }
        Ok(Self { indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, j: usize) -> bool {
        self.indices.binary_search(&j).is_ok()
    }

    /// Position of `j` inside the sorted support.
    pub fn position(&self, j: usize) -> Option<usize> {
        self.indices.binary_search(&j).ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasurementMode {
    Explicit,
    Reduced,
}

/// Measured values, either one per row tuple (lexicographic order) or one per
/// sampled frequency with the repetition folded into a `sqrt(mu)` weight.
#[derive(Debug, Clone, PartialEq)]
pub enum Samples {
    Explicit(Vec<Complex64>),
    Reduced {
        frequencies: Vec<usize>,
        values: Vec<Complex64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementData {
    samples: Samples,
    eta: f64,
    /// Squared norm of the explicit-space component orthogonal to the
    /// range of repeated rows, dropped when explicit data was folded into
    /// reduced form. Zero for data produced directly by `apply_forward`.
    offrange_energy: f64,
}

impl MeasurementData {
    pub fn explicit(values: Vec<Complex64>) -> Self {
        Self {
            samples: Samples::Explicit(values),
            eta: 0.0,
            offrange_energy: 0.0,
        }
    }

    pub fn reduced(frequencies: Vec<usize>, values: Vec<Complex64>, offrange_energy: f64) -> Result<Self> {
        if frequencies.len() != values.len() {
            return Err(Error::Shape(format!(
                "{} frequencies but {} values",
                frequencies.len(),
                values.len()
            )));
        }
        if !(offrange_energy >= 0.0) {
            return Err(Error::InvalidArgument("off-range energy must be >= 0".into()));
        }
        Ok(Self {
            samples: Samples::Reduced { frequencies, values },
            eta: 0.0,
            offrange_energy,
        })
    }

    pub fn with_eta(mut self, eta: f64) -> Self {
        self.eta = eta;
        self
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn mode(&self) -> MeasurementMode {
        match self.samples {
            Samples::Explicit(_) => MeasurementMode::Explicit,
            Samples::Reduced { .. } => MeasurementMode::Reduced,
        }
    }

    pub fn samples(&self) -> &Samples {
        &self.samples
    }

    pub fn values(&self) -> &[Complex64] {
        match &self.samples {
            Samples::Explicit(v) => v,
            Samples::Reduced { values, .. } => values,
        }
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        match &mut self.samples {
            Samples::Explicit(v) => v,
            Samples::Reduced { values, .. } => values,
        }
    }

    pub fn offrange_energy(&self) -> f64 {
        self.offrange_energy
    }

    /// Euclidean norm of the data as an element of the explicit space.
    pub fn norm(&self) -> f64 {
        let sq: f64 = self.values().iter().map(|z| z.norm_sqr()).sum();
        (sq + self.offrange_energy).sqrt()
    }
}

/// A drawn Minkowski partial Fourier ensemble together with its derived
/// profile, multiplicities and column inner-product kernel. Immutable.
#[derive(Debug, Clone)]
pub struct MinkowskiEnsemble {
    modulus: PrimeModulus,
    order: u32,
    seeds: Vec<u64>,
    rng_seed: u64,
    plan: Arc<DftPlan>,
    profile: DirichletProfile,
    multiplicity: MultiplicityVector,
    /// `kernel[d] = <a_t, a_{t+d}> = n^{-L} S(d)^L`.
    kernel: Vec<Complex64>,
    /// `(r, sqrt(mu[r]) n^{-L/2})` over the sampled frequencies.
    weights: Vec<(usize, f64)>,
}

impl MinkowskiEnsemble {
    /// Draws `n` i.i.d. uniform seeds in `[0, N)` from the stream `rng_seed`.
    pub fn sample(modulus: u64, n: usize, order: u32, rng_seed: u64) -> Result<Self> {
        let m = PrimeModulus::new(modulus)?;
        let mut rng = SplitMix64::new(rng_seed);
        let seeds = (0..n).map(|_| rng.below(m.get())).collect();
        Self::from_seeds(modulus, order, seeds, rng_seed)
    }

    pub fn from_seeds(modulus: u64, order: u32, seeds: Vec<u64>, rng_seed: u64) -> Result<Self> {
        let m = PrimeModulus::new(modulus)?;
        if seeds.is_empty() {
            return Err(Error::InvalidArgument("need at least one seed".into()));
        }
        if order == 0 {
            return Err(Error::InvalidArgument("Minkowski order L must be >= 1".into()));
        }
        if let Some(&bad) = seeds.iter().find(|&&b| b >= m.get()) {
            return Err(Error::Index(format!("seed {bad} not in [0, {m})")));
        }
        let len = m.as_usize();
        let plan = DftPlan::shared(len)?;

        let mut seed_counts = vec![0u64; len];
        for &b in &seeds {
            seed_counts[b as usize] += 1;
        }

        let n = seeds.len() as f64;
        let as_c: Vec<Complex64> = seed_counts.iter().map(|&c| Complex64::new(c as f64, 0.0)).collect();
        let mut values = plan.dft(&as_c)?;
        values[0] = Complex64::new(n, 0.0);
        for d in 1..=(len - 1) / 2 {
            values[len - d] = values[d].conj();
        }
        let profile = DirichletProfile { values };

        let mut counts = seed_counts.clone();
        for _ in 1..order {
            counts = cyclic_convolve_counts_with(&plan, &counts, &seed_counts)?;
        }
        let multiplicity = MultiplicityVector { counts };

        let scale = n.powi(order as i32);
        let mut kernel: Vec<Complex64> = profile
            .values
            .iter()
            .map(|s| s.powi(order as i32) / scale)
            .collect();
        kernel[0] = Complex64::new(1.0, 0.0);

        let row_scale = n.powf(-(order as f64) / 2.0);
        let weights = multiplicity
            .counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(r, &c)| (r, (c as f64).sqrt() * row_scale))
            .collect();

        Ok(Self {
            modulus: m,
            order,
            seeds,
            rng_seed,
            plan,
            profile,
            multiplicity,
            kernel,
            weights,
        })
    }

    pub fn modulus(&self) -> PrimeModulus {
        self.modulus
    }

    /// `N` as an index bound.
    pub fn len(&self) -> usize {
        self.modulus.as_usize()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn num_seeds(&self) -> usize {
        self.seeds.len()
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn seeds(&self) -> &[u64] {
        &self.seeds
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn plan(&self) -> &DftPlan {
        &self.plan
    }

    /// `m = n^L`, or `None` if it overflows 64 bits.
    pub fn num_rows(&self) -> Option<u64> {
        (self.seeds.len() as u64).checked_pow(self.order)
    }

    /// Entropy of the seed tuple in bits, `n log2 N`.
    pub fn entropy_bits(&self) -> f64 {
        self.seeds.len() as f64 * (self.modulus.get() as f64).log2()
    }

    pub fn dirichlet_profile(&self) -> &DirichletProfile {
        &self.profile
    }

    pub fn multiplicity_vector(&self) -> &MultiplicityVector {
        &self.multiplicity
    }

    /// Column inner products `<a_t, a_{t+d}>` indexed by `d mod N`.
    pub fn gram_kernel(&self) -> &[Complex64] {
        &self.kernel
    }

    #[inline]
    pub(crate) fn kernel_at(&self, d: i64) -> Complex64 {
        self.kernel[d.rem_euclid(self.kernel.len() as i64) as usize]
    }

    /// Row scale `n^{-L/2}`.
    pub fn row_scale(&self) -> f64 {
        (self.seeds.len() as f64).powf(-(self.order as f64) / 2.0)
    }

    /// Per-frequency weights `sqrt(mu[r]) n^{-L/2}` over the sampled frequencies.
    pub fn reduced_weights(&self) -> &[(usize, f64)] {
        &self.weights
    }

    /// Entry of `A` at row tuple `row` (0-based seed indices) and column `col`.
    pub fn entry(&self, row: &[usize], col: usize) -> Result<Complex64> {
        if row.len() != self.order as usize {
            return Err(Error::Index(format!(
                "row tuple has length {} but L = {}",
                row.len(),
                self.order
            )));
        }
        if let Some(&bad) = row.iter().find(|&&i| i >= self.seeds.len()) {
            return Err(Error::Index(format!("row index {bad} not in [0, {})", self.seeds.len())));
        }
        if col >= self.len() {
            return Err(Error::Index(format!("column {col} not in [0, {})", self.len())));
        }
        let n = self.modulus.get();
        let freq = row.iter().map(|&i| self.seeds[i]).fold(0u64, |acc, b| (acc + b) % n);
        let phase = (freq as u128 * col as u128 % n as u128) as u64;
        Ok(unit_root(phase, n) * self.row_scale())
    }

    /// Frequency `b_{i_1} + ... + b_{i_L} mod N` of every row, in
    /// lexicographic row order.
    pub fn row_frequencies(&self, cap: u64) -> Result<Vec<usize>> {
        let m = self.checked_rows(cap)?;
        let n = self.len();
        let mut freqs = Vec::with_capacity(m as usize);
        freqs.push(0usize);
        for _ in 0..self.order {
            let mut next = Vec::with_capacity(freqs.len() * self.seeds.len());
            for &f in &freqs {
                for &b in &self.seeds {
                    next.push((f + b as usize) % n);
                }
            }
            freqs = next;
        }
        Ok(freqs)
    }

    fn checked_rows(&self, cap: u64) -> Result<u64> {
        match self.num_rows() {
            Some(m) if m <= cap => Ok(m),
            _ => Err(Error::Capacity(format!(
                "n^L = {}^{} exceeds the explicit-row cap {cap}; use reduced mode",
                self.seeds.len(),
                self.order
            ))),
        }
    }

    fn check_signal(&self, z: &[Complex64]) -> Result<()> {
        if z.len() != self.len() {
            return Err(Error::Shape(format!("signal length {} but N = {}", z.len(), self.len())));
        }
        Ok(())
    }

    /// `A z` in the requested mode, explicit mode capped at [`DEFAULT_EXPLICIT_CAP`].
    pub fn apply_forward(&self, z: &[Complex64], mode: MeasurementMode) -> Result<MeasurementData> {
        self.apply_forward_capped(z, mode, DEFAULT_EXPLICIT_CAP)
    }

    pub fn apply_forward_capped(
        &self,
        z: &[Complex64],
        mode: MeasurementMode,
        cap: u64,
    ) -> Result<MeasurementData> {
        self.check_signal(z)?;
        match mode {
            MeasurementMode::Explicit => {
                let freqs = self.row_frequencies(cap)?;
                let w = self.plan.dft(z)?;
                let scale = self.row_scale();
                Ok(MeasurementData::explicit(freqs.iter().map(|&r| w[r] * scale).collect()))
            }
            MeasurementMode::Reduced => {
                let (frequencies, values) = self.forward_reduced(z)?;
                MeasurementData::reduced(frequencies, values, 0.0)
            }
        }
    }

    /// Reduced-mode forward map returning `(frequencies, weighted samples)`.
    pub fn forward_reduced(&self, z: &[Complex64]) -> Result<(Vec<usize>, Vec<Complex64>)> {
        self.check_signal(z)?;
        let w = self.plan.dft(z)?;
        Ok(self
            .weights
            .iter()
            .map(|&(r, d)| (r, w[r] * d))
            .unzip())
    }

    /// `A^* y`.
    pub fn apply_adjoint(&self, y: &MeasurementData) -> Result<Vec<Complex64>> {
        let n = self.len();
        let mut acc = vec![Complex64::new(0.0, 0.0); n];
        match y.samples() {
            Samples::Explicit(values) => {
                let m = self.checked_rows(DEFAULT_EXPLICIT_CAP)?;
                if values.len() as u64 != m {
                    return Err(Error::Shape(format!(
                        "explicit data has {} samples but n^L = {m}",
                        values.len()
                    )));
                }
                let freqs = self.row_frequencies(DEFAULT_EXPLICIT_CAP)?;
                let scale = self.row_scale();
                for (&r, v) in freqs.iter().zip(values) {
                    acc[r] += v * scale;
                }
            }
            Samples::Reduced { frequencies, values } => {
                let weights = &self.weights;
                if frequencies.len() != weights.len()
                    || frequencies.iter().zip(weights).any(|(&f, &(r, _))| f != r)
                {
                    return Err(Error::Shape(
                        "reduced data frequencies do not match this ensemble".into(),
                    ));
                }
                return self.adjoint_reduced(values);
            }
        }
        let n_f = n as f64;
        Ok(self.plan.idft(&acc)?.into_iter().map(|z| z * n_f).collect())
    }

    /// Reduced-mode adjoint for values aligned with `reduced_weights()`.
    pub fn adjoint_reduced(&self, values: &[Complex64]) -> Result<Vec<Complex64>> {
        let weights = &self.weights;
        if values.len() != weights.len() {
            return Err(Error::Shape(format!(
                "{} reduced values but {} sampled frequencies",
                values.len(),
                weights.len()
            )));
        }
        let n = self.len();
        let mut acc = vec![Complex64::new(0.0, 0.0); n];
        for (&(r, d), v) in weights.iter().zip(values) {
            acc[r] = v * d;
        }
        let n_f = n as f64;
        Ok(self.plan.idft(&acc)?.into_iter().map(|z| z * n_f).collect())
    }

    /// Folds explicit data onto the sampled frequencies. Each group of rows
    /// sharing a frequency is replaced by `sum(y_I) / sqrt(mu_r)`; the energy
    /// orthogonal to the repeated-row subspace is kept in `offrange_energy`,
    /// so `||A z - y||^2 = ||A_red z - y_red||^2 + offrange_energy` for all `z`.
    pub fn fold_to_reduced(&self, y: &MeasurementData) -> Result<MeasurementData> {
        let values = match y.samples() {
            Samples::Reduced { .. } => return Ok(y.clone()),
            Samples::Explicit(v) => v,
        };
        let m = self.checked_rows(DEFAULT_EXPLICIT_CAP)?;
        if values.len() as u64 != m {
            return Err(Error::Shape(format!(
                "explicit data has {} samples but n^L = {m}",
                values.len()
            )));
        }
        let freqs = self.row_frequencies(DEFAULT_EXPLICIT_CAP)?;
        let counts = self.multiplicity.counts();
        let mut sums = vec![Complex64::new(0.0, 0.0); self.len()];
        for (&r, v) in freqs.iter().zip(values) {
            sums[r] += v;
        }
        let mut offrange = 0.0;
        for (&r, v) in freqs.iter().zip(values) {
            let mean = sums[r] / counts[r] as f64;
            offrange += (v - mean).norm_sqr();
        }
        let (frequencies, reduced): (Vec<usize>, Vec<Complex64>) = self
            .multiplicity
            .sampled_frequencies()
            .into_iter()
            .map(|r| (r, sums[r] / (counts[r] as f64).sqrt()))
            .unzip();
        Ok(MeasurementData::reduced(frequencies, reduced, offrange)?.with_eta(y.eta()))
    }

    /// `A_T^* A_T` with `G[t, u] = n^{-L} S(u - t)^L`.
    pub fn gram_on_support(&self, support: &Support) -> DMatrix<Complex64> {
        let idx = support.indices();
        let s = idx.len();
        DMatrix::from_fn(s, s, |a, b| {
            if a == b {
                Complex64::new(1.0, 0.0)
            } else {
                self.kernel_at(idx[b] as i64 - idx[a] as i64)
            }
        })
    }

    /// The row `a_u^* A_T`, entry `t` equal to `n^{-L} S(t - u)^L`.
    pub fn cross_gram_row(&self, u: usize, support: &Support) -> Result<Vec<Complex64>> {
        if u >= self.len() {
            return Err(Error::Index(format!("column {u} not in [0, {})", self.len())));
        }
        if support.contains(u) {
            return Err(Error::InvalidArgument(format!("column {u} lies in the support")));
        }
        Ok(support
            .indices()
            .iter()
            .map(|&t| self.kernel_at(t as i64 - u as i64))
            .collect())
    }

    /// `max_{t != u} |<a_t, a_u>| = n^{-L} max_{d != 0} |S(d)|^L`.
    pub fn coherence(&self) -> f64 {
        let n = self.seeds.len() as f64;
        let peak = self.profile.values[1..]
            .iter()
            .map(|s| s.norm())
            .fold(0.0, f64::max);
        (peak / n).powi(self.order as i32)
    }

    /// Versioned key-value record; seeds are stored explicitly.
    pub fn to_record(&self) -> String {
        let mut doc = KvDocument::new();
        doc.set("schema_version", ENSEMBLE_SCHEMA_VERSION);
        doc.set("N", self.modulus.get());
        doc.set("n", self.seeds.len());
        doc.set("L", self.order);
        doc.set("rng_seed", self.rng_seed);
        doc.set_list("seeds", &self.seeds);
        format!("# Minkowski partial Fourier ensemble\n{}", doc.render())
    }

    pub fn from_record(text: &str) -> Result<Self> {
        let doc = KvDocument::parse(text)?;
        let version: u32 = doc.parse_value("schema_version")?;
        if version != ENSEMBLE_SCHEMA_VERSION {
            return Err(Error::Parse(format!("unsupported ensemble schema_version {version}")));
        }
        let modulus: u64 = doc.parse_value("N")?;
        let n: usize = doc.parse_value("n")?;
        let order: u32 = doc.parse_value("L")?;
        let rng_seed: u64 = doc.parse_value("rng_seed")?;
        let seeds: Vec<u64> = doc.parse_list("seeds")?;
        if seeds.len() != n {
            return Err(Error::Parse(format!("n = {n} but {} seeds listed", seeds.len())));
        }
        Self::from_seeds(modulus, order, seeds, rng_seed)
    }
}

/// Wraps a signal as a validated [`ComplexVector`] of the ensemble's length.
pub fn signal(e: &MinkowskiEnsemble, entries: Vec<Complex64>) -> Result<ComplexVector> {
    e.check_signal(&entries)?;
    ComplexVector::new(entries)
}
