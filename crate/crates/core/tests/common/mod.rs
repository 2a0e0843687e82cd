//! Dense reference computations built directly from the definitions, sharing
//! no code with the library beyond the PRNG and the complex type.

#![allow(dead_code)]

use minkowski_cs::num_complex::Complex64;
use minkowski_cs::SplitMix64;

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// `exp(2 pi i k / n)` for an already reduced `k`.
pub fn root(k: u64, n: u64) -> Complex64 {
    let theta = 2.0 * std::f64::consts::PI * (k % n) as f64 / n as f64;
    c(theta.cos(), theta.sin())
}

pub fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm(a: &[Complex64]) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

pub fn diff_norm(a: &[Complex64], b: &[Complex64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt()
}

/// `||a - b|| / max(||b||, floor)`.
pub fn rel_err(a: &[Complex64], b: &[Complex64]) -> f64 {
    diff_norm(a, b) / norm(b).max(1e-300)
}

pub fn random_vector(rng: &mut SplitMix64, len: usize) -> Vec<Complex64> {
    (0..len).map(|_| c(rng.unit_f64() * 2.0 - 1.0, rng.unit_f64() * 2.0 - 1.0)).collect()
}

/// `x_j = sum_r w_r e_N(r j)` by direct summation.
pub fn direct_dft(v: &[Complex64]) -> Vec<Complex64> {
    let n = v.len() as u64;
    (0..n)
        .map(|r| {
            v.iter()
                .enumerate()
                .map(|(j, x)| x * root(r * j as u64 % n, n))
                .sum()
        })
        .collect()
}

/// The full sensing matrix, rows in lexicographic tuple order with the first
/// seed index most significant.
pub struct Dense {
    pub modulus: u64,
    pub rows: Vec<Vec<Complex64>>,
    pub freqs: Vec<u64>,
    pub tuples: Vec<Vec<usize>>,
}

impl Dense {
    pub fn new(modulus: u64, seeds: &[u64], order: u32) -> Self {
        let n = seeds.len();
        let m = n.pow(order);
        let scale = (n as f64).powf(-(order as f64) / 2.0);
        let mut rows = Vec::with_capacity(m);
        let mut freqs = Vec::with_capacity(m);
        let mut tuples = Vec::with_capacity(m);
        for code in 0..m {
            let mut tuple = vec![0usize; order as usize];
            let mut rest = code;
            for slot in tuple.iter_mut().rev() {
                *slot = rest % n;
                rest /= n;
            }
            let f = tuple.iter().map(|&i| seeds[i]).sum::<u64>() % modulus;
            rows.push((0..modulus).map(|j| root(f * j % modulus, modulus) * scale).collect());
            freqs.push(f);
            tuples.push(tuple);
        }
        Self {
            modulus,
            rows,
            freqs,
            tuples,
        }
    }

    pub fn apply(&self, z: &[Complex64]) -> Vec<Complex64> {
        self.rows.iter().map(|r| r.iter().zip(z).map(|(a, b)| a * b).sum()).collect()
    }

    pub fn adjoint(&self, y: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![c(0.0, 0.0); self.modulus as usize];
        for (r, v) in self.rows.iter().zip(y) {
            for (o, a) in out.iter_mut().zip(r) {
                *o += a.conj() * v;
            }
        }
        out
    }

    pub fn column(&self, j: usize) -> Vec<Complex64> {
        self.rows.iter().map(|r| r[j]).collect()
    }

    /// Rows merged by frequency: `(sum of values in the group) / sqrt(group size)`,
    /// listed by ascending frequency.
    pub fn merge(&self, values: &[Complex64]) -> (Vec<usize>, Vec<Complex64>) {
        let mut sums = vec![c(0.0, 0.0); self.modulus as usize];
        let mut counts = vec![0usize; self.modulus as usize];
        for (&f, v) in self.freqs.iter().zip(values) {
            sums[f as usize] += v;
            counts[f as usize] += 1;
        }
        (0..self.modulus as usize)
            .filter(|&r| counts[r] > 0)
            .map(|r| (r, sums[r] / (counts[r] as f64).sqrt()))
            .unzip()
    }

    pub fn gram(&self, support: &[usize]) -> Vec<Vec<Complex64>> {
        let cols: Vec<Vec<Complex64>> = support.iter().map(|&j| self.column(j)).collect();
        cols.iter().map(|a| cols.iter().map(|b| inner(a, b)).collect()).collect()
    }

    pub fn coherence(&self) -> f64 {
        let cols: Vec<Vec<Complex64>> = (0..self.modulus as usize).map(|j| self.column(j)).collect();
        let mut best = 0.0f64;
        for a in 0..cols.len() {
            for b in a + 1..cols.len() {
                best = best.max(inner(&cols[a], &cols[b]).norm());
            }
        }
        best
    }
}

/// Eigenvalues of a Hermitian matrix through its real symmetric embedding
/// `[[Re, -Im], [Im, Re]]` and cyclic Jacobi rotations. Each eigenvalue of
/// the input appears twice in the embedding.
pub fn hermitian_eigenvalues(h: &[Vec<Complex64>]) -> Vec<f64> {
    let s = h.len();
    let d = 2 * s;
    let mut a = vec![vec![0.0f64; d]; d];
    for i in 0..s {
        for j in 0..s {
            // Symmetrize to remove rounding asymmetry.
            let v = (h[i][j] + h[j][i].conj()) * 0.5;
            a[i][j] = v.re;
            a[i + s][j + s] = v.re;
            a[i][j + s] = -v.im;
            a[i + s][j] = v.im;
        }
    }
    for _sweep in 0..100 {
        let off: f64 = (0..d)
            .flat_map(|i| (0..d).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let cs = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * cs;
                for k in 0..d {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = cs * akp - sn * akq;
                    a[k][q] = sn * akp + cs * akq;
                }
                for k in 0..d {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = cs * apk - sn * aqk;
                    a[q][k] = sn * apk + cs * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..d).map(|i| a[i][i]).collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn spectral_norm_minus_identity(g: &[Vec<Complex64>]) -> f64 {
    let h: Vec<Vec<Complex64>> = g
        .iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .enumerate()
                .map(|(j, v)| if i == j { v - 1.0 } else { *v })
                .collect()
        })
        .collect();
    hermitian_eigenvalues(&h).iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
pub fn complex_solve(a: &[Vec<Complex64>], b: &[Complex64]) -> Vec<Complex64> {
    let n = b.len();
    let mut m: Vec<Vec<Complex64>> = a.iter().zip(b).map(|(r, v)| {
        let mut row = r.clone();
        row.push(*v);
        row
    }).collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| m[x][col].norm().total_cmp(&m[y][col].norm())).unwrap();
        m.swap(col, piv);
        for r in col + 1..n {
            let f = m[r][col] / m[col][col];
            for k in col..=n {
                let t = m[col][k];
                m[r][k] -= f * t;
            }
        }
    }
    let mut x = vec![c(0.0, 0.0); n];
    for r in (0..n).rev() {
        let mut acc = m[r][n];
        for k in r + 1..n {
            acc -= m[r][k] * x[k];
        }
        x[r] = acc / m[r][r];
    }
    x
}

pub struct DenseCertificate {
    pub gram_norm: f64,
    pub coefficients: Vec<Complex64>,
    pub v_norm: f64,
    pub u: Vec<Complex64>,
    pub u_inf_offsupport: f64,
}

impl DenseCertificate {
    pub fn passes(&self, s: usize) -> (bool, bool, bool) {
        (
            self.gram_norm <= 0.5,
            self.v_norm <= (2.0 * s as f64).sqrt(),
            self.u_inf_offsupport <= 0.5,
        )
    }
}

/// `v = A_T (A_T^* A_T)^{-1} p`, `u = A^* v`, all through explicit matrices.
pub fn dense_certificate(a: &Dense, support: &[usize], sign: &[Complex64]) -> DenseCertificate {
    let g = a.gram(support);
    let gram_norm = spectral_norm_minus_identity(&g);
    let coefficients = complex_solve(&g, sign);
    let mut v = vec![c(0.0, 0.0); a.rows.len()];
    for (&j, cj) in support.iter().zip(&coefficients) {
        for (vi, row) in v.iter_mut().zip(&a.rows) {
            *vi += row[j] * cj;
        }
    }
    let u = a.adjoint(&v);
    let u_inf_offsupport = (0..u.len())
        .filter(|j| !support.contains(j))
        .map(|j| u[j].norm())
        .fold(0.0, f64::max);
    DenseCertificate {
        gram_norm,
        coefficients,
        v_norm: norm(&v),
        u,
        u_inf_offsupport,
    }
}

/// A small basis pursuit denoising instance for the convex-programming oracle.
#[derive(Debug, Clone)]
pub struct ToyInstance {
    pub modulus: u64,
    pub order: u32,
    pub seeds: Vec<u64>,
    pub x: Vec<Complex64>,
    pub noise: Vec<Complex64>,
    pub eta: f64,
}

/// Twenty instances with `N <= 64` and `n^L <= 256`, half noiseless.
pub fn toy_instances() -> Vec<ToyInstance> {
    // (N, n, L, s, eta)
    let specs: [(u64, usize, u32, usize, f64); 20] = [
        (31, 8, 2, 3, 0.0),
        (17, 3, 2, 1, 0.0),
        (23, 4, 2, 2, 0.0),
        (29, 12, 1, 3, 0.0),
        (37, 5, 2, 4, 0.0),
        (41, 3, 3, 2, 0.0),
        (43, 6, 2, 5, 0.0),
        (53, 16, 2, 6, 0.0),
        (59, 4, 3, 3, 0.0),
        (61, 3, 2, 4, 0.0),
        (31, 8, 2, 3, 0.05),
        (17, 3, 2, 1, 0.1),
        (23, 4, 2, 2, 0.02),
        (29, 12, 1, 3, 0.05),
        (37, 5, 2, 4, 0.2),
        (41, 3, 3, 2, 0.01),
        (47, 6, 2, 5, 0.05),
        (53, 16, 2, 6, 0.1),
        (59, 4, 3, 3, 0.05),
        (61, 3, 2, 4, 0.3),
    ];
    specs
        .iter()
        .enumerate()
        .map(|(k, &(modulus, n, order, s, eta))| {
            let mut rng = SplitMix64::derive(0x70f1, &[k as u64]);
            let seeds: Vec<u64> = (0..n).map(|_| rng.below(modulus)).collect();
            let mut x = vec![c(0.0, 0.0); modulus as usize];
            for j in rng.subset(modulus as usize, s) {
                x[j] = Complex64::from_polar(1.0 + rng.unit_f64(), std::f64::consts::TAU * rng.unit_f64());
            }
            let m = n.pow(order);
            let raw = random_vector(&mut rng, m);
            let scale = if eta > 0.0 { eta / norm(&raw) } else { 0.0 };
            let noise = raw.iter().map(|v| v * scale).collect();
            ToyInstance {
                modulus,
                order,
                seeds,
                x,
                noise,
                eta,
            }
        })
        .collect()
}

impl ToyInstance {
    pub fn data(&self) -> Vec<Complex64> {
        let a = Dense::new(self.modulus, &self.seeds, self.order);
        a.apply(&self.x).iter().zip(&self.noise).map(|(p, q)| p + q).collect()
    }
}

/// Denominator floor for relative errors of quantities that can be nearly zero.
pub const REL_FLOOR: f64 = 1e-4;

/// Largest relative discrepancy between the library operator and the dense
/// matrix over forward (both modes), adjoint (both modes), entries, support
/// Grams, cross-Gram rows and coherence, for one random configuration.
pub fn operator_discrepancy(modulus: u64, seeds: &[u64], order: u32, rng: &mut SplitMix64) -> f64 {
    use minkowski_cs::operator::{MeasurementData, MeasurementMode, Samples, Support};
    use minkowski_cs::{MinkowskiEnsemble, PrimeModulus};

    let e = MinkowskiEnsemble::from_seeds(modulus, order, seeds.to_vec(), 0).unwrap();
    let a = Dense::new(modulus, seeds, order);
    let len = modulus as usize;
    let mut worst = 0.0f64;

    let z = random_vector(rng, len);
    let want = a.apply(&z);
    let got = e.apply_forward(&z, MeasurementMode::Explicit).unwrap();
    worst = worst.max(rel_err(got.values(), &want));

    let (freqs, merged) = a.merge(&want);
    let red = e.apply_forward(&z, MeasurementMode::Reduced).unwrap();
    match red.samples() {
        Samples::Reduced { frequencies, values } => {
            assert_eq!(frequencies, &freqs);
            worst = worst.max(rel_err(values, &merged));
        }
        Samples::Explicit(_) => panic!("reduced mode returned explicit samples"),
    }
    worst = worst.max((red.norm() - norm(&want)).abs() / norm(&want));

    let y = random_vector(rng, a.rows.len());
    let got = e.apply_adjoint(&MeasurementData::explicit(y.clone())).unwrap();
    worst = worst.max(rel_err(&got, &a.adjoint(&y)));

    let yr = random_vector(rng, freqs.len());
    let mut spread = vec![c(0.0, 0.0); a.rows.len()];
    for (k, &f) in a.freqs.iter().enumerate() {
        let g = freqs.iter().position(|&r| r == f as usize).unwrap();
        let count = a.freqs.iter().filter(|&&h| h == f).count() as f64;
        spread[k] = yr[g] / count.sqrt();
    }
    let data = MeasurementData::reduced(freqs.clone(), yr, 0.0).unwrap();
    worst = worst.max(rel_err(&e.apply_adjoint(&data).unwrap(), &a.adjoint(&spread)));

    let scale = (seeds.len() as f64).powf(-(order as f64) / 2.0);
    for (k, tuple) in a.tuples.iter().enumerate() {
        for j in 0..len {
            worst = worst.max((e.entry(tuple, j).unwrap() - a.rows[k][j]).norm() / scale);
        }
    }

    let s = 1 + rng.below(len.min(8) as u64) as usize;
    let support = rng.subset(len, s);
    let t = Support::new(support.clone(), PrimeModulus::new(modulus).unwrap()).unwrap();
    let sorted = t.indices().to_vec();
    let g = e.gram_on_support(&t);
    let dense_g = a.gram(&sorted);
    let flat_got: Vec<Complex64> = (0..s).flat_map(|p| (0..s).map(move |q| (p, q))).map(|(p, q)| g[(p, q)]).collect();
    let flat_want: Vec<Complex64> = dense_g.concat();
    worst = worst.max(rel_err(&flat_got, &flat_want));

    for u in (0..len).filter(|u| !t.contains(*u)).take(5) {
        let row = e.cross_gram_row(u, &t).unwrap();
        let col_u = a.column(u);
        let want: Vec<Complex64> = sorted.iter().map(|&j| inner(&col_u, &a.column(j))).collect();
        worst = worst.max(diff_norm(&row, &want) / norm(&want).max(REL_FLOOR));
    }

    let mu = a.coherence();
    worst = worst.max((e.coherence() - mu).abs() / mu.max(REL_FLOOR));
    worst
}

/// `v_j = N^{-1} sum_r w_r e_N(-r j)` by direct summation.
pub fn direct_idft(w: &[Complex64]) -> Vec<Complex64> {
    let n = w.len() as u64;
    (0..n)
        .map(|j| {
            w.iter()
                .enumerate()
                .map(|(r, x)| x * root((n - r as u64 * j % n) % n, n))
                .sum::<Complex64>()
                / n as f64
        })
        .collect()
}

pub fn is_prime_by_division(n: u64) -> bool {
    n >= 2 && (2..).take_while(|d| d * d <= n).all(|d| n % d != 0)
}

/// `(relative error against direct summation, relative Parseval defect)` of
/// the library transform on one random vector of length `n`.
pub fn dft_discrepancy(n: usize, rng: &mut SplitMix64) -> (f64, f64) {
    let v = random_vector(rng, n);
    let w = minkowski_cs::fourier::dft(&v).unwrap();
    let energy = norm(&v).powi(2);
    let parseval = (norm(&w).powi(2) - n as f64 * energy).abs() / (n as f64 * energy);
    (rel_err(&w, &direct_dft(&v)), parseval)
}

/// `X_q` summed directly over index tuples with explicit diagonal modulations.
pub fn tuple_sum(modulus: u64, banks: &[Vec<u64>], support: &[usize]) -> Vec<Vec<Complex64>> {
    let s = support.len();
    let n = banks.first().map_or(1, |b| b.len());
    let total = n.pow(banks.len() as u32);
    let mut out = vec![vec![c(0.0, 0.0); s]; s];
    for code in 0..total {
        let mut rest = code;
        let mut diag = vec![c(1.0, 0.0); s];
        for bank in banks {
            let x = bank[rest % n];
            rest /= n;
            for (d, &t) in diag.iter_mut().zip(support) {
                *d *= root((modulus - x * t as u64 % modulus) % modulus, modulus);
            }
        }
        for a in 0..s {
            for b in 0..s {
                if a != b {
                    out[a][b] += diag[a] * diag[b].conj();
                }
            }
        }
    }
    out
}

/// Optimal objectives from `oracle/bpdn_oracle.py` (CLARABEL, gap and feasibility tolerances 1e-10).
pub const ORACLE_OBJECTIVES: [f64; 20] = [
    4.525530754839921,
    1.040165053834778,
    2.479410223266444,
    4.180887921212932,
    6.681077890882384,
    2.785870767615500,
    7.184907503181020,
    8.389469588177137,
    3.941766000695633,
    4.681258563774338,
    5.234671454384607,
    1.118271258246939,
    3.070016632245004,
    5.159974551498800,
    5.552210108312247,
    3.032215731399565,
    7.277994832536655,
    8.951159535301271,
    5.230588428496547,
    3.227831901209015,
];
