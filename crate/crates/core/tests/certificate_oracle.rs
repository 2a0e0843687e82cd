mod common;

use common::*;
use minkowski_cs::certificate::{
    build_certificate, certificate_vector, certify, certify_with, default_neumann_terms, gram_conditioning_norm,
    neumann_gap, offsupport_sup, power_deviation_norm, CertificateMethod,
};
use minkowski_cs::num_complex::Complex64;
use minkowski_cs::{Error, MinkowskiEnsemble, PrimeModulus, SplitMix64, Support};
use nalgebra::DMatrix;

fn random_sign(rng: &mut SplitMix64, s: usize) -> Vec<Complex64> {
    (0..s)
        .map(|_| Complex64::from_polar(1.0, std::f64::consts::TAU * rng.unit_f64()))
        .collect()
}

fn support(rng: &mut SplitMix64, modulus: u64, s: usize) -> Support {
    Support::new(rng.subset(modulus as usize, s), PrimeModulus::new(modulus).unwrap()).unwrap()
}

fn to_rows(g: &DMatrix<Complex64>) -> Vec<Vec<Complex64>> {
    (0..g.nrows()).map(|a| (0..g.ncols()).map(|b| g[(a, b)]).collect()).collect()
}

#[test]
fn small_matrices() {
    assert_eq!(gram_conditioning_norm(&DMatrix::identity(4, 4)).unwrap(), 0.0);
    for off in [0.3, -0.7] {
        let g = DMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(off, 0.0), c(off, 0.0), c(1.0, 0.0)]);
        assert!((gram_conditioning_norm(&g).unwrap() - f64::abs(off)).abs() <= 1e-14);
        assert!((power_deviation_norm(&g).unwrap() - f64::abs(off)).abs() <= 1e-10);
    }
    let skew = DMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.3, 0.0), c(0.2, 0.0), c(1.0, 0.0)]);
    assert!(matches!(gram_conditioning_norm(&skew), Err(Error::InvalidMatrix(_))));
}

#[test]
fn conditioning_norm_matches_jacobi_oracle() {
    let mut rng = SplitMix64::new(21);
    for (modulus, n, order, s) in [(509u64, 40usize, 2u32, 20usize), (101, 8, 2, 20), (1009, 12, 3, 30), (509, 6, 1, 20)] {
        let e = MinkowskiEnsemble::sample(modulus, n, order, rng.next()).unwrap();
        let g = e.gram_on_support(&support(&mut rng, modulus, s));
        let want = spectral_norm_minus_identity(&to_rows(&g));
        let dense = gram_conditioning_norm(&g).unwrap();
        let power = power_deviation_norm(&g).unwrap();
        assert!((dense - want).abs() <= 1e-10, "dense {dense} vs {want}");
        assert!((power - dense).abs() <= 1e-8, "power {power} vs dense {dense}");
    }
}

#[test]
fn pipeline_matches_dense_oracle() {
    let mut rng = SplitMix64::new(22);
    for (modulus, n, order, s) in [(17u64, 3usize, 2u32, 2usize), (31, 5, 2, 3), (101, 6, 2, 4), (61, 4, 3, 3)] {
        let e = MinkowskiEnsemble::sample(modulus, n, order, rng.next()).unwrap();
        let a = Dense::new(modulus, e.seeds(), order);
        let t = support(&mut rng, modulus, s);
        let sign = random_sign(&mut rng, s);
        let want = dense_certificate(&a, t.indices(), &sign);
        let report = certify(&e, &t, &sign).unwrap();
        assert!((report.gram_norm - want.gram_norm).abs() <= 1e-10);
        if want.gram_norm >= 1.0 {
            assert!(report.v_norm.is_none());
            continue;
        }
        let cert = build_certificate(&e, &t, &sign, CertificateMethod::Direct).unwrap();
        assert!(rel_err(&cert.coefficients, &want.coefficients) <= 1e-10);
        assert!((cert.v_norm - want.v_norm).abs() <= 1e-10 * want.v_norm);
        assert!(rel_err(&certificate_vector(&e, &t, &cert.coefficients).unwrap(), &want.u) <= 1e-10);
        let sup = offsupport_sup(&e, &t, &cert.coefficients).unwrap();
        assert!((sup - want.u_inf_offsupport).abs() <= 1e-10);
        let flags = want.passes(s);
        assert_eq!((report.passes_conditioning, report.passes_v, report.passes_u), flags);
    }
}

#[test]
fn flags_match_dense_pipeline_at_desk_scale() {
    let mut rng = SplitMix64::new(23);
    let mut passed = 0;
    for _ in 0..4 {
        let e = MinkowskiEnsemble::sample(509, 40, 2, rng.next()).unwrap();
        let a = Dense::new(509, e.seeds(), 2);
        let t = support(&mut rng, 509, 5);
        let sign = random_sign(&mut rng, 5);
        let want = dense_certificate(&a, t.indices(), &sign);
        let report = certify(&e, &t, &sign).unwrap();
        assert_eq!((report.passes_conditioning, report.passes_v, report.passes_u), want.passes(5));
        assert!((report.v_norm.unwrap() - want.v_norm).abs() <= 1e-10);
        assert!((report.u_inf_offsupport.unwrap() - want.u_inf_offsupport).abs() <= 1e-10);
        passed += report.passes_all() as usize;
    }
    assert!(passed > 0);
}

#[test]
fn neumann_agrees_with_direct_solve() {
    let mut rng = SplitMix64::new(24);
    let terms = default_neumann_terms(509);
    assert_eq!(terms, 13);
    let mut checked = 0;
    while checked < 10 {
        let e = MinkowskiEnsemble::sample(509, 40, 2, rng.next()).unwrap();
        let t = support(&mut rng, 509, 5);
        let sign = random_sign(&mut rng, 5);
        let g = gram_conditioning_norm(&e.gram_on_support(&t)).unwrap();
        if g > (-1.0f64).exp() {
            continue;
        }
        let gap = neumann_gap(&e, &t, &sign, terms).unwrap();
        assert!(gap <= 1e-4, "gap {gap:e}");
        assert!(gap <= 5.0 * (-(terms as f64)).exp());
        let report = certify_with(&e, &t, &sign, CertificateMethod::Neumann(terms)).unwrap();
        assert_eq!(report.neumann_terms_used, terms);
        checked += 1;
    }
}

#[test]
fn neumann_gap_shrinks_geometrically() {
    let mut rng = SplitMix64::new(25);
    let mut checked = 0;
    while checked < 20 {
        let e = MinkowskiEnsemble::sample(509, 30, 2, rng.next()).unwrap();
        let s = 2 + rng.below(6) as usize;
        let t = support(&mut rng, 509, s);
        let sign = random_sign(&mut rng, s);
        let g = gram_conditioning_norm(&e.gram_on_support(&t)).unwrap();
        if g >= 0.9 {
            continue;
        }
        let gaps: Vec<f64> = (1..=40).map(|w| neumann_gap(&e, &t, &sign, w).unwrap()).collect();
        for pair in gaps.windows(2) {
            if pair[0] < 1e-12 {
                break;
            }
            assert!(pair[1] <= (g + 1e-8) * pair[0] + 1e-14, "ratio {} > {g}", pair[1] / pair[0]);
        }
        checked += 1;
    }
}

#[test]
fn pseudoinverse_norm_bound() {
    let mut rng = SplitMix64::new(26);
    let mut checked = 0;
    while checked < 30 {
        let e = MinkowskiEnsemble::sample(509, 25, 2, rng.next()).unwrap();
        let s = 1 + rng.below(8) as usize;
        let t = support(&mut rng, 509, s);
        let sign = random_sign(&mut rng, s);
        let report = certify(&e, &t, &sign).unwrap();
        if report.gram_norm > (-1.0f64).exp() {
            continue;
        }
        let bound = (1.0 - (-1.0f64).exp()).powf(-0.5) * (s as f64).sqrt() + 1e-8;
        assert!(report.v_norm.unwrap() <= bound);
        assert!(report.reconstruction_error.unwrap() <= 1e-8);
        checked += 1;
    }
}

#[test]
fn degenerate_and_single_column_cases() {
    let e = MinkowskiEnsemble::from_seeds(509, 2, vec![7; 5], 0).unwrap();
    let t = Support::new(vec![0, 1], e.modulus()).unwrap();
    let report = certify(&e, &t, &[c(1.0, 0.0), c(0.0, 1.0)]).unwrap();
    assert!(!report.passes_conditioning);
    assert!(report.v_norm.is_none() && report.u_inf_offsupport.is_none());

    let e = MinkowskiEnsemble::sample(509, 30, 2, 3).unwrap();
    assert!(e.coherence() <= 0.5);
    let t = Support::new(vec![100], e.modulus()).unwrap();
    let report = certify(&e, &t, &[c(0.6, 0.8)]).unwrap();
    assert!(report.passes_all());
    assert!((report.v_norm.unwrap() - 1.0).abs() <= 1e-12);
    assert!(report.u_inf_offsupport.unwrap() <= e.coherence() + 1e-12);
    assert_eq!(offsupport_sup(&e, &t, &[c(0.0, 0.0)]).unwrap(), 0.0);
}
