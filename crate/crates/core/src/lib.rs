//! Compressed sensing with Minkowski partial Fourier matrices over a prime
//! modulus: the structured ensemble, dual certificates for exact support
//! recovery, a basis-pursuit denoising solver, Monte-Carlo checks of the
//! supporting lemmas, and an experiment runner.

pub mod certificate;
pub mod error;
pub mod experiment;
pub mod fourier;
pub mod kv;
pub mod lab;
pub mod operator;
pub mod rng;
pub mod solver;

pub use num_complex;

pub use certificate::{certify, CertificateMethod, CertificateReport};
pub use error::{Error, Result};
pub use experiment::{ExperimentConfig, TrialRecord};
pub use fourier::{ComplexVector, DftPlan, PrimeModulus};
pub use operator::{MeasurementData, MeasurementMode, MinkowskiEnsemble, Support};
pub use rng::SplitMix64;
pub use solver::{solve_bpdn, RecoveryResult, SolverConfig};
