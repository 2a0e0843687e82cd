use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use minkowski_cs::certificate::certify;
use minkowski_cs::experiment::{self, ExperimentConfig, SignalModel, TrialRecord};
use minkowski_cs::lab::{self, RankMode};
use minkowski_cs::num_complex::Complex64;
use minkowski_cs::operator::{MeasurementData, MeasurementMode, MinkowskiEnsemble, Support};
use minkowski_cs::solver::{best_s_term_support, solve_bpdn, theorem_error_bound, SolverConfig};
use minkowski_cs::{Error, PrimeModulus, Result, SplitMix64};
use serde_json::json;

#[derive(Parser)]
#[command(name = "mpfcs", version, about = "Sparse recovery with Minkowski partial Fourier matrices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw an ensemble; print its record, or write it and print a summary.
    Sample {
        #[command(flatten)]
        ens: EnsembleArgs,
        /// Write the record to this file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the dual-certificate conditions for a support and sign pattern.
    Certify {
        #[command(flatten)]
        source: EnsembleSource,
        /// Comma-separated support indices.
        #[arg(long, value_delimiter = ',', required = true)]
        support: Vec<usize>,
        /// Comma-separated phases in radians (default: all zero).
        #[arg(long, value_delimiter = ',')]
        phases: Vec<f64>,
    },
    /// Draw a signal, measure it, and solve the recovery program.
    Solve {
        #[command(flatten)]
        source: EnsembleSource,
        #[arg(long)]
        s: usize,
        #[arg(long, default_value_t = 0.0)]
        eta: f64,
        #[arg(long, default_value_t = 1)]
        signal_seed: u64,
        #[arg(long, default_value = "reduced")]
        mode: String,
        #[arg(long, default_value_t = 20_000)]
        max_iters: usize,
    },
    /// Run one of the lemma verifiers.
    Lemma {
        #[command(subcommand)]
        which: LemmaCommand,
    },
    /// Run a full sweep and write trials.csv, cells.csv, summary.txt and a plot script.
    Sweep {
        /// Config document; omitted keys take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Print the effective config and exit.
        #[arg(long)]
        print_config: bool,
        #[arg(long = "N")]
        modulus: Option<u64>,
        #[arg(long = "L-values", value_delimiter = ',')]
        l_values: Option<Vec<u32>>,
        #[arg(long, value_delimiter = ',')]
        s_values: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        n_grid: Option<Vec<usize>>,
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long)]
        signal_model: Option<String>,
        #[arg(long)]
        trials_per_cell: Option<u64>,
        #[arg(long)]
        master_seed: Option<u64>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Rebuild cells.csv, summary.txt and the plot script from a trials.csv.
    Report {
        #[arg(long)]
        trials: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct EnsembleArgs {
    #[arg(long = "N")]
    modulus: u64,
    #[arg(long)]
    n: usize,
    #[arg(long = "L")]
    order: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EnsembleSource {
    /// Ensemble record written by `sample`.
    #[arg(long, conflicts_with_all = ["modulus", "n", "order"])]
    ensemble: Option<PathBuf>,
    #[arg(long = "N")]
    modulus: Option<u64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long = "L")]
    order: Option<u32>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl EnsembleSource {
    fn load(&self) -> Result<MinkowskiEnsemble> {
        if let Some(path) = &self.ensemble {
            return MinkowskiEnsemble::from_record(&fs::read_to_string(path)?);
        }
        match (self.modulus, self.n, self.order) {
            (Some(m), Some(n), Some(l)) => MinkowskiEnsemble::sample(m, n, l, self.seed),
            _ => Err(Error::InvalidArgument("give --ensemble or all of --N, --n, --L".into())),
        }
    }
}

#[derive(Subcommand)]
enum LemmaCommand {
    /// Tail of the largest off-peak exponential sum against the Hoeffding threshold.
    CoherenceTail {
        #[arg(long = "N")]
        modulus: u64,
        #[arg(long)]
        n: usize,
        #[arg(long = "L", default_value_t = 1)]
        order: u32,
        #[arg(long)]
        epsilon: f64,
        #[arg(long, default_value_t = 1000)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Smallest n on a grid whose conditioning-violation rate is at most 0.1.
    Conditioning {
        #[arg(long = "N")]
        modulus: u64,
        #[arg(long = "L")]
        order: u32,
        #[arg(long)]
        s: usize,
        #[arg(long, value_delimiter = ',', required = true)]
        n_grid: Vec<usize>,
        #[arg(long, default_value_t = 200)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Tail of the decoupled process norms against the functional-form threshold.
    DecoupledTail {
        #[arg(long = "N")]
        modulus: u64,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        s: usize,
        #[arg(long = "L")]
        order: u32,
        #[arg(long)]
        alpha: f64,
        #[arg(long, default_value_t = 1.0)]
        constant: f64,
        #[arg(long, default_value_t = 500)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Monte-Carlo moment against the closed-form bound.
    Moment {
        #[arg(long = "N")]
        modulus: u64,
        #[arg(long)]
        n: usize,
        #[arg(long = "L")]
        order: u32,
        #[arg(long)]
        s: usize,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 2.0)]
        p: f64,
        #[arg(long, default_value_t = 10_000)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Rank of aggregated constraint systems over all (or sampled) maps.
    Rank {
        #[arg(long)]
        k: usize,
        #[arg(long = "M")]
        m_half: usize,
        #[arg(long = "L")]
        order: usize,
        #[arg(long)]
        n: usize,
        /// Number of random maps; exhaustive when omitted.
        #[arg(long)]
        samples: Option<u64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Printed JSON plus whether the run's asserted invariants held.
struct Outcome {
    body: serde_json::Value,
    ok: bool,
}

fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Sample { ens, out } => {
            let e = MinkowskiEnsemble::sample(ens.modulus, ens.n, ens.order, ens.seed)?;
            let record = e.to_record();
            let Some(path) = out else {
                print!("{record}");
                return Ok(Outcome {
                    body: serde_json::Value::Null,
                    ok: true,
                });
            };
            fs::write(path, &record)?;
            Ok(Outcome {
                body: json!({
                    "entropy_bits": e.entropy_bits(),
                    "coherence": e.coherence(),
                    "distinct_frequencies": e.reduced_weights().len(),
                }),
                ok: true,
            })
        }
        Command::Certify { source, support, phases } => {
            let e = source.load()?;
            let t = Support::new(support, e.modulus())?;
            let phases = if phases.is_empty() { vec![0.0; t.len()] } else { phases };
            let sign: Vec<Complex64> = phases.iter().map(|&p| Complex64::from_polar(1.0, p)).collect();
            let report = certify(&e, &t, &sign)?;
            Ok(Outcome {
                body: serde_json::to_value(&report)?,
                ok: true,
            })
        }
        Command::Solve {
            source,
            s,
            eta,
            signal_seed,
            mode,
            max_iters,
        } => {
            let e = source.load()?;
            let m: PrimeModulus = e.modulus();
            if s == 0 || s > m.as_usize() {
                return Err(Error::InvalidArgument(format!("s = {s} not in [1, N]")));
            }
            let mut rng = SplitMix64::new(signal_seed);
            let mut x = vec![Complex64::new(0.0, 0.0); m.as_usize()];
            for j in rng.subset(m.as_usize(), s) {
                x[j] = Complex64::from_polar(1.0, std::f64::consts::TAU * rng.unit_f64());
            }
            let mode = match mode.as_str() {
                "reduced" => MeasurementMode::Reduced,
                "explicit" => MeasurementMode::Explicit,
                other => return Err(Error::InvalidArgument(format!("unknown mode `{other}`"))),
            };
            let mut y: MeasurementData = e.apply_forward(&x, mode)?;
            if eta > 0.0 {
                // Noise of norm exactly eta in a random direction.
                let g: Vec<Complex64> = (0..y.values().len())
                    .map(|_| Complex64::new(rng.unit_f64() - 0.5, rng.unit_f64() - 0.5))
                    .collect();
                let scale = eta / g.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
                y.values_mut().iter_mut().zip(&g).for_each(|(v, w)| *v += w * scale);
            }
            let cfg = SolverConfig {
                max_iters,
                ..SolverConfig::default()
            };
            let rec = solve_bpdn(&e, &y, eta, &cfg)?;
            let t = Support::new(best_s_term_support(&x, s), m)?;
            let sign: Vec<Complex64> = t.indices().iter().map(|&j| x[j]).collect();
            let report = certify(&e, &t, &sign)?;
            let bound = theorem_error_bound(s, eta, &x, &rec.x_hat)?;
            let ok = rec.converged && (!report.passes_all() || bound.satisfied);
            Ok(Outcome {
                body: json!({
                    "support": t.indices(),
                    "certificate": report,
                    "iterations": rec.iterations,
                    "converged": rec.converged,
                    "residual": rec.residual,
                    "l1_value": rec.l1_value,
                    "err_l2": bound.err,
                    "theorem_bound": bound.bound,
                    "bound_satisfied": bound.satisfied,
                }),
                ok,
            })
        }
        Command::Lemma { which } => run_lemma(which),
        Command::Sweep {
            config,
            print_config,
            modulus,
            l_values,
            s_values,
            n_grid,
            eta,
            signal_model,
            trials_per_cell,
            master_seed,
            output_dir,
        } => {
            let mut cfg = match config {
                Some(path) => ExperimentConfig::parse(&fs::read_to_string(path)?)?,
                None => ExperimentConfig::default(),
            };
            if let Some(v) = modulus {
                cfg.modulus = v;
            }
            if let Some(v) = l_values {
                cfg.l_values = v;
            }
            if let Some(v) = s_values {
                cfg.s_values = v;
            }
            if let Some(v) = n_grid {
                cfg.n_grid = v;
            }
            if let Some(v) = eta {
                cfg.eta = v;
            }
            if let Some(v) = signal_model {
                cfg.signal_model = match v.as_str() {
                    "unit_phase" => SignalModel::UnitPhase,
                    "gaussian" => SignalModel::Gaussian,
                    other => match other.strip_prefix("file:") {
                        Some(p) => SignalModel::File(PathBuf::from(p)),
                        None => return Err(Error::InvalidArgument(format!("unknown signal model `{other}`"))),
                    },
                };
            }
            if let Some(v) = trials_per_cell {
                cfg.trials_per_cell = v;
            }
            if let Some(v) = master_seed {
                cfg.master_seed = v;
            }
            if let Some(v) = output_dir {
                cfg.output_dir = v;
            }
            cfg.validate()?;
            if print_config {
                print!("{}", cfg.render());
                return Ok(Outcome {
                    body: serde_json::Value::Null,
                    ok: true,
                });
            }
            let (records, files) = experiment::sweep(&cfg)?;
            fs::write(cfg.output_dir.join("config.txt"), cfg.render())?;
            let inv = experiment::check_invariants(&records);
            print!("{}", fs::read_to_string(&files.summary)?);
            Ok(Outcome {
                body: serde_json::to_value(&inv)?,
                ok: inv.holds,
            })
        }
        Command::Report { trials, out } => {
            let records: Vec<TrialRecord> = experiment::read_csv(&trials)?;
            let files = experiment::report(&records, &out)?;
            let inv = experiment::check_invariants(&records);
            print!("{}", fs::read_to_string(&files.summary)?);
            Ok(Outcome {
                body: serde_json::to_value(&inv)?,
                ok: inv.holds,
            })
        }
    }
}

fn run_lemma(which: LemmaCommand) -> Result<Outcome> {
    match which {
        LemmaCommand::CoherenceTail {
            modulus,
            n,
            order,
            epsilon,
            trials,
            seed,
        } => {
            let est = lab::coherence_tail(modulus, n, order, epsilon, trials, seed)?;
            let limit = epsilon / 3.0 + 0.02;
            Ok(Outcome {
                ok: est.wilson_upper_95 <= limit,
                body: json!({ "estimate": est, "limit": limit }),
            })
        }
        LemmaCommand::Conditioning {
            modulus,
            order,
            s,
            n_grid,
            trials,
            seed,
        } => {
            let cal = lab::conditioning_calibration(modulus, order, s, &n_grid, trials, seed)?;
            Ok(Outcome {
                body: serde_json::to_value(&cal)?,
                ok: true,
            })
        }
        LemmaCommand::DecoupledTail {
            modulus,
            n,
            s,
            order,
            alpha,
            constant,
            trials,
            seed,
        } => {
            let est = lab::decoupled_tail(modulus, n, s, order, alpha, constant, trials, seed)?;
            let limit = order as f64 * alpha + 0.02;
            Ok(Outcome {
                ok: est.wilson_upper_95 <= limit,
                body: json!({ "estimate": est, "limit": limit }),
            })
        }
        LemmaCommand::Moment {
            modulus,
            n,
            order,
            s,
            k,
            p,
            trials,
            seed,
        } => {
            let est = lab::moment_estimate(modulus, n, order, s, k, p, trials, seed)?;
            Ok(Outcome {
                ok: est.estimate <= est.paper_bound,
                body: serde_json::to_value(&est)?,
            })
        }
        LemmaCommand::Rank {
            k,
            m_half,
            order,
            n,
            samples,
            seed,
        } => {
            let mode = samples.map_or(RankMode::Exhaustive, RankMode::Sampled);
            let rep = lab::rank_lower_bound_check(k, m_half, order, n, mode, seed)?;
            Ok(Outcome {
                ok: rep.all_pass,
                body: serde_json::to_value(&rep)?,
            })
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(outcome) => {
            if !outcome.body.is_null() {
                println!("{}", serde_json::to_string_pretty(&outcome.body).unwrap_or_default());
            }
            if outcome.ok {
                ExitCode::SUCCESS
            } else {
                eprintln!("mpfcs: an asserted invariant did not hold");
                ExitCode::from(1)
            }
        }
        Err(err) => {
            eprintln!("mpfcs: {err}");
            ExitCode::from(2)
        }
    }
}
