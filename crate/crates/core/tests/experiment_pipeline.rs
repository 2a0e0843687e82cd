use std::fs;

use minkowski_cs::experiment::{
    aggregate, check_invariants, n_star_table, read_csv, report, run_cell, run_sweep, strip_columns, sweep, Cell,
    SignalModel, TIMING_COLUMNS,
};
use minkowski_cs::{ExperimentConfig, MeasurementMode, TrialRecord};

fn small(dir: &std::path::Path) -> ExperimentConfig {
    ExperimentConfig {
        modulus: 101,
        l_values: vec![1, 2],
        s_values: vec![1, 3],
        n_grid: vec![4, 12],
        trials_per_cell: 6,
        output_dir: dir.to_path_buf(),
        ..ExperimentConfig::default()
    }
}

#[test]
fn sweep_writes_a_readable_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let (records, files) = sweep(&cfg).unwrap();
    assert_eq!(records.len(), 2 * 2 * 2 * 6);
    let back: Vec<TrialRecord> = read_csv(&files.trials_csv).unwrap();
    assert_eq!(back, records);
    let cells: Vec<minkowski_cs::experiment::CellSummary> = read_csv(&files.cells_csv).unwrap();
    assert_eq!(cells, aggregate(&records));
    assert!(fs::read_to_string(&files.summary).unwrap().contains("invariants hold: true"));
    assert!(fs::read_to_string(&files.plot_script).unwrap().contains("cells.csv"));
    let header = fs::read_to_string(&files.trials_csv).unwrap();
    assert!(header.starts_with("N,s,n,L,eta,trial_index,stream_id,entropy_bits,"));
}

#[test]
fn repeated_sweeps_match_without_timings() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    sweep(&small(a.path())).unwrap();
    sweep(&small(b.path())).unwrap();
    for name in ["trials.csv", "cells.csv"] {
        let x = fs::read_to_string(a.path().join(name)).unwrap();
        let y = fs::read_to_string(b.path().join(name)).unwrap();
        assert_eq!(strip_columns(&x, &TIMING_COLUMNS).unwrap(), strip_columns(&y, &TIMING_COLUMNS).unwrap());
    }
}

#[test]
fn master_seed_changes_the_draws() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    let a = run_sweep(&cfg).unwrap();
    cfg.master_seed += 1;
    let b = run_sweep(&cfg).unwrap();
    assert!(a.iter().zip(&b).any(|(x, y)| x.stream_id != y.stream_id));
}

#[test]
fn cells_do_not_depend_on_the_rest_of_the_grid() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let full = run_sweep(&cfg).unwrap();
    let one = ExperimentConfig {
        l_values: vec![2],
        s_values: vec![3],
        n_grid: vec![12],
        ..cfg.clone()
    };
    let part = run_sweep(&one).unwrap();
    let matching: Vec<&TrialRecord> = full.iter().filter(|r| r.order == 2 && r.s == 3 && r.n == 12).collect();
    for (x, y) in part.iter().zip(matching) {
        assert_eq!(x.stream_id, y.stream_id);
        assert_eq!(x.err_l2, y.err_l2);
    }
}

#[test]
fn explicit_and_reduced_modes_agree_without_noise() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.measurement_mode = MeasurementMode::Explicit;
    let a = run_sweep(&cfg).unwrap();
    cfg.measurement_mode = MeasurementMode::Reduced;
    let b = run_sweep(&cfg).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.certified, y.certified);
        assert_eq!(x.gram_norm, y.gram_norm);
        assert!((x.l1_value - y.l1_value).abs() <= 1e-6 * x.l1_value.max(1.0));
    }
}

#[test]
fn noisy_certified_trials_meet_the_bound() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        eta: 0.05,
        signal_model: SignalModel::Gaussian,
        ..small(dir.path())
    };
    for mode in [MeasurementMode::Reduced, MeasurementMode::Explicit] {
        let records = run_sweep(&ExperimentConfig { measurement_mode: mode, ..cfg.clone() }).unwrap();
        for r in &records {
            assert!(r.residual <= 0.05 + cfg.solver.feasibility_tol);
        }
        let inv = check_invariants(&records);
        assert!(inv.holds, "{inv:?}");
        assert!(inv.certified_noisy > 0);
    }
}

#[test]
fn n_star_is_the_first_reliable_grid_point() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        n_grid: vec![2, 8, 16],
        trials_per_cell: 30,
        l_values: vec![2],
        s_values: vec![2],
        ..small(dir.path())
    };
    let cells = aggregate(&run_sweep(&cfg).unwrap());
    let table = n_star_table(&cells);
    assert_eq!(table.len(), 1);
    let reliable: Vec<usize> = cells.iter().filter(|c| c.success_wilson_lower >= 0.9).map(|c| c.n).collect();
    assert_eq!(table[0].n_star, reliable.iter().copied().min());
}

#[test]
fn single_cell_matches_sweep_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let cell = Cell {
        modulus: 101,
        order: 1,
        s: 1,
        n: 4,
        eta: 0.0,
    };
    let rows = run_cell(&cfg, &cell).unwrap();
    let sweep_rows = run_sweep(&cfg).unwrap();
    for (a, b) in rows.iter().zip(&sweep_rows) {
        assert_eq!(a.stream_id, b.stream_id);
        assert_eq!(a.l1_value, b.l1_value);
    }
}

#[test]
fn report_rejects_empty_input() {
    let dir = tempfile::tempdir().unwrap();
    assert!(report(&[], dir.path()).is_err());
}

#[test]
fn desk_cell_recovers_reliably() {
    let cfg = ExperimentConfig {
        trials_per_cell: 200,
        ..ExperimentConfig::default()
    };
    let cell = Cell {
        modulus: 509,
        order: 2,
        s: 5,
        n: 40,
        eta: 0.0,
    };
    let rows = run_cell(&cfg, &cell).unwrap();
    let rate = rows.iter().filter(|r| r.success).count() as f64 / rows.len() as f64;
    assert!(rate >= 0.9, "success rate {rate}");
    assert!(rows.iter().all(|r| r.success || !r.certified));
}

#[test]
fn file_signal_model_uses_the_given_vector() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.txt");
    let mut text = String::from("# three nonzeros\n");
    for j in 0..101 {
        text.push_str(match j {
            3 => "1.5 -0.5\n",
            40 => "-2\n",
            77 => "0 1\n",
            _ => "0 0\n",
        });
    }
    fs::write(&path, text).unwrap();
    let cfg = ExperimentConfig {
        signal_model: SignalModel::File(path),
        l_values: vec![2],
        s_values: vec![3],
        n_grid: vec![12],
        trials_per_cell: 3,
        ..small(dir.path())
    };
    let rows = run_sweep(&cfg).unwrap();
    assert!(rows.iter().all(|r| r.l1_value > 0.0));
    assert!(rows.iter().filter(|r| r.certified).all(|r| r.success));

    fs::write(dir.path().join("short.txt"), "1 0\n").unwrap();
    let bad = ExperimentConfig {
        signal_model: SignalModel::File(dir.path().join("short.txt")),
        ..cfg
    };
    assert!(run_sweep(&bad).is_err());
}
