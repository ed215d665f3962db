use std::io::Write;

use snofcert::dataset::*;
use snofcert::error::Error;

/// Write a whitespace-delimited degradation log: unit, cycle, then two
/// feature columns derived deterministically from (unit, cycle).
fn write_log(units: &[(u64, usize)], comma: bool) -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    for &(unit, len) in units {
        for k in 0..len {
            let a = (unit as f64) + 0.01 * k as f64;
            let b = ((k as f64) * 0.37).sin();
            if comma {
                writeln!(f, "{unit}, {k}, {a}, {b}").unwrap();
            } else {
                writeln!(f, "{unit} {k} {a} {b}").unwrap();
            }
        }
    }
    f.flush().unwrap();
    f
}

fn manifest(window_len: usize, rul_cap: f64) -> IngestManifest {
    IngestManifest { unit_column: 0, feature_columns: vec![2, 3], window_len, rul_cap }
}

// --- ingest ---------------------------------------------------------------------

#[test]
fn a_unit_exactly_one_window_long_yields_exactly_one_window() {
    let f = write_log(&[(1, 30)], false);
    let ds = ingest(f.path(), &manifest(30, 120.0)).unwrap();
    assert_eq!(ds.len(), 1);
    assert_eq!(ds.unit_ids, vec![1]);
    assert_eq!(ds.windows[0].nrows(), 30);
    assert_eq!(ds.windows[0].ncols(), 2);
    // Last row of the only window is the failure row: remaining life 0.
    assert_eq!(ds.targets[0], 0.0);
}

#[test]
fn window_count_is_length_minus_window_plus_one() {
    let f = write_log(&[(1, 40)], false);
    let ds = ingest(f.path(), &manifest(30, 120.0)).unwrap();
    assert_eq!(ds.len(), 11);
}

#[test]
fn remaining_life_is_capped_before_scaling() {
    // Unit of length 200 with cap 120: windows ending at rows 0..=79 from the
    // end... i.e. the earliest 200 − 120 − 30 + 1 = 51 windows sit at the cap.
    let f = write_log(&[(1, 200)], false);
    let cap = 120.0;
    let ds = ingest(f.path(), &manifest(30, cap)).unwrap();
    assert_eq!(ds.len(), 171);
    // Window starting at 0 ends at row 29, remaining life 170 → capped 120.
    let capped: Vec<f64> = ds.targets.iter().map(|t| ds.unscale_target(*t)).collect();
    for (i, v) in capped.iter().enumerate() {
        let true_rul = (199 - (i + 29)) as f64;
        assert!((*v - true_rul.min(cap)).abs() < 1e-9, "window {i}: {v}");
    }
    assert_eq!(capped.iter().filter(|v| (**v - cap).abs() < 1e-9).count(), 51);
    assert!(ds.targets.iter().all(|t| (0.0..=1.0).contains(t)));
}

#[test]
fn windows_never_cross_a_unit_boundary() {
    let f = write_log(&[(3, 35), (1, 40), (7, 50)], false);
    let ds = ingest(f.path(), &manifest(30, 120.0)).unwrap();
    assert_eq!(ds.len(), 6 + 11 + 21);
    assert_eq!(ds.unit_ids.iter().filter(|u| **u == 3).count(), 6);
    assert_eq!(ds.unit_ids.iter().filter(|u| **u == 1).count(), 11);
    assert_eq!(ds.unit_ids.iter().filter(|u| **u == 7).count(), 21);
    // Feature column 0 encodes the unit id: every row of a window agrees.
    for (w, unit) in ds.windows.iter().zip(&ds.unit_ids) {
        for i in 0..w.nrows() {
            let raw = ds.feature_min[0]
                + 0.5 * (w[(i, 0)] + 1.0) * (ds.feature_max[0] - ds.feature_min[0]);
            assert_eq!(raw.floor() as u64, *unit);
        }
    }
}

#[test]
fn scaled_feature_extremes_are_exactly_plus_and_minus_one() {
    let f = write_log(&[(1, 40), (2, 60)], false);
    let ds = ingest(f.path(), &manifest(30, 120.0)).unwrap();
    for j in 0..ds.features() {
        let lo = ds.windows.iter().map(|w| w.column(j).min()).fold(f64::INFINITY, f64::min);
        let hi = ds.windows.iter().map(|w| w.column(j).max()).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(lo, -1.0, "feature {j}");
        assert_eq!(hi, 1.0, "feature {j}");
    }
}

#[test]
fn short_units_are_skipped_and_reported() {
    let f = write_log(&[(1, 10), (2, 40)], false);
    let ds = ingest(f.path(), &manifest(30, 120.0)).unwrap();
    assert_eq!(ds.skipped_units, vec![1]);
    assert_eq!(ds.len(), 11);
    assert!(ds.unit_ids.iter().all(|u| *u == 2));
}

#[test]
fn comma_and_whitespace_delimited_logs_ingest_identically() {
    let fw = write_log(&[(1, 40), (2, 35)], false);
    let fc = write_log(&[(1, 40), (2, 35)], true);
    let a = ingest(fw.path(), &manifest(30, 120.0)).unwrap();
    let b = ingest(fc.path(), &manifest(30, 120.0)).unwrap();
    assert_eq!(a.len(), b.len());
    assert_eq!(a.targets, b.targets);
    assert_eq!(a.unit_ids, b.unit_ids);
    for (wa, wb) in a.windows.iter().zip(&b.windows) {
        assert_eq!(wa, wb);
    }
}

#[test]
fn malformed_rows_are_rejected_with_their_index() {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    writeln!(f, "1 0 0.5 0.25").unwrap();
    writeln!(f, "1 1 oops 0.5").unwrap();
    f.flush().unwrap();
    match ingest(f.path(), &manifest(2, 120.0)).unwrap_err() {
        Error::MalformedRow { row, msg } => {
            assert_eq!(row, 1);
            assert!(msg.contains("oops"));
        }
        other => panic!("expected a malformed-row error, got {other}"),
    }

    let mut f = tempfile::NamedTempFile::new().unwrap();
    writeln!(f, "1 0 0.5").unwrap();
    f.flush().unwrap();
    assert!(matches!(
        ingest(f.path(), &manifest(1, 120.0)).unwrap_err(),
        Error::MalformedRow { row: 0, .. }
    ));
}

#[test]
fn a_constant_feature_column_is_a_reported_error() {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    for k in 0..40 {
        writeln!(f, "1 {k} 5.0 {}", k as f64 * 0.1).unwrap();
    }
    f.flush().unwrap();
    assert!(matches!(
        ingest(f.path(), &manifest(30, 120.0)).unwrap_err(),
        Error::DegenerateColumn(_)
    ));
}

// --- synthetic sequences --------------------------------------------------------

fn synth_spec(noise: f64, seed: u64) -> SynthSpec {
    SynthSpec { a: 0.9, noise, count: 8, length: 120, window_len: 30, seed }
}

#[test]
fn synthetic_datasets_are_bit_identical_across_runs_with_one_seed() {
    let a = synth_sequences(&synth_spec(0.05, 42)).unwrap();
    let b = synth_sequences(&synth_spec(0.05, 42)).unwrap();
    assert_eq!(a.targets, b.targets);
    for (wa, wb) in a.windows.iter().zip(&b.windows) {
        assert_eq!(wa, wb);
    }
    let c = synth_sequences(&synth_spec(0.05, 43)).unwrap();
    assert_ne!(a.targets, c.targets);
}

#[test]
fn noise_free_targets_equal_the_generator_recurrence_exactly() {
    let ds = synth_sequences(&synth_spec(0.0, 7)).unwrap();
    // Oracle: the target of every window must be the generator applied to
    // the window's own last (input, output) row, unscaled.
    for (w, t) in ds.windows.iter().zip(&ds.targets) {
        let last = w.nrows() - 1;
        let u = ds.feature_min[0]
            + 0.5 * (w[(last, 0)] + 1.0) * (ds.feature_max[0] - ds.feature_min[0]);
        let y = ds.feature_min[1]
            + 0.5 * (w[(last, 1)] + 1.0) * (ds.feature_max[1] - ds.feature_min[1]);
        let oracle = 0.9 * y + 0.1 * u;
        assert!((ds.unscale_target(*t) - oracle).abs() < 1e-12);
    }
}

#[test]
fn a_least_squares_predictor_reaches_the_training_feasibility_floor() {
    let ds = synth_sequences(&synth_spec(0.01, 1)).unwrap();
    // Regress the scaled target on the window's last scaled row plus a bias.
    let n = ds.len();
    let mut x = nalgebra::DMatrix::zeros(n, 3);
    let mut y = nalgebra::DVector::zeros(n);
    for (i, (w, t)) in ds.windows.iter().zip(&ds.targets).enumerate() {
        let last = w.nrows() - 1;
        x[(i, 0)] = w[(last, 0)];
        x[(i, 1)] = w[(last, 1)];
        x[(i, 2)] = 1.0;
        y[i] = *t;
    }
    let coef = (x.transpose() * &x).try_inverse().unwrap() * x.transpose() * &y;
    let resid = &x * coef - &y;
    let rmse = (resid.norm_squared() / n as f64).sqrt();
    assert!(rmse < 0.05, "least-squares floor rmse = {rmse}");
}

#[test]
fn unstable_generators_are_rejected() {
    assert!(synth_sequences(&SynthSpec {
        a: 1.0,
        noise: 0.0,
        count: 1,
        length: 40,
        window_len: 30,
        seed: 0
    })
    .is_err());
}
