//! End-to-end acceptance suite: one test per acceptance criterion, each
//! printing its measured values next to the target before asserting.
//!
//! Known-red criteria are asserted faithfully anyway: the boiler loop's
//! printed controller has exact integrator states reachable only through
//! saturation channels, so no strict certificate of the required class
//! exists (criteria 1 and 6 fail on that leg with the mathematically correct
//! Infeasible verdict), and the regulated steam-pressure loop's proportional
//! path pins its 2 %-band settling near 41 s regardless of step size or
//! sample time (criterion 9's settling sub-assertion).

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use snofcert::certify::{
    build_lmi, shift_equilibrium, solve_feasibility, validate_certificate, CertifyOptions,
    Verdict,
};
use snofcert::dataset::{synth_sequences, SynthSpec};
use snofcert::plant_loop::{
    make_pi_controller, FeedbackSource, LoopManifest, PlantLti, Scaler,
};
use snofcert::rnn::{
    analyze_gating, bptt_gradient, gru_forward, gru_to_snof_like, lpgrnn_forward,
    lpgrnn_to_snof, train_bptt, GruCell, LpGrnnCell, TrainConfig,
};
use snofcert::sim::{
    loop_metric_channels, simulate_loop, step_metrics, Schedule, StepSpec,
};
use snofcert::snof::{loop_transform_sigmoid, Channel, Snof};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/boiler").join(name)
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_snofcert"))
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Scalar saturated-feedback system x⁺ = a·x + bp·tanh(x).
fn scalar_lure(a: f64, bp: f64) -> Snof {
    Snof::new(
        DMatrix::from_element(1, 1, a),
        DMatrix::from_element(1, 1, bp),
        DMatrix::zeros(1, 0),
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::zeros(1, 1),
        DMatrix::zeros(1, 0),
        DMatrix::identity(1, 1),
        DMatrix::zeros(1, 1),
        DMatrix::zeros(1, 0),
        DVector::zeros(1),
        DVector::zeros(1),
        DVector::zeros(1),
        vec![Channel::tanh()],
    )
    .unwrap()
}

/// Channel-free scalar system x⁺ = a·x.
fn lti(a: f64) -> Snof {
    Snof::new(
        DMatrix::from_element(1, 1, a),
        DMatrix::zeros(1, 0),
        DMatrix::zeros(1, 0),
        DMatrix::zeros(0, 1),
        DMatrix::zeros(0, 0),
        DMatrix::zeros(0, 0),
        DMatrix::identity(1, 1),
        DMatrix::zeros(1, 0),
        DMatrix::zeros(1, 0),
        DVector::zeros(1),
        DVector::zeros(0),
        DVector::zeros(1),
        vec![],
    )
    .unwrap()
}

fn certify_snof(s: &Snof, setpoint: &DVector<f64>) -> snofcert::certify::Certificate {
    let shift = shift_equilibrium(s, setpoint).unwrap();
    let pencil = build_lmi(&shift).unwrap();
    solve_feasibility(&pencil, &CertifyOptions::default()).unwrap()
}

// ---------------------------------------------------------------------------

#[test]
fn criterion_01_boiler_certification_end_to_end() {
    // KNOWN RED on the feasibility sub-assertion: the loop's exact
    // integrator modes are annihilated by every pencil term (the sector
    // admits the zero nonlinearity), so the strict LMI has no solution and
    // the verdict is Infeasible. Well-posedness and runtime pass.
    let mut verdicts = Vec::new();
    for name in ["loop_a.json", "loop_b.json"] {
        let out = tempfile::tempdir().unwrap();
        let t0 = Instant::now();
        let status = bin()
            .args([
                "certify",
                fixture(name).to_str().unwrap(),
                "--eps-abs",
                "1e-5",
                "--eps-rel",
                "1e-5",
                "--max-iters",
                "100000",
                "--margin",
                "1e-6",
                "--out-dir",
                out.path().to_str().unwrap(),
            ])
            .status()
            .unwrap();
        let runtime = t0.elapsed().as_secs_f64();
        let report: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(out.path().join("certificate_report.json")).unwrap(),
        )
        .unwrap();
        eprintln!(
            "criterion 1 [{name}]: well-posed {} (proof {}, target true), verdict {} \
             (target Feasible), runtime {runtime:.1} s (target < 120), exit {:?}",
            report["well_posed"], report["well_posed_proof"], report["verdict"],
            status.code()
        );
        assert_eq!(report["well_posed"], true);
        assert_eq!(report["well_posed_proof"], true);
        assert!(runtime < 120.0, "runtime {runtime:.1} s exceeds 120 s");
        verdicts.push((name, report["verdict"].as_str().unwrap().to_string(), status.code()));
    }
    for (name, verdict, code) in &verdicts {
        assert_eq!(
            (verdict.as_str(), *code),
            ("Feasible", Some(0)),
            "{name}: measured verdict {verdict} (exit {code:?})"
        );
    }
}

#[test]
fn criterion_02_operator_export_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (n_x, n_h, l) = (rng.gen_range(1..4), rng.gen_range(1..5), rng.gen_range(1..3));
        let c = LpGrnnCell::random(n_x, n_h, l, &mut rng);
        let s = lpgrnn_to_snof(&c).unwrap();
        let mut h_a = DVector::from_fn(n_h, |_, _| rng.gen_range(-0.9..0.9));
        let mut h_b = h_a.clone();
        for _ in 0..50 {
            let x = DVector::from_fn(n_x, |_, _| rng.gen_range(-1.0..1.0));
            let (h_next, y) = lpgrnn_forward(&c, &h_a, &x).unwrap();
            let step = s.eval_step(&h_b, &x).unwrap();
            worst = worst.max((&h_next - &step.x_next).amax()).max((&y - &step.y).amax());
            h_a = h_next;
            h_b = step.x_next;
        }
    }
    for _ in 0..100 {
        let (n_x, n_h) = (rng.gen_range(1..4), rng.gen_range(1..5));
        let c = GruCell::random(n_x, n_h, &mut rng);
        let like = gru_to_snof_like(&c);
        let mut h_a = DVector::from_fn(n_h, |_, _| rng.gen_range(-0.9..0.9));
        let mut h_b = h_a.clone();
        for _ in 0..50 {
            let x = DVector::from_fn(n_x, |_, _| rng.gen_range(-1.0..1.0));
            let h_next = gru_forward(&c, &h_a, &x).unwrap();
            let h_like = like.eval(&h_b, &x);
            worst = worst.max((&h_next - &h_like).amax());
            h_a = h_next;
            h_b = h_like;
        }
    }
    eprintln!("criterion 2: max rollout deviation {worst:.3e} (target < 1e-10)");
    assert!(worst < 1e-10);
}

#[test]
fn criterion_03_sigmoid_loop_transform_exactness() {
    let transformer = loop_transform_sigmoid(1);
    let mut worst = 0.0f64;
    for k in 0..10_000 {
        let q = -10.0 + 20.0 * k as f64 / 9_999.0;
        let y = transformer
            .eval_step(&DVector::zeros(0), &DVector::from_element(1, q))
            .unwrap()
            .y[0];
        worst = worst.max((y - sigmoid(q)).abs()).max((y - (0.5 * (0.5 * q).tanh() + 0.5)).abs());
    }
    eprintln!("criterion 3: max |transformed − sigmoid| {worst:.3e} (target < 1e-12)");
    assert!(worst < 1e-12);
}

#[test]
fn criterion_04_gating_nonconservativeness_analyzer() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let plain = |z: &DVector<f64>| z.map(f64::tanh);
    let probes: Vec<DVector<f64>> =
        (0..100).map(|_| DVector::from_fn(3, |_, _| rng.gen_range(-2.0..2.0))).collect();
    let plain_out = analyze_gating(plain, &probes, 1e-5);
    let plain_worst = plain_out.asymmetry.iter().copied().fold(0.0, f64::max);

    let gated = |z: &DVector<f64>| DVector::from_vec(vec![sigmoid(z[0]), sigmoid(z[0]) * z[1]]);
    let gate_probes =
        vec![DVector::from_vec(vec![0.0, 1.0]), DVector::from_vec(vec![1.0, 1.0])];
    let gated_out = analyze_gating(gated, &gate_probes, 1e-5);

    eprintln!(
        "criterion 4: channelwise asymmetry {plain_worst:.3e} (target < 1e-8); gated asymmetry \
         at (0,1) {:.4} (target >= 0.2); path discrepancy to (1,1) {:.4} (target > 0.01)",
        gated_out.asymmetry[0], gated_out.path_discrepancy[1]
    );
    assert!(plain_worst < 1e-8);
    assert!(gated_out.asymmetry[0] >= 0.2);
    assert!(gated_out.path_discrepancy[1] > 0.01);
}

#[test]
fn criterion_05_bptt_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let (n_x, n_h, l) = (rng.gen_range(1..3), rng.gen_range(1..4), 1);
        let c = LpGrnnCell::random(n_x, n_h, l, &mut rng);
        let windows =
            vec![DMatrix::from_fn(5, n_x, |_, _| rng.gen_range(-1.0..1.0)); 3];
        let targets =
            vec![DVector::from_fn(l, |_, _| rng.gen_range(-0.5..0.5)); 3];
        let (_, grads) = bptt_gradient(&c, &windows, &targets).unwrap();
        let params = c.flatten_params();
        let mut fd = DVector::zeros(params.len());
        let eps = 1e-5;
        for j in 0..params.len() {
            let mut cp = c.clone();
            let mut p = params.clone();
            p[j] += eps;
            cp.set_params(&p);
            let (hi, _) = bptt_gradient(&cp, &windows, &targets).unwrap();
            p[j] -= 2.0 * eps;
            cp.set_params(&p);
            let (lo, _) = bptt_gradient(&cp, &windows, &targets).unwrap();
            fd[j] = (hi - lo) / (2.0 * eps);
        }
        let rel = (&grads.flat - &fd).norm() / fd.norm().max(1e-12);
        worst = worst.max(rel);
    }
    eprintln!("criterion 5: worst relative gradient error {worst:.3e} (target < 1e-4)");
    assert!(worst < 1e-4);
}

#[test]
fn criterion_06_certificate_soundness_harness() {
    // Scalar saturated-feedback leg.
    let s = scalar_lure(0.5, 0.4);
    let shift = shift_equilibrium(&s, &DVector::zeros(0)).unwrap();
    let cert = solve_feasibility(&build_lmi(&shift).unwrap(), &CertifyOptions::default()).unwrap();
    assert_eq!(cert.verdict, Verdict::Feasible);
    let rep = validate_certificate(&shift.shifted, &cert, 1000, 6, 1.0, 10_000).unwrap();
    eprintln!(
        "criterion 6 [scalar]: {}/{} converged, worst V increase {:.3e} (target 0 falsifications)",
        rep.converged, rep.trials, rep.worst_v_increase
    );
    assert_eq!(rep.converged, rep.trials);

    // Channel-free linear leg.
    let cert = certify_snof(&lti(0.5), &DVector::zeros(0));
    assert_eq!(cert.verdict, Verdict::Feasible);
    let shift = shift_equilibrium(&lti(0.5), &DVector::zeros(0)).unwrap();
    let rep = validate_certificate(&shift.shifted, &cert, 1000, 6, 10.0, 10_000).unwrap();
    eprintln!(
        "criterion 6 [linear]: {}/{} converged, worst V increase {:.3e}",
        rep.converged, rep.trials, rep.worst_v_increase
    );
    assert_eq!(rep.converged, rep.trials);

    // Boiler leg — KNOWN RED: the strict certificate does not exist (exact
    // integrator modes annihilate every pencil term), so there is nothing to
    // validate; the faithful assertion below fails on the verdict.
    let path = fixture("loop_b.json");
    let (cl, r) = LoopManifest::load(&path).unwrap().assemble(&path).unwrap();
    let cert = certify_snof(&cl.closed, &r);
    eprintln!(
        "criterion 6 [boiler]: verdict {:?} (target Feasible), phase-1 objective {:.3e}",
        cert.verdict, cert.t_star
    );
    assert_eq!(cert.verdict, Verdict::Feasible, "boiler leg: measured {:?}", cert.verdict);
}

#[test]
fn criterion_07_slope_restricted_integral_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_slack = f64::INFINITY;
    let mut count = 0usize;
    while count < 100_000 {
        let base = if count % 2 == 0 { Channel::tanh() } else { Channel::saturation(0.0, 1.0) };
        let ch = base.shifted(rng.gen_range(-1.5..1.5));
        for _ in 0..50 {
            let a: f64 = rng.gen_range(-4.0..4.0);
            let b: f64 = rng.gen_range(-4.0..4.0);
            let (fa, fb) = (ch.eval(a), ch.eval(b));
            let integral = ch.integral(b) - ch.integral(a);
            let lower = fa * (b - a) + (fb - fa) * (fb - fa) / (2.0 * ch.mu);
            let upper = fb * (b - a) - (fb - fa) * (fb - fa) / (2.0 * ch.mu);
            worst_slack = worst_slack.min(integral - lower).min(upper - integral);
            count += 1;
        }
    }
    eprintln!("criterion 7: worst bound slack {worst_slack:.3e} (target >= -1e-10)");
    assert!(worst_slack >= -1e-10);
}

#[test]
fn criterion_08_unstable_loop_is_never_certified() {
    // Library-level: spectral radius exactly 2.
    for margin in [1e-6, 1e-8] {
        let shift = shift_equilibrium(&lti(2.0), &DVector::zeros(0)).unwrap();
        let cert = solve_feasibility(
            &build_lmi(&shift).unwrap(),
            &CertifyOptions { margin, ..CertifyOptions::default() },
        )
        .unwrap();
        eprintln!(
            "criterion 8 [radius 2, margin {margin:.0e}]: verdict {:?} (target Infeasible)",
            cert.verdict
        );
        assert_eq!(cert.verdict, Verdict::Infeasible);
    }

    // CLI-level: a scalar loop whose plant discretizes to pole exactly 2
    // (continuous pole ln 2 / Ts) must exit 3.
    let dir = tempfile::tempdir().unwrap();
    let ts = 0.6;
    let plant = PlantLti::new(
        DMatrix::from_element(1, 1, 2f64.ln() / ts),
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::identity(1, 1),
        DMatrix::zeros(1, 1),
        true,
    )
    .unwrap();
    plant.save(&dir.path().join("plant.json")).unwrap();
    let ctrl = make_pi_controller(
        &DVector::from_element(1, 0.1),
        &DVector::from_element(1, 0.01),
        ts,
        &DVector::from_element(1, -1.0),
        &DVector::from_element(1, 1.0),
    )
    .unwrap();
    ctrl.save(&dir.path().join("controller.json")).unwrap();
    let sensor = Snof::new(
        DMatrix::zeros(1, 1),
        DMatrix::zeros(1, 0),
        DMatrix::zeros(1, 2),
        DMatrix::zeros(0, 1),
        DMatrix::zeros(0, 0),
        DMatrix::zeros(0, 2),
        DMatrix::identity(1, 1),
        DMatrix::zeros(1, 0),
        DMatrix::zeros(1, 2),
        DVector::zeros(1),
        DVector::zeros(0),
        DVector::zeros(1),
        vec![],
    )
    .unwrap();
    sensor.save(&dir.path().join("sensor.json")).unwrap();
    Scaler::identity(2).save(&dir.path().join("scaler.json")).unwrap();
    let manifest = LoopManifest {
        plant: "plant.json".into(),
        controller: "controller.json".into(),
        sensor: "sensor.json".into(),
        scaler: "scaler.json".into(),
        wiring: vec![FeedbackSource::Measured(0)],
        setpoint: vec![0.0],
        sample_time: ts,
    };
    let manifest_path = dir.path().join("loop.json");
    manifest.save(&manifest_path).unwrap();
    let out = tempfile::tempdir().unwrap();
    let status = bin()
        .args([
            "certify",
            manifest_path.to_str().unwrap(),
            "--out-dir",
            out.path().to_str().unwrap(),
        ])
        .status()
        .unwrap();
    eprintln!("criterion 8 [unstable plant via CLI]: exit {:?} (target 3)", status.code());
    assert_eq!(status.code(), Some(3));
}

#[test]
fn criterion_09_step_response_metrics_reproduction() {
    // KNOWN RED on the settling sub-assertion: the regulated
    // steam-pressure loop's proportional path fixes the decay rate near
    // 0.157/s, so a held 2 %-band settling time below ~39 s is unreachable
    // for any step size or sample time; measured ≈ 41.4 s vs target
    // 9.6 s ± 20 %. Overshoot and the steady-state-error ordering pass.
    let path_a = fixture("loop_a.json");
    let path_b = fixture("loop_b.json");
    let (cl_a, r0) = LoopManifest::load(&path_a).unwrap().assemble(&path_a).unwrap();
    let (cl_b, _) = LoopManifest::load(&path_b).unwrap().assemble(&path_b).unwrap();
    let ts = 0.6;
    let xa = shift_equilibrium(&cl_a.closed, &r0).unwrap().x_star;
    let xb = shift_equilibrium(&cl_b.closed, &r0).unwrap().x_star;

    // Pressure-step scenario: second setpoint to 170 at t = 50 s, 300 s.
    let mut r1 = r0.clone();
    r1[1] = 170.0;
    let schedule = Schedule::step(r0.clone(), r1, 50.0);
    let base = StepSpec::from_schedule(&schedule, ts).unwrap();
    let spec_a = base.clone().with_channels(loop_metric_channels(&cl_a, 3));
    let spec_b = base.with_channels(loop_metric_channels(&cl_b, 3));
    let ta = simulate_loop(&cl_a, &schedule, ts, 500, &xa).unwrap();
    let tb = simulate_loop(&cl_b, &schedule, ts, 500, &xb).unwrap();
    let ma = step_metrics(&ta, &spec_a).unwrap();
    let mb = step_metrics(&tb, &spec_b).unwrap();

    // Level-step scenario: first setpoint to 120 at t = 50 s, 6000 s.
    let mut r1 = r0.clone();
    r1[0] = 120.0;
    let schedule = Schedule::step(r0.clone(), r1, 50.0);
    let spec = StepSpec::from_schedule(&schedule, ts)
        .unwrap()
        .with_channels(loop_metric_channels(&cl_b, 3));
    let tb_y1 = simulate_loop(&cl_b, &schedule, ts, 10_000, &xb).unwrap();
    let m_y1 = step_metrics(&tb_y1, &spec).unwrap();

    let overshoot = m_y1[0].overshoot_pct;
    let settling = mb[1].settling_time;
    let (ss_a, ss_b) = (ma[2].ss_error.abs(), mb[2].ss_error.abs());
    eprintln!(
        "criterion 9: y1 overshoot {overshoot:.2} % (target 21.6 ± 5 pp); y3 steady-state error \
         {ss_b:.4} with estimate vs {ss_a:.4} without (target smaller-with); y2 settling \
         {settling:?} s (target 9.6 s ± 20 %)"
    );
    assert!((overshoot - 21.6).abs() <= 5.0, "y1 overshoot measured {overshoot:.2} %");
    assert!(ss_b < ss_a, "ordering measured {ss_b:.4} vs {ss_a:.4}");
    let settling = settling.expect("y2 settles");
    assert!(
        (settling - 9.6).abs() <= 0.2 * 9.6,
        "y2 settling measured {settling:.1} s vs target 9.6 s ± 20 %"
    );
}

#[test]
fn criterion_10_synthetic_training_reaches_the_floor() {
    let t0 = Instant::now();
    let ds = synth_sequences(&SynthSpec {
        a: 0.9,
        noise: 0.01,
        count: 12,
        length: 200,
        window_len: 30,
        seed: 0,
    })
    .unwrap();
    assert!(ds.len() >= 2000, "task size {}", ds.len());
    let targets: Vec<DVector<f64>> =
        ds.targets.iter().map(|t| DVector::from_element(1, *t)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cell = LpGrnnCell::init(ds.features(), 3, 1, &mut rng);
    let cfg = TrainConfig { epochs: 200, ..TrainConfig::default() };
    let (_, trace) = train_bptt(&cell, &ds.windows, &targets, &cfg).unwrap();

    // Monotone best-so-far loss.
    let mut best = f64::INFINITY;
    let mut bests = Vec::with_capacity(trace.len());
    for l in &trace {
        best = best.min(*l);
        bests.push(best);
    }
    assert!(bests.windows(2).all(|w| w[1] <= w[0]));
    let runtime = t0.elapsed().as_secs_f64();
    eprintln!(
        "criterion 10: best rmse {best:.4} after {} epochs (target < 0.05 within 200), \
         runtime {runtime:.0} s (target < 300)",
        trace.len()
    );
    assert!(best < 0.05);
    assert!(runtime < 300.0);
}
