//! Oracle and property tests for the core operator form: exact evaluation,
//! well-posedness methods, the sigmoid loop transformation, star-product
//! composition, and JSON interchange.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use snofcert::quad::adaptive_simpson;
use snofcert::snof::{
    check_well_posed, loop_transform_sigmoid, star_compose, Channel, Snof, WellPosednessMethod,
};

fn scalar_snof(a: f64, bp: f64, cq: f64, dqp: f64, ch: Channel) -> Snof {
    Snof::new(
        DMatrix::from_element(1, 1, a),
        DMatrix::from_element(1, 1, bp),
        DMatrix::zeros(1, 0),
        DMatrix::from_element(1, 1, cq),
        DMatrix::from_element(1, 1, dqp),
        DMatrix::zeros(1, 0),
        DMatrix::identity(1, 1),
        DMatrix::zeros(1, 1),
        DMatrix::zeros(1, 0),
        DVector::zeros(1),
        DVector::zeros(1),
        DVector::zeros(1),
        vec![ch],
    )
    .unwrap()
}

fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.gen_range(-scale..scale))
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.gen_range(-scale..scale))
}

// ---------------------------------------------------------------------------
// eval_step
// ---------------------------------------------------------------------------

#[test]
fn eval_step_zero_system_stays_at_zero() {
    let s = scalar_snof(0.0, 0.0, 0.0, 0.0, Channel::identity());
    let r = s.eval_step(&DVector::zeros(1), &DVector::zeros(0)).unwrap();
    assert_eq!(r.q[0], 0.0);
    assert_eq!(r.p[0], 0.0);
    assert_eq!(r.x_next[0], 0.0);
    assert_eq!(r.y[0], 0.0);
}

#[test]
fn eval_step_scalar_tanh_matches_direct_evaluation() {
    let s = scalar_snof(0.5, 1.0, 1.0, 0.0, Channel::tanh());
    let r = s.eval_step(&DVector::from_element(1, 1.0), &DVector::zeros(0)).unwrap();
    assert!((r.q[0] - 1.0).abs() < 1e-15);
    assert!((r.p[0] - 1.0f64.tanh()).abs() < 1e-15, "p = {}", r.p[0]);
    assert!((r.x_next[0] - (0.5 + 1.0f64.tanh())).abs() < 1e-15);
    assert!((r.p[0] - 0.761594).abs() < 1e-6);
    assert!((r.x_next[0] - 1.261594).abs() < 1e-6);
}

#[test]
fn eval_step_resolves_implicit_loop_to_tight_residual() {
    // Dqp ≠ 0: q = 0.3 tanh(q) + c must hold to 1e−12.
    let s = scalar_snof(0.5, 1.0, 1.0, 0.3, Channel::tanh());
    let x = DVector::from_element(1, 0.7);
    let r = s.eval_step(&x, &DVector::zeros(0)).unwrap();
    let resid = (r.q[0] - (0.7 + 0.3 * r.q[0].tanh())).abs();
    assert!(resid < 1e-12, "residual {resid}");
}

#[test]
fn eval_step_rejects_dimension_mismatch() {
    let s = scalar_snof(0.5, 1.0, 1.0, 0.0, Channel::tanh());
    assert!(s.eval_step(&DVector::zeros(2), &DVector::zeros(0)).is_err());
    assert!(s.eval_step(&DVector::zeros(1), &DVector::zeros(3)).is_err());
}

#[test]
fn eval_step_fixed_point_is_unique_under_proof_methods_multi_start() {
    // Strictly triangular coupling: the resolved q must not depend on the
    // solver's starting point. Emulate multi-start by shifting the affine
    // part and solving from scratch for randomized equivalent systems.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let h = 4;
        let mut dqp = rand_mat(&mut rng, h, h, 1.5);
        for i in 0..h {
            for j in i..h {
                dqp[(i, j)] = 0.0;
            }
        }
        let s = Snof::new(
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, h),
            DMatrix::zeros(1, 0),
            rand_mat(&mut rng, h, 1, 1.0),
            dqp,
            DMatrix::zeros(h, 0),
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, h),
            DMatrix::zeros(1, 0),
            DVector::zeros(1),
            rand_vec(&mut rng, h, 1.0),
            DVector::zeros(1),
            vec![Channel::tanh(); h],
        )
        .unwrap();
        assert!(check_well_posed(&s, 0).is_proof);
        let x = rand_vec(&mut rng, 1, 2.0);
        let q1 = s.eval_step(&x, &DVector::zeros(0)).unwrap().q;
        // Damped fixed-point from a different start must land on the same q.
        let c = &s.cq * &x + &s.beta_q;
        let mut q2 = rand_vec(&mut rng, h, 5.0);
        for _ in 0..20_000 {
            q2 = 0.5 * &q2 + 0.5 * (&c + &s.dqp * s.gamma(&q2));
        }
        assert!((&q1 - &q2).amax() < 1e-10, "fixed point not unique: {}", (&q1 - &q2).amax());
    }
}

// ---------------------------------------------------------------------------
// Channel functions
// ---------------------------------------------------------------------------

#[test]
fn shifted_channels_pass_through_origin_and_keep_unit_sector_slope() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let base = [Channel::tanh(), Channel::saturation(0.0, 1.0), Channel::identity()];
    for ch in base {
        for _ in 0..2_000 {
            let q_star = rng.gen_range(-3.0..3.0);
            let sh = ch.shifted(q_star);
            assert_eq!(sh.eval(0.0), 0.0, "shifted channel must vanish at 0");
            let s = rng.gen_range(-5.0..5.0);
            if s != 0.0 {
                let ratio = sh.eval(s) / s;
                assert!(
                    (-1e-12..=1.0 + 1e-12).contains(&ratio),
                    "sector violated: ratio {ratio} for {ch:?} shifted by {q_star}"
                );
            }
            let s2 = rng.gen_range(-5.0..5.0);
            if (s - s2).abs() > 1e-9 {
                let slope = (sh.eval(s) - sh.eval(s2)) / (s - s2);
                assert!((-1e-12..=1.0 + 1e-12).contains(&slope), "slope violated: {slope}");
            }
        }
    }
}

#[test]
fn channel_closed_form_integrals_match_adaptive_quadrature() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let chans = [
        Channel::tanh(),
        Channel::tanh().shifted(1.3),
        Channel::saturation(0.0, 1.0),
        Channel::saturation(-0.5, 2.0).shifted(0.7),
        Channel::identity().shifted(-2.0),
    ];
    for ch in chans {
        for _ in 0..2_000 {
            let x = rng.gen_range(-8.0..8.0);
            let closed = ch.integral(x);
            let quad = adaptive_simpson(&|s| ch.eval(s), 0.0, x, 1e-13);
            assert!(
                (closed - quad).abs() < 1e-11,
                "closed {closed} vs quadrature {quad} for {ch:?} at {x}"
            );
        }
    }
}

// ---------------------------------------------------------------------------
// check_well_posed
// ---------------------------------------------------------------------------

#[test]
fn zero_coupling_is_proved_triangular_with_unit_determinant() {
    let s = scalar_snof(0.5, 1.0, 1.0, 0.0, Channel::tanh());
    let rep = check_well_posed(&s, 100);
    assert!(rep.verdict && rep.is_proof);
    assert!(matches!(rep.method, WellPosednessMethod::StrictlyTriangularUpToPermutation { .. }));
}

#[test]
fn exact_nilpotency_alone_is_not_accepted_as_proof() {
    // Dqp = [[J, J],[−J, −J]] with J = ones is nilpotent of index 2, yet
    // I − Dqp·Δ is singular at Δ = diag(1,0,0,0): nilpotency of the bare
    // coupling block must not be mistaken for well-posedness.
    let h = 4;
    let mut dqp = DMatrix::zeros(h, h);
    for i in 0..2 {
        for j in 0..2 {
            dqp[(i, j)] = 1.0;
            dqp[(i, j + 2)] = 1.0;
            dqp[(i + 2, j)] = -1.0;
            dqp[(i + 2, j + 2)] = -1.0;
        }
    }
    assert_eq!(snofcert::snof::nilpotency_index(&dqp), Some(2));
    let s = Snof::new(
        DMatrix::zeros(0, 0),
        DMatrix::zeros(0, h),
        DMatrix::zeros(0, 0),
        DMatrix::zeros(h, 0),
        dqp,
        DMatrix::zeros(h, 0),
        DMatrix::zeros(0, 0),
        DMatrix::zeros(0, h),
        DMatrix::zeros(0, 0),
        DVector::zeros(0),
        DVector::zeros(h),
        DVector::zeros(0),
        vec![Channel::tanh(); h],
    )
    .unwrap();
    let rep = check_well_posed(&s, 1_000);
    assert!(!rep.verdict, "singular gain assignment exists, got {:?}", rep.method);
    assert!(!rep.is_proof);
}

#[test]
fn block_triangular_nilpotent_coupling_is_proved_well_posed() {
    // Strictly block-upper-triangular coupling (the gated-cell export
    // shape): provably well posed with det(I − Dqp·Δ) = 1.
    let dqp = DMatrix::from_row_slice(2, 2, &[0.0, 0.7, 0.0, 0.0]);
    let s = Snof::new(
        DMatrix::zeros(0, 0),
        DMatrix::zeros(0, 2),
        DMatrix::zeros(0, 0),
        DMatrix::zeros(2, 0),
        dqp.clone(),
        DMatrix::zeros(2, 0),
        DMatrix::zeros(0, 0),
        DMatrix::zeros(0, 2),
        DMatrix::zeros(0, 0),
        DVector::zeros(0),
        DVector::zeros(2),
        DVector::zeros(0),
        vec![Channel::tanh(); 2],
    )
    .unwrap();
    assert_eq!(snofcert::snof::nilpotency_index(&dqp), Some(2));
    let rep = check_well_posed(&s, 100);
    assert!(rep.verdict && rep.is_proof);
}

#[test]
fn small_gain_method_accepts_contractive_coupling() {
    let mut dqp = DMatrix::from_element(2, 2, 0.2);
    dqp[(0, 0)] = 0.3;
    let s = Snof::new(
        DMatrix::zeros(0, 0),
        DMatrix::zeros(0, 2),
        DMatrix::zeros(0, 0),
        DMatrix::zeros(2, 0),
        dqp,
        DMatrix::zeros(2, 0),
        DMatrix::zeros(0, 0),
        DMatrix::zeros(0, 2),
        DMatrix::zeros(0, 0),
        DVector::zeros(0),
        DVector::zeros(2),
        DVector::zeros(0),
        vec![Channel::tanh(); 2],
    )
    .unwrap();
    let rep = check_well_posed(&s, 100);
    assert!(rep.verdict && rep.is_proof);
    assert!(matches!(rep.method, WellPosednessMethod::SmallGain { .. }));
}

#[test]
fn scalar_gain_two_coupling_is_rejected_with_singular_witness() {
    let s = scalar_snof(0.5, 1.0, 1.0, 2.0, Channel::tanh());
    let rep = check_well_posed(&s, 1_000);
    assert!(!rep.verdict, "I − 2Δ is singular at Δ = 0.5");
    assert!(!rep.is_proof);
    match rep.method {
        WellPosednessMethod::Randomized { min_abs_det, worst_delta, .. } => {
            assert!(min_abs_det < 1e-9);
            assert!((worst_delta[0] - 0.5).abs() < 1e-12, "witness Δ = {worst_delta:?}");
        }
        other => panic!("expected randomized method, got {other:?}"),
    }
}

#[test]
fn proof_methods_are_sound_over_sampled_diagonal_gains() {
    // For any proved verdict, 10⁵ random diagonal gains in [0,1]^h must keep
    // I − Dqp·Δ invertible; for the structural methods the determinant is 1.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut strict = DMatrix::zeros(3, 3);
    strict[(1, 0)] = 0.8;
    strict[(2, 0)] = -1.7;
    strict[(2, 1)] = 2.5;
    let cases = [
        (strict, true),
        (DMatrix::from_row_slice(2, 2, &[0.0, 2.5, 0.0, 0.0]), true), // permuted triangular
        (DMatrix::from_row_slice(2, 2, &[0.4, 0.3, 0.2, 0.1]), false), // small gain
    ];
    for (dqp, det_is_one) in cases {
        let h = dqp.nrows();
        let s = Snof::new(
            DMatrix::zeros(0, 0),
            DMatrix::zeros(0, h),
            DMatrix::zeros(0, 0),
            DMatrix::zeros(h, 0),
            dqp.clone(),
            DMatrix::zeros(h, 0),
            DMatrix::zeros(0, 0),
            DMatrix::zeros(0, h),
            DMatrix::zeros(0, 0),
            DVector::zeros(0),
            DVector::zeros(h),
            DVector::zeros(0),
            vec![Channel::tanh(); h],
        )
        .unwrap();
        let rep = check_well_posed(&s, 0);
        assert!(rep.verdict && rep.is_proof, "method: {:?}", rep.method);
        for _ in 0..100_000 {
            let mut m = DMatrix::identity(h, h);
            for i in 0..h {
                for j in 0..h {
                    m[(i, j)] -= dqp[(i, j)] * rng.gen_range(0.0..=1.0);
                }
            }
            let det: f64 = m.lu().determinant();
            assert!(det.abs() > 1e-9, "sampled determinant too small: {det}");
            if det_is_one {
                assert!((det - 1.0).abs() < 1e-9, "structural method must give det 1, got {det}");
            }
        }
    }
}

// ---------------------------------------------------------------------------
// loop_transform_sigmoid
// ---------------------------------------------------------------------------

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Evaluate the static transformer on a channel-argument vector.
fn transformer_output(g: &Snof, q_in: &DVector<f64>) -> DVector<f64> {
    g.eval_step(&DVector::zeros(0), q_in).unwrap().y
}

#[test]
fn sigmoid_transformer_reproduces_sigmoid_at_zero() {
    let g = loop_transform_sigmoid(1);
    let y = transformer_output(&g, &DVector::from_element(1, 0.0));
    assert!((y[0] - 0.5).abs() < 1e-15);
}

#[test]
fn sigmoid_transformer_matches_closed_form_at_two() {
    let g = loop_transform_sigmoid(1);
    let y = transformer_output(&g, &DVector::from_element(1, 2.0));
    let expected = 0.5 * 1.0f64.tanh() + 0.5;
    assert!((y[0] - expected).abs() < 1e-15);
    assert!((y[0] - 0.880797).abs() < 1e-6);
    assert!((y[0] - sigmoid(2.0)).abs() < 1e-15);
}

#[test]
fn sigmoid_transformer_is_exact_on_dense_grid() {
    let g = loop_transform_sigmoid(1);
    let mut worst: f64 = 0.0;
    for k in 0..10_000 {
        let q = -10.0 + 20.0 * k as f64 / 9_999.0;
        let y = transformer_output(&g, &DVector::from_element(1, q));
        worst = worst.max((y[0] - sigmoid(q)).abs());
    }
    assert!(worst < 1e-12, "worst grid error {worst}");
}

// ---------------------------------------------------------------------------
// star_compose
// ---------------------------------------------------------------------------

/// Co-simulate the interconnection of `m` and a transformer `g` directly
/// (joint damped fixed point over both channel loops), as an independent
/// oracle for the composed operator.
fn co_simulate_step(
    m: &Snof,
    g: &Snof,
    x_m: &DVector<f64>,
    x_g: &DVector<f64>,
    u: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
    let mut q_m = DVector::zeros(m.h());
    let mut q_g = DVector::zeros(g.h());
    for _ in 0..200_000 {
        let p_g = g.gamma(&q_g);
        let p_m = &g.cy * x_g + &g.dyp * &p_g + &g.dyu * &q_m + &g.beta_o;
        let q_m_new = &m.cq * x_m + &m.dqp * &p_m + &m.dqu * u + &m.beta_q;
        let q_g_new = &g.cq * x_g + &g.dqp * &p_g + &g.dqu * &q_m + &g.beta_q;
        let r = (&q_m_new - &q_m).amax().max((&q_g_new - &q_g).amax());
        q_m = 0.5 * &q_m + 0.5 * q_m_new;
        q_g = 0.5 * &q_g + 0.5 * q_g_new;
        if r < 1e-14 {
            break;
        }
    }
    let p_g = g.gamma(&q_g);
    let p_m = &g.cy * x_g + &g.dyp * &p_g + &g.dyu * &q_m + &g.beta_o;
    let x_m_next = &m.a * x_m + &m.bp * &p_m + &m.bu * u + &m.beta_x;
    let x_g_next = &g.a * x_g + &g.bp * &p_g + &g.bu * &q_m + &g.beta_x;
    let y = &m.cy * x_m + &m.dyp * &p_m + &m.dyu * u + &m.beta_o;
    (x_m_next, x_g_next, y)
}

fn random_host(rng: &mut ChaCha8Rng, n: usize, h: usize, mu: usize, l: usize) -> Snof {
    Snof::new(
        rand_mat(rng, n, n, 0.5),
        rand_mat(rng, n, h, 0.5),
        rand_mat(rng, n, mu, 0.5),
        rand_mat(rng, h, n, 0.5),
        rand_mat(rng, h, h, 0.3),
        rand_mat(rng, h, mu, 0.5),
        rand_mat(rng, l, n, 0.5),
        rand_mat(rng, l, h, 0.5),
        rand_mat(rng, l, mu, 0.5),
        rand_vec(rng, n, 0.2),
        rand_vec(rng, h, 0.2),
        rand_vec(rng, l, 0.2),
        vec![Channel::identity(); h],
    )
    .unwrap()
}

#[test]
fn star_compose_with_zero_feedthrough_transformer_rewires_host_blocks() {
    // Transformer without q→p feedthrough: the interconnection inverse is
    // the identity and the composed blocks are plain products.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let m = random_host(&mut rng, 2, 1, 1, 1);
    let g = snofcert::snof::tanh_passthrough(1);
    let c = star_compose(&m, &g).unwrap();
    assert_eq!(c.n(), 2);
    assert_eq!(c.h(), 1);
    // With Dyu_g = 0 and Cy_g empty-state, q_c = Dqu_g (Cq_m x + Dqp_m Dyp_g p + …).
    assert!((&c.cq.columns(0, 2) - &m.cq).amax() < 1e-15);
    assert!((&c.dqp - &m.dqp).amax() < 1e-15);
    assert!((&c.a - &m.a).amax() < 1e-15);
    assert!((&c.bp - &m.bp).amax() < 1e-15);
}

#[test]
fn star_compose_matches_co_simulation_on_random_systems() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..10 {
        let m = random_host(&mut rng, 2, 1, 1, 1);
        let g = if trial % 2 == 0 {
            loop_transform_sigmoid(1)
        } else {
            snofcert::snof::tanh_passthrough(1)
        };
        let c = star_compose(&m, &g).unwrap();
        let mut x_m = rand_vec(&mut rng, 2, 0.5);
        let mut x_g = DVector::zeros(0);
        let mut x_c = x_m.clone();
        let mut worst: f64 = 0.0;
        for _ in 0..50 {
            let u = rand_vec(&mut rng, 1, 0.5);
            let (xm2, xg2, y_ref) = co_simulate_step(&m, &g, &x_m, &x_g, &u);
            let step = c.eval_step(&x_c, &u).unwrap();
            worst = worst.max((&step.y - &y_ref).amax());
            x_m = xm2;
            x_g = xg2;
            x_c = step.x_next;
            worst = worst.max((&x_c - &x_m).amax());
        }
        assert!(worst < 1e-12, "composite vs co-simulation diff {worst} (trial {trial})");
    }
}

#[test]
fn star_compose_rejects_singular_interconnection() {
    // Host with unit q→p coupling against a transformer with unit p→q
    // feedthrough makes I − Dqp·Dyu singular.
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut m = random_host(&mut rng, 1, 1, 1, 1);
    m.dqp[(0, 0)] = 1.0;
    let g = Snof::new(
        DMatrix::zeros(0, 0),
        DMatrix::zeros(0, 1),
        DMatrix::zeros(0, 1),
        DMatrix::zeros(1, 0),
        DMatrix::zeros(1, 1),
        DMatrix::identity(1, 1),
        DMatrix::zeros(1, 0),
        DMatrix::zeros(1, 1),
        DMatrix::identity(1, 1), // p = q feedthrough
        DVector::zeros(0),
        DVector::zeros(1),
        DVector::zeros(1),
        vec![Channel::tanh(); 1],
    )
    .unwrap();
    assert!(star_compose(&m, &g).is_err());
}

// ---------------------------------------------------------------------------
// JSON interchange
// ---------------------------------------------------------------------------

#[test]
fn json_round_trip_preserves_all_blocks_and_channels() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut s = random_host(&mut rng, 3, 2, 2, 1);
    s.nl = vec![Channel::tanh(), Channel::saturation(0.0, 1.0)];
    let text = s.to_json().unwrap();
    let back = Snof::from_json(&text).unwrap();
    assert_eq!(s, back);
}

#[test]
fn json_rejects_ragged_matrices() {
    let text = r#"{"a": [[1.0],[2.0, 3.0]], "bp": [[]], "bu": [[]], "cq": [],
        "dqp": [], "dqu": [], "cy": [], "dyp": [], "dyu": [],
        "beta_x": [0.0], "beta_q": [], "beta_o": [], "nl": []}"#;
    assert!(Snof::from_json(text).is_err());
}
