//! Global asymptotic stability certificates: operating-point shifting,
//! assembly of the Lyapunov/multiplier matrix pencil, semidefinite
//! feasibility, and a simulation-based falsification harness.
//!
//! The Lyapunov function certified here is
//!
//! ```text
//! V(x̃) = x̃ᵀ P x̃ + 2 Σ_i Q_i ∫₀^{q_i} φ_i(σ)dσ + 2 Σ_i Q̃_i ∫₀^{q_i} (ξ_i σ − φ_i(σ))dσ
//! ```
//!
//! with x̃ = [x; p; q]. Along any trajectory z = [x_k; p_k; p_{k+1}] the
//! difference V_{k+1} − V_k is bounded above by zᵀ G z, where G is affine in
//! (P, Q, Q̃, T, T̃, N): the quadratic part is exact, the integral
//! differences are over-approximated by slope-restriction bounds, and the
//! sector (T, T̃) and incremental-slope (N) inequalities are added as
//! S-procedure terms. G ≺ 0 therefore certifies global asymptotic stability
//! of the origin of the shifted system.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::quad::adaptive_simpson;
use crate::sdp::{
    max_eig_sym, min_eig_sym, solve_feasibility_sdp, sym_basis, sym_dim, vec_to_sym,
    FeasibilityProblem, SdpBlock, SolveOptions, SolveStatus,
};
use crate::snof::{ChannelKind, Snof};

// ---------------------------------------------------------------------------
// Equilibrium shifting
// ---------------------------------------------------------------------------

/// Operating point of the frozen-reference loop plus the bias-free,
/// re-centered operator around it.
#[derive(Debug, Clone)]
pub struct EquilibriumShift {
    pub x_star: DVector<f64>,
    pub q_star: DVector<f64>,
    pub p_star: DVector<f64>,
    /// Shifted operator: zero biases, no exogenous input, channels
    /// re-centered so Γ̃(0) = 0.
    pub shifted: Snof,
    pub residual: f64,
    /// Saturation channels whose equilibrium argument sits at or beyond a
    /// saturation bound; the certificate is still attempted but the sector
    /// validity at such a corner is directional.
    pub saturated_channels: Vec<usize>,
}

fn equilibrium_residual(
    s: &Snof,
    r: &DVector<f64>,
    x: &DVector<f64>,
    q: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let p = s.gamma(q);
    let r1 = &s.a * x - x + &s.bp * &p + &s.bu * r + &s.beta_x;
    let r2 = &s.cq * x + &s.dqp * &p + &s.dqu * r + &s.beta_q - q;
    (r1, r2)
}

/// Solve the coupled fixed point (x*, q*, p*) of the loop with the reference
/// frozen at `setpoint`, and return the shifted operator. Newton on (x, q)
/// with damping; falls back to long-run co-simulation for the initial guess
/// when Newton stalls.
pub fn shift_equilibrium(s: &Snof, setpoint: &DVector<f64>) -> Result<EquilibriumShift> {
    if setpoint.len() != s.m() {
        return Err(Error::DimensionMismatch(format!(
            "setpoint has {} entries, loop expects {}",
            setpoint.len(),
            s.m()
        )));
    }
    let n = s.n();
    let h = s.h();

    let newton = |x0: &DVector<f64>, q0: &DVector<f64>| -> (DVector<f64>, DVector<f64>, f64) {
        let mut x = x0.clone();
        let mut q = q0.clone();
        let (mut r1, mut r2) = equilibrium_residual(s, setpoint, &x, &q);
        let mut res = r1.amax().max(r2.amax());
        for _ in 0..200 {
            if res < 1e-13 {
                break;
            }
            let d = s.gamma_deriv(&q);
            let mut jac = DMatrix::zeros(n + h, n + h);
            jac.view_mut((0, 0), (n, n)).copy_from(&(&s.a - DMatrix::identity(n, n)));
            for j in 0..h {
                for i in 0..n {
                    jac[(i, n + j)] = s.bp[(i, j)] * d[j];
                }
            }
            jac.view_mut((n, 0), (h, n)).copy_from(&s.cq);
            for j in 0..h {
                for i in 0..h {
                    jac[(n + i, n + j)] = s.dqp[(i, j)] * d[j] - if i == j { 1.0 } else { 0.0 };
                }
            }
            let mut rhs = DVector::zeros(n + h);
            rhs.rows_mut(0, n).copy_from(&(-&r1));
            rhs.rows_mut(n, h).copy_from(&(-&r2));
            let step = match jac.clone().lu().solve(&rhs) {
                Some(st) => st,
                None => jac.svd(true, true).solve(&rhs, 1e-12).unwrap_or_else(|_| rhs.clone()),
            };
            // Damped update: halve until the residual does not get worse.
            let mut alpha = 1.0;
            let mut improved = false;
            for _ in 0..40 {
                let x_new = &x + step.rows(0, n) * alpha;
                let q_new = &q + step.rows(n, h) * alpha;
                let (r1n, r2n) = equilibrium_residual(s, setpoint, &x_new, &q_new);
                let res_new = r1n.amax().max(r2n.amax());
                if res_new < res {
                    x = x_new;
                    q = q_new;
                    r1 = r1n;
                    r2 = r2n;
                    res = res_new;
                    improved = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !improved {
                break;
            }
        }
        (x, q, res)
    };

    // Initial guess: zero state; saturation channels start mid-range so the
    // Newton Jacobian sees a live (slope > 0) channel.
    let q_init = DVector::from_fn(h, |i, _| match s.nl[i].kind {
        ChannelKind::Saturation { lo, hi } => 0.5 * (lo + hi) - s.nl[i].q_shift,
        _ => 0.0,
    });
    let (mut x, mut q, mut res) = newton(&DVector::zeros(n), &q_init);

    if res >= 1e-10 {
        // Co-simulation fallback: roll the loop forward to near-convergence,
        // then polish with Newton from there.
        let mut xs = DVector::zeros(n);
        let mut settled = false;
        for _ in 0..1_000_000 {
            let step = s.eval_step(&xs, setpoint)?;
            let delta = (&step.x_next - &xs).amax();
            xs = step.x_next;
            if delta < 1e-13 {
                settled = true;
                break;
            }
        }
        let q_guess = {
            let c = &s.cq * &xs + &s.dqu * setpoint + &s.beta_q;
            s.solve_channel_loop(&c)?
        };
        let (x2, q2, res2) = newton(&xs, &q_guess);
        if res2 < res {
            x = x2;
            q = q2;
            res = res2;
        }
        if res >= 1e-10 {
            return Err(Error::NoEquilibrium(format!(
                "residual {res:.3e} after Newton and {}-step co-simulation (settled: {settled})",
                1_000_000
            )));
        }
    }

    let p = s.gamma(&q);
    let saturated: Vec<usize> = (0..h)
        .filter(|&i| match s.nl[i].kind {
            ChannelKind::Saturation { lo, hi } => {
                let arg = q[i] + s.nl[i].q_shift;
                arg <= lo + 1e-9 || arg >= hi - 1e-9
            }
            _ => false,
        })
        .collect();

    let nl_shifted: Vec<_> = (0..h).map(|i| s.nl[i].shifted(q[i])).collect();
    let l = s.l();
    let shifted = Snof::new(
        s.a.clone(),
        s.bp.clone(),
        DMatrix::zeros(n, 0),
        s.cq.clone(),
        s.dqp.clone(),
        DMatrix::zeros(h, 0),
        s.cy.clone(),
        s.dyp.clone(),
        DMatrix::zeros(l, 0),
        DVector::zeros(n),
        DVector::zeros(h),
        DVector::zeros(l),
        nl_shifted,
    )?;

    Ok(EquilibriumShift { x_star: x, q_star: q, p_star: p, shifted, residual: res, saturated_channels: saturated })
}

// ---------------------------------------------------------------------------
// LMI pencil
// ---------------------------------------------------------------------------

/// Where each decision variable lives in the flat θ vector: the symmetric
/// coordinates of P first, then the five diagonal multiplier families.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariableLayout {
    pub n: usize,
    pub h: usize,
    /// Side length of P (and of G): n + 2h.
    pub d_p: usize,
    pub p_len: usize,
    pub q_off: usize,
    pub q_tilde_off: usize,
    pub t_off: usize,
    pub t_tilde_off: usize,
    pub n_off: usize,
    pub total: usize,
}

/// The assembled feasibility problem plus enough structure to re-evaluate
/// G(θ) independently of the solver.
#[derive(Debug, Clone)]
pub struct LmiPencil {
    pub problem: FeasibilityProblem,
    pub layout: VariableLayout,
    /// Coefficient matrices of G per variable (G(θ) = Σ_j θ_j·g_terms[j]).
    pub g_terms: Vec<DMatrix<f64>>,
    /// Trajectory selectors, exposed for soundness checks: rows of
    /// [x; p; q] at step k (e0) and k+1 (e1) over the basis z = [x; p; p⁺].
    pub e0: DMatrix<f64>,
    pub e1: DMatrix<f64>,
}

fn outer_sym(a: &DVector<f64>, b: &DVector<f64>) -> DMatrix<f64> {
    a * b.transpose() + b * a.transpose()
}

/// Assemble the affine pencil G(P, Q, Q̃, T, T̃, N) and the block feasibility
/// problem {−G ≻ 0, P ≻ 0, every multiplier ≥ 0, trace cap}.
pub fn build_lmi(shift: &EquilibriumShift) -> Result<LmiPencil> {
    let s = &shift.shifted;
    let n = s.n();
    let h = s.h();
    for (i, ch) in s.nl.iter().enumerate() {
        if !(ch.xi > 0.0) || !(ch.mu > 0.0) {
            return Err(Error::UnsupportedChannel {
                index: i,
                msg: format!("sector ξ={} / slope μ={} must be positive", ch.xi, ch.mu),
            });
        }
    }
    let dz = n + 2 * h;
    let d_p = n + 2 * h;

    // Selectors over z = [x; p; p⁺].
    let mut x_sel = DMatrix::zeros(n, dz);
    x_sel.view_mut((0, 0), (n, n)).copy_from(&DMatrix::identity(n, n));
    let mut pk = DMatrix::zeros(h, dz);
    pk.view_mut((0, n), (h, h)).copy_from(&DMatrix::identity(h, h));
    let mut pk1 = DMatrix::zeros(h, dz);
    pk1.view_mut((0, n + h), (h, h)).copy_from(&DMatrix::identity(h, h));
    let qk = &s.cq * &x_sel + &s.dqp * &pk;
    let x1 = &s.a * &x_sel + &s.bp * &pk;
    let qk1 = &s.cq * &x1 + &s.dqp * &pk1;
    let stack3 = |a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>| -> DMatrix<f64> {
        let mut out = DMatrix::zeros(a.nrows() + b.nrows() + c.nrows(), dz);
        out.view_mut((0, 0), (a.nrows(), dz)).copy_from(a);
        out.view_mut((a.nrows(), 0), (b.nrows(), dz)).copy_from(b);
        out.view_mut((a.nrows() + b.nrows(), 0), (c.nrows(), dz)).copy_from(c);
        out
    };
    let e0 = stack3(&x_sel, &pk, &qk);
    let e1 = stack3(&x1, &pk1, &qk1);

    let basis = sym_basis(d_p);
    let p_len = sym_dim(d_p);
    let layout = VariableLayout {
        n,
        h,
        d_p,
        p_len,
        q_off: p_len,
        q_tilde_off: p_len + h,
        t_off: p_len + 2 * h,
        t_tilde_off: p_len + 3 * h,
        n_off: p_len + 4 * h,
        total: p_len + 5 * h,
    };

    let mut g_terms: Vec<DMatrix<f64>> = Vec::with_capacity(layout.total);
    for e in &basis {
        g_terms.push(e1.transpose() * e * &e1 - e0.transpose() * e * &e0);
    }
    let row = |m: &DMatrix<f64>, i: usize| -> DVector<f64> { m.row(i).transpose() };
    for i in 0..h {
        // Q_i: upper slope-restriction bound on the ∫φ difference.
        let dq = row(&qk1, i) - row(&qk, i);
        let dp = row(&pk1, i) - row(&pk, i);
        let mu = s.nl[i].mu;
        g_terms.push(outer_sym(&row(&pk1, i), &dq) - (&dp * dp.transpose()) / mu);
    }
    for i in 0..h {
        // Q̃_i: bound on the ∫(ξσ − φ) difference.
        let dq = row(&qk1, i) - row(&qk, i);
        let dp = row(&pk1, i) - row(&pk, i);
        let (xi, mu) = (s.nl[i].xi, s.nl[i].mu);
        g_terms.push(
            (row(&qk1, i) * row(&qk1, i).transpose() - row(&qk, i) * row(&qk, i).transpose()) * xi
                - outer_sym(&row(&pk, i), &dq)
                - (&dp * dp.transpose()) / mu,
        );
    }
    for i in 0..h {
        // T_i: sector inequality at step k.
        let xi = s.nl[i].xi;
        g_terms.push(outer_sym(&row(&pk, i), &(row(&qk, i) * xi - row(&pk, i))));
    }
    for i in 0..h {
        // T̃_i: sector inequality at step k+1.
        let xi = s.nl[i].xi;
        g_terms.push(outer_sym(&row(&pk1, i), &(row(&qk1, i) * xi - row(&pk1, i))));
    }
    for i in 0..h {
        // N_i: incremental slope inequality between the two steps.
        let dq = row(&qk1, i) - row(&qk, i);
        let dp = row(&pk1, i) - row(&pk, i);
        let mu = s.nl[i].mu;
        g_terms.push(outer_sym(&dp, &(dq * mu - &dp)));
    }

    // Feasibility blocks: −G ≻ 0, P ≻ 0, each multiplier > 0 (as 1×1).
    let neg_g = SdpBlock {
        f0: DMatrix::zeros(dz, dz),
        terms: g_terms.iter().enumerate().map(|(j, g)| (j, -g)).collect(),
    };
    let p_block = SdpBlock {
        f0: DMatrix::zeros(d_p, d_p),
        terms: basis.iter().enumerate().map(|(j, e)| (j, e.clone())).collect(),
    };
    let mut blocks = vec![neg_g, p_block];
    for j in layout.q_off..layout.total {
        blocks.push(SdpBlock { f0: DMatrix::zeros(1, 1), terms: vec![(j, DMatrix::identity(1, 1))] });
    }
    let mut weights = DVector::zeros(layout.total);
    for (j, e) in basis.iter().enumerate() {
        weights[j] = e.trace();
    }
    for j in layout.q_off..layout.total {
        weights[j] = 1.0;
    }
    let cap = 10.0 * (d_p as f64 + 5.0 * h as f64);

    // Interior start: P = I, every multiplier 1. This keeps every block but
    // −G strictly inside the cone so the phase-I slack measures the margin
    // of G alone.
    let mut start = DVector::zeros(layout.total);
    start
        .rows_mut(0, p_len)
        .copy_from(&crate::sdp::sym_to_vec(&DMatrix::identity(d_p, d_p)));
    for j in layout.q_off..layout.total {
        start[j] = 1.0;
    }

    Ok(LmiPencil {
        problem: FeasibilityProblem {
            dim: layout.total,
            blocks,
            weights,
            cap,
            interior_start: Some(start),
        },
        layout,
        g_terms,
        e0,
        e1,
    })
}

impl LmiPencil {
    /// Evaluate the pencil at a flat variable vector.
    pub fn eval_g(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        let dz = self.e0.ncols();
        let mut g = DMatrix::zeros(dz, dz);
        for (j, term) in self.g_terms.iter().enumerate() {
            if theta[j] != 0.0 {
                g += term * theta[j];
            }
        }
        g
    }
}

// ---------------------------------------------------------------------------
// Certificate
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Feasible,
    Infeasible,
    SolverFailure,
}

/// Solver options mirroring the command-line knobs.
#[derive(Debug, Clone)]
pub struct CertifyOptions {
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iters: usize,
    /// Strictness margin ε: feasibility means G ⪯ −εI.
    pub margin: f64,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        CertifyOptions { eps_abs: 1e-5, eps_rel: 1e-5, max_iters: 100_000, margin: 1e-6 }
    }
}

#[derive(Debug, Clone)]
pub struct Certificate {
    pub verdict: Verdict,
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub q_tilde: DVector<f64>,
    pub t: DVector<f64>,
    pub t_tilde: DVector<f64>,
    pub n_mult: DVector<f64>,
    /// λ_max(G) recomputed from the raw matrices at the returned variables.
    pub lambda_max_g: f64,
    pub p_min_eig: f64,
    pub margin: f64,
    pub iterations: usize,
    /// Phase-I objective reached by the solver (diagnostic).
    pub t_star: f64,
}

/// Decide feasibility of the pencil and return the (margin-normalized)
/// certificate. The verdict is confirmed a posteriori by eigenvalue
/// computation on the assembled G, independent of the solver's claim.
pub fn solve_feasibility(pencil: &LmiPencil, opts: &CertifyOptions) -> Result<Certificate> {
    let solve_opts = SolveOptions {
        eps: opts.eps_abs.min(1e-7),
        max_iters: opts.max_iters.min(2_000),
        early_exit: opts.margin.max(1e-9),
    };
    let report = solve_feasibility_sdp(&pencil.problem, &solve_opts)?;
    let lay = &pencil.layout;

    let unpack = |theta: &DVector<f64>| -> Certificate {
        let g = pencil.eval_g(theta);
        let p = vec_to_sym(&theta.rows(0, lay.p_len).clone_owned(), lay.d_p);
        let seg = |off: usize| theta.rows(off, lay.h).clone_owned();
        Certificate {
            verdict: Verdict::SolverFailure,
            lambda_max_g: if g.nrows() > 0 { max_eig_sym(&g) } else { 0.0 },
            p_min_eig: min_eig_sym(&p),
            p,
            q: seg(lay.q_off),
            q_tilde: seg(lay.q_tilde_off),
            t: seg(lay.t_off),
            t_tilde: seg(lay.t_tilde_off),
            n_mult: seg(lay.n_off),
            margin: opts.margin,
            iterations: report.iterations,
            t_star: report.t_star,
        }
    };

    match report.status {
        SolveStatus::Feasible => {
            // The pencil is homogeneous in θ, so rescale the solution to hit
            // the requested margin exactly: λ_max(G) = −ε.
            let g = pencil.eval_g(&report.theta);
            let lam = max_eig_sym(&g);
            if lam >= 0.0 {
                let mut cert = unpack(&report.theta);
                cert.verdict = Verdict::SolverFailure;
                return Ok(cert);
            }
            let scale = opts.margin / (-lam);
            let theta = &report.theta * scale;
            let mut cert = unpack(&theta);
            // A-posteriori verification from raw matrices.
            let ok = cert.lambda_max_g <= -opts.margin + 1e-7
                && cert.p_min_eig > 0.0
                && cert.q.min() >= 0.0
                && cert.q_tilde.min() >= 0.0
                && cert.t.min() >= 0.0
                && cert.t_tilde.min() >= 0.0
                && cert.n_mult.min() >= 0.0;
            cert.verdict = if ok { Verdict::Feasible } else { Verdict::SolverFailure };
            Ok(cert)
        }
        SolveStatus::Infeasible => {
            let mut cert = unpack(&report.theta);
            cert.verdict = Verdict::Infeasible;
            Ok(cert)
        }
        SolveStatus::Failure => {
            let mut cert = unpack(&report.theta);
            cert.verdict = Verdict::SolverFailure;
            Ok(cert)
        }
    }
}

// ---------------------------------------------------------------------------
// Lyapunov evaluation and certificate validation
// ---------------------------------------------------------------------------

/// Evaluates the certified Lyapunov function along states of the shifted
/// system, with closed-form channel integrals and an independent quadrature
/// path for cross-validation.
pub struct LyapunovEvaluator<'a> {
    pub shifted: &'a Snof,
    pub cert: &'a Certificate,
}

impl<'a> LyapunovEvaluator<'a> {
    fn assemble(&self, x: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        let s = self.shifted;
        let c = &s.cq * x + &s.beta_q;
        let q = s.solve_channel_loop(&c)?;
        let p = s.gamma(&q);
        Ok((q, p))
    }

    fn quadratic_part(&self, x: &DVector<f64>, q: &DVector<f64>, p: &DVector<f64>) -> f64 {
        let s = self.shifted;
        let mut xt = DVector::zeros(s.n() + 2 * s.h());
        xt.rows_mut(0, s.n()).copy_from(x);
        xt.rows_mut(s.n(), s.h()).copy_from(p);
        xt.rows_mut(s.n() + s.h(), s.h()).copy_from(q);
        (xt.transpose() * &self.cert.p * &xt)[0]
    }

    /// V(x) with closed-form channel integrals.
    pub fn value(&self, x: &DVector<f64>) -> Result<f64> {
        self.value_and_magnitude(x).map(|(v, _)| v)
    }

    /// V(x) plus the gross magnitude of the summed terms (the cancellation
    /// scale): the floating-point error of V is bounded by a small multiple
    /// of machine epsilon times this magnitude, which monotonicity checks
    /// must tolerate.
    pub fn value_and_magnitude(&self, x: &DVector<f64>) -> Result<(f64, f64)> {
        let s = self.shifted;
        let (q, p) = self.assemble(x)?;
        let mut xt = DVector::zeros(s.n() + 2 * s.h());
        xt.rows_mut(0, s.n()).copy_from(x);
        xt.rows_mut(s.n(), s.h()).copy_from(&p);
        xt.rows_mut(s.n() + s.h(), s.h()).copy_from(&q);
        let mut v = 0.0;
        let mut gross = 0.0;
        for i in 0..xt.len() {
            for j in 0..xt.len() {
                let term = xt[i] * self.cert.p[(i, j)] * xt[j];
                v += term;
                gross += term.abs();
            }
        }
        for i in 0..s.h() {
            let ch = &s.nl[i];
            let int_phi = ch.integral(q[i]);
            let int_rest = ch.xi * q[i] * q[i] * 0.5 - int_phi;
            let a = 2.0 * self.cert.q[i] * int_phi;
            let b = 2.0 * self.cert.q_tilde[i] * int_rest;
            v += a + b;
            gross += a.abs() + b.abs();
        }
        Ok((v, gross))
    }

    /// V(x) with the channel integrals evaluated by adaptive quadrature;
    /// exists purely to cross-check the closed forms.
    pub fn value_quadrature(&self, x: &DVector<f64>, tol: f64) -> Result<f64> {
        let (q, p) = self.assemble(x)?;
        let mut v = self.quadratic_part(x, &q, &p);
        for i in 0..self.shifted.h() {
            let ch = &self.shifted.nl[i];
            let int_phi = adaptive_simpson(&|t| ch.eval(t), 0.0, q[i], tol);
            let int_rest = ch.xi * q[i] * q[i] * 0.5 - int_phi;
            v += 2.0 * self.cert.q[i] * int_phi + 2.0 * self.cert.q_tilde[i] * int_rest;
        }
        Ok(v)
    }
}

/// One validation trial's failure evidence.
#[derive(Debug, Clone)]
pub struct Violation {
    pub trial: usize,
    pub x0: DVector<f64>,
    pub step: usize,
    pub kind: String,
}

#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub trials: usize,
    pub converged: usize,
    /// Largest relative Lyapunov increase observed (≤ tolerance on success).
    pub worst_v_increase: f64,
}

/// Falsification harness: simulate the shifted loop from random initial
/// states at several magnitudes and assert convergence to the origin within
/// `max_steps` and monotone decrease of V (up to 1e−9·V(x₀) numerical
/// tolerance). Trials run in parallel with independent RNG streams.
pub fn validate_certificate(
    shifted: &Snof,
    cert: &Certificate,
    trials: usize,
    seed: u64,
    radius: f64,
    max_steps: usize,
) -> Result<ValidationReport> {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    if cert.verdict != Verdict::Feasible {
        return Err(Error::FalsifiedCertificate(
            "validation requires a feasible certificate".into(),
        ));
    }
    let n = shifted.n();
    let results: Vec<std::result::Result<f64, Violation>> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(trial as u64));
            let scale = radius * 10f64.powi(-((trial % 4) as i32));
            let mut x = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
            let norm = x.norm();
            if norm > 0.0 {
                x *= scale / norm;
            }
            let eval = LyapunovEvaluator { shifted, cert };
            let (v0, g0) = eval.value_and_magnitude(&x).map_err(|e| Violation {
                trial,
                x0: x.clone(),
                step: 0,
                kind: format!("V(x0) failed: {e}"),
            })?;
            let mut v_prev = v0;
            let mut g_prev = g0;
            let mut worst = 0.0f64;
            let x0 = x.clone();
            let empty = DVector::zeros(0);
            for step in 0..max_steps {
                if x.amax() < 1e-6 {
                    return Ok(worst);
                }
                let st = shifted.eval_step(&x, &empty).map_err(|e| Violation {
                    trial,
                    x0: x0.clone(),
                    step,
                    kind: format!("step failed: {e}"),
                })?;
                x = st.x_next;
                let (v, g) = eval.value_and_magnitude(&x).map_err(|e| Violation {
                    trial,
                    x0: x0.clone(),
                    step,
                    kind: format!("V failed: {e}"),
                })?;
                // Relative tolerance plus a floor at the floating-point
                // cancellation noise of the two evaluations.
                let tol = 1e-9 * v0.abs() + 64.0 * f64::EPSILON * g.max(g_prev);
                if v > v_prev + tol {
                    return Err(Violation {
                        trial,
                        x0: x0.clone(),
                        step,
                        kind: format!("V increased: {v_prev} -> {v}"),
                    });
                }
                worst = worst.max((v - v_prev) / v0.abs().max(1e-300));
                v_prev = v;
                g_prev = g;
            }
            Err(Violation {
                trial,
                x0,
                step: max_steps,
                kind: format!("no convergence below 1e-6 within {max_steps} steps"),
            })
        })
        .collect();

    let mut converged = 0;
    let mut worst = 0.0f64;
    for r in results {
        match r {
            Ok(w) => {
                converged += 1;
                worst = worst.max(w);
            }
            Err(v) => {
                return Err(Error::FalsifiedCertificate(format!(
                    "trial {} from x0 norm {:.3e} failed at step {}: {}",
                    v.trial,
                    v.x0.norm(),
                    v.step,
                    v.kind
                )));
            }
        }
    }
    Ok(ValidationReport { trials, converged, worst_v_increase: worst })
}
