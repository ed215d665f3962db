//! A self-contained semidefinite feasibility solver.
//!
//! Problems are posed as a list of affine symmetric blocks
//! F_b(θ) = F_b0 + Σ_j θ_j·F_bj that must all be positive definite, plus a
//! single trace-normalization cap wᵀθ ≤ cap that rules the homogeneous
//! trivial solution in and bounds the feasible set. The solver runs phase-I
//! barrier path-following on
//!
//! ```text
//! minimize t   subject to   F_b(θ) + t·I ≻ 0 for all b,   wᵀθ < cap
//! ```
//!
//! A strictly feasible point of the original problem exists iff the optimum
//! t* is negative; the solver exits early as soon as t drops below zero by a
//! working margin, and declares infeasibility only after the central path
//! has converged with t* stuck at or above zero.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};

/// One affine positive-definiteness constraint F0 + Σ θ_j·Fj ≻ 0. The
/// variable list is sparse: `terms` pairs global variable indices with their
/// coefficient matrices (symmetric, same size as `f0`).
#[derive(Debug, Clone)]
pub struct SdpBlock {
    pub f0: DMatrix<f64>,
    pub terms: Vec<(usize, DMatrix<f64>)>,
}

/// Feasibility problem over `dim` scalar variables.
#[derive(Debug, Clone)]
pub struct FeasibilityProblem {
    pub dim: usize,
    pub blocks: Vec<SdpBlock>,
    /// Nonnegative weights of the trace-normalization cap wᵀθ ≤ cap.
    pub weights: DVector<f64>,
    pub cap: f64,
    /// Optional θ₀ that makes every block except the first strictly
    /// positive definite. When present, the phase-I slack t perturbs only
    /// the first block: the others are held inside the cone by the barrier
    /// from the start. This keeps the achievable t* tied to the hard block
    /// instead of the smallest margin across heterogeneously scaled easy
    /// blocks. When absent, θ starts at zero and t is added to all blocks.
    pub interior_start: Option<DVector<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    /// A strictly feasible θ was found (all blocks PD with margin).
    Feasible,
    /// The central path converged with t* ⪆ 0: no strictly feasible point.
    Infeasible,
    /// Iteration budget exhausted before either verdict.
    Failure,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub theta: DVector<f64>,
    /// Final phase-I objective; negative values certify strict feasibility.
    pub t_star: f64,
    pub iterations: usize,
    /// Worst (smallest) block eigenvalue at the returned θ.
    pub min_block_eig: f64,
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    /// Tolerance used both for the infeasibility margin (t* > −eps ⇒
    /// infeasible) and the inner Newton decrement target.
    pub eps: f64,
    pub max_iters: usize,
    /// Exit as soon as t falls below −early_exit.
    pub early_exit: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { eps: 1e-7, max_iters: 400, early_exit: 1e-6 }
    }
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eig_sym(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigen().eigenvalues.min()
}

/// Largest eigenvalue of a symmetric matrix.
pub fn max_eig_sym(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigen().eigenvalues.max()
}

/// Orthonormal-style basis of d×d symmetric matrices: diagonal units
/// e_i·e_iᵀ followed by off-diagonal pairs (e_i·e_jᵀ + e_j·e_iᵀ)/√2, in
/// row-major (i ≤ j) order. `sym_to_vec`/`vec_to_sym` are the matching
/// isometric coordinates.
pub fn sym_basis(d: usize) -> Vec<DMatrix<f64>> {
    let mut out = Vec::with_capacity(d * (d + 1) / 2);
    let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
    for i in 0..d {
        for j in i..d {
            let mut m = DMatrix::zeros(d, d);
            if i == j {
                m[(i, i)] = 1.0;
            } else {
                m[(i, j)] = inv_sqrt2;
                m[(j, i)] = inv_sqrt2;
            }
            out.push(m);
        }
    }
    out
}

pub fn sym_dim(d: usize) -> usize {
    d * (d + 1) / 2
}

/// Coordinates of a symmetric matrix in the [`sym_basis`] (isometry:
/// ‖vec‖₂ = ‖M‖_F).
pub fn sym_to_vec(m: &DMatrix<f64>) -> DVector<f64> {
    let d = m.nrows();
    let mut out = DVector::zeros(sym_dim(d));
    let sqrt2 = std::f64::consts::SQRT_2;
    let mut k = 0;
    for i in 0..d {
        for j in i..d {
            out[k] = if i == j { m[(i, i)] } else { sqrt2 * 0.5 * (m[(i, j)] + m[(j, i)]) };
            k += 1;
        }
    }
    out
}

/// Inverse of [`sym_to_vec`].
pub fn vec_to_sym(v: &DVector<f64>, d: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(d, d);
    let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
    let mut k = 0;
    for i in 0..d {
        for j in i..d {
            if i == j {
                out[(i, i)] = v[k];
            } else {
                out[(i, j)] = inv_sqrt2 * v[k];
                out[(j, i)] = inv_sqrt2 * v[k];
            }
            k += 1;
        }
    }
    out
}

struct Scaled {
    problem: FeasibilityProblem,
    col_scale: DVector<f64>,
}

/// Rescale each variable so its largest coefficient has unit Frobenius
/// norm; vastly improves Newton conditioning on physically scaled pencils.
fn scale_problem(p: &FeasibilityProblem) -> Scaled {
    let mut norm = DVector::from_element(p.dim, 0.0f64);
    for b in &p.blocks {
        for (j, f) in &b.terms {
            let n = f.norm();
            if n > norm[*j] {
                norm[*j] = n;
            }
        }
    }
    let col_scale = norm.map(|n| if n > 1e-300 { 1.0 / n } else { 1.0 });
    let blocks = p
        .blocks
        .iter()
        .map(|b| SdpBlock {
            f0: b.f0.clone(),
            terms: b.terms.iter().map(|(j, f)| (*j, f * col_scale[*j])).collect(),
        })
        .collect();
    let weights = DVector::from_fn(p.dim, |j, _| p.weights[j] * col_scale[j]);
    let interior_start = p
        .interior_start
        .as_ref()
        .map(|th| DVector::from_fn(p.dim, |j, _| th[j] / col_scale[j]));
    Scaled {
        problem: FeasibilityProblem { dim: p.dim, blocks, weights, cap: p.cap, interior_start },
        col_scale,
    }
}

/// Evaluate every block at (θ, t); returns Cholesky factors or None when
/// some block leaves the cone (also None when the cap constraint is hit).
fn factor_all(
    p: &FeasibilityProblem,
    theta: &DVector<f64>,
    t: f64,
    t_blocks: usize,
) -> Option<Vec<Cholesky<f64, nalgebra::Dyn>>> {
    let slack = p.cap - p.weights.dot(theta);
    if slack <= 0.0 {
        return None;
    }
    let mut out = Vec::with_capacity(p.blocks.len());
    for (bi, b) in p.blocks.iter().enumerate() {
        let mut s = b.f0.clone();
        for (j, f) in &b.terms {
            s += f * theta[*j];
        }
        if bi < t_blocks {
            let d = s.nrows();
            for i in 0..d {
                s[(i, i)] += t;
            }
        }
        out.push(Cholesky::new(s)?);
    }
    Some(out)
}

fn barrier_value(p: &FeasibilityProblem, factors: &[Cholesky<f64, nalgebra::Dyn>], theta: &DVector<f64>, t: f64, mu: f64) -> f64 {
    let slack = p.cap - p.weights.dot(theta);
    let mut val = t / mu - slack.ln();
    for ch in factors {
        let l = ch.l_dirty();
        let mut logdet = 0.0;
        for i in 0..l.nrows() {
            logdet += l[(i, i)].ln();
        }
        val -= 2.0 * logdet;
    }
    val
}

/// Phase-I barrier path-following. See the module docs for the scheme.
pub fn solve_feasibility_sdp(p: &FeasibilityProblem, opts: &SolveOptions) -> Result<SolveReport> {
    if p.weights.len() != p.dim {
        return Err(Error::DimensionMismatch("weight vector length must equal dim".into()));
    }
    let scaled = scale_problem(p);
    let sp = &scaled.problem;
    let k = sp.dim + 1; // θ plus the phase-I variable t (last index).

    // Strictly feasible start for the phase-I problem: with an interior
    // start, t perturbs only the first block; otherwise θ = 0 and t lifts
    // every block into the cone.
    let (mut theta, t_blocks) = match &sp.interior_start {
        Some(th0) => (th0.clone(), 1usize),
        None => (DVector::zeros(sp.dim), sp.blocks.len()),
    };
    let mut t = sp
        .blocks
        .iter()
        .take(t_blocks)
        .map(|b| {
            let mut s = b.f0.clone();
            for (j, f) in &b.terms {
                s += f * theta[*j];
            }
            -min_eig_sym(&s)
        })
        .fold(0.0f64, f64::max)
        + 1.0;
    let mut mu = 1.0f64;
    let mu_min = 1e-9;
    let mut iterations = 0usize;

    let finish = |theta_hat: &DVector<f64>, t: f64, status: SolveStatus, iterations: usize| {
        // Undo the variable scaling before reporting.
        let theta_out = DVector::from_fn(p.dim, |j, _| theta_hat[j] * scaled.col_scale[j]);
        let mut min_eig = f64::INFINITY;
        for b in &p.blocks {
            let mut s = b.f0.clone();
            for (j, f) in &b.terms {
                s += f * theta_out[*j];
            }
            min_eig = min_eig.min(min_eig_sym(&s));
        }
        SolveReport { status, theta: theta_out, t_star: t, iterations, min_block_eig: min_eig }
    };

    loop {
        // Inner Newton iterations at the current barrier weight μ.
        loop {
            if iterations >= opts.max_iters {
                return Ok(finish(&theta, t, SolveStatus::Failure, iterations));
            }
            iterations += 1;
            let factors = factor_all(sp, &theta, t, t_blocks)
                .ok_or_else(|| Error::SolverFailure("iterate left the cone".into()))?;

            // Gradient and Hessian of the barrier over (θ, t).
            let mut grad = DVector::zeros(k);
            let mut hess = DMatrix::zeros(k, k);
            grad[k - 1] += 1.0 / mu;
            let slack = sp.cap - sp.weights.dot(&theta);
            for j in 0..sp.dim {
                grad[j] += sp.weights[j] / slack;
            }
            for j in 0..sp.dim {
                for jj in 0..sp.dim {
                    hess[(j, jj)] += sp.weights[j] * sp.weights[jj] / (slack * slack);
                }
            }
            for (bi, (b, ch)) in sp.blocks.iter().zip(&factors).enumerate() {
                let d = b.f0.nrows();
                // W_j = L⁻¹ F_j L⁻ᵀ for each variable in the block, plus t
                // where the block carries the phase-I slack.
                let mut vars: Vec<usize> = b.terms.iter().map(|(j, _)| *j).collect();
                if bi < t_blocks {
                    vars.push(k - 1);
                }
                let mut ws: Vec<DMatrix<f64>> = Vec::with_capacity(vars.len());
                for (idx, _) in vars.iter().enumerate() {
                    let f = if idx < b.terms.len() {
                        b.terms[idx].1.clone()
                    } else {
                        DMatrix::identity(d, d)
                    };
                    let mut w = f;
                    ch.solve_mut(&mut w); // S⁻¹ F_j  (trace-equivalent to W_j pairings)
                    ws.push(w);
                }
                // grad_j = −tr(S⁻¹F_j); hess_{j,jj} = tr(S⁻¹F_j S⁻¹F_jj).
                for (a, &ja) in vars.iter().enumerate() {
                    grad[ja] -= ws[a].trace();
                    for (c, &jc) in vars.iter().enumerate().skip(a) {
                        let v = ws[a].dot(&ws[c].transpose());
                        hess[(ja, jc)] += v;
                        if jc != ja {
                            hess[(jc, ja)] += v;
                        }
                    }
                }
            }

            // Damped Newton step (Hessian regularized for safety).
            for i in 0..k {
                hess[(i, i)] += 1e-12;
            }
            let step = match Cholesky::<f64, nalgebra::Dyn>::new(hess.clone()) {
                Some(ch) => ch.solve(&(-&grad)),
                None => hess
                    .lu()
                    .solve(&(-&grad))
                    .ok_or_else(|| Error::SolverFailure("singular Newton system".into()))?,
            };
            let decrement2 = -grad.dot(&step);

            // Backtracking line search on the barrier value.
            let f_cur = barrier_value(sp, &factors, &theta, t, mu);
            let mut alpha = 1.0f64;
            let mut accepted = false;
            for _ in 0..60 {
                let theta_new = &theta + step.rows(0, sp.dim) * alpha;
                let t_new = t + alpha * step[k - 1];
                if let Some(factors_new) = factor_all(sp, &theta_new, t_new, t_blocks) {
                    let f_new = barrier_value(sp, &factors_new, &theta_new, t_new, mu);
                    if f_new <= f_cur - 1e-4 * alpha * decrement2.max(0.0) {
                        theta = theta_new;
                        t = t_new;
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if std::env::var_os("SNOFCERT_SDP_DEBUG").is_some() {
                eprintln!(
                    "iter {iterations}: mu = {mu:.2e}, t = {t:.6e}, dec2 = {decrement2:.3e}, accepted = {accepted}"
                );
            }
            if !accepted {
                // Numerically stuck: treat the current iterate as converged
                // for this μ and let the outer loop decide.
                break;
            }
            if t < -opts.early_exit {
                return Ok(finish(&theta, t, SolveStatus::Feasible, iterations));
            }
            if decrement2.max(0.0) < opts.eps {
                break;
            }
        }

        if mu <= mu_min {
            let status = if t < -opts.eps { SolveStatus::Feasible } else { SolveStatus::Infeasible };
            return Ok(finish(&theta, t, status, iterations));
        }
        mu *= 0.2;
    }
}
