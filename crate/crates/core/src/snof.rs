//! Core operator form: an affine state/channel/output map in feedback with a
//! diagonal static nonlinearity, plus evaluation, well-posedness analysis,
//! the sigmoid loop transformation, and star-product composition.
//!
//! The operator is
//!
//! ```text
//! x⁺ = A x + Bp p + Bu u + βx
//! q  = Cq x + Dqp p + Dqu u + βq
//! y  = Cy x + Dyp p + Dyu u + βo
//! p  = Γ(q)   (componentwise static channels)
//! ```
//!
//! with dimensions n (state), h (channels), m (input), l (output).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Static channel function family. Every kind passes through the origin in
/// its *shifted* form `φ̃(σ) = φ(σ + q_shift) − p_shift` (with
/// `p_shift = φ(q_shift)`), which is how operating-point re-centring is
/// represented.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChannelKind {
    Tanh,
    Saturation { lo: f64, hi: f64 },
    Identity,
}

/// One diagonal channel: the function kind, its declared sector upper bound
/// `xi` and slope upper bound `mu` (lower bounds are fixed at zero), and an
/// optional operating-point shift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    #[serde(flatten)]
    pub kind: ChannelKind,
    pub xi: f64,
    pub mu: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub q_shift: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub p_shift: f64,
}

fn is_zero(x: &f64) -> bool {
    *x == 0.0
}

impl Channel {
    pub fn tanh() -> Self {
        Channel { kind: ChannelKind::Tanh, xi: 1.0, mu: 1.0, q_shift: 0.0, p_shift: 0.0 }
    }

    pub fn saturation(lo: f64, hi: f64) -> Self {
        assert!(lo < hi, "saturation bounds must satisfy lo < hi");
        Channel { kind: ChannelKind::Saturation { lo, hi }, xi: 1.0, mu: 1.0, q_shift: 0.0, p_shift: 0.0 }
    }

    pub fn identity() -> Self {
        Channel { kind: ChannelKind::Identity, xi: 1.0, mu: 1.0, q_shift: 0.0, p_shift: 0.0 }
    }

    /// Re-centred copy of this channel around the operating point `q_star`
    /// (expressed in this channel's current argument coordinates). The
    /// returned function satisfies φ̃(0) = 0 exactly.
    pub fn shifted(&self, q_star: f64) -> Self {
        let raw = Channel { q_shift: 0.0, p_shift: 0.0, ..*self };
        let q_shift = self.q_shift + q_star;
        Channel { q_shift, p_shift: raw.eval(q_shift), ..*self }
    }

    /// φ̃(σ) = φ(σ + q_shift) − p_shift.
    pub fn eval(&self, sigma: f64) -> f64 {
        let t = sigma + self.q_shift;
        let raw = match self.kind {
            ChannelKind::Tanh => t.tanh(),
            ChannelKind::Saturation { lo, hi } => t.clamp(lo, hi),
            ChannelKind::Identity => t,
        };
        raw - self.p_shift
    }

    /// dφ̃/dσ.
    pub fn deriv(&self, sigma: f64) -> f64 {
        let t = sigma + self.q_shift;
        match self.kind {
            ChannelKind::Tanh => {
                let c = t.tanh();
                1.0 - c * c
            }
            ChannelKind::Saturation { lo, hi } => {
                if t > lo && t < hi {
                    1.0
                } else {
                    0.0
                }
            }
            ChannelKind::Identity => 1.0,
        }
    }

    /// Closed-form ∫₀^x φ̃(σ) dσ.
    pub fn integral(&self, x: f64) -> f64 {
        let q0 = self.q_shift;
        match self.kind {
            ChannelKind::Tanh => {
                // ln cosh(x+q0) − ln cosh(q0) = ln(cosh x + tanh(q0)·sinh x)
                // via the cosh addition theorem; the ln_1p form avoids the
                // catastrophic cancellation of subtracting two O(1)
                // antiderivative values when the result is O(x²).
                if x.abs() < 40.0 {
                    let s_half = (0.5 * x).sinh();
                    let u = 2.0 * s_half * s_half + q0.tanh() * x.sinh();
                    u.ln_1p() - self.p_shift * x
                } else {
                    ln_cosh(x + q0) - ln_cosh(q0) - self.p_shift * x
                }
            }
            ChannelKind::Saturation { lo, hi } => {
                // Piecewise-exact integral of t ↦ clamp(t+q0, lo, hi) − p_shift
                // over [0, x], split at the breakpoints in shifted coordinates.
                let a = lo - q0;
                let b = hi - q0;
                let c1 = lo - self.p_shift;
                let c2 = hi - self.p_shift;
                let d = q0 - self.p_shift;
                let (s, e, sign) = if x >= 0.0 { (0.0, x, 1.0) } else { (x, 0.0, -1.0) };
                let mut cuts = [s, a.clamp(s, e), b.clamp(s, e), e];
                cuts.sort_by(|p, q| p.partial_cmp(q).unwrap());
                let mut total = 0.0;
                for w in cuts.windows(2) {
                    let (u, v) = (w[0], w[1]);
                    if v <= u {
                        continue;
                    }
                    let m = 0.5 * (u + v);
                    total += if m < a {
                        c1 * (v - u)
                    } else if m > b {
                        c2 * (v - u)
                    } else {
                        (v - u) * (0.5 * (u + v) + d)
                    };
                }
                sign * total
            }
            ChannelKind::Identity => 0.5 * x * x + (q0 - self.p_shift) * x,
        }
    }
}

/// Numerically stable ln cosh.
pub fn ln_cosh(t: f64) -> f64 {
    let a = t.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

/// The per-channel nonlinearity list Γ.
pub type NonlinearitySpec = Vec<Channel>;

/// Raw serialization mirror of [`Snof`] with row-major matrices.
#[derive(Serialize, Deserialize)]
struct SnofRaw {
    a: Vec<Vec<f64>>,
    bp: Vec<Vec<f64>>,
    bu: Vec<Vec<f64>>,
    cq: Vec<Vec<f64>>,
    dqp: Vec<Vec<f64>>,
    dqu: Vec<Vec<f64>>,
    cy: Vec<Vec<f64>>,
    dyp: Vec<Vec<f64>>,
    dyu: Vec<Vec<f64>>,
    beta_x: Vec<f64>,
    beta_q: Vec<f64>,
    beta_o: Vec<f64>,
    nl: Vec<Channel>,
}

/// The operator form itself. Immutable after construction; all evaluation is
/// pure and thread-safe.
#[derive(Debug, Clone, PartialEq)]
pub struct Snof {
    pub a: DMatrix<f64>,
    pub bp: DMatrix<f64>,
    pub bu: DMatrix<f64>,
    pub cq: DMatrix<f64>,
    pub dqp: DMatrix<f64>,
    pub dqu: DMatrix<f64>,
    pub cy: DMatrix<f64>,
    pub dyp: DMatrix<f64>,
    pub dyu: DMatrix<f64>,
    pub beta_x: DVector<f64>,
    pub beta_q: DVector<f64>,
    pub beta_o: DVector<f64>,
    pub nl: NonlinearitySpec,
}

/// Result of one exact evaluation step.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub x_next: DVector<f64>,
    pub q: DVector<f64>,
    pub p: DVector<f64>,
    pub y: DVector<f64>,
}

impl Snof {
    /// Construct with full dimension validation.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        a: DMatrix<f64>,
        bp: DMatrix<f64>,
        bu: DMatrix<f64>,
        cq: DMatrix<f64>,
        dqp: DMatrix<f64>,
        dqu: DMatrix<f64>,
        cy: DMatrix<f64>,
        dyp: DMatrix<f64>,
        dyu: DMatrix<f64>,
        beta_x: DVector<f64>,
        beta_q: DVector<f64>,
        beta_o: DVector<f64>,
        nl: NonlinearitySpec,
    ) -> Result<Self> {
        let n = a.nrows();
        let h = cq.nrows();
        let m = bu.ncols();
        let l = cy.nrows();
        let checks = [
            (a.ncols() == n, "A must be square"),
            (bp.nrows() == n && bp.ncols() == h, "Bp must be n×h"),
            (bu.nrows() == n, "Bu must have n rows"),
            (cq.ncols() == n, "Cq must be h×n"),
            (dqp.nrows() == h && dqp.ncols() == h, "Dqp must be h×h"),
            (dqu.nrows() == h && dqu.ncols() == m, "Dqu must be h×m"),
            (cy.ncols() == n, "Cy must be l×n"),
            (dyp.nrows() == l && dyp.ncols() == h, "Dyp must be l×h"),
            (dyu.nrows() == l && dyu.ncols() == m, "Dyu must be l×m"),
            (beta_x.len() == n, "beta_x must have n entries"),
            (beta_q.len() == h, "beta_q must have h entries"),
            (beta_o.len() == l, "beta_o must have l entries"),
            (nl.len() == h, "nl must declare one channel per q row"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::DimensionMismatch(msg.into()));
            }
        }
        Ok(Snof { a, bp, bu, cq, dqp, dqu, cy, dyp, dyu, beta_x, beta_q, beta_o, nl })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }
    pub fn h(&self) -> usize {
        self.cq.nrows()
    }
    pub fn m(&self) -> usize {
        self.bu.ncols()
    }
    pub fn l(&self) -> usize {
        self.cy.nrows()
    }

    /// Γ applied componentwise.
    pub fn gamma(&self, q: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(q.len(), q.iter().zip(&self.nl).map(|(s, c)| c.eval(*s)))
    }

    /// Componentwise dΓ/dq.
    pub fn gamma_deriv(&self, q: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(q.len(), q.iter().zip(&self.nl).map(|(s, c)| c.deriv(*s)))
    }

    /// Solve the implicit channel loop `q = c + Dqp Γ(q)` for a fixed affine
    /// part `c`. Newton with the analytic diagonal Jacobian of Γ, falling
    /// back to damped fixed-point iteration.
    pub fn solve_channel_loop(&self, c: &DVector<f64>) -> Result<DVector<f64>> {
        let h = self.h();
        if h == 0 {
            return Ok(DVector::zeros(0));
        }
        let residual = |q: &DVector<f64>| -> DVector<f64> { q - c - &self.dqp * self.gamma(q) };
        let mut q = c.clone();
        for _ in 0..100 {
            let r = residual(&q);
            if r.amax() < 1e-12 {
                return Ok(q);
            }
            let d = self.gamma_deriv(&q);
            let mut jac = DMatrix::identity(h, h);
            for i in 0..h {
                for j in 0..h {
                    jac[(i, j)] -= self.dqp[(i, j)] * d[j];
                }
            }
            match jac.lu().solve(&r) {
                Some(step) => q -= step,
                None => break,
            }
        }
        if residual(&q).amax() < 1e-12 {
            return Ok(q);
        }
        // Damped fixed-point fallback.
        let mut q = c.clone();
        for _ in 0..100_000 {
            let target = c + &self.dqp * self.gamma(&q);
            let r = (&target - &q).amax();
            q = 0.5 * &q + 0.5 * target;
            if r < 1e-13 {
                return Ok(q);
            }
        }
        Err(Error::NoConvergence(format!(
            "channel loop residual {:.3e} after Newton and damped fixed point",
            residual(&q).amax()
        )))
    }

    /// One exact step: resolves the implicit channel loop, then computes the
    /// state update and output.
    pub fn eval_step(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<StepResult> {
        if x.len() != self.n() {
            return Err(Error::DimensionMismatch(format!(
                "state has {} entries, operator expects {}",
                x.len(),
                self.n()
            )));
        }
        if u.len() != self.m() {
            return Err(Error::DimensionMismatch(format!(
                "input has {} entries, operator expects {}",
                u.len(),
                self.m()
            )));
        }
        let c = &self.cq * x + &self.dqu * u + &self.beta_q;
        let q = self.solve_channel_loop(&c)?;
        let p = self.gamma(&q);
        let x_next = &self.a * x + &self.bp * &p + &self.bu * u + &self.beta_x;
        let y = &self.cy * x + &self.dyp * &p + &self.dyu * u + &self.beta_o;
        Ok(StepResult { x_next, q, p, y })
    }

    /// JSON export in the interchange schema (named row-major matrices).
    pub fn to_json(&self) -> Result<String> {
        let raw = SnofRaw {
            a: mat_rows(&self.a),
            bp: mat_rows(&self.bp),
            bu: mat_rows(&self.bu),
            cq: mat_rows(&self.cq),
            dqp: mat_rows(&self.dqp),
            dqu: mat_rows(&self.dqu),
            cy: mat_rows(&self.cy),
            dyp: mat_rows(&self.dyp),
            dyu: mat_rows(&self.dyu),
            beta_x: self.beta_x.iter().copied().collect(),
            beta_q: self.beta_q.iter().copied().collect(),
            beta_o: self.beta_o.iter().copied().collect(),
            nl: self.nl.clone(),
        };
        Ok(serde_json::to_string_pretty(&raw)?)
    }

    /// Parse the JSON interchange schema.
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: SnofRaw = serde_json::from_str(text)?;
        let n = raw.a.len();
        let h = raw.cq.len();
        let m = raw.bu.first().map_or(0, |r| r.len());
        let l = raw.cy.len();
        Snof::new(
            rows_mat(&raw.a, n, n)?,
            rows_mat(&raw.bp, n, h)?,
            rows_mat(&raw.bu, n, m)?,
            rows_mat(&raw.cq, h, n)?,
            rows_mat(&raw.dqp, h, h)?,
            rows_mat(&raw.dqu, h, m)?,
            rows_mat(&raw.cy, l, n)?,
            rows_mat(&raw.dyp, l, h)?,
            rows_mat(&raw.dyu, l, m)?,
            DVector::from_vec(raw.beta_x),
            DVector::from_vec(raw.beta_q),
            DVector::from_vec(raw.beta_o),
            raw.nl,
        )
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Snof::from_json(&std::fs::read_to_string(path)?)
    }
}

fn mat_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn rows_mat(rows: &[Vec<f64>], nr: usize, nc: usize) -> Result<DMatrix<f64>> {
    if rows.len() != nr || rows.iter().any(|r| r.len() != nc) {
        return Err(Error::DimensionMismatch(format!("expected a {nr}×{nc} matrix in JSON")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(nr, nc, &flat))
}

/// How well-posedness of the implicit channel loop was decided.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum WellPosednessMethod {
    /// A channel permutation renders the coupling block strictly lower
    /// triangular; det(I − Dqp·Δ) = 1 for every admissible diagonal Δ.
    StrictlyTriangularUpToPermutation { permutation: Vec<usize> },
    /// The coupling block is nilpotent; the determinant is again exactly 1.
    Nilpotent { index: usize },
    /// Small-gain: the row-sum norm of the coupling block is below 1.
    SmallGain { inf_norm: f64 },
    /// Randomized sampling of diagonal gains only (evidence, not proof).
    Randomized { samples: usize, min_abs_det: f64, worst_delta: Vec<f64> },
}

/// Verdict plus the method and witness that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WellPosednessReport {
    pub method: WellPosednessMethod,
    pub verdict: bool,
    /// True when the verdict is a proof (triangular / nilpotent / small
    /// gain), false when it rests on sampling evidence only.
    pub is_proof: bool,
}

/// Decide invertibility of I − Dqp·Δ for every diagonal Δ ∈ [0,1]^h, trying
/// the structural proofs first and falling back to randomized sampling.
pub fn check_well_posed(s: &Snof, samples: usize) -> WellPosednessReport {
    let h = s.h();
    let dqp = &s.dqp;

    if let Some(perm) = triangularizing_permutation(dqp) {
        return WellPosednessReport {
            method: WellPosednessMethod::StrictlyTriangularUpToPermutation { permutation: perm },
            verdict: true,
            is_proof: true,
        };
    }

    if let Some(index) = robust_nilpotency_index(dqp) {
        return WellPosednessReport {
            method: WellPosednessMethod::Nilpotent { index },
            verdict: true,
            is_proof: true,
        };
    }

    let inf_norm = (0..h)
        .map(|i| dqp.row(i).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    if inf_norm < 1.0 {
        return WellPosednessReport {
            method: WellPosednessMethod::SmallGain { inf_norm },
            verdict: true,
            is_proof: true,
        };
    }

    // Randomized evidence: random diagonal gains plus a deterministic
    // {0, ½, 1} grid (capped) that catches simple singular midpoints.
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut min_abs_det = f64::INFINITY;
    let mut worst = vec![0.0; h];
    let probe = |delta: &[f64], min_abs_det: &mut f64, worst: &mut Vec<f64>| {
        let mut m = DMatrix::identity(h, h);
        for i in 0..h {
            for j in 0..h {
                m[(i, j)] -= dqp[(i, j)] * delta[j];
            }
        }
        let det: f64 = m.lu().determinant();
        if det.abs() < *min_abs_det {
            *min_abs_det = det.abs();
            worst.clone_from_slice(delta);
        }
    };
    if h <= 8 {
        let grid = [0.0, 0.5, 1.0];
        for code in 0..3usize.pow(h as u32) {
            let mut c = code;
            let delta: Vec<f64> = (0..h)
                .map(|_| {
                    let v = grid[c % 3];
                    c /= 3;
                    v
                })
                .collect();
            probe(&delta, &mut min_abs_det, &mut worst);
        }
    }
    for _ in 0..samples {
        let delta: Vec<f64> = (0..h).map(|_| rng.gen_range(0.0..=1.0)).collect();
        probe(&delta, &mut min_abs_det, &mut worst);
    }
    WellPosednessReport {
        method: WellPosednessMethod::Randomized {
            samples,
            min_abs_det,
            worst_delta: worst.clone(),
        },
        verdict: min_abs_det > 1e-9,
        is_proof: false,
    }
}

/// Topological order of the channel dependency graph of `dqp` (edge j → i
/// when q_i depends on p_j). Returns the channel order that makes the
/// permuted coupling block strictly lower triangular, or None on a cycle.
fn triangularizing_permutation(dqp: &DMatrix<f64>) -> Option<Vec<usize>> {
    let h = dqp.nrows();
    let mut indegree = vec![0usize; h];
    for i in 0..h {
        for j in 0..h {
            if dqp[(i, j)] != 0.0 {
                if i == j {
                    return None;
                }
                indegree[i] += 1;
            }
        }
    }
    let mut queue: Vec<usize> = (0..h).filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::with_capacity(h);
    while let Some(j) = queue.pop() {
        order.push(j);
        for i in 0..h {
            if dqp[(i, j)] != 0.0 {
                indegree[i] -= 1;
                if indegree[i] == 0 {
                    queue.push(i);
                }
            }
        }
    }
    (order.len() == h).then_some(order)
}

/// Smallest k with Dqp^k = 0 (exact zero test), or None if not nilpotent.
/// Exposed because nilpotency of the coupling block is a structural fact
/// worth reporting on its own, but note that nilpotency of Dqp *alone* does
/// not make the loop well posed: Dqp·Δ must be nilpotent for every diagonal
/// Δ, which is what [`robust_nilpotency_index`] certifies.
pub fn nilpotency_index(dqp: &DMatrix<f64>) -> Option<usize> {
    let h = dqp.nrows();
    if h == 0 {
        return Some(1);
    }
    let mut power = dqp.clone();
    for k in 1..=h {
        if power.iter().all(|&x| x == 0.0) {
            return Some(k);
        }
        power = &power * dqp;
    }
    None
}

/// Nilpotency of Dqp·Δ for *every* diagonal Δ: all powers of the sparsity
/// pattern |Dqp| must have zero diagonal (no weighted closed walk exists),
/// so det(I − Dqp·Δ) = 1 identically. Returns the exact nilpotency index of
/// Dqp itself when the robust condition holds.
fn robust_nilpotency_index(dqp: &DMatrix<f64>) -> Option<usize> {
    let pattern = dqp.map(|x| x.abs());
    let h = pattern.nrows();
    if h == 0 {
        return Some(1);
    }
    let mut power = pattern.clone();
    for _ in 0..h {
        if power.diagonal().iter().any(|&x| x != 0.0) {
            return None;
        }
        power = &power * &pattern;
    }
    nilpotency_index(dqp)
}

/// Static channel transformer that realizes the sigmoid through a tanh
/// channel using σ(q) = ½ tanh(½ q) + ½: input is the raw channel argument
/// q, output is σ(q), and the internal channel sees ½ q.
pub fn loop_transform_sigmoid(channel_count: usize) -> Snof {
    let h = channel_count;
    let half = DMatrix::from_diagonal_element(h, h, 0.5);
    Snof::new(
        DMatrix::zeros(0, 0),
        DMatrix::zeros(0, h),
        DMatrix::zeros(0, h),
        DMatrix::zeros(h, 0),
        DMatrix::zeros(h, h),
        half.clone(),
        DMatrix::zeros(h, 0),
        half,
        DMatrix::zeros(h, h),
        DVector::zeros(0),
        DVector::zeros(h),
        DVector::from_element(h, 0.5),
        vec![Channel::tanh(); h],
    )
    .expect("static sigmoid transformer dimensions are consistent by construction")
}

/// Static transformer that leaves a tanh channel untouched (identity
/// pass-through around a tanh channel). Used to keep already-admissible
/// channels unchanged while other channel groups are transformed.
pub fn tanh_passthrough(channel_count: usize) -> Snof {
    let h = channel_count;
    let eye = DMatrix::identity(h, h);
    Snof::new(
        DMatrix::zeros(0, 0),
        DMatrix::zeros(0, h),
        DMatrix::zeros(0, h),
        DMatrix::zeros(h, 0),
        DMatrix::zeros(h, h),
        eye.clone(),
        DMatrix::zeros(h, 0),
        eye,
        DMatrix::zeros(h, h),
        DVector::zeros(0),
        DVector::zeros(h),
        DVector::zeros(h),
        vec![Channel::tanh(); h],
    )
    .expect("pass-through transformer dimensions are consistent by construction")
}

/// Direct sum of two channel transformers: the composite accepts the stacked
/// channel arguments and produces the stacked channel outputs.
pub fn transformer_direct_sum(g1: &Snof, g2: &Snof) -> Result<Snof> {
    let stack = |a: &DMatrix<f64>, b: &DMatrix<f64>| -> DMatrix<f64> {
        let mut out = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols() + b.ncols());
        out.view_mut((0, 0), a.shape()).copy_from(a);
        out.view_mut(a.shape(), b.shape()).copy_from(b);
        out
    };
    let cat = |a: &DVector<f64>, b: &DVector<f64>| -> DVector<f64> {
        DVector::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).copied())
    };
    let mut nl = g1.nl.clone();
    nl.extend_from_slice(&g2.nl);
    Snof::new(
        stack(&g1.a, &g2.a),
        stack(&g1.bp, &g2.bp),
        stack(&g1.bu, &g2.bu),
        stack(&g1.cq, &g2.cq),
        stack(&g1.dqp, &g2.dqp),
        stack(&g1.dqu, &g2.dqu),
        stack(&g1.cy, &g2.cy),
        stack(&g1.dyp, &g2.dyp),
        stack(&g1.dyu, &g2.dyu),
        cat(&g1.beta_x, &g2.beta_x),
        cat(&g1.beta_q, &g2.beta_q),
        cat(&g1.beta_o, &g2.beta_o),
        nl,
    )
}

/// Star-product composition: reroute every channel of `m` through the
/// transformer `g`. The interconnection is `u_g = q_m` and `p_m = y_g`; the
/// composite keeps `m`'s external input and output, its channels are `g`'s
/// channels, and its state stacks `[x_m; x_g]`.
///
/// `g` must have input and output dimension equal to `m.h()`; `m`'s own
/// channel declarations are discarded (they are replaced by `g`'s).
pub fn star_compose(m: &Snof, g: &Snof) -> Result<Snof> {
    let (n_m, h_m, m_u) = (m.n(), m.h(), m.m());
    let (n_g, h_g) = (g.n(), g.h());
    if g.m() != h_m || g.l() != h_m {
        return Err(Error::DimensionMismatch(format!(
            "transformer must map {h_m} channel arguments to {h_m} channel values, got {}→{}",
            g.m(),
            g.l()
        )));
    }

    // Eliminate q_m: (I − Dqp_m · Dyu_g) q_m = Cq_m x_m + Dqp_m (Cy_g x_g +
    // Dyp_g p_g + βo_g) + Dqu_m u + βq_m.
    let coupling = DMatrix::identity(h_m, h_m) - &m.dqp * &g.dyu;
    let lu = coupling.lu();
    let solve_mat = |rhs: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        lu.solve(rhs).ok_or_else(|| {
            Error::SingularInterconnection(
                "I − Dqp·Dyu of the interconnection is singular".into(),
            )
        })
    };
    // q_m = qx·x_m + qg·x_g + qp·p_g + qu·u + q0.
    let qx = solve_mat(&m.cq)?;
    let qg = solve_mat(&(&m.dqp * &g.cy))?;
    let qp = solve_mat(&(&m.dqp * &g.dyp))?;
    let qu = solve_mat(&m.dqu)?;
    let q0_rhs = DMatrix::from_column_slice(h_m, 1, (&m.dqp * &g.beta_o + &m.beta_q).as_slice());
    let q0: DVector<f64> = DVector::from_column_slice(solve_mat(&q0_rhs)?.as_slice());

    // p_m = Cy_g x_g + Dyp_g p_g + Dyu_g q_m + βo_g.
    let px = &g.dyu * &qx;
    let pg = &g.cy + &g.dyu * &qg;
    let pp = &g.dyp + &g.dyu * &qp;
    let pu = &g.dyu * &qu;
    let p0 = &g.beta_o + &g.dyu * &q0;

    let n_c = n_m + n_g;
    let mut a = DMatrix::zeros(n_c, n_c);
    let mut bp = DMatrix::zeros(n_c, h_g);
    let mut bu = DMatrix::zeros(n_c, m_u);
    let mut beta_x = DVector::zeros(n_c);

    // x_m⁺ = A_m x_m + Bp_m p_m + Bu_m u + βx_m.
    a.view_mut((0, 0), (n_m, n_m)).copy_from(&(&m.a + &m.bp * &px));
    a.view_mut((0, n_m), (n_m, n_g)).copy_from(&(&m.bp * &pg));
    bp.view_mut((0, 0), (n_m, h_g)).copy_from(&(&m.bp * &pp));
    bu.view_mut((0, 0), (n_m, m_u)).copy_from(&(&m.bu + &m.bp * &pu));
    beta_x.rows_mut(0, n_m).copy_from(&(&m.beta_x + &m.bp * &p0));

    // x_g⁺ = A_g x_g + Bp_g p_g + Bu_g q_m + βx_g.
    a.view_mut((n_m, 0), (n_g, n_m)).copy_from(&(&g.bu * &qx));
    a.view_mut((n_m, n_m), (n_g, n_g)).copy_from(&(&g.a + &g.bu * &qg));
    bp.view_mut((n_m, 0), (n_g, h_g)).copy_from(&(&g.bp + &g.bu * &qp));
    bu.view_mut((n_m, 0), (n_g, m_u)).copy_from(&(&g.bu * &qu));
    beta_x.rows_mut(n_m, n_g).copy_from(&(&g.beta_x + &g.bu * &q0));

    // q_c = Cq_g x_g + Dqp_g p_g + Dqu_g q_m + βq_g.
    let mut cq = DMatrix::zeros(h_g, n_c);
    cq.view_mut((0, 0), (h_g, n_m)).copy_from(&(&g.dqu * &qx));
    cq.view_mut((0, n_m), (h_g, n_g)).copy_from(&(&g.cq + &g.dqu * &qg));
    let dqp = &g.dqp + &g.dqu * &qp;
    let dqu = &g.dqu * &qu;
    let beta_q = &g.beta_q + &g.dqu * &q0;

    // y_c = Cy_m x_m + Dyp_m p_m + Dyu_m u + βo_m.
    let l_m = m.l();
    let mut cy = DMatrix::zeros(l_m, n_c);
    cy.view_mut((0, 0), (l_m, n_m)).copy_from(&(&m.cy + &m.dyp * &px));
    cy.view_mut((0, n_m), (l_m, n_g)).copy_from(&(&m.dyp * &pg));
    let dyp = &m.dyp * &pp;
    let dyu = &m.dyu + &m.dyp * &pu;
    let beta_o = &m.beta_o + &m.dyp * &p0;

    Snof::new(a, bp, bu, cq, dqp, dqu, cy, dyp, dyu, beta_x, beta_q, beta_o, g.nl.clone())
}
