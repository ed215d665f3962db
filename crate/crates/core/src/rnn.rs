//! Gated recurrent cells: the classic gated cell, a variant whose update
//! gate is a learnable constant vector, exact operator-form exports of both,
//! full backpropagation-through-time training, and an analyzer that
//! quantifies why elementwise (Hadamard) gating breaks path-independent
//! energy arguments.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::composite_simpson;
use crate::snof::{
    loop_transform_sigmoid, star_compose, tanh_passthrough, transformer_direct_sum, Channel, Snof,
};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn sigmoid_vec(v: &DVector<f64>) -> DVector<f64> {
    v.map(sigmoid)
}

fn tanh_vec(v: &DVector<f64>) -> DVector<f64> {
    v.map(f64::tanh)
}

// ---------------------------------------------------------------------------
// Classic gated cell
// ---------------------------------------------------------------------------

/// Classic gated recurrent cell with reset gate r, update gate z, and
/// candidate h̃:
///
/// ```text
/// r  = σ(W_rx x + b_rx + W_rh h + b_rh)
/// z  = σ(W_zx x + b_zx + W_zh h + b_zh)
/// h̃  = tanh(W_hx x + b_hx + W_hrh (r ⊙ h) + b_hrh)
/// h⁺ = (1 − z) ⊙ h + z ⊙ h̃
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct GruCell {
    pub w_rx: DMatrix<f64>,
    pub w_zx: DMatrix<f64>,
    pub w_hx: DMatrix<f64>,
    pub w_rh: DMatrix<f64>,
    pub w_zh: DMatrix<f64>,
    pub w_hrh: DMatrix<f64>,
    pub b_rx: DVector<f64>,
    pub b_rh: DVector<f64>,
    pub b_zx: DVector<f64>,
    pub b_zh: DVector<f64>,
    pub b_hx: DVector<f64>,
    pub b_hrh: DVector<f64>,
}

impl GruCell {
    pub fn hidden_dim(&self) -> usize {
        self.w_rh.nrows()
    }
    pub fn input_dim(&self) -> usize {
        self.w_rx.ncols()
    }

    /// Zero-weight, zero-bias cell.
    pub fn zeros(n_x: usize, n_h: usize) -> Self {
        GruCell {
            w_rx: DMatrix::zeros(n_h, n_x),
            w_zx: DMatrix::zeros(n_h, n_x),
            w_hx: DMatrix::zeros(n_h, n_x),
            w_rh: DMatrix::zeros(n_h, n_h),
            w_zh: DMatrix::zeros(n_h, n_h),
            w_hrh: DMatrix::zeros(n_h, n_h),
            b_rx: DVector::zeros(n_h),
            b_rh: DVector::zeros(n_h),
            b_zx: DVector::zeros(n_h),
            b_zh: DVector::zeros(n_h),
            b_hx: DVector::zeros(n_h),
            b_hrh: DVector::zeros(n_h),
        }
    }

    /// Random cell with uniform(−1/√n_h, 1/√n_h) weights and biases.
    pub fn random(n_x: usize, n_h: usize, rng: &mut ChaCha8Rng) -> Self {
        let s = 1.0 / (n_h as f64).sqrt();
        let mut m = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.gen_range(-s..s));
        let w_rx = m(n_h, n_x);
        let w_zx = m(n_h, n_x);
        let w_hx = m(n_h, n_x);
        let w_rh = m(n_h, n_h);
        let w_zh = m(n_h, n_h);
        let w_hrh = m(n_h, n_h);
        let mut v = |n: usize| DVector::from_fn(n, |_, _| rng.gen_range(-s..s));
        GruCell {
            w_rx,
            w_zx,
            w_hx,
            w_rh,
            w_zh,
            w_hrh,
            b_rx: v(n_h),
            b_rh: v(n_h),
            b_zx: v(n_h),
            b_zh: v(n_h),
            b_hx: v(n_h),
            b_hrh: v(n_h),
        }
    }
}

/// One exact step of the classic gated recurrence.
pub fn gru_forward(c: &GruCell, h_prev: &DVector<f64>, x: &DVector<f64>) -> Result<DVector<f64>> {
    if h_prev.len() != c.hidden_dim() || x.len() != c.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "cell expects hidden {} / input {}, got {} / {}",
            c.hidden_dim(),
            c.input_dim(),
            h_prev.len(),
            x.len()
        )));
    }
    let r = sigmoid_vec(&(&c.w_rx * x + &c.b_rx + &c.w_rh * h_prev + &c.b_rh));
    let z = sigmoid_vec(&(&c.w_zx * x + &c.b_zx + &c.w_zh * h_prev + &c.b_zh));
    let rh = r.component_mul(h_prev);
    let h_tilde = tanh_vec(&(&c.w_hx * x + &c.b_hx + &c.w_hrh * &rh + &c.b_hrh));
    Ok(h_prev.component_mul(&z.map(|v| 1.0 - v)) + z.component_mul(&h_tilde))
}

/// Channel descriptor of the operator-like export of the classic cell.
#[derive(Debug, Clone, PartialEq)]
pub struct GruLikeChannel {
    pub name: &'static str,
    /// False for the multivariate gate products, which depend on *two*
    /// channel arguments and therefore fall outside the diagonal static
    /// nonlinearity class that the certificate machinery requires.
    pub certifiable: bool,
}

/// Operator-like form of the classic cell. The update is one affine matrix
///
/// ```text
/// [h⁺; q_h; q_h̃; q_rh; q_z; q_r] = M · [h; p_h; p_h̃; p_rh; x; 1]
/// ```
///
/// with channels p_h = σ(q_z) ⊙ q_h, p_h̃ = tanh(q_h̃), p_rh = σ(q_r) ⊙ q_rh.
/// The two ⊙-channels are multivariate and flagged non-certifiable.
#[derive(Debug, Clone, PartialEq)]
pub struct GruSnofLike {
    pub m: DMatrix<f64>,
    pub n_h: usize,
    pub n_x: usize,
    pub channels: [GruLikeChannel; 3],
}

/// Exact operator-like export of the classic gated cell.
pub fn gru_to_snof_like(c: &GruCell) -> GruSnofLike {
    let n = c.hidden_dim();
    let nx = c.input_dim();
    let rows = 6 * n;
    let cols = 4 * n + nx + 1;
    let mut m = DMatrix::zeros(rows, cols);
    let eye = DMatrix::<f64>::identity(n, n);
    // Column offsets: h 0, p_h n, p_h̃ 2n, p_rh 3n, x 4n, bias 4n+nx.
    let (col_h, col_ph, col_pht, col_prh, col_x, col_b) = (0, n, 2 * n, 3 * n, 4 * n, 4 * n + nx);
    let mut put = |r0: usize, c0: usize, blk: &DMatrix<f64>| {
        m.view_mut((r0, c0), blk.shape()).copy_from(blk);
    };
    // h⁺ = h + p_h.
    put(0, col_h, &eye);
    put(0, col_ph, &eye);
    // q_h = −h + p_h̃.
    put(n, col_h, &(-&eye));
    put(n, col_pht, &eye);
    // q_h̃ = W_hrh p_rh + W_hx x + (b_hx + b_hrh).
    put(2 * n, col_prh, &c.w_hrh);
    put(2 * n, col_x, &c.w_hx);
    put(2 * n, col_b, &DMatrix::from_column_slice(n, 1, (&c.b_hx + &c.b_hrh).as_slice()));
    // q_rh = h.
    put(3 * n, col_h, &eye);
    // q_z = W_zh h + W_zx x + (b_zx + b_zh).
    put(4 * n, col_h, &c.w_zh);
    put(4 * n, col_x, &c.w_zx);
    put(4 * n, col_b, &DMatrix::from_column_slice(n, 1, (&c.b_zx + &c.b_zh).as_slice()));
    // q_r = W_rh h + W_rx x + (b_rx + b_rh).
    put(5 * n, col_h, &c.w_rh);
    put(5 * n, col_x, &c.w_rx);
    put(5 * n, col_b, &DMatrix::from_column_slice(n, 1, (&c.b_rx + &c.b_rh).as_slice()));
    GruSnofLike {
        m,
        n_h: n,
        n_x: nx,
        channels: [
            GruLikeChannel { name: "p_h", certifiable: false },
            GruLikeChannel { name: "p_h_tilde", certifiable: true },
            GruLikeChannel { name: "p_rh", certifiable: false },
        ],
    }
}

impl GruSnofLike {
    /// Evaluate one step through the exported matrix. The channel structure
    /// is triangular: the gate arguments depend only on (h, x), so the
    /// implicit loop resolves by forward substitution.
    pub fn eval(&self, h: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
        let n = self.n_h;
        let nx = self.n_x;
        let mut v = DVector::zeros(4 * n + nx + 1);
        v.rows_mut(0, n).copy_from(h);
        v.rows_mut(4 * n, nx).copy_from(x);
        v[4 * n + nx] = 1.0;
        let row = |m: &DMatrix<f64>, grp: usize, v: &DVector<f64>| -> DVector<f64> {
            m.rows(grp * n, n) * v
        };
        let q_z = row(&self.m, 4, &v);
        let q_r = row(&self.m, 5, &v);
        let q_rh = row(&self.m, 3, &v);
        let p_rh = sigmoid_vec(&q_r).component_mul(&q_rh);
        v.rows_mut(3 * n, n).copy_from(&p_rh);
        let q_ht = row(&self.m, 2, &v);
        let p_ht = tanh_vec(&q_ht);
        v.rows_mut(2 * n, n).copy_from(&p_ht);
        let q_h = row(&self.m, 1, &v);
        let p_h = sigmoid_vec(&q_z).component_mul(&q_h);
        v.rows_mut(n, n).copy_from(&p_h);
        row(&self.m, 0, &v)
    }
}

// ---------------------------------------------------------------------------
// Constant-gate cell
// ---------------------------------------------------------------------------

/// Gated recurrent cell whose update gate is a learnable constant vector α
/// (logits), restoring an affine state update:
///
/// ```text
/// r  = σ(W_rx x + b_rx + W_rh h + b_rh)
/// h̃  = tanh(W_hx x + b_hx + G_hr r + b_hr + W_hh h + b_hh)
/// h⁺ = (1 − σ(α)) ⊙ h̃ + σ(α) ⊙ h
/// y  = W_out h⁺ + b_out        (linear output layer)
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct LpGrnnCell {
    pub w_rx: DMatrix<f64>,
    pub w_rh: DMatrix<f64>,
    pub w_hx: DMatrix<f64>,
    pub w_hh: DMatrix<f64>,
    pub g_hr: DMatrix<f64>,
    pub b_rx: DVector<f64>,
    pub b_rh: DVector<f64>,
    pub b_hx: DVector<f64>,
    pub b_hr: DVector<f64>,
    pub b_hh: DVector<f64>,
    /// Unconstrained gate logits; the effective gate is σ(α) ∈ (0,1).
    pub alpha: DVector<f64>,
    pub w_out: DMatrix<f64>,
    pub b_out: DVector<f64>,
}

/// How the `alpha` field of a serialized cell is encoded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaEncoding {
    /// Stored values are the raw logits α.
    Logit,
    /// Stored values are σ(α) ∈ (0,1).
    PostSigmoid,
}

#[derive(Serialize, Deserialize)]
struct LpGrnnRaw {
    w_rx: Vec<Vec<f64>>,
    w_rh: Vec<Vec<f64>>,
    w_hx: Vec<Vec<f64>>,
    w_hh: Vec<Vec<f64>>,
    g_hr: Vec<Vec<f64>>,
    b_rx: Vec<f64>,
    b_rh: Vec<f64>,
    b_hx: Vec<f64>,
    b_hr: Vec<f64>,
    b_hh: Vec<f64>,
    alpha: Vec<f64>,
    alpha_encoding: AlphaEncoding,
    w_out: Vec<Vec<f64>>,
    b_out: Vec<f64>,
}

impl LpGrnnCell {
    pub fn hidden_dim(&self) -> usize {
        self.w_rh.nrows()
    }
    pub fn input_dim(&self) -> usize {
        self.w_rx.ncols()
    }
    pub fn output_dim(&self) -> usize {
        self.w_out.nrows()
    }

    /// Effective gate vector σ(α).
    pub fn gate(&self) -> DVector<f64> {
        sigmoid_vec(&self.alpha)
    }

    pub fn zeros(n_x: usize, n_h: usize, l: usize) -> Self {
        LpGrnnCell {
            w_rx: DMatrix::zeros(n_h, n_x),
            w_rh: DMatrix::zeros(n_h, n_h),
            w_hx: DMatrix::zeros(n_h, n_x),
            w_hh: DMatrix::zeros(n_h, n_h),
            g_hr: DMatrix::zeros(n_h, n_h),
            b_rx: DVector::zeros(n_h),
            b_rh: DVector::zeros(n_h),
            b_hx: DVector::zeros(n_h),
            b_hr: DVector::zeros(n_h),
            b_hh: DVector::zeros(n_h),
            alpha: DVector::zeros(n_h),
            w_out: DMatrix::zeros(l, n_h),
            b_out: DVector::zeros(l),
        }
    }

    /// Standard initialization: uniform(−1/√n_h, 1/√n_h) weights, zero
    /// biases, zero gate logits (σ(α) = ½, the neutral mix).
    pub fn init(n_x: usize, n_h: usize, l: usize, rng: &mut ChaCha8Rng) -> Self {
        let s = 1.0 / (n_h as f64).sqrt();
        let mut m = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.gen_range(-s..s));
        let w_rx = m(n_h, n_x);
        let w_rh = m(n_h, n_h);
        let w_hx = m(n_h, n_x);
        let w_hh = m(n_h, n_h);
        let g_hr = m(n_h, n_h);
        let w_out = m(l, n_h);
        LpGrnnCell {
            w_rx,
            w_rh,
            w_hx,
            w_hh,
            g_hr,
            b_rx: DVector::zeros(n_h),
            b_rh: DVector::zeros(n_h),
            b_hx: DVector::zeros(n_h),
            b_hr: DVector::zeros(n_h),
            b_hh: DVector::zeros(n_h),
            alpha: DVector::zeros(n_h),
            w_out,
            b_out: DVector::zeros(l),
        }
    }

    /// Fully random cell (weights *and* biases and gate logits), for
    /// equivalence sweeps.
    pub fn random(n_x: usize, n_h: usize, l: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut c = Self::init(n_x, n_h, l, rng);
        let s = 1.0 / (n_h as f64).sqrt();
        for b in [&mut c.b_rx, &mut c.b_rh, &mut c.b_hx, &mut c.b_hr, &mut c.b_hh, &mut c.b_out] {
            b.apply(|v| *v = rng.gen_range(-s..s));
        }
        c.alpha.apply(|v| *v = rng.gen_range(-1.5..1.5));
        c
    }

    pub fn to_json(&self, encoding: AlphaEncoding) -> Result<String> {
        let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
            (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
        };
        let alpha = match encoding {
            AlphaEncoding::Logit => self.alpha.iter().copied().collect(),
            AlphaEncoding::PostSigmoid => self.alpha.iter().map(|&a| sigmoid(a)).collect(),
        };
        let raw = LpGrnnRaw {
            w_rx: rows(&self.w_rx),
            w_rh: rows(&self.w_rh),
            w_hx: rows(&self.w_hx),
            w_hh: rows(&self.w_hh),
            g_hr: rows(&self.g_hr),
            b_rx: self.b_rx.iter().copied().collect(),
            b_rh: self.b_rh.iter().copied().collect(),
            b_hx: self.b_hx.iter().copied().collect(),
            b_hr: self.b_hr.iter().copied().collect(),
            b_hh: self.b_hh.iter().copied().collect(),
            alpha,
            alpha_encoding: encoding,
            w_out: rows(&self.w_out),
            b_out: self.b_out.iter().copied().collect(),
        };
        Ok(serde_json::to_string_pretty(&raw)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: LpGrnnRaw = serde_json::from_str(text)?;
        let n_h = raw.w_rh.len();
        let n_x = raw.w_rx.first().map_or(0, |r| r.len());
        let l = raw.w_out.len();
        let mat = |rows: &Vec<Vec<f64>>, nr: usize, nc: usize| -> Result<DMatrix<f64>> {
            if rows.len() != nr || rows.iter().any(|r| r.len() != nc) {
                return Err(Error::DimensionMismatch(format!("expected {nr}×{nc} tensor")));
            }
            Ok(DMatrix::from_row_slice(nr, nc, &rows.iter().flatten().copied().collect::<Vec<_>>()))
        };
        let alpha = match raw.alpha_encoding {
            AlphaEncoding::Logit => DVector::from_vec(raw.alpha),
            AlphaEncoding::PostSigmoid => DVector::from_iterator(
                raw.alpha.len(),
                raw.alpha.iter().map(|&v| (v / (1.0 - v)).ln()),
            ),
        };
        Ok(LpGrnnCell {
            w_rx: mat(&raw.w_rx, n_h, n_x)?,
            w_rh: mat(&raw.w_rh, n_h, n_h)?,
            w_hx: mat(&raw.w_hx, n_h, n_x)?,
            w_hh: mat(&raw.w_hh, n_h, n_h)?,
            g_hr: mat(&raw.g_hr, n_h, n_h)?,
            b_rx: DVector::from_vec(raw.b_rx),
            b_rh: DVector::from_vec(raw.b_rh),
            b_hx: DVector::from_vec(raw.b_hx),
            b_hr: DVector::from_vec(raw.b_hr),
            b_hh: DVector::from_vec(raw.b_hh),
            alpha,
            w_out: mat(&raw.w_out, l, n_h)?,
            b_out: DVector::from_vec(raw.b_out),
        })
    }

    /// Flatten all trainable parameters into one vector (fixed order,
    /// column-major within each tensor). Used by finite-difference checks
    /// and gradient clipping.
    pub fn flatten_params(&self) -> DVector<f64> {
        let mut out = Vec::new();
        for m in [&self.w_rx, &self.w_rh, &self.w_hx, &self.w_hh, &self.g_hr, &self.w_out] {
            out.extend(m.iter());
        }
        for v in [
            &self.b_rx, &self.b_rh, &self.b_hx, &self.b_hr, &self.b_hh, &self.alpha, &self.b_out,
        ] {
            out.extend(v.iter());
        }
        DVector::from_vec(out)
    }

    /// Inverse of [`flatten_params`].
    pub fn set_params(&mut self, flat: &DVector<f64>) {
        let mut idx = 0;
        for m in
            [&mut self.w_rx, &mut self.w_rh, &mut self.w_hx, &mut self.w_hh, &mut self.g_hr, &mut self.w_out]
        {
            for v in m.iter_mut() {
                *v = flat[idx];
                idx += 1;
            }
        }
        for b in [
            &mut self.b_rx,
            &mut self.b_rh,
            &mut self.b_hx,
            &mut self.b_hr,
            &mut self.b_hh,
            &mut self.alpha,
            &mut self.b_out,
        ] {
            for v in b.iter_mut() {
                *v = flat[idx];
                idx += 1;
            }
        }
        debug_assert_eq!(idx, flat.len());
    }
}

/// One exact step of the constant-gate recurrence plus its linear output.
pub fn lpgrnn_forward(
    c: &LpGrnnCell,
    h_prev: &DVector<f64>,
    x: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    if h_prev.len() != c.hidden_dim() || x.len() != c.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "cell expects hidden {} / input {}, got {} / {}",
            c.hidden_dim(),
            c.input_dim(),
            h_prev.len(),
            x.len()
        )));
    }
    let r = sigmoid_vec(&(&c.w_rx * x + &c.b_rx + &c.w_rh * h_prev + &c.b_rh));
    let h_tilde =
        tanh_vec(&(&c.w_hx * x + &c.b_hx + &c.g_hr * &r + &c.b_hr + &c.w_hh * h_prev + &c.b_hh));
    let s = c.gate();
    let h_next = h_tilde.component_mul(&s.map(|v| 1.0 - v)) + s.component_mul(h_prev);
    let y = &c.w_out * &h_next + &c.b_out;
    Ok((h_next, y))
}

/// Intermediate operator form of the constant-gate cell *before* the gate
/// channels are transformed: channels are [p_h̃ (tanh); p_r (sigmoid)]. The
/// declared channel kinds are placeholders — this form exists only to be
/// composed with the channel transformers and is not certifiable by itself.
fn lpgrnn_pre_transform(c: &LpGrnnCell) -> Snof {
    let n = c.hidden_dim();
    let nx = c.input_dim();
    let l = c.output_dim();
    let s = DMatrix::from_diagonal(&c.gate());
    let one_minus_s = DMatrix::<f64>::identity(n, n) - &s;
    let mut bp = DMatrix::zeros(n, 2 * n);
    bp.view_mut((0, 0), (n, n)).copy_from(&one_minus_s);
    let mut cq = DMatrix::zeros(2 * n, n);
    cq.view_mut((0, 0), (n, n)).copy_from(&c.w_hh);
    cq.view_mut((n, 0), (n, n)).copy_from(&c.w_rh);
    let mut dqp = DMatrix::zeros(2 * n, 2 * n);
    dqp.view_mut((0, n), (n, n)).copy_from(&c.g_hr);
    let mut dqu = DMatrix::zeros(2 * n, nx);
    dqu.view_mut((0, 0), (n, nx)).copy_from(&c.w_hx);
    dqu.view_mut((n, 0), (n, nx)).copy_from(&c.w_rx);
    let mut beta_q = DVector::zeros(2 * n);
    beta_q.rows_mut(0, n).copy_from(&(&c.b_hx + &c.b_hr + &c.b_hh));
    beta_q.rows_mut(n, n).copy_from(&(&c.b_rx + &c.b_rh));
    // Output reads the *updated* state: y = W_out h⁺ + b_out.
    let cy = &c.w_out * &s;
    let mut dyp = DMatrix::zeros(l, 2 * n);
    dyp.view_mut((0, 0), (l, n)).copy_from(&(&c.w_out * &one_minus_s));
    Snof::new(
        s,
        bp,
        DMatrix::zeros(n, nx),
        cq,
        dqp,
        dqu,
        cy,
        dyp,
        DMatrix::zeros(l, nx),
        DVector::zeros(n),
        beta_q,
        c.b_out.clone(),
        vec![Channel::identity(); 2 * n],
    )
    .expect("pre-transform dimensions are consistent by construction")
}

/// Exact all-tanh operator export of the constant-gate cell: the candidate
/// channels pass through unchanged and the sigmoid gate channels are loop
/// transformed, then both are absorbed by star-product composition. The
/// resulting coupling block has the strictly block-triangular sparsity
/// [[0, ½G_hr],[0, 0]] and is nilpotent of index ≤ 2.
pub fn lpgrnn_to_snof(c: &LpGrnnCell) -> Result<Snof> {
    let n = c.hidden_dim();
    let m = lpgrnn_pre_transform(c);
    let g = transformer_direct_sum(&tanh_passthrough(n), &loop_transform_sigmoid(n))?;
    star_compose(&m, &g)
}

// ---------------------------------------------------------------------------
// BPTT training
// ---------------------------------------------------------------------------

/// Training configuration: plain gradient descent with gradient-norm
/// clipping and plateau learning-rate decay.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    /// Mini-batch size; None trains full-batch.
    pub batch: Option<usize>,
    /// Epochs without best-loss improvement before the LR is decayed.
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.05,
            epochs: 100,
            batch: None,
            plateau_patience: 10,
            plateau_factor: 0.5,
            grad_clip: 10.0,
        }
    }
}

struct ForwardCache {
    hs: Vec<DVector<f64>>, // h_0 .. h_T
    rs: Vec<DVector<f64>>,
    hts: Vec<DVector<f64>>,
}

fn forward_window(c: &LpGrnnCell, window: &DMatrix<f64>) -> ForwardCache {
    let t_len = window.nrows();
    let mut hs = Vec::with_capacity(t_len + 1);
    let mut rs = Vec::with_capacity(t_len);
    let mut hts = Vec::with_capacity(t_len);
    let s = c.gate();
    let mut h = DVector::zeros(c.hidden_dim());
    hs.push(h.clone());
    for k in 0..t_len {
        let x = window.row(k).transpose();
        let r = sigmoid_vec(&(&c.w_rx * &x + &c.b_rx + &c.w_rh * &h + &c.b_rh));
        let ht =
            tanh_vec(&(&c.w_hx * &x + &c.b_hx + &c.g_hr * &r + &c.b_hr + &c.w_hh * &h + &c.b_hh));
        h = ht.component_mul(&s.map(|v| 1.0 - v)) + s.component_mul(&h);
        rs.push(r);
        hts.push(ht);
        hs.push(h.clone());
    }
    ForwardCache { hs, rs, hts }
}

/// Gradient accumulator mirroring the trainable tensors (flat layout shared
/// with [`LpGrnnCell::flatten_params`]).
pub struct LpGrnnGrads {
    pub flat: DVector<f64>,
}

/// Compute the batch RMSE loss and its exact gradient by full
/// backpropagation through time. Targets are compared against the linear
/// output at the *end* of each window.
pub fn bptt_gradient(
    c: &LpGrnnCell,
    windows: &[DMatrix<f64>],
    targets: &[DVector<f64>],
) -> Result<(f64, LpGrnnGrads)> {
    if windows.len() != targets.len() || windows.is_empty() {
        return Err(Error::DimensionMismatch(
            "windows and targets must be non-empty and equally long".into(),
        ));
    }
    let n_h = c.hidden_dim();
    let l = c.output_dim();
    let count = windows.len();

    // Pass 1: forward everything, collect squared error.
    let caches: Vec<ForwardCache> = windows.iter().map(|w| forward_window(c, w)).collect();
    let mut sq = 0.0;
    let mut errs = Vec::with_capacity(count);
    for (cache, target) in caches.iter().zip(targets) {
        let y = &c.w_out * cache.hs.last().unwrap() + &c.b_out;
        let e = y - target;
        sq += e.norm_squared();
        errs.push(e);
    }
    let denom = (count * l) as f64;
    let loss = (sq / denom).sqrt();

    // Pass 2: backward. dL/dy_i = e_i / (denom · loss).
    let s = c.gate();
    let one_minus_s = s.map(|v| 1.0 - v);
    let mut g = LpGrnnGrads { flat: DVector::zeros(c.flatten_params().len()) };
    // Named views into the accumulator, mirroring flatten order.
    let mut d_w_rx = DMatrix::zeros(n_h, c.input_dim());
    let mut d_w_rh = DMatrix::zeros(n_h, n_h);
    let mut d_w_hx = DMatrix::zeros(n_h, c.input_dim());
    let mut d_w_hh = DMatrix::zeros(n_h, n_h);
    let mut d_g_hr = DMatrix::zeros(n_h, n_h);
    let mut d_w_out = DMatrix::zeros(l, n_h);
    let mut d_b_rx = DVector::zeros(n_h);
    let mut d_b_hx = DVector::zeros(n_h);
    let mut d_alpha_gate = DVector::zeros(n_h);
    let mut d_b_out = DVector::zeros(l);

    if loss > 0.0 {
        for ((window, cache), e) in windows.iter().zip(&caches).zip(&errs) {
            let t_len = window.nrows();
            let dy = e / (denom * loss);
            d_w_out += &dy * cache.hs[t_len].transpose();
            d_b_out += &dy;
            let mut gh = c.w_out.transpose() * &dy;
            for k in (0..t_len).rev() {
                let x = window.row(k).transpose();
                let h_prev = &cache.hs[k];
                let r = &cache.rs[k];
                let ht = &cache.hts[k];
                d_alpha_gate += gh.component_mul(&(h_prev - ht));
                let dht = gh.component_mul(&one_minus_s);
                let da_h = dht.component_mul(&ht.map(|v| 1.0 - v * v));
                d_w_hx += &da_h * x.transpose();
                d_b_hx += &da_h; // shared by b_hx, b_hr, b_hh (identical gradients)
                d_g_hr += &da_h * r.transpose();
                d_w_hh += &da_h * h_prev.transpose();
                let dr = c.g_hr.transpose() * &da_h;
                let da_r = dr.component_mul(&r.map(|v| v * (1.0 - v)));
                d_w_rx += &da_r * x.transpose();
                d_b_rx += &da_r; // shared by b_rx, b_rh
                d_w_rh += &da_r * h_prev.transpose();
                gh = gh.component_mul(&s)
                    + c.w_rh.transpose() * &da_r
                    + c.w_hh.transpose() * &da_h;
            }
        }
    }
    let d_alpha = d_alpha_gate.component_mul(&s.component_mul(&one_minus_s));

    // Pack into flat layout: matrices then biases (see flatten_params).
    let mut idx = 0;
    for m in [&d_w_rx, &d_w_rh, &d_w_hx, &d_w_hh, &d_g_hr, &d_w_out] {
        for v in m.iter() {
            g.flat[idx] = *v;
            idx += 1;
        }
    }
    for b in [&d_b_rx, &d_b_rx, &d_b_hx, &d_b_hx, &d_b_hx, &d_alpha, &d_b_out] {
        for v in b.iter() {
            g.flat[idx] = *v;
            idx += 1;
        }
    }
    debug_assert_eq!(idx, g.flat.len());
    Ok((loss, g))
}

/// Batch RMSE loss of the cell's end-of-window predictions.
pub fn rmse_loss(c: &LpGrnnCell, windows: &[DMatrix<f64>], targets: &[DVector<f64>]) -> f64 {
    let l = c.output_dim();
    let mut sq = 0.0;
    for (w, t) in windows.iter().zip(targets) {
        let cache = forward_window(c, w);
        let y = &c.w_out * cache.hs.last().unwrap() + &c.b_out;
        sq += (y - t).norm_squared();
    }
    (sq / (windows.len() * l) as f64).sqrt()
}

/// Train by gradient descent with full BPTT gradients. Returns the trained
/// cell and the per-epoch loss trace (empty for zero epochs).
pub fn train_bptt(
    cell: &LpGrnnCell,
    windows: &[DMatrix<f64>],
    targets: &[DVector<f64>],
    cfg: &TrainConfig,
) -> Result<(LpGrnnCell, Vec<f64>)> {
    let mut c = cell.clone();
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut lr = cfg.lr;
    let mut best = f64::INFINITY;
    let mut stagnant = 0usize;
    let batch = cfg.batch.unwrap_or(windows.len()).max(1);
    for epoch in 0..cfg.epochs {
        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        let mut start = 0;
        while start < windows.len() {
            let end = (start + batch).min(windows.len());
            let (loss, grads) = bptt_gradient(&c, &windows[start..end], &targets[start..end])?;
            if !loss.is_finite() {
                return Err(Error::DivergedLoss { epoch, loss });
            }
            let gnorm = grads.flat.norm();
            let scale = if gnorm > cfg.grad_clip { cfg.grad_clip / gnorm } else { 1.0 };
            let mut params = c.flatten_params();
            params -= lr * scale * &grads.flat;
            c.set_params(&params);
            epoch_loss += loss * (end - start) as f64;
            seen += end - start;
            start = end;
        }
        let loss = epoch_loss / seen as f64;
        if !loss.is_finite() {
            return Err(Error::DivergedLoss { epoch, loss });
        }
        trace.push(loss);
        if loss < best - 1e-12 {
            best = loss;
            stagnant = 0;
        } else {
            stagnant += 1;
            if stagnant >= cfg.plateau_patience {
                lr *= cfg.plateau_factor;
                stagnant = 0;
            }
        }
    }
    Ok((c, trace))
}

// ---------------------------------------------------------------------------
// Effective memory
// ---------------------------------------------------------------------------

/// Largest lag τ at which the mean state-to-input sensitivity
/// ‖∂h_T/∂x_{T−τ}‖_F still exceeds 1e−3 of its τ = 0 value, averaged over
/// seeded random input sequences.
pub fn effective_memory(c: &LpGrnnCell, lag_max: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED);
    let t_len = lag_max + 1;
    let n_h = c.hidden_dim();
    let n_x = c.input_dim();
    let mut mean_norm_sq = vec![0.0f64; t_len];
    let sequences = 10;
    let s = c.gate();
    let one_minus_s = s.map(|v| 1.0 - v);
    for _ in 0..sequences {
        let window = DMatrix::from_fn(t_len, n_x, |_, _| rng.gen_range(-1.0..1.0));
        let cache = forward_window(c, &window);
        // Backprop each unit of h_T to every input row.
        for unit in 0..n_h {
            let mut gh = DVector::zeros(n_h);
            gh[unit] = 1.0;
            for k in (0..t_len).rev() {
                let h_prev = &cache.hs[k];
                let _ = h_prev;
                let r = &cache.rs[k];
                let ht = &cache.hts[k];
                let dht = gh.component_mul(&one_minus_s);
                let da_h = dht.component_mul(&ht.map(|v| 1.0 - v * v));
                let dr = c.g_hr.transpose() * &da_h;
                let da_r = dr.component_mul(&r.map(|v| v * (1.0 - v)));
                let dx = c.w_rx.transpose() * &da_r + c.w_hx.transpose() * &da_h;
                let lag = t_len - 1 - k;
                mean_norm_sq[lag] += dx.norm_squared();
                gh = gh.component_mul(&s)
                    + c.w_rh.transpose() * &da_r
                    + c.w_hh.transpose() * &da_h;
            }
        }
    }
    let norms: Vec<f64> = mean_norm_sq.iter().map(|v| v.sqrt()).collect();
    let threshold = 1e-3 * norms[0];
    (0..t_len.min(lag_max + 1)).rev().find(|&tau| norms[tau] > threshold).unwrap_or(0)
}

// ---------------------------------------------------------------------------
// Gating analyzer
// ---------------------------------------------------------------------------

/// Per-probe nonconservativeness measurements of a vector field: maximum
/// Jacobian asymmetry and the discrepancy of the line integral along two
/// axis-ordered staircase paths from the origin.
#[derive(Debug, Clone)]
pub struct GatingAnalysis {
    pub probes: Vec<DVector<f64>>,
    /// max |J − Jᵀ| entrywise per probe (central finite differences).
    pub asymmetry: Vec<f64>,
    /// |∮ difference| between the two staircase paths origin → probe.
    pub path_discrepancy: Vec<f64>,
}

/// Analyze a vector field for nonconservativeness. A field with a diagonal
/// (or merely symmetric) Jacobian integrates path-independently; elementwise
/// gate products break that symmetry, which is exactly what makes them
/// incompatible with integral-of-channel energy terms.
pub fn analyze_gating<F>(field: F, probes: &[DVector<f64>], fd_step: f64) -> GatingAnalysis
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let mut asymmetry = Vec::with_capacity(probes.len());
    let mut path_discrepancy = Vec::with_capacity(probes.len());
    for probe in probes {
        let d = probe.len();
        // Central finite-difference Jacobian.
        let mut jac = DMatrix::zeros(d, d);
        for j in 0..d {
            let mut hi = probe.clone();
            let mut lo = probe.clone();
            hi[j] += fd_step;
            lo[j] -= fd_step;
            let diff = (field(&hi) - field(&lo)) / (2.0 * fd_step);
            jac.column_mut(j).copy_from(&diff);
        }
        let asym = (&jac - jac.transpose()).abs().max();
        asymmetry.push(asym);

        // Two staircase paths origin → probe: axis order 0..d and d..0.
        let fwd: Vec<usize> = (0..d).collect();
        let rev: Vec<usize> = (0..d).rev().collect();
        let i1 = staircase_integral(&field, probe, &fwd);
        let i2 = staircase_integral(&field, probe, &rev);
        path_discrepancy.push((i1 - i2).abs());
    }
    GatingAnalysis { probes: probes.to_vec(), asymmetry, path_discrepancy }
}

/// Line integral of the field along the axis-aligned staircase path from the
/// origin to `target`, visiting axes in the given order. Each leg uses
/// composite Simpson with 10⁴ segments.
fn staircase_integral<F>(field: &F, target: &DVector<f64>, order: &[usize]) -> f64
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let mut base = DVector::zeros(target.len());
    let mut total = 0.0;
    for &axis in order {
        let a = base[axis];
        let b = target[axis];
        let leg = composite_simpson(
            &|t| {
                let mut point = base.clone();
                point[axis] = t;
                field(&point)[axis]
            },
            a,
            b,
            10_000,
        );
        total += leg;
        base[axis] = b;
    }
    total
}
