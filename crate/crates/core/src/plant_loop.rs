//! Control-loop building blocks: an LTI plant with zero-order-hold
//! discretization, min–max scalers, a saturated PI controller in operator
//! form, and assembly of plant + controller + learned virtual sensor into a
//! single closed-loop operator ready for certification and simulation.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expm::expm;
use crate::snof::{Channel, Snof};

fn mat_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn mat_from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != nc) {
        return Err(Error::DimensionMismatch(format!("{what}: ragged matrix")));
    }
    Ok(DMatrix::from_row_slice(nr, nc, &rows.iter().flatten().copied().collect::<Vec<_>>()))
}

// ---------------------------------------------------------------------------
// Plant
// ---------------------------------------------------------------------------

/// LTI plant with a measured-output map. The "extended" output stacks the
/// measured outputs with the raw plant inputs, which is exactly the feature
/// vector the learned sensor consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantLti {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c_delta: DMatrix<f64>,
    pub d_delta: DMatrix<f64>,
    /// True when (a, b) are continuous-time and still need discretization.
    pub continuous: bool,
}

#[derive(Serialize, Deserialize)]
struct PlantRaw {
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    c_delta: Vec<Vec<f64>>,
    d_delta: Vec<Vec<f64>>,
    continuous: bool,
}

impl PlantLti {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c_delta: DMatrix<f64>,
        d_delta: DMatrix<f64>,
        continuous: bool,
    ) -> Result<Self> {
        let t = a.nrows();
        if a.ncols() != t || b.nrows() != t || c_delta.ncols() != t {
            return Err(Error::DimensionMismatch("plant state dimensions disagree".into()));
        }
        if d_delta.nrows() != c_delta.nrows() || d_delta.ncols() != b.ncols() {
            return Err(Error::DimensionMismatch("plant output dimensions disagree".into()));
        }
        Ok(PlantLti { a, b, c_delta, d_delta, continuous })
    }

    /// State dimension t.
    pub fn t(&self) -> usize {
        self.a.nrows()
    }
    /// Input dimension s.
    pub fn s(&self) -> usize {
        self.b.ncols()
    }
    /// Number of measured outputs (v − 1 in the loop dimension chain).
    pub fn measured_outputs(&self) -> usize {
        self.c_delta.nrows()
    }

    /// Extended output map [C_Δ; 0]: measured outputs stacked over inputs.
    pub fn extended_c(&self) -> DMatrix<f64> {
        let (t, s, w) = (self.t(), self.s(), self.measured_outputs());
        let mut out = DMatrix::zeros(w + s, t);
        out.view_mut((0, 0), (w, t)).copy_from(&self.c_delta);
        out
    }

    /// Extended feedthrough [D_Δ; I]: the input block passes straight through.
    pub fn extended_d(&self) -> DMatrix<f64> {
        let (s, w) = (self.s(), self.measured_outputs());
        let mut out = DMatrix::zeros(w + s, s);
        out.view_mut((0, 0), (w, s)).copy_from(&self.d_delta);
        out.view_mut((w, 0), (s, s)).copy_from(&DMatrix::identity(s, s));
        out
    }

    /// Zero-order-hold discretization; identity on already-discrete plants.
    pub fn discretized(&self, ts: f64) -> Result<PlantLti> {
        if !self.continuous {
            return Ok(self.clone());
        }
        let (ad, bd) = zoh_discretize(&self.a, &self.b, ts)?;
        Ok(PlantLti {
            a: ad,
            b: bd,
            c_delta: self.c_delta.clone(),
            d_delta: self.d_delta.clone(),
            continuous: false,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&PlantRaw {
            a: mat_rows(&self.a),
            b: mat_rows(&self.b),
            c_delta: mat_rows(&self.c_delta),
            d_delta: mat_rows(&self.d_delta),
            continuous: self.continuous,
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: PlantRaw = serde_json::from_str(text)?;
        PlantLti::new(
            mat_from_rows(&raw.a, "plant a")?,
            mat_from_rows(&raw.b, "plant b")?,
            mat_from_rows(&raw.c_delta, "plant c_delta")?,
            mat_from_rows(&raw.d_delta, "plant d_delta")?,
            raw.continuous,
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_json()?)?)
    }
}

/// Zero-order-hold discretization of ẋ = Ac x + Bc u at sample time Ts,
/// read off the top blocks of exp([[Ac, Bc], [0, 0]]·Ts).
pub fn zoh_discretize(
    ac: &DMatrix<f64>,
    bc: &DMatrix<f64>,
    ts: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if ts <= 0.0 {
        return Err(Error::DimensionMismatch("sample time must be positive".into()));
    }
    let t = ac.nrows();
    let s = bc.ncols();
    if ac.ncols() != t || bc.nrows() != t {
        return Err(Error::DimensionMismatch("zoh: A must be square and conformal with B".into()));
    }
    let mut block = DMatrix::zeros(t + s, t + s);
    block.view_mut((0, 0), (t, t)).copy_from(&(ac * ts));
    block.view_mut((0, t), (t, s)).copy_from(&(bc * ts));
    let e = expm(&block);
    Ok((e.view((0, 0), (t, t)).clone_owned(), e.view((0, t), (t, s)).clone_owned()))
}

// ---------------------------------------------------------------------------
// Scaler
// ---------------------------------------------------------------------------

/// Diagonal affine scaling on the sensor's input features plus a scalar
/// affine de-normalization of its output: u_scaled = σ_i ⊙ u + θ_i and
/// ŷ = σ_o · y_net + θ_o.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub sigma_i: Vec<f64>,
    pub theta_i: Vec<f64>,
    pub sigma_o: f64,
    pub theta_o: f64,
}

impl Scaler {
    pub fn identity(dim: usize) -> Self {
        Scaler { sigma_i: vec![1.0; dim], theta_i: vec![0.0; dim], sigma_o: 1.0, theta_o: 0.0 }
    }

    pub fn input_dim(&self) -> usize {
        self.sigma_i.len()
    }

    pub fn sigma_i_mat(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_vec(self.sigma_i.clone()))
    }

    pub fn theta_i_vec(&self) -> DVector<f64> {
        DVector::from_vec(self.theta_i.clone())
    }

    pub fn transform_input(&self, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(u.len(), |i, _| self.sigma_i[i] * u[i] + self.theta_i[i])
    }

    pub fn invert_input(&self, z: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(z.len(), |i, _| (z[i] - self.theta_i[i]) / self.sigma_i[i])
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, serde_json::to_string_pretty(self)?)?)
    }
}

/// Fit a per-column min–max scaler mapping each column's observed range onto
/// [lo, hi]. The output side is left as the identity.
pub fn fit_scaler(data: &DMatrix<f64>, lo: f64, hi: f64) -> Result<Scaler> {
    let mut sigma = Vec::with_capacity(data.ncols());
    let mut theta = Vec::with_capacity(data.ncols());
    for j in 0..data.ncols() {
        let col = data.column(j);
        let min = col.min();
        let max = col.max();
        if max <= min {
            return Err(Error::DegenerateColumn(format!("column {j} is constant")));
        }
        let s = (hi - lo) / (max - min);
        sigma.push(s);
        theta.push(lo - s * min);
    }
    Ok(Scaler { sigma_i: sigma, theta_i: theta, sigma_o: 1.0, theta_o: 0.0 })
}

// ---------------------------------------------------------------------------
// PI controller
// ---------------------------------------------------------------------------

/// Discrete PI controller in operator form with output saturation:
///
/// ```text
/// x⁺ = A x + B_p p + B_u e
/// q  = C_q x + D_qu e          (D_qp = 0: no algebraic loop)
/// u_out = p = clamp(q, y_min, y_max)
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct PiControllerSnof {
    pub a: DMatrix<f64>,
    pub b_p: DMatrix<f64>,
    pub b_u: DMatrix<f64>,
    pub c_q: DMatrix<f64>,
    pub d_qu: DMatrix<f64>,
    pub y_min: DVector<f64>,
    pub y_max: DVector<f64>,
}

#[derive(Serialize, Deserialize)]
struct ControllerRaw {
    a: Vec<Vec<f64>>,
    b_p: Vec<Vec<f64>>,
    b_u: Vec<Vec<f64>>,
    c_q: Vec<Vec<f64>>,
    d_qu: Vec<Vec<f64>>,
    y_min: Vec<f64>,
    y_max: Vec<f64>,
}

impl PiControllerSnof {
    /// Number of saturated output channels.
    pub fn channels(&self) -> usize {
        self.c_q.nrows()
    }
    /// Error-input dimension.
    pub fn input_dim(&self) -> usize {
        self.d_qu.ncols()
    }
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn saturation_channels(&self) -> Vec<Channel> {
        (0..self.channels()).map(|i| Channel::saturation(self.y_min[i], self.y_max[i])).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ControllerRaw {
            a: mat_rows(&self.a),
            b_p: mat_rows(&self.b_p),
            b_u: mat_rows(&self.b_u),
            c_q: mat_rows(&self.c_q),
            d_qu: mat_rows(&self.d_qu),
            y_min: self.y_min.iter().copied().collect(),
            y_max: self.y_max.iter().copied().collect(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: ControllerRaw = serde_json::from_str(text)?;
        Ok(PiControllerSnof {
            a: mat_from_rows(&raw.a, "controller a")?,
            b_p: mat_from_rows(&raw.b_p, "controller b_p")?,
            b_u: mat_from_rows(&raw.b_u, "controller b_u")?,
            c_q: mat_from_rows(&raw.c_q, "controller c_q")?,
            d_qu: mat_from_rows(&raw.d_qu, "controller d_qu")?,
            y_min: DVector::from_vec(raw.y_min),
            y_max: DVector::from_vec(raw.y_max),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_json()?)?)
    }
}

/// Build a per-channel discrete PI controller with saturated output:
/// the integrator state accumulates Ts·e, so the pre-saturation output is
/// q = Kp·e + Ki·Ts·Σe.
pub fn make_pi_controller(
    kp: &DVector<f64>,
    ki: &DVector<f64>,
    ts: f64,
    y_min: &DVector<f64>,
    y_max: &DVector<f64>,
) -> Result<PiControllerSnof> {
    let s = kp.len();
    if ki.len() != s || y_min.len() != s || y_max.len() != s {
        return Err(Error::DimensionMismatch("PI gain/limit vectors disagree".into()));
    }
    if ts <= 0.0 {
        return Err(Error::DimensionMismatch("sample time must be positive".into()));
    }
    if (0..s).any(|i| y_min[i] >= y_max[i]) {
        return Err(Error::DimensionMismatch("y_min must be strictly below y_max".into()));
    }
    Ok(PiControllerSnof {
        a: DMatrix::identity(s, s),
        b_p: DMatrix::zeros(s, s),
        b_u: DMatrix::from_diagonal_element(s, s, ts),
        c_q: DMatrix::from_diagonal(ki),
        d_qu: DMatrix::from_diagonal(kp),
        y_min: y_min.clone(),
        y_max: y_max.clone(),
    })
}

// ---------------------------------------------------------------------------
// Closed-loop assembly
// ---------------------------------------------------------------------------

/// Where each controller feedback signal comes from: a measured plant output
/// (by output index) or the learned sensor's estimate (by sensor output
/// index, held in a one-step delay register to keep the loop well-posed).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackSource {
    Measured(usize),
    Virtual(usize),
}

/// Dimension bookkeeping for the assembled loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopDims {
    pub n_ctrl: usize,
    pub n_plant: usize,
    pub n_sensor: usize,
    pub n_delay: usize,
    pub h_ctrl: usize,
    pub h_sensor: usize,
}

/// The assembled loop, in two orientations:
///
/// - `open`: the reference-input composite of controller, plant and sensor.
///   Its input is the controller's error signal; every structural zero of
///   the composition is exactly zero. States [x_ctrl; x_plant; x_sensor],
///   channels [p_ctrl; p_sensor], outputs [measured plant outputs; raw
///   sensor outputs].
/// - `closed`: the same loop with the feedback path substituted
///   (e = r − y_fb), a de-normalizing output map, and one delay register per
///   virtual feedback entry so that the sensor estimate reaches the
///   controller with a one-step delay. Its input is the reference r and its
///   outputs are [measured plant outputs; de-normalized sensor estimates].
#[derive(Debug, Clone)]
pub struct ClosedLoopSnof {
    pub open: Snof,
    pub closed: Snof,
    pub wiring: Vec<FeedbackSource>,
    pub dims: LoopDims,
}

/// Assemble controller + plant + learned sensor into the open composite and
/// the reference-closed loop. A continuous plant is ZOH-discretized at `ts`.
pub fn assemble_closed_loop(
    plant: &PlantLti,
    ctrl: &PiControllerSnof,
    sensor: &Snof,
    scaler: &Scaler,
    wiring: &[FeedbackSource],
    ts: f64,
) -> Result<ClosedLoopSnof> {
    let plant = plant.discretized(ts)?;
    let t = plant.t();
    let s = plant.s();
    let w = plant.measured_outputs();

    // Dimension chain.
    if ctrl.channels() != s {
        return Err(Error::DimensionChainBroken(format!(
            "controller output dimension {} must equal plant input dimension {}",
            ctrl.channels(),
            s
        )));
    }
    if sensor.m() != w + s {
        return Err(Error::DimensionChainBroken(format!(
            "sensor input dimension {} must equal plant outputs + plant inputs = {}",
            sensor.m(),
            w + s
        )));
    }
    if scaler.input_dim() != sensor.m() {
        return Err(Error::DimensionChainBroken(format!(
            "scaler dimension {} must equal sensor input dimension {}",
            scaler.input_dim(),
            sensor.m()
        )));
    }
    if wiring.len() != ctrl.input_dim() {
        return Err(Error::DimensionChainBroken(format!(
            "wiring length {} must equal controller input dimension {}",
            wiring.len(),
            ctrl.input_dim()
        )));
    }
    for fb in wiring {
        match *fb {
            FeedbackSource::Measured(i) if i >= w => {
                return Err(Error::DimensionChainBroken(format!(
                    "measured feedback index {i} out of range ({w} plant outputs)"
                )));
            }
            FeedbackSource::Virtual(j) if j >= sensor.l() => {
                return Err(Error::DimensionChainBroken(format!(
                    "virtual feedback index {j} out of range ({} sensor outputs)",
                    sensor.l()
                )));
            }
            _ => {}
        }
    }
    if ctrl.b_p.nrows() != ctrl.state_dim() || ctrl.b_p.ncols() != ctrl.channels() {
        return Err(Error::DimensionChainBroken("controller b_p has wrong shape".into()));
    }

    let n_c = ctrl.state_dim();
    let n_n = sensor.n();
    let h_c = ctrl.channels();
    let h_n = sensor.h();
    let v_in = ctrl.input_dim();
    let sig_i = scaler.sigma_i_mat();
    let th_i = scaler.theta_i_vec();
    let c_ext = plant.extended_c(); // (w+s) × t
    let d_ext = plant.extended_d(); // (w+s) × s
    let sic = &sig_i * &c_ext;
    let sid = &sig_i * &d_ext;

    // ---- Open composite: states [x_c; x_p; x_n], channels [p_c; p_n],
    // input e (controller error), outputs [y_measured; y_sensor_raw].
    let n_open = n_c + t + n_n;
    let h_tot = h_c + h_n;
    let (r_c, r_p, r_n) = (0, n_c, n_c + t);
    let mut a = DMatrix::zeros(n_open, n_open);
    let mut bp = DMatrix::zeros(n_open, h_tot);
    let mut bu = DMatrix::zeros(n_open, v_in);
    let mut beta_x = DVector::zeros(n_open);
    a.view_mut((r_c, r_c), (n_c, n_c)).copy_from(&ctrl.a);
    bp.view_mut((r_c, 0), (n_c, h_c)).copy_from(&ctrl.b_p);
    bu.view_mut((r_c, 0), (n_c, v_in)).copy_from(&ctrl.b_u);
    a.view_mut((r_p, r_p), (t, t)).copy_from(&plant.a);
    bp.view_mut((r_p, 0), (t, h_c)).copy_from(&plant.b);
    a.view_mut((r_n, r_n), (n_n, n_n)).copy_from(&sensor.a);
    a.view_mut((r_n, r_p), (n_n, t)).copy_from(&(&sensor.bu * &sic));
    bp.view_mut((r_n, 0), (n_n, h_c)).copy_from(&(&sensor.bu * &sid));
    bp.view_mut((r_n, h_c), (n_n, h_n)).copy_from(&sensor.bp);
    beta_x.rows_mut(r_n, n_n).copy_from(&(&sensor.beta_x + &sensor.bu * &th_i));

    let mut cq = DMatrix::zeros(h_tot, n_open);
    let mut dqp = DMatrix::zeros(h_tot, h_tot);
    let mut dqu = DMatrix::zeros(h_tot, v_in);
    let mut beta_q = DVector::zeros(h_tot);
    cq.view_mut((0, r_c), (h_c, n_c)).copy_from(&ctrl.c_q);
    dqu.view_mut((0, 0), (h_c, v_in)).copy_from(&ctrl.d_qu);
    cq.view_mut((h_c, r_n), (h_n, n_n)).copy_from(&sensor.cq);
    cq.view_mut((h_c, r_p), (h_n, t)).copy_from(&(&sensor.dqu * &sic));
    dqp.view_mut((h_c, 0), (h_n, h_c)).copy_from(&(&sensor.dqu * &sid));
    dqp.view_mut((h_c, h_c), (h_n, h_n)).copy_from(&sensor.dqp);
    beta_q.rows_mut(h_c, h_n).copy_from(&(&sensor.beta_q + &sensor.dqu * &th_i));

    let l_n = sensor.l();
    let l_open = w + l_n;
    let mut cy = DMatrix::zeros(l_open, n_open);
    let mut dyp = DMatrix::zeros(l_open, h_tot);
    let mut beta_o = DVector::zeros(l_open);
    cy.view_mut((0, r_p), (w, t)).copy_from(&plant.c_delta);
    dyp.view_mut((0, 0), (w, h_c)).copy_from(&plant.d_delta);
    cy.view_mut((w, r_n), (l_n, n_n)).copy_from(&sensor.cy);
    cy.view_mut((w, r_p), (l_n, t)).copy_from(&(&sensor.dyu * &sic));
    dyp.view_mut((w, 0), (l_n, h_c)).copy_from(&(&sensor.dyu * &sid));
    dyp.view_mut((w, h_c), (l_n, h_n)).copy_from(&sensor.dyp);
    beta_o.rows_mut(w, l_n).copy_from(&(&sensor.beta_o + &sensor.dyu * &th_i));

    let mut channels = ctrl.saturation_channels();
    channels.extend(sensor.nl.iter().cloned());

    let open = Snof::new(
        a.clone(),
        bp.clone(),
        bu,
        cq.clone(),
        dqp.clone(),
        dqu,
        cy,
        dyp,
        DMatrix::zeros(l_open, v_in),
        beta_x.clone(),
        beta_q.clone(),
        beta_o,
        channels.clone(),
    )?;

    // ---- Closed loop: append one delay register per virtual feedback
    // entry, substitute e = r − y_fb, de-normalize the sensor estimate.
    let virtuals: Vec<usize> = wiring
        .iter()
        .filter_map(|fb| match fb {
            FeedbackSource::Virtual(j) => Some(*j),
            FeedbackSource::Measured(_) => None,
        })
        .collect();
    let n_d = virtuals.len();
    let n_cl = n_open + n_d;
    let r_d = n_open;

    // De-normalized sensor estimate rows (shared by the delay registers and
    // the closed-loop output map): ŷ_j over the closed state/channel basis.
    let so = scaler.sigma_o;
    let mut est_x = DMatrix::zeros(l_n, n_cl);
    let mut est_p = DMatrix::zeros(l_n, h_tot);
    let mut est_0 = DVector::zeros(l_n);
    est_x.view_mut((0, r_n), (l_n, n_n)).copy_from(&(so * &sensor.cy));
    est_x.view_mut((0, r_p), (l_n, t)).copy_from(&(so * &sensor.dyu * &sic));
    est_p.view_mut((0, 0), (l_n, h_c)).copy_from(&(so * &sensor.dyu * &sid));
    est_p.view_mut((0, h_c), (l_n, h_n)).copy_from(&(so * &sensor.dyp));
    est_0.copy_from(
        &(so * &sensor.beta_o
            + so * &sensor.dyu * &th_i
            + DVector::from_element(l_n, scaler.theta_o)),
    );

    // Feedback selection y_fb = S_x·x + S_p·p + s_0 over the closed basis.
    let mut s_x = DMatrix::zeros(v_in, n_cl);
    let mut s_p = DMatrix::zeros(v_in, h_tot);
    let mut delay_cursor = 0usize;
    for (row, fb) in wiring.iter().enumerate() {
        match *fb {
            FeedbackSource::Measured(i) => {
                s_x.view_mut((row, r_p), (1, t)).copy_from(&plant.c_delta.row(i));
                s_p.view_mut((row, 0), (1, h_c)).copy_from(&plant.d_delta.row(i));
            }
            FeedbackSource::Virtual(_) => {
                s_x[(row, r_d + delay_cursor)] = 1.0;
                delay_cursor += 1;
            }
        }
    }

    let mut a_cl = DMatrix::zeros(n_cl, n_cl);
    let mut bp_cl = DMatrix::zeros(n_cl, h_tot);
    let mut bu_cl = DMatrix::zeros(n_cl, v_in);
    let mut bx_cl = DVector::zeros(n_cl);
    a_cl.view_mut((0, 0), (n_open, n_open)).copy_from(&a);
    bp_cl.view_mut((0, 0), (n_open, h_tot)).copy_from(&bp);
    bx_cl.rows_mut(0, n_open).copy_from(&beta_x);
    // Controller receives e = r − y_fb.
    let buc_sx = &ctrl.b_u * &s_x;
    let buc_sp = &ctrl.b_u * &s_p;
    let a_ctrl_rows = a_cl.view((r_c, 0), (n_c, n_cl)).clone_owned() - &buc_sx;
    a_cl.view_mut((r_c, 0), (n_c, n_cl)).copy_from(&a_ctrl_rows);
    let bp_ctrl_rows = bp_cl.view((r_c, 0), (n_c, h_tot)).clone_owned() - &buc_sp;
    bp_cl.view_mut((r_c, 0), (n_c, h_tot)).copy_from(&bp_ctrl_rows);
    bu_cl.view_mut((r_c, 0), (n_c, v_in)).copy_from(&ctrl.b_u);
    // Delay registers latch the de-normalized estimates they feed back.
    for (dr, &j) in virtuals.iter().enumerate() {
        a_cl.view_mut((r_d + dr, 0), (1, n_cl)).copy_from(&est_x.row(j));
        bp_cl.view_mut((r_d + dr, 0), (1, h_tot)).copy_from(&est_p.row(j));
        bx_cl[r_d + dr] = est_0[j];
    }

    let mut cq_cl = DMatrix::zeros(h_tot, n_cl);
    let mut dqp_cl = dqp.clone();
    let mut dqu_cl = DMatrix::zeros(h_tot, v_in);
    cq_cl.view_mut((0, 0), (h_tot, n_open)).copy_from(&cq);
    let dquc_sx = &ctrl.d_qu * &s_x;
    let dquc_sp = &ctrl.d_qu * &s_p;
    let cq_ctrl_rows = cq_cl.view((0, 0), (h_c, n_cl)).clone_owned() - &dquc_sx;
    cq_cl.view_mut((0, 0), (h_c, n_cl)).copy_from(&cq_ctrl_rows);
    let dqp_ctrl_rows = dqp_cl.view((0, 0), (h_c, h_tot)).clone_owned() - &dquc_sp;
    dqp_cl.view_mut((0, 0), (h_c, h_tot)).copy_from(&dqp_ctrl_rows);
    dqu_cl.view_mut((0, 0), (h_c, v_in)).copy_from(&ctrl.d_qu);

    // Closed outputs: measured plant outputs, then de-normalized estimates.
    let l_cl = w + l_n;
    let mut cy_cl = DMatrix::zeros(l_cl, n_cl);
    let mut dyp_cl = DMatrix::zeros(l_cl, h_tot);
    let mut bo_cl = DVector::zeros(l_cl);
    cy_cl.view_mut((0, r_p), (w, t)).copy_from(&plant.c_delta);
    dyp_cl.view_mut((0, 0), (w, h_c)).copy_from(&plant.d_delta);
    cy_cl.view_mut((w, 0), (l_n, n_cl)).copy_from(&est_x);
    dyp_cl.view_mut((w, 0), (l_n, h_tot)).copy_from(&est_p);
    bo_cl.rows_mut(w, l_n).copy_from(&est_0);

    let closed = Snof::new(
        a_cl,
        bp_cl,
        bu_cl,
        cq_cl,
        dqp_cl,
        dqu_cl,
        cy_cl,
        dyp_cl,
        DMatrix::zeros(l_cl, v_in),
        bx_cl,
        beta_q,
        bo_cl,
        channels,
    )?;

    Ok(ClosedLoopSnof {
        open,
        closed,
        wiring: wiring.to_vec(),
        dims: LoopDims { n_ctrl: n_c, n_plant: t, n_sensor: n_n, n_delay: n_d, h_ctrl: h_c, h_sensor: h_n },
    })
}

// ---------------------------------------------------------------------------
// Loop manifest
// ---------------------------------------------------------------------------

/// JSON manifest tying the four loop artifacts together with the feedback
/// wiring, sample time and setpoint. Artifact paths are resolved relative to
/// the manifest file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoopManifest {
    pub plant: String,
    pub controller: String,
    pub sensor: String,
    pub scaler: String,
    pub wiring: Vec<FeedbackSource>,
    pub setpoint: Vec<f64>,
    pub sample_time: f64,
}

impl LoopManifest {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, serde_json::to_string_pretty(self)?)?)
    }

    /// Load all referenced artifacts and assemble the loop.
    pub fn assemble(&self, manifest_path: &Path) -> Result<(ClosedLoopSnof, DVector<f64>)> {
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        let plant = PlantLti::load(&base.join(&self.plant))?;
        let ctrl = PiControllerSnof::load(&base.join(&self.controller))?;
        let sensor = Snof::load(&base.join(&self.sensor))?;
        let scaler = Scaler::load(&base.join(&self.scaler))?;
        let loop_ = assemble_closed_loop(&plant, &ctrl, &sensor, &scaler, &self.wiring, self.sample_time)?;
        Ok((loop_, DVector::from_vec(self.setpoint.clone())))
    }
}
