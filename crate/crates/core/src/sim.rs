//! Closed-loop time-domain simulation and step-response metrics.
//!
//! [`simulate`] performs an exact discrete rollout of an operator under a
//! piecewise-constant reference schedule; [`step_metrics`] scores a setpoint
//! step with the standard 2 %-band definitions; [`compare_configs`] pairs the
//! metrics of two feedback configurations and reports per-output deltas.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plant_loop::ClosedLoopSnof;
use crate::snof::Snof;

/// State inf-norm above which a rollout is declared divergent.
pub const DIVERGENCE_NORM: f64 = 1e9;

// ---------------------------------------------------------------------------
// Reference schedules
// ---------------------------------------------------------------------------

/// Piecewise-constant reference signal: a list of (start time, setpoint)
/// segments, the first of which must start at t = 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub segments: Vec<(f64, DVector<f64>)>,
}

impl Schedule {
    /// A reference held constant over the whole horizon.
    pub fn constant(r: DVector<f64>) -> Self {
        Schedule { segments: vec![(0.0, r)] }
    }

    /// A single setpoint step: `r0` until `t_step` seconds, `r1` afterwards.
    pub fn step(r0: DVector<f64>, r1: DVector<f64>, t_step: f64) -> Self {
        Schedule { segments: vec![(0.0, r0), (t_step, r1)] }
    }

    /// The active setpoint at time `t` (last segment whose start is ≤ t).
    pub fn at(&self, t: f64) -> &DVector<f64> {
        let mut current = &self.segments[0].1;
        for (start, r) in &self.segments {
            if *start <= t + 1e-12 {
                current = r;
            }
        }
        current
    }
}

// ---------------------------------------------------------------------------
// Traces
// ---------------------------------------------------------------------------

/// One simulated rollout: aligned time, state, reference, output and channel
/// trajectories, plus an echo of the run configuration. All trajectories
/// have `horizon + 1` entries (initial condition included); inputs `u` and
/// channel signals have `horizon` entries (one per applied step).
#[derive(Debug, Clone)]
pub struct SimTrace {
    pub ts: f64,
    pub horizon: usize,
    pub time: Vec<f64>,
    pub x: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
    pub y: Vec<DVector<f64>>,
    pub p: Vec<DVector<f64>>,
    pub q: Vec<DVector<f64>>,
    pub schedule: Schedule,
}

impl SimTrace {
    pub fn outputs(&self) -> usize {
        self.y.first().map_or(0, |y| y.len())
    }

    /// Plot-ready CSV: time column followed by named reference, output and
    /// state columns.
    pub fn to_csv(&self) -> String {
        let l = self.outputs();
        let n = self.x.first().map_or(0, |x| x.len());
        let m = self.u.first().map_or(0, |u| u.len());
        let mut head = vec!["t".to_string()];
        head.extend((0..m).map(|i| format!("r{}", i + 1)));
        head.extend((0..l).map(|i| format!("y{}", i + 1)));
        head.extend((0..n).map(|i| format!("x{}", i + 1)));
        let mut out = head.join(",") + "\n";
        for k in 0..self.horizon {
            let mut row = vec![format!("{:.10e}", self.time[k])];
            row.extend(self.u[k].iter().map(|v| format!("{v:.10e}")));
            row.extend(self.y[k].iter().map(|v| format!("{v:.10e}")));
            row.extend(self.x[k].iter().map(|v| format!("{v:.10e}")));
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Exact discrete rollout of `sys` for `horizon` steps from `x0` under the
/// reference `schedule` sampled every `ts` seconds. The output trajectory
/// holds the output computed at each visited state (including the initial
/// one, under the setpoint active at its time).
pub fn simulate(
    sys: &Snof,
    schedule: &Schedule,
    ts: f64,
    horizon: usize,
    x0: &DVector<f64>,
) -> Result<SimTrace> {
    if horizon == 0 {
        return Err(Error::DimensionMismatch("horizon must be positive".into()));
    }
    let mut x = Vec::with_capacity(horizon + 1);
    let mut u = Vec::with_capacity(horizon);
    let mut y = Vec::with_capacity(horizon + 1);
    let mut p = Vec::with_capacity(horizon);
    let mut q = Vec::with_capacity(horizon);
    let mut time = Vec::with_capacity(horizon + 1);
    let mut xk = x0.clone();
    for k in 0..horizon {
        let t = k as f64 * ts;
        let r = schedule.at(t).clone();
        let step = sys.eval_step(&xk, &r)?;
        time.push(t);
        x.push(xk.clone());
        y.push(step.y);
        p.push(step.p);
        q.push(step.q);
        u.push(r);
        xk = step.x_next;
        let norm = xk.amax();
        if !norm.is_finite() || norm > DIVERGENCE_NORM {
            return Err(Error::DivergenceDetected { step: k + 1, norm });
        }
    }
    time.push(horizon as f64 * ts);
    x.push(xk);
    Ok(SimTrace { ts, horizon, time, x, u, y, p, q, schedule: schedule.clone() })
}

/// Convenience rollout of the reference-closed orientation of an assembled
/// loop.
pub fn simulate_loop(
    cl: &ClosedLoopSnof,
    schedule: &Schedule,
    ts: f64,
    horizon: usize,
    x0: &DVector<f64>,
) -> Result<SimTrace> {
    simulate(&cl.closed, schedule, ts, horizon, x0)
}

// ---------------------------------------------------------------------------
// Step metrics
// ---------------------------------------------------------------------------

/// Which step of a schedule to score: the sample index at which the new
/// setpoint takes effect, the setpoints before and after, and which trace
/// output channel carries each setpoint entry (a loop whose feedback uses a
/// learned estimate reports that estimate as the regulated channel).
#[derive(Debug, Clone)]
pub struct StepSpec {
    pub step_index: usize,
    pub r_before: DVector<f64>,
    pub r_after: DVector<f64>,
    pub channels: Vec<usize>,
}

impl StepSpec {
    /// Derive the spec from a two-segment schedule, scoring trace output `i`
    /// against setpoint entry `i`.
    pub fn from_schedule(schedule: &Schedule, ts: f64) -> Option<StepSpec> {
        if schedule.segments.len() < 2 {
            return None;
        }
        let (t1, r1) = &schedule.segments[1];
        Some(StepSpec {
            step_index: (t1 / ts).ceil() as usize,
            r_before: schedule.segments[0].1.clone(),
            r_after: r1.clone(),
            channels: (0..r1.len()).collect(),
        })
    }

    /// Replace the channel map, e.g. with [`loop_metric_channels`].
    pub fn with_channels(mut self, channels: Vec<usize>) -> StepSpec {
        self.channels = channels;
        self
    }
}

/// The trace output channel regulated by each controller error entry: the
/// measured plant output for direct feedback, or the de-normalized estimate
/// (appended after the `measured` plant outputs) for virtual feedback.
pub fn loop_metric_channels(cl: &ClosedLoopSnof, measured: usize) -> Vec<usize> {
    cl.wiring
        .iter()
        .map(|w| match w {
            crate::plant_loop::FeedbackSource::Measured(i) => *i,
            crate::plant_loop::FeedbackSource::Virtual(j) => measured + j,
        })
        .collect()
}

/// Standard step-response scores for one output channel. `settling_time` is
/// in seconds from the step instant; `None` means the 2 % band is never
/// entered and held to the end of the horizon (unsettled, or a zero-magnitude
/// step for which the band is undefined).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepMetrics {
    pub rmse: f64,
    pub iae: f64,
    pub settling_time: Option<f64>,
    pub overshoot_pct: f64,
    pub ss_error: f64,
}

/// Score every output channel of a trace against a setpoint step.
///
/// Definitions: settling is the first sample from which the output stays
/// within ±2 % of the step magnitude around the new setpoint through the end
/// of the horizon; overshoot is the peak excursion beyond the new setpoint in
/// the direction of the step, as a percentage of the step magnitude;
/// steady-state error is the mean of the last 5 % of the horizon minus the
/// setpoint; RMSE and IAE are taken over the post-step window.
pub fn step_metrics(trace: &SimTrace, spec: &StepSpec) -> Result<Vec<StepMetrics>> {
    let k0 = spec.step_index;
    if k0 >= trace.horizon {
        return Err(Error::DimensionMismatch(format!(
            "step index {k0} outside the simulated horizon {}",
            trace.horizon
        )));
    }
    let l = trace.outputs();
    if spec.r_after.len() != spec.channels.len() || spec.r_before.len() != spec.channels.len() {
        return Err(Error::DimensionMismatch(format!(
            "step spec has {} setpoint entries but {} channel entries",
            spec.r_after.len(),
            spec.channels.len()
        )));
    }
    if let Some(&bad) = spec.channels.iter().find(|&&j| j >= l) {
        return Err(Error::DimensionMismatch(format!(
            "channel {bad} outside the trace's {l} outputs"
        )));
    }
    let n_samples = trace.y.len();
    let tail_start = n_samples - (n_samples / 20).max(1);
    let mut metrics = Vec::with_capacity(spec.channels.len());
    for (i, &j) in spec.channels.iter().enumerate() {
        let target = spec.r_after[i];
        let magnitude = (spec.r_after[i] - spec.r_before[i]).abs();
        let direction = (spec.r_after[i] - spec.r_before[i]).signum();

        let mut sq = 0.0;
        let mut abs = 0.0;
        let mut peak = 0.0f64;
        for k in k0..n_samples {
            let e = trace.y[k][j] - target;
            sq += e * e;
            abs += e.abs();
            peak = peak.max(direction * e);
        }
        let count = (n_samples - k0) as f64;
        let rmse = (sq / count).sqrt();
        let iae = abs * trace.ts;
        let overshoot_pct =
            if magnitude > 0.0 { 100.0 * peak.max(0.0) / magnitude } else { 0.0 };

        let settling_time = if magnitude > 0.0 {
            let band = 0.02 * magnitude;
            // Last sample outside the band determines the hold point.
            let mut last_out = None;
            for k in k0..n_samples {
                if (trace.y[k][j] - target).abs() > band {
                    last_out = Some(k);
                }
            }
            match last_out {
                Some(k) if k + 1 >= n_samples => None,
                Some(k) => Some((k + 1 - k0) as f64 * trace.ts),
                None => Some(0.0),
            }
        } else {
            None
        };

        let tail: f64 = (tail_start..n_samples).map(|k| trace.y[k][j]).sum();
        let ss_error = tail / (n_samples - tail_start) as f64 - target;

        metrics.push(StepMetrics { rmse, iae, settling_time, overshoot_pct, ss_error });
    }
    Ok(metrics)
}

// ---------------------------------------------------------------------------
// Configuration comparison
// ---------------------------------------------------------------------------

/// Per-output differences (B minus A) between two configurations' scores.
/// Settling delta is `None` when either side is unsettled.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricDeltas {
    pub rmse: f64,
    pub iae: f64,
    pub settling_time: Option<f64>,
    pub overshoot_pct: f64,
    pub ss_error_abs: f64,
}

/// Paired step scores of two feedback configurations over one shared
/// scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairedMetrics {
    pub a: Vec<StepMetrics>,
    pub b: Vec<StepMetrics>,
    pub deltas: Vec<MetricDeltas>,
}

impl PairedMetrics {
    /// Plot-ready CSV: one row per output, all paired scores and deltas.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "output,rmse_a,rmse_b,iae_a,iae_b,settling_a,settling_b,\
             overshoot_a,overshoot_b,ss_error_a,ss_error_b,delta_ss_error_abs\n",
        );
        let fmt_opt = |v: &Option<f64>| v.map_or("unsettled".into(), |t| format!("{t:.6}"));
        for (j, (a, b)) in self.a.iter().zip(&self.b).enumerate() {
            out.push_str(&format!(
                "y{},{:.6},{:.6},{:.6},{:.6},{},{},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                j + 1,
                a.rmse,
                b.rmse,
                a.iae,
                b.iae,
                fmt_opt(&a.settling_time),
                fmt_opt(&b.settling_time),
                a.overshoot_pct,
                b.overshoot_pct,
                a.ss_error,
                b.ss_error,
                self.deltas[j].ss_error_abs,
            ));
        }
        out
    }
}

/// Score two traces of the same scenario (same schedule, sample time and
/// horizon) and pair the per-output results. The two specs must describe the
/// same setpoint step but may map it onto different trace channels (direct
/// measurement vs. learned estimate).
pub fn compare_configs(
    trace_a: &SimTrace,
    spec_a: &StepSpec,
    trace_b: &SimTrace,
    spec_b: &StepSpec,
) -> Result<PairedMetrics> {
    if trace_a.ts != trace_b.ts || trace_a.horizon != trace_b.horizon {
        return Err(Error::DimensionMismatch(
            "compared traces must share sample time and horizon".into(),
        ));
    }
    if spec_a.step_index != spec_b.step_index
        || spec_a.r_before != spec_b.r_before
        || spec_a.r_after != spec_b.r_after
    {
        return Err(Error::DimensionMismatch(
            "compared specs must describe the same setpoint step".into(),
        ));
    }
    let a = step_metrics(trace_a, spec_a)?;
    let b = step_metrics(trace_b, spec_b)?;
    let deltas = a
        .iter()
        .zip(&b)
        .map(|(ma, mb)| MetricDeltas {
            rmse: mb.rmse - ma.rmse,
            iae: mb.iae - ma.iae,
            settling_time: match (ma.settling_time, mb.settling_time) {
                (Some(ta), Some(tb)) => Some(tb - ta),
                _ => None,
            },
            overshoot_pct: mb.overshoot_pct - ma.overshoot_pct,
            ss_error_abs: mb.ss_error.abs() - ma.ss_error.abs(),
        })
        .collect();
    Ok(PairedMetrics { a, b, deltas })
}
