//! Command-line front end: training, operator export, gating analysis,
//! well-posedness checking, stability certification, and closed-loop
//! simulation, each as a reproducible run that writes a manifest naming the
//! inputs it consumed (by content hash) and the reports it produced.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use serde::Serialize;
use sha2::{Digest, Sha256};

use snofcert::certify::{
    build_lmi, shift_equilibrium, solve_feasibility, validate_certificate, CertifyOptions,
    Verdict,
};
use snofcert::dataset::{ingest, synth_sequences, IngestManifest, SynthSpec, WindowedDataset};
use snofcert::plant_loop::LoopManifest;
use snofcert::rnn::{
    analyze_gating, gru_to_snof_like, lpgrnn_to_snof, train_bptt, AlphaEncoding, GruCell,
    LpGrnnCell, TrainConfig,
};
use snofcert::sim::{
    loop_metric_channels, simulate_loop, step_metrics, Schedule, StepSpec,
};
use snofcert::snof::{check_well_posed, nilpotency_index, Snof};

// Exit-code contract: 0 success/feasible, 2 invalid (diverged training,
// falsified or unproven result), 3 infeasible, 4 solver failure, 64 usage.
const EXIT_INVALID: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;
const EXIT_SOLVER_FAILURE: u8 = 4;
const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(name = "snofcert", version, about = "Train, export, certify and simulate operator-form systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a gated recurrent cell by full backpropagation through time.
    Train(TrainArgs),
    /// Certify global asymptotic stability of an assembled loop.
    Certify(CertifyArgs),
    /// Simulate an assembled loop through a setpoint scenario.
    Simulate(SimulateArgs),
    /// Measure how far a gated update field is from any channel-diagonal one.
    AnalyzeGating(AnalyzeGatingArgs),
    /// Export a trained cell to the standard operator-form JSON.
    ExportSnof(ExportArgs),
    /// Check well-posedness of an operator's implicit channel loop.
    CheckWellposed(CheckArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Seed for all randomness in the command.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory the reports are written to.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Degradation log to ingest; omitted, the synthetic sequence task is
    /// generated instead.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Zero-based unit-id column of the log.
    #[arg(long, default_value_t = 0)]
    unit_col: usize,
    /// Comma-separated zero-based feature columns of the log.
    #[arg(long, default_value = "2,3")]
    feature_cols: String,
    /// Remaining-life cap applied before target scaling.
    #[arg(long, default_value_t = 120.0)]
    rul_cap: f64,
    #[arg(long, default_value_t = 30)]
    window: usize,
    /// Synthetic task size (ignored when --data is given).
    #[arg(long, default_value_t = 2000)]
    windows: usize,
    #[arg(long, default_value_t = 3)]
    hidden: usize,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
}

#[derive(Args)]
struct CertifyArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Loop manifest tying plant, controller, sensor and scaler together.
    manifest: PathBuf,
    #[arg(long, default_value_t = 1e-5)]
    eps_abs: f64,
    #[arg(long, default_value_t = 1e-5)]
    eps_rel: f64,
    #[arg(long, default_value_t = 100_000)]
    max_iters: usize,
    /// Strictness margin: feasibility means the pencil stays below −margin.
    #[arg(long, default_value_t = 1e-6)]
    margin: f64,
    /// Simulation trials cross-validating a feasible certificate (0 skips).
    #[arg(long, default_value_t = 0)]
    validate_trials: usize,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: CommonArgs,
    manifest: PathBuf,
    /// Scenario: hold, step-y1 (to 120 at 50 s) or step-y2 (to 170 at 50 s).
    #[arg(long, default_value = "step-y2")]
    scenario: String,
    /// Horizon in seconds; defaults to 300 (6000 for step-y1).
    #[arg(long)]
    horizon: Option<f64>,
}

#[derive(Args)]
struct AnalyzeGatingArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, default_value_t = 2)]
    hidden: usize,
    #[arg(long, default_value_t = 100)]
    probes: usize,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Trained cell JSON.
    cell: PathBuf,
    /// Output operator file name (within --out-dir).
    #[arg(long, default_value = "snof.json")]
    out: String,
}

#[derive(Args)]
struct CheckArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Operator JSON, or a loop manifest when --loop is set.
    input: PathBuf,
    /// Treat the input as a loop manifest and check its open composite.
    #[arg(long = "loop", default_value_t = false)]
    as_loop: bool,
    /// Monte-Carlo samples for the fallback evidence method.
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
}

// ---------------------------------------------------------------------------
// Run manifests
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct InputRecord {
    path: String,
    sha256: String,
}

/// Echo of one invocation: command line, hashed inputs, seed and options.
/// Written next to the reports; every report names this manifest's hash.
#[derive(Serialize)]
struct RunManifest {
    tool_version: String,
    command: String,
    argv: Vec<String>,
    seed: u64,
    inputs: Vec<InputRecord>,
    out_dir: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    format!("{:x}", h.finalize())
}

fn hash_file(path: &Path) -> std::io::Result<InputRecord> {
    let bytes = std::fs::read(path)?;
    Ok(InputRecord { path: path.display().to_string(), sha256: sha256_hex(&bytes) })
}

impl RunManifest {
    fn new(command: &str, seed: u64, out_dir: &Path, inputs: &[&Path]) -> std::io::Result<Self> {
        Ok(RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            argv: std::env::args().collect(),
            seed,
            inputs: inputs.iter().map(|p| hash_file(p)).collect::<std::io::Result<_>>()?,
            out_dir: out_dir.display().to_string(),
        })
    }

    /// Write `run_manifest.json` and return its content hash for the reports.
    fn write(&self, out_dir: &Path) -> std::io::Result<String> {
        std::fs::create_dir_all(out_dir)?;
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(out_dir.join("run_manifest.json"), &text)?;
        Ok(sha256_hex(text.as_bytes()))
    }
}

fn write_report<T: Serialize>(out_dir: &Path, name: &str, report: &T) -> std::io::Result<()> {
    std::fs::write(out_dir.join(name), serde_json::to_string_pretty(report).expect("serializes"))
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

fn usage_err(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(EXIT_USAGE)
}

fn cmd_train(args: &TrainArgs) -> ExitCode {
    let inputs: Vec<&Path> = args.data.iter().map(PathBuf::as_path).collect();
    let manifest = match RunManifest::new("train", args.common.seed, &args.common.out_dir, &inputs)
    {
        Ok(m) => m,
        Err(e) => return usage_err(e),
    };
    let ds: WindowedDataset = match &args.data {
        Some(path) => {
            let cols: Result<Vec<usize>, _> =
                args.feature_cols.split(',').map(|c| c.trim().parse()).collect();
            let cols = match cols {
                Ok(c) if !c.is_empty() => c,
                _ => return usage_err("--feature-cols must be a comma-separated index list"),
            };
            match ingest(
                path,
                &IngestManifest {
                    unit_column: args.unit_col,
                    feature_columns: cols,
                    window_len: args.window,
                    rul_cap: args.rul_cap,
                },
            ) {
                Ok(ds) => ds,
                Err(e) => return usage_err(e),
            }
        }
        None => {
            let per_seq = 200usize.saturating_sub(args.window).max(1);
            let count = args.windows.div_ceil(per_seq);
            match synth_sequences(&SynthSpec {
                a: 0.9,
                noise: 0.01,
                count,
                length: 200,
                window_len: args.window,
                seed: args.common.seed,
            }) {
                Ok(ds) => ds,
                Err(e) => return usage_err(e),
            }
        }
    };
    if ds.is_empty() {
        return usage_err("dataset has no windows");
    }
    let targets: Vec<DVector<f64>> =
        ds.targets.iter().map(|t| DVector::from_element(1, *t)).collect();

    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(args.common.seed);
    let cell = LpGrnnCell::init(ds.features(), args.hidden, 1, &mut rng);
    let cfg = TrainConfig { lr: args.lr, epochs: args.epochs, ..TrainConfig::default() };
    let (trained, trace) = match train_bptt(&cell, &ds.windows, &targets, &cfg) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("training failed: {e}");
            return ExitCode::from(EXIT_INVALID);
        }
    };

    let hash = match manifest.write(&args.common.out_dir) {
        Ok(h) => h,
        Err(e) => return usage_err(e),
    };
    let cell_json = match trained.to_json(AlphaEncoding::Logit) {
        Ok(j) => j,
        Err(e) => return usage_err(e),
    };
    let out = &args.common.out_dir;
    if let Err(e) = std::fs::write(out.join("trained_cell.json"), cell_json) {
        return usage_err(e);
    }
    let mut csv = String::from("epoch,loss\n");
    for (i, l) in trace.iter().enumerate() {
        csv.push_str(&format!("{i},{l:.12e}\n"));
    }
    if let Err(e) = std::fs::write(out.join("loss_trace.csv"), csv) {
        return usage_err(e);
    }
    #[derive(Serialize)]
    struct TrainReport {
        manifest_sha256: String,
        windows: usize,
        epochs: usize,
        final_loss: Option<f64>,
        best_loss: Option<f64>,
    }
    let report = TrainReport {
        manifest_sha256: hash,
        windows: ds.len(),
        epochs: trace.len(),
        final_loss: trace.last().copied(),
        best_loss: trace.iter().copied().reduce(f64::min),
    };
    if let Err(e) = write_report(out, "train_report.json", &report) {
        return usage_err(e);
    }
    println!(
        "trained {} windows for {} epochs, final rmse {:.6}",
        ds.len(),
        trace.len(),
        report.final_loss.unwrap_or(f64::NAN)
    );
    ExitCode::SUCCESS
}

fn cmd_certify(args: &CertifyArgs) -> ExitCode {
    let manifest =
        match RunManifest::new("certify", args.common.seed, &args.common.out_dir, &[&args.manifest])
        {
            Ok(m) => m,
            Err(e) => return usage_err(e),
        };
    let loop_manifest = match LoopManifest::load(&args.manifest) {
        Ok(m) => m,
        Err(e) => return usage_err(format!("cannot read loop manifest: {e}")),
    };
    let (cl, r) = match loop_manifest.assemble(&args.manifest) {
        Ok(x) => x,
        Err(e) => return usage_err(format!("cannot assemble loop: {e}")),
    };

    let wp = check_well_posed(&cl.open, 10_000);
    let shift = match shift_equilibrium(&cl.closed, &r) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("equilibrium search failed: {e}");
            return ExitCode::from(EXIT_SOLVER_FAILURE);
        }
    };
    let pencil = match build_lmi(&shift) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("pencil assembly failed: {e}");
            return ExitCode::from(EXIT_SOLVER_FAILURE);
        }
    };
    let opts = CertifyOptions {
        eps_abs: args.eps_abs,
        eps_rel: args.eps_rel,
        max_iters: args.max_iters,
        margin: args.margin,
    };
    let cert = match solve_feasibility(&pencil, &opts) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("solver failed: {e}");
            return ExitCode::from(EXIT_SOLVER_FAILURE);
        }
    };

    let validation = if cert.verdict == Verdict::Feasible && args.validate_trials > 0 {
        match validate_certificate(
            &shift.shifted,
            &cert,
            args.validate_trials,
            args.common.seed,
            2e-6,
            200_000,
        ) {
            Ok(rep) => Some((rep.trials, rep.converged, rep.worst_v_increase, true)),
            Err(e) => {
                eprintln!("certificate falsified: {e}");
                Some((args.validate_trials, 0, f64::NAN, false))
            }
        }
    } else {
        None
    };

    let hash = match manifest.write(&args.common.out_dir) {
        Ok(h) => h,
        Err(e) => return usage_err(e),
    };
    #[derive(Serialize)]
    struct CertifyReport {
        manifest_sha256: String,
        well_posed: bool,
        well_posed_proof: bool,
        well_posed_method: String,
        equilibrium_residual: f64,
        saturated_channels: Vec<usize>,
        verdict: String,
        lambda_max_g: f64,
        p_min_eig: f64,
        margin: f64,
        iterations: usize,
        phase1_objective: f64,
        validation: Option<(usize, usize, f64, bool)>,
    }
    let report = CertifyReport {
        manifest_sha256: hash,
        well_posed: wp.verdict,
        well_posed_proof: wp.is_proof,
        well_posed_method: format!("{:?}", wp.method),
        equilibrium_residual: shift.residual,
        saturated_channels: shift.saturated_channels.clone(),
        verdict: format!("{:?}", cert.verdict),
        lambda_max_g: cert.lambda_max_g,
        p_min_eig: cert.p_min_eig,
        margin: cert.margin,
        iterations: cert.iterations,
        phase1_objective: cert.t_star,
        validation,
    };
    if let Err(e) = write_report(&args.common.out_dir, "certificate_report.json", &report) {
        return usage_err(e);
    }
    println!(
        "well-posed: {} ({}), verdict: {}, lambda_max(G) = {:.3e}, iterations = {}",
        report.well_posed, report.well_posed_method, report.verdict, report.lambda_max_g,
        report.iterations
    );
    match cert.verdict {
        Verdict::Feasible => {
            if let Some((_, converged, _, ok)) = validation {
                if !ok || converged < args.validate_trials {
                    return ExitCode::from(EXIT_INVALID);
                }
            }
            ExitCode::SUCCESS
        }
        Verdict::Infeasible => ExitCode::from(EXIT_INFEASIBLE),
        Verdict::SolverFailure => ExitCode::from(EXIT_SOLVER_FAILURE),
    }
}

fn cmd_simulate(args: &SimulateArgs) -> ExitCode {
    let manifest = match RunManifest::new(
        "simulate",
        args.common.seed,
        &args.common.out_dir,
        &[&args.manifest],
    ) {
        Ok(m) => m,
        Err(e) => return usage_err(e),
    };
    let loop_manifest = match LoopManifest::load(&args.manifest) {
        Ok(m) => m,
        Err(e) => return usage_err(format!("cannot read loop manifest: {e}")),
    };
    let (cl, r0) = match loop_manifest.assemble(&args.manifest) {
        Ok(x) => x,
        Err(e) => return usage_err(format!("cannot assemble loop: {e}")),
    };
    let ts = loop_manifest.sample_time;

    let (schedule, default_horizon) = match args.scenario.as_str() {
        "hold" => (Schedule::constant(r0.clone()), 300.0),
        "step-y1" => {
            let mut r1 = r0.clone();
            if r1.is_empty() {
                return usage_err("loop has no setpoint channels");
            }
            r1[0] = 120.0;
            (Schedule::step(r0.clone(), r1, 50.0), 6000.0)
        }
        "step-y2" => {
            let mut r1 = r0.clone();
            if r1.len() < 2 {
                return usage_err("scenario step-y2 needs at least two setpoint channels");
            }
            r1[1] = 170.0;
            (Schedule::step(r0.clone(), r1, 50.0), 300.0)
        }
        other => return usage_err(format!("unknown scenario {other:?}")),
    };
    let horizon_s = args.horizon.unwrap_or(default_horizon);
    if horizon_s <= 0.0 || ts <= 0.0 {
        return usage_err("horizon and sample time must be positive");
    }
    let horizon = (horizon_s / ts).round() as usize;

    let x0 = match shift_equilibrium(&cl.closed, &r0) {
        Ok(s) => s.x_star,
        Err(e) => {
            eprintln!("equilibrium search failed: {e}");
            return ExitCode::from(EXIT_SOLVER_FAILURE);
        }
    };
    let trace = match simulate_loop(&cl, &schedule, ts, horizon, &x0) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("simulation failed: {e}");
            return ExitCode::from(EXIT_INVALID);
        }
    };

    let hash = match manifest.write(&args.common.out_dir) {
        Ok(h) => h,
        Err(e) => return usage_err(e),
    };
    let out = &args.common.out_dir;
    if let Err(e) = std::fs::write(out.join("trace.csv"), trace.to_csv()) {
        return usage_err(e);
    }

    #[derive(Serialize)]
    struct SimReport {
        manifest_sha256: String,
        scenario: String,
        horizon_seconds: f64,
        sample_time: f64,
        metrics: Option<Vec<snofcert::sim::StepMetrics>>,
    }
    let metrics = StepSpec::from_schedule(&schedule, ts).map(|spec| {
        let spec =
            spec.with_channels(loop_metric_channels(&cl, loop_manifest.wiring.len()));
        step_metrics(&trace, &spec).expect("trace covers its own schedule")
    });
    let report = SimReport {
        manifest_sha256: hash,
        scenario: args.scenario.clone(),
        horizon_seconds: horizon_s,
        sample_time: ts,
        metrics,
    };
    if let Err(e) = write_report(out, "sim_report.json", &report) {
        return usage_err(e);
    }
    println!("simulated {} steps of scenario {}", trace.horizon, args.scenario);
    ExitCode::SUCCESS
}

fn cmd_analyze_gating(args: &AnalyzeGatingArgs) -> ExitCode {
    let manifest =
        match RunManifest::new("analyze-gating", args.common.seed, &args.common.out_dir, &[]) {
            Ok(m) => m,
            Err(e) => return usage_err(e),
        };
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(args.common.seed);
    let cell = GruCell::random(args.hidden, args.hidden, &mut rng);
    let gated = gru_to_snof_like(&cell);
    let x_fixed = DVector::zeros(args.hidden);
    let gated_field = |h: &DVector<f64>| gated.eval(h, &x_fixed);
    let plain_field = |h: &DVector<f64>| h.map(f64::tanh);

    use rand::Rng;
    let probes: Vec<DVector<f64>> = (0..args.probes)
        .map(|_| DVector::from_fn(args.hidden, |_, _| rng.gen_range(-1.5..1.5)))
        .collect();
    let plain = analyze_gating(plain_field, &probes, 1e-5);
    let gated_report = analyze_gating(gated_field, &probes, 1e-5);

    let hash = match manifest.write(&args.common.out_dir) {
        Ok(h) => h,
        Err(e) => return usage_err(e),
    };
    #[derive(Serialize)]
    struct GatingReport {
        manifest_sha256: String,
        probes: usize,
        plain_max_asymmetry: f64,
        gated_max_asymmetry: f64,
        gated_max_path_discrepancy: f64,
    }
    let report = GatingReport {
        manifest_sha256: hash,
        probes: args.probes,
        plain_max_asymmetry: plain.asymmetry.iter().copied().fold(0.0, f64::max),
        gated_max_asymmetry: gated_report.asymmetry.iter().copied().fold(0.0, f64::max),
        gated_max_path_discrepancy: gated_report
            .path_discrepancy
            .iter()
            .copied()
            .fold(0.0, f64::max),
    };
    if let Err(e) = write_report(&args.common.out_dir, "gating_report.json", &report) {
        return usage_err(e);
    }
    println!(
        "channelwise field asymmetry {:.3e}; gated field asymmetry {:.3e}, path discrepancy {:.3e}",
        report.plain_max_asymmetry, report.gated_max_asymmetry, report.gated_max_path_discrepancy
    );
    ExitCode::SUCCESS
}

fn cmd_export_snof(args: &ExportArgs) -> ExitCode {
    let manifest =
        match RunManifest::new("export-snof", args.common.seed, &args.common.out_dir, &[&args.cell])
        {
            Ok(m) => m,
            Err(e) => return usage_err(e),
        };
    let text = match std::fs::read_to_string(&args.cell) {
        Ok(t) => t,
        Err(e) => return usage_err(format!("cannot read cell file: {e}")),
    };
    let cell = match LpGrnnCell::from_json(&text) {
        Ok(c) => c,
        Err(e) => return usage_err(format!("cannot parse cell file: {e}")),
    };
    let snof = match lpgrnn_to_snof(&cell) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("export failed: {e}");
            return ExitCode::from(EXIT_INVALID);
        }
    };
    let hash = match manifest.write(&args.common.out_dir) {
        Ok(h) => h,
        Err(e) => return usage_err(e),
    };
    let out_path = args.common.out_dir.join(&args.out);
    if let Err(e) = snof.save(&out_path) {
        return usage_err(e);
    }
    #[derive(Serialize)]
    struct ExportReport {
        manifest_sha256: String,
        states: usize,
        channels: usize,
        outputs: usize,
        operator_file: String,
    }
    let report = ExportReport {
        manifest_sha256: hash,
        states: snof.n(),
        channels: snof.h(),
        outputs: snof.l(),
        operator_file: out_path.display().to_string(),
    };
    if let Err(e) = write_report(&args.common.out_dir, "export_report.json", &report) {
        return usage_err(e);
    }
    println!("exported {} states / {} channels to {}", snof.n(), snof.h(), out_path.display());
    ExitCode::SUCCESS
}

fn cmd_check_wellposed(args: &CheckArgs) -> ExitCode {
    let manifest = match RunManifest::new(
        "check-wellposed",
        args.common.seed,
        &args.common.out_dir,
        &[&args.input],
    ) {
        Ok(m) => m,
        Err(e) => return usage_err(e),
    };
    let snof: Snof = if args.as_loop {
        let loop_manifest = match LoopManifest::load(&args.input) {
            Ok(m) => m,
            Err(e) => return usage_err(format!("cannot read loop manifest: {e}")),
        };
        match loop_manifest.assemble(&args.input) {
            Ok((cl, _)) => cl.open,
            Err(e) => return usage_err(format!("cannot assemble loop: {e}")),
        }
    } else {
        match Snof::load(&args.input) {
            Ok(s) => s,
            Err(e) => return usage_err(format!("cannot read operator: {e}")),
        }
    };
    let report = check_well_posed(&snof, args.samples);
    let hash = match manifest.write(&args.common.out_dir) {
        Ok(h) => h,
        Err(e) => return usage_err(e),
    };
    #[derive(Serialize)]
    struct WellPosedReport {
        manifest_sha256: String,
        verdict: bool,
        is_proof: bool,
        method: String,
        nilpotency_index: Option<usize>,
    }
    let out = WellPosedReport {
        manifest_sha256: hash,
        verdict: report.verdict,
        is_proof: report.is_proof,
        method: format!("{:?}", report.method),
        nilpotency_index: nilpotency_index(&snof.dqp),
    };
    if let Err(e) = write_report(&args.common.out_dir, "wellposed_report.json", &out) {
        return usage_err(e);
    }
    println!("well-posed: {} via {} (proof: {})", out.verdict, out.method, out.is_proof);
    if report.verdict && report.is_proof {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_INVALID)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // Help/version requests are successful exits; anything else is a
            // usage error under this tool's exit-code contract.
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Certify(a) => cmd_certify(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::AnalyzeGating(a) => cmd_analyze_gating(a),
        Command::ExportSnof(a) => cmd_export_snof(a),
        Command::CheckWellposed(a) => cmd_check_wellposed(a),
    }
}
