use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use quadsid_core::config::{pid_gains_text, Config};
use quadsid_core::control::{
    closed_loop_radius, lqr_output_weighted, reference_gain, LqrController, LqrGains, LqrWeights,
};
use quadsid_core::model::{momentum_thrust, thrust_coefficient};
use quadsid_core::sim::{
    compare_runs, generate_dataset, identify_log, input_kind_study, run_blackbox, run_greybox, trajectory_csv,
    Controller, RunResult, CHANNELS,
};
use quadsid_core::sysid::{estimate_coefficients, FlightLog, InputKind, StateSpaceModel};

#[derive(Parser)]
#[command(name = "quadsid", version, about = "Quadrotor modelling, identification and control")]
struct Cli {
    /// Flat key = value config; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Thrust and yaw-drag coefficients.
    Coeff {
        #[command(subcommand)]
        what: CoeffCmd,
    },
    /// Closed-loop flight on the nonlinear model.
    Sim(SimArgs),
    /// Subspace identification from a flight log.
    Ident(IdentArgs),
    /// Output-weighted LQR gains for an identified model.
    Lqr(LqrArgs),
    /// Validate and write the configured PID gains.
    Pid,
    /// Nonlinear model vs identified model under the same LQR controller.
    Compare(CompareArgs),
}

#[derive(Subcommand)]
enum CoeffCmd {
    /// K_T from a measured thrust at a rotor speed.
    Thrust {
        #[arg(long = "T", allow_negative_numbers = true)]
        thrust: f64,
        #[arg(long, allow_negative_numbers = true)]
        omega: f64,
    },
    /// Momentum-theory thrust of a rotor disc.
    ThrustMomentum {
        #[arg(long = "D")]
        diameter: f64,
        #[arg(long)]
        rho: f64,
        #[arg(long, allow_negative_numbers = true)]
        v: f64,
    },
    /// Estimate K_T and b from a flight log.
    Estimate {
        #[arg(long)]
        log: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ControllerKind {
    Pid,
    Lqr,
}

#[derive(Args)]
struct SimArgs {
    #[arg(long, value_enum, default_value = "pid")]
    controller: ControllerKind,
    /// Add the configured rotor-speed excitation (for identification logs).
    #[arg(long)]
    excite: bool,
    /// Model file for the LQR controller [default: <out>/model.txt].
    #[arg(long)]
    model: Option<PathBuf>,
    /// Gain file for the LQR controller [default: <out>/lqr_gains.txt].
    #[arg(long)]
    gains: Option<PathBuf>,
}

#[derive(Args)]
struct IdentArgs {
    /// Flight-log CSV [default: <out>/flight_log.csv].
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    input_kind: Option<InputKind>,
    #[arg(long)]
    order: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
}

#[derive(Args)]
struct LqrArgs {
    /// Model file [default: <out>/model.txt].
    #[arg(long)]
    model: Option<PathBuf>,
    /// Output weight, scalar times identity.
    #[arg(long = "Q")]
    q: Option<f64>,
    /// Input weight, scalar times identity.
    #[arg(long = "R")]
    r: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Study {
    InputKind,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    gains: Option<PathBuf>,
    /// Run a study instead of the model comparison.
    #[arg(long, value_enum)]
    study: Option<Study>,
}

struct Failure {
    stage: &'static str,
    msg: String,
}

type Res<T> = Result<T, Failure>;

trait Stage<T> {
    fn stage(self, stage: &'static str) -> Res<T>;
}

impl<T, E: std::fmt::Display> Stage<T> for Result<T, E> {
    fn stage(self, stage: &'static str) -> Res<T> {
        self.map_err(|e| Failure { stage, msg: e.to_string() })
    }
}

fn read(path: &Path, stage: &'static str) -> Res<String> {
    fs::read_to_string(path).map_err(|e| Failure { stage, msg: format!("{}: {e}", path.display()) })
}

fn write(path: &Path, text: &str) -> Res<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).stage("write")?;
    }
    fs::write(path, text).map_err(|e| Failure { stage: "write", msg: format!("{}: {e}", path.display()) })?;
    println!("wrote {}", path.display());
    Ok(())
}

/// `1.2345e-05` style, as printed by C.
fn sci(v: f64, digits: usize) -> String {
    let s = format!("{v:.digits$e}");
    match s.split_once('e') {
        Some((mant, exp)) => {
            let e: i32 = exp.parse().unwrap_or(0);
            format!("{mant}e{}{:02}", if e < 0 { '-' } else { '+' }, e.abs())
        }
        None => s,
    }
}

fn load_config(cli: &Cli) -> Res<Config> {
    let mut cfg = match &cli.config {
        Some(p) => Config::parse(&read(p, "config")?).stage("config")?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.sensors.seed = seed;
    }
    Ok(cfg)
}

fn load_lqr(cli: &Cli, cfg: &Config, model: &Option<PathBuf>, gains: &Option<PathBuf>) -> Res<LqrController> {
    let model_path = model.clone().unwrap_or_else(|| cli.out.join("model.txt"));
    let gains_path = gains.clone().unwrap_or_else(|| cli.out.join("lqr_gains.txt"));
    if !gains_path.exists() {
        return Err(Failure { stage: "lqr", msg: format!("missing gains: {}", gains_path.display()) });
    }
    let model = StateSpaceModel::parse(&read(&model_path, "model")?).stage("model")?;
    let gains = LqrGains::parse(&read(&gains_path, "lqr")?).stage("lqr")?;
    LqrController::new(model, gains, &cfg.predictor).stage("lqr")
}

fn metrics_csv(name: &str, run: &RunResult) -> String {
    let mut out = String::from("run,channel,metric,value\n");
    for (ch, m) in CHANNELS.iter().zip(&run.metrics) {
        let st = m.settling_time.map_or_else(|| "nan".into(), |t| t.to_string());
        out += &format!("{name},{ch},settling_time,{st}\n");
        out += &format!("{name},{ch},overshoot,{}\n", m.overshoot);
        out += &format!("{name},{ch},steady_state_error,{}\n", m.steady_state_error);
    }
    out
}

fn cmd_coeff(cli: &Cli, what: &CoeffCmd) -> Res<()> {
    match what {
        CoeffCmd::Thrust { thrust, omega } => {
            println!("{}", sci(thrust_coefficient(*thrust, *omega).stage("coeff")?, 4));
        }
        CoeffCmd::ThrustMomentum { diameter, rho, v } => {
            let mut p = load_config(cli)?.params;
            p.d = *diameter;
            p.rho = *rho;
            println!("{}", sci(momentum_thrust(*v, &p), 6));
        }
        CoeffCmd::Estimate { log } => {
            let cfg = load_config(cli)?;
            let log = FlightLog::parse_csv(&read(log, "log")?).stage("log")?;
            let (kt, b) = estimate_coefficients(&log, &cfg.params).stage("coeff")?;
            println!("K_T {}\nb {}", sci(kt, 4), sci(b, 4));
        }
    }
    Ok(())
}

fn cmd_sim(cli: &Cli, a: &SimArgs) -> Res<()> {
    let cfg = load_config(cli)?;
    let mut ctrl = match a.controller {
        ControllerKind::Pid => Controller::pid(cfg.pid),
        ControllerKind::Lqr => Controller::Lqr(load_lqr(cli, &cfg, &a.model, &a.gains)?),
    };
    let name = match a.controller {
        ControllerKind::Pid => "pid",
        ControllerKind::Lqr => "lqr",
    };
    if a.excite {
        let amp = cfg.excitation_amplitude();
        let log = generate_dataset(&cfg.scenario, &mut ctrl, &cfg.params, &cfg.sensors, amp).stage("sim")?;
        write(&cli.out.join("flight_log.csv"), &log.to_csv())?;
        println!("{} samples, excitation +-{amp:.3} rad/s", log.len());
        return Ok(());
    }
    let run = run_greybox(&cfg.scenario, &mut ctrl, &cfg.params, &cfg.sensors).stage("sim")?;
    write(&cli.out.join("flight_log.csv"), &run.log.to_csv())?;
    write(&cli.out.join("metrics.csv"), &metrics_csv(name, &run))?;
    let last = run.states.last().expect("non-empty run").outputs();
    let targets = cfg.scenario.targets();
    let init = cfg.scenario.initial_state.outputs();
    println!("{:<6} {:>10} {:>10} {:>10} {:>8}", "chan", "final", "target", "settle s", "err %");
    for j in 0..3 {
        let change = (targets[j] - init[j]).abs();
        let err = if change > 0.0 { 100.0 * (last[j] - targets[j]).abs() / change } else { f64::NAN };
        let st = run.metrics[j].settling_time.map_or_else(|| "nan".into(), |t| format!("{t:.3}"));
        println!("{:<6} {:>10.4} {:>10.4} {:>10} {:>8.3}", CHANNELS[j], last[j], targets[j], st, err);
    }
    Ok(())
}

fn cmd_ident(cli: &Cli, a: &IdentArgs) -> Res<()> {
    let mut cfg = load_config(cli)?;
    if let Some(n) = a.order {
        cfg.ident.subspace.order = n;
        cfg.ident.subspace.horizon = a.horizon.unwrap_or(2 * n + 1);
    }
    if let Some(h) = a.horizon {
        cfg.ident.subspace.horizon = h;
    }
    let kind = a.input_kind.unwrap_or(cfg.input_kind);
    let path = a.log.clone().unwrap_or_else(|| cli.out.join("flight_log.csv"));
    let log = FlightLog::parse_csv(&read(&path, "log")?).stage("log")?;
    let (id, fit) = identify_log(&log, kind, &cfg.params, &cfg.ident).stage("ident")?;
    write(&cli.out.join("model.txt"), &id.model.to_text())?;
    println!("input kind {kind}, order {}", id.model.n());
    println!("validation fit %:");
    for (ch, f) in CHANNELS.iter().zip(&fit) {
        println!("  {ch:<6} {f:>9.3}");
    }
    let shown = (2 * id.model.n() + 2).min(id.singular_values.len());
    let sv: Vec<String> = id.singular_values[..shown].iter().map(|s| sci(*s, 3)).collect();
    println!("singular values: {}", sv.join(" "));
    Ok(())
}

fn cmd_lqr(cli: &Cli, a: &LqrArgs) -> Res<()> {
    let cfg = load_config(cli)?;
    let path = a.model.clone().unwrap_or_else(|| cli.out.join("model.txt"));
    let model = StateSpaceModel::parse(&read(&path, "model")?).stage("model")?;
    let (q, r) = (a.q.unwrap_or(cfg.lqr_q), a.r.unwrap_or(cfg.lqr_r));
    let w = LqrWeights::scalar(model.outputs(), model.inputs(), q, r);
    let gains = lqr_output_weighted(&model, &w).stage("lqr")?;
    let (_, dc) = reference_gain(&model, &gains, &w).stage("lqr")?;
    write(&cli.out.join("lqr_gains.txt"), &gains.to_text())?;
    if gains.kf.iter().all(|v| *v == 0.0) {
        println!("warning: Kf is zero (no output penalty)");
    }
    println!("closed-loop spectral radius {:.9}", closed_loop_radius(&model, &gains));
    let diag: Vec<String> = (0..dc.nrows().min(dc.ncols())).map(|j| format!("{:.4}", dc[(j, j)])).collect();
    println!("closed-loop DC gain diagonal: {}", diag.join(" "));
    Ok(())
}

fn cmd_pid(cli: &Cli) -> Res<()> {
    let cfg = load_config(cli)?;
    cfg.pid.validate().stage("pid")?;
    let text = pid_gains_text(&cfg.pid);
    write(&cli.out.join("pid_gains.conf"), &text)?;
    print!("{text}");
    Ok(())
}

fn cmd_compare(cli: &Cli, a: &CompareArgs) -> Res<()> {
    let cfg = load_config(cli)?;
    if let Some(Study::InputKind) = a.study {
        let rep = input_kind_study(
            &cfg.scenario,
            &cfg.pid,
            &cfg.params,
            &cfg.sensors,
            cfg.excitation_amplitude(),
            &cfg.ident,
        )
        .stage("study")?;
        write(&cli.out.join("input_kind_study.csv"), &rep.to_csv())?;
        println!("{:<6} {:>14} {:>16}", "chan", "motor-speeds", "control-inputs");
        for (j, ch) in CHANNELS.iter().enumerate() {
            println!("{ch:<6} {:>14.3} {:>16.3}", rep.motor_speeds_fit[j], rep.control_inputs_fit[j]);
        }
        println!("better fit: {}", rep.winner());
        return Ok(());
    }
    let mut grey_ctrl = Controller::Lqr(load_lqr(cli, &cfg, &a.model, &a.gains)?);
    let mut black_ctrl = Controller::Lqr(load_lqr(cli, &cfg, &a.model, &a.gains)?);
    let model = match &black_ctrl {
        Controller::Lqr(c) => c.model.clone(),
        _ => unreachable!(),
    };
    let black = run_blackbox(&cfg.scenario, &mut black_ctrl, &model, &cfg.params).stage("blackbox run")?;
    let grey = run_greybox(&cfg.scenario, &mut grey_ctrl, &cfg.params, &cfg.sensors).stage("greybox run")?;
    let rep = compare_runs(&grey, &black).stage("compare")?;
    write(&cli.out.join("compare.csv"), &rep.to_csv("greybox", "blackbox"))?;
    write(&cli.out.join("trajectories.csv"), &trajectory_csv(&[("greybox", &grey), ("blackbox", &black)]))?;
    print!("{}", rep.summary("greybox", "blackbox"));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.cmd {
        Cmd::Coeff { what } => cmd_coeff(&cli, what),
        Cmd::Sim(a) => cmd_sim(&cli, a),
        Cmd::Ident(a) => cmd_ident(&cli, a),
        Cmd::Lqr(a) => cmd_lqr(&cli, a),
        Cmd::Pid => cmd_pid(&cli),
        Cmd::Compare(a) => cmd_compare(&cli, a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}: {}", f.stage, f.msg);
            ExitCode::from(1)
        }
    }
}
