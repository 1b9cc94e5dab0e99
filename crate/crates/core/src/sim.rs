//! Closed-loop runs on the nonlinear model or an identified model, flight-log
//! generation and run comparison.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::collections::VecDeque;
use std::fmt::Write as _;

use crate::control::{LqrController, PidController, PidGains, Setpoint};
use crate::error::{Error, Result};
use crate::model::{
    body_rates_from_euler, mix_forward, mix_inverse, step_rk4, ControlInputs, MotorSpeeds, QuadParams,
    State12,
};
use crate::sysid::{
    equilibrium_state, split_dataset, subspace_identify, validation_fit, Dataset, FlightLog, InputKind,
    LogRecord, StateSpaceModel, SubspaceOptions,
};

pub const CHANNELS: [&str; 6] = ["X", "Y", "Z", "phi", "theta", "psi"];
const SETTLE_BAND: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorModel {
    pub pos_noise_std: f64,
    pub att_noise_std: f64,
    pub pos_latency_steps: usize,
    pub seed: u64,
}

impl Default for SensorModel {
    fn default() -> Self {
        SensorModel { pos_noise_std: 0.005, att_noise_std: 0.002, pos_latency_steps: 0, seed: 1 }
    }
}

impl SensorModel {
    pub fn noise_free(seed: u64) -> Self {
        SensorModel { pos_noise_std: 0.0, att_noise_std: 0.0, pos_latency_steps: 0, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pos_noise_std >= 0.0 && self.att_noise_std >= 0.0) {
            return Err(Error::InvalidParams("sensor noise std must be >= 0".into()));
        }
        Ok(())
    }
}

/// Noisy position/attitude with optional position latency. Velocities and
/// body rates pass through unchanged.
struct Sensor {
    model: SensorModel,
    rng: ChaCha8Rng,
    delayed: VecDeque<[f64; 3]>,
}

impl Sensor {
    fn new(model: SensorModel) -> Self {
        Sensor { model, rng: ChaCha8Rng::seed_from_u64(model.seed), delayed: VecDeque::new() }
    }

    fn gauss(&mut self, std: f64) -> f64 {
        if std == 0.0 {
            return 0.0;
        }
        Normal::new(0.0, std).expect("std checked").sample(&mut self.rng)
    }

    fn measure(&mut self, x: &State12) -> State12 {
        let now = [x.x, x.y, x.z];
        if self.delayed.is_empty() {
            self.delayed.extend(std::iter::repeat_n(now, self.model.pos_latency_steps));
        }
        self.delayed.push_back(now);
        let pos = self.delayed.pop_front().expect("non-empty");
        let (sp, sa) = (self.model.pos_noise_std, self.model.att_noise_std);
        State12 {
            x: pos[0] + self.gauss(sp),
            y: pos[1] + self.gauss(sp),
            z: pos[2] + self.gauss(sp),
            phi: x.phi + self.gauss(sa),
            theta: x.theta + self.gauss(sa),
            psi: x.psi + self.gauss(sa),
            ..*x
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scenario {
    pub setpoint: Setpoint,
    pub duration: f64,
    pub dt: f64,
    pub initial_state: State12,
}

impl Default for Scenario {
    /// One metre away in each axis (Z down, so -1 is a climb), 50 s at 1 kHz.
    fn default() -> Self {
        Scenario {
            setpoint: Setpoint { x: 1.0, y: 1.0, z: -1.0, psi: 0.0 },
            duration: 50.0,
            dt: 1e-3,
            initial_state: State12::default(),
        }
    }
}

impl Scenario {
    /// Number of integration steps; the run has `steps() + 1` samples.
    pub fn steps(&self) -> Result<usize> {
        if !(self.duration > 0.0 && self.dt > 0.0) {
            return Err(Error::InvalidParams("duration and dt must be positive".into()));
        }
        let ratio = self.duration / self.dt;
        let n = ratio.round();
        if (ratio - n).abs() > 1e-6 {
            return Err(Error::InvalidParams(format!("duration/dt = {ratio} is not an integer")));
        }
        Ok(n as usize)
    }

    /// Targets for the six outputs: position setpoint, level attitude, yaw setpoint.
    pub fn targets(&self) -> [f64; 6] {
        let s = &self.setpoint;
        [s.x, s.y, s.z, 0.0, 0.0, s.psi]
    }

    fn reference(&self) -> DVector<f64> {
        DVector::from_row_slice(&self.targets())
    }
}

pub enum Controller {
    Pid(PidController),
    Lqr(LqrController),
    /// Fixed input sequence in the plant's input coordinates.
    OpenLoop(Vec<DVector<f64>>),
}

impl Controller {
    pub fn pid(gains: PidGains) -> Self {
        Controller::Pid(PidController::new(gains))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelMetrics {
    /// Time after which the signal stays within 2% of the commanded change;
    /// `None` when the command is zero or the signal never settles.
    pub settling_time: Option<f64>,
    /// Peak excursion past the target, percent of the commanded change.
    pub overshoot: f64,
    pub steady_state_error: f64,
}

pub fn channel_metrics(y: &[f64], initial: f64, target: f64, dt: f64) -> ChannelMetrics {
    let change = target - initial;
    let last = *y.last().unwrap_or(&initial);
    let steady_state_error = last - target;
    if change == 0.0 {
        return ChannelMetrics { settling_time: None, overshoot: 0.0, steady_state_error };
    }
    let band = SETTLE_BAND * change.abs();
    let settling_time = match y.iter().rposition(|v| (v - target).abs() > band) {
        None => Some(0.0),
        Some(k) if k + 1 == y.len() => None,
        Some(k) => Some((k + 1) as f64 * dt),
    };
    let peak = y.iter().map(|v| (v - target) * change.signum()).fold(0.0, f64::max);
    ChannelMetrics { settling_time, overshoot: 100.0 * peak / change.abs(), steady_state_error }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub scenario: Scenario,
    pub log: FlightLog,
    /// True plant states; for identified plants, outputs with differenced rates.
    pub states: Vec<State12>,
    pub inputs: Vec<MotorSpeeds>,
    pub metrics: Vec<ChannelMetrics>,
}

impl RunResult {
    /// `T x 6` matrix of the noise-free outputs.
    pub fn outputs(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.states.len(), 6, |k, j| self.states[k].outputs()[j])
    }

    fn finish(scenario: Scenario, records: Vec<LogRecord>, states: Vec<State12>, inputs: Vec<MotorSpeeds>) -> Result<Self> {
        let log = FlightLog::new(records)?;
        let init = scenario.initial_state.outputs();
        let targets = scenario.targets();
        let metrics = (0..6)
            .map(|j| {
                let y: Vec<f64> = states.iter().map(|s| s.outputs()[j]).collect();
                channel_metrics(&y, init[j], targets[j], scenario.dt)
            })
            .collect();
        Ok(RunResult { scenario, log, states, inputs, metrics })
    }
}

fn to_motor_speeds(u: &DVector<f64>, kind: InputKind, params: &QuadParams) -> MotorSpeeds {
    match kind {
        InputKind::MotorSpeeds => MotorSpeeds([u[0], u[1], u[2], u[3]]),
        InputKind::ControlInputs => {
            mix_inverse(&ControlInputs { u1: u[0], u2: u[1], u3: u[2], u4: u[3] }, params).0
        }
    }
}

fn excite(w: MotorSpeeds, amp: f64, rng: &mut ChaCha8Rng) -> MotorSpeeds {
    if amp == 0.0 {
        return MotorSpeeds(w.0.map(|v| v.max(0.0)));
    }
    MotorSpeeds(w.0.map(|v| (v + rng.random_range(-amp..=amp)).max(0.0)))
}

fn excitation_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

/// Nonlinear plant in closed loop. Outputs are sampled through `sensors`, the
/// controller output is mixed to rotor speeds, and the plant advances by RK4.
pub fn run_greybox(
    scenario: &Scenario,
    controller: &mut Controller,
    params: &QuadParams,
    sensors: &SensorModel,
) -> Result<RunResult> {
    run_greybox_excited(scenario, controller, params, sensors, 0.0)
}

fn run_greybox_excited(
    scenario: &Scenario,
    controller: &mut Controller,
    params: &QuadParams,
    sensors: &SensorModel,
    excitation: f64,
) -> Result<RunResult> {
    sensors.validate()?;
    let steps = scenario.steps()?;
    let dt = scenario.dt;
    let mut sensor = Sensor::new(*sensors);
    let mut ex_rng = excitation_rng(sensors.seed);
    let reference = scenario.reference();
    let mut x = scenario.initial_state;
    let mut records = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut inputs = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let meas = sensor.measure(&x);
        let y = meas.outputs();
        let w = match controller {
            Controller::Pid(pid) => {
                let u = pid.step(&meas, &scenario.setpoint, params, dt).map_err(|e| e.at(k))?;
                mix_inverse(&u, params).0
            }
            Controller::Lqr(lqr) => {
                let yv = DVector::from_row_slice(&y);
                if k == 0 {
                    lqr.reset(&yv)?;
                }
                let u = lqr.command(&reference);
                lqr.update(&u, Some(&yv));
                to_motor_speeds(&u, lqr.model.input_kind, params)
            }
            Controller::OpenLoop(seq) => {
                let u = seq.get(k).ok_or_else(|| Error::Dimension("open-loop sequence too short".into()))?;
                MotorSpeeds([u[0], u[1], u[2], u[3]])
            }
        };
        let w = excite(w, excitation, &mut ex_rng);
        records.push(LogRecord { t: k as f64 * dt, w, y });
        states.push(x);
        inputs.push(w);
        if k < steps {
            x = step_rk4(&x, &w, params, dt).map_err(|e| e.at(k))?;
        }
    }
    RunResult::finish(*scenario, records, states, inputs)
}

/// Identified model as the plant. Outputs are the model's noise-free `y`;
/// rates fed to a PID come from backward differences of those outputs. An LQR
/// controller runs observer-free, so its prediction is the plant state.
pub fn run_blackbox(
    scenario: &Scenario,
    controller: &mut Controller,
    model: &StateSpaceModel,
    params: &QuadParams,
) -> Result<RunResult> {
    if (model.dt - scenario.dt).abs() > 1e-12 * scenario.dt {
        return Err(Error::Dimension(format!("model dt {} vs scenario dt {}", model.dt, scenario.dt)));
    }
    if model.outputs() != 6 || model.inputs() != 4 {
        return Err(Error::Dimension("plant model must have 4 inputs and 6 outputs".into()));
    }
    let steps = scenario.steps()?;
    let dt = scenario.dt;
    let reference = scenario.reference();
    let y_init = DVector::from_row_slice(&scenario.initial_state.outputs());
    let mut x = match controller {
        Controller::Lqr(lqr) => {
            lqr.reset(&y_init)?;
            lqr.state().clone()
        }
        _ => equilibrium_state(model, &y_init)?,
    };
    let output = |x: &DVector<f64>, u: &DVector<f64>| -> DVector<f64> {
        &model.c * x + &model.d * (u - &model.u0) + &model.y0
    };
    let mut u_prev = model.u0.clone();
    let mut y_prev: Option<[f64; 6]> = None;
    let mut records = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut inputs = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let u = match controller {
            Controller::Pid(pid) => {
                let y = output(&x, &u_prev);
                let meas = differenced_state(&y, y_prev.as_ref(), dt);
                let cmd = pid.step(&meas, &scenario.setpoint, params, dt).map_err(|e| e.at(k))?;
                match model.input_kind {
                    InputKind::MotorSpeeds => DVector::from_row_slice(&mix_inverse(&cmd, params).0 .0),
                    InputKind::ControlInputs => DVector::from_row_slice(&cmd.to_array()),
                }
            }
            Controller::Lqr(lqr) => {
                let u = lqr.command(&reference);
                lqr.update(&u, None);
                clamp_motor_input(u, model.input_kind)
            }
            Controller::OpenLoop(seq) => seq
                .get(k)
                .cloned()
                .ok_or_else(|| Error::Dimension("open-loop sequence too short".into()))?,
        };
        let y = output(&x, &u);
        let ya: [f64; 6] = std::array::from_fn(|j| y[j]);
        let w = to_motor_speeds(&u, model.input_kind, params);
        records.push(LogRecord { t: k as f64 * dt, w, y: ya });
        states.push(differenced_state(&y, y_prev.as_ref(), dt));
        inputs.push(w);
        y_prev = Some(ya);
        x = &model.a * &x + &model.b * (&u - &model.u0);
        u_prev = u;
    }
    RunResult::finish(*scenario, records, states, inputs)
}

fn clamp_motor_input(u: DVector<f64>, kind: InputKind) -> DVector<f64> {
    match kind {
        InputKind::MotorSpeeds => u.map(|v| v.max(0.0)),
        InputKind::ControlInputs => u,
    }
}

/// State estimate from outputs: positions and angles as given, velocities and
/// body rates from backward differences (zero on the first sample).
fn differenced_state(y: &DVector<f64>, prev: Option<&[f64; 6]>, dt: f64) -> State12 {
    let d: [f64; 6] = match prev {
        Some(p) => std::array::from_fn(|j| (y[j] - p[j]) / dt),
        None => [0.0; 6],
    };
    let [p, q, r] = body_rates_from_euler(y[3], y[4], [d[3], d[4], d[5]]);
    State12 {
        x: y[0],
        y: y[1],
        z: y[2],
        xdot: d[0],
        ydot: d[1],
        zdot: d[2],
        phi: y[3],
        theta: y[4],
        psi: y[5],
        p,
        q,
        r,
    }
}

/// Closed-loop flight with uniform `+-excitation` added to every rotor speed
/// command at every step.
pub fn generate_dataset(
    scenario: &Scenario,
    controller: &mut Controller,
    params: &QuadParams,
    sensors: &SensorModel,
    excitation: f64,
) -> Result<FlightLog> {
    if !(excitation >= 0.0) {
        return Err(Error::InvalidParams("excitation must be >= 0".into()));
    }
    Ok(run_greybox_excited(scenario, controller, params, sensors, excitation)?.log)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareReport {
    /// Fit of run `b` against run `a` per output channel, percent.
    pub fit: Vec<f64>,
    pub metrics_a: Vec<ChannelMetrics>,
    pub metrics_b: Vec<ChannelMetrics>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), |v| v.to_string())
}

impl CompareReport {
    /// Long format: `run,channel,metric,value`.
    pub fn to_csv(&self, name_a: &str, name_b: &str) -> String {
        let mut out = String::from("run,channel,metric,value\n");
        for (run, metrics) in [(name_a, &self.metrics_a), (name_b, &self.metrics_b)] {
            for (ch, m) in CHANNELS.iter().zip(metrics) {
                let _ = writeln!(out, "{run},{ch},settling_time,{}", fmt_opt(m.settling_time));
                let _ = writeln!(out, "{run},{ch},overshoot,{}", m.overshoot);
                let _ = writeln!(out, "{run},{ch},steady_state_error,{}", m.steady_state_error);
            }
        }
        for (ch, f) in CHANNELS.iter().zip(&self.fit) {
            let _ = writeln!(out, "{name_b}_vs_{name_a},{ch},fit_percent,{f}");
        }
        out
    }

    pub fn summary(&self, name_a: &str, name_b: &str) -> String {
        let mut out = format!("{:<6} {:>10} {:>12} {:>12}\n", "chan", "fit %", name_a, name_b);
        for (j, ch) in CHANNELS.iter().enumerate() {
            let _ = writeln!(
                out,
                "{ch:<6} {:>10.3} {:>12} {:>12}",
                self.fit[j],
                fmt_opt(self.metrics_a[j].settling_time.map(|t| (t * 1e3).round() / 1e3)),
                fmt_opt(self.metrics_b[j].settling_time.map(|t| (t * 1e3).round() / 1e3)),
            );
        }
        out
    }
}

/// Fit of `b`'s outputs against `a`'s and both runs' step metrics. Channels
/// that stay constant in `a` (no commanded motion at all) report a fit of NaN.
pub fn compare_runs(a: &RunResult, b: &RunResult) -> Result<CompareReport> {
    if a.states.len() != b.states.len() || a.scenario.dt != b.scenario.dt {
        return Err(Error::Dimension("runs differ in length or dt".into()));
    }
    let (ya, yb) = (a.outputs(), b.outputs());
    let fit = (0..6)
        .map(|j| {
            let ca = ya.columns(j, 1).into_owned();
            let cb = yb.columns(j, 1).into_owned();
            match crate::sysid::fit_percent(&ca, &cb) {
                Ok(f) => Ok(f[0]),
                Err(Error::DegenerateReference(_)) if j >= 3 => Ok(f64::NAN),
                Err(Error::DegenerateReference(_)) => Err(Error::DegenerateReference(j)),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CompareReport { fit, metrics_a: a.metrics.clone(), metrics_b: b.metrics.clone() })
}

/// Wide trajectory table for plotting: time, then each output channel of every run.
pub fn trajectory_csv(runs: &[(&str, &RunResult)]) -> String {
    let mut out = String::from("t");
    for (name, _) in runs {
        for ch in CHANNELS {
            let _ = write!(out, ",{name}_{ch}");
        }
    }
    out.push('\n');
    let len = runs.iter().map(|(_, r)| r.states.len()).min().unwrap_or(0);
    for k in 0..len {
        let _ = write!(out, "{}", runs[0].1.log.records[k].t);
        for (_, r) in runs {
            for v in r.states[k].outputs() {
                let _ = write!(out, ",{v}");
            }
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct InputKindReport {
    pub motor_speeds_fit: Vec<f64>,
    pub control_inputs_fit: Vec<f64>,
}

impl InputKindReport {
    fn mean_position(f: &[f64]) -> f64 {
        f[..3].iter().sum::<f64>() / 3.0
    }

    /// Input kind with the higher mean validation fit over X, Y, Z.
    pub fn winner(&self) -> InputKind {
        if Self::mean_position(&self.control_inputs_fit) > Self::mean_position(&self.motor_speeds_fit) {
            InputKind::ControlInputs
        } else {
            InputKind::MotorSpeeds
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("input_kind,channel,metric,value\n");
        for (kind, fit) in [
            (InputKind::MotorSpeeds, &self.motor_speeds_fit),
            (InputKind::ControlInputs, &self.control_inputs_fit),
        ] {
            for (ch, f) in CHANNELS.iter().zip(fit) {
                let _ = writeln!(out, "{kind},{ch},validation_fit,{f}");
            }
        }
        let _ = writeln!(out, "winner,all,input_kind,{}", self.winner());
        out
    }
}

/// Identification settings shared by the pipeline commands.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentSettings {
    pub subspace: SubspaceOptions,
    pub split: f64,
}

impl Default for IdentSettings {
    fn default() -> Self {
        IdentSettings { subspace: SubspaceOptions::quadrotor(12), split: 0.8 }
    }
}

/// Identifies and validates a model from a log with the given input kind.
pub fn identify_log(
    log: &FlightLog,
    kind: InputKind,
    params: &QuadParams,
    settings: &IdentSettings,
) -> Result<(crate::sysid::Identified, Vec<f64>)> {
    let data = Dataset::from_log(log, kind, params)?;
    let (est, val) = split_dataset(&data, settings.split)?;
    let id = subspace_identify(&est, &settings.subspace)?;
    let fit = validation_fit(&id.model, &val, settings.subspace.detrend)?;
    Ok((id, fit))
}

/// One PID-flown dataset identified twice: with rotor speeds as inputs and with
/// the mixer outputs computed from them.
pub fn input_kind_study(
    scenario: &Scenario,
    gains: &PidGains,
    params: &QuadParams,
    sensors: &SensorModel,
    excitation: f64,
    settings: &IdentSettings,
) -> Result<InputKindReport> {
    let log = generate_dataset(scenario, &mut Controller::pid(*gains), params, sensors, excitation)?;
    let (_, motor_speeds_fit) = identify_log(&log, InputKind::MotorSpeeds, params, settings)?;
    let (_, control_inputs_fit) = identify_log(&log, InputKind::ControlInputs, params, settings)?;
    Ok(InputKindReport { motor_speeds_fit, control_inputs_fit })
}

/// Mixer outputs for a rotor-speed sequence.
pub fn control_inputs_of(inputs: &[MotorSpeeds], params: &QuadParams) -> Vec<ControlInputs> {
    inputs.iter().map(|w| mix_forward(w, params)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn settling_metric() {
        let dt = 0.1;
        let y: Vec<f64> = (0..50).map(|k| 1.0 - (-(k as f64) * 0.2).exp()).collect();
        let m = channel_metrics(&y, 0.0, 1.0, dt);
        // first k with exp(-0.2k) <= 0.02 is k = 20
        assert_relative_eq!(m.settling_time.unwrap(), 2.0, epsilon = 1e-12);
        assert_eq!(m.overshoot, 0.0);
        assert!(channel_metrics(&y, 1.0, 1.0, dt).settling_time.is_none());
        let over = [0.0, 1.5, 1.0, 1.0];
        let m = channel_metrics(&over, 0.0, 1.0, dt);
        assert_relative_eq!(m.overshoot, 50.0);
        assert_relative_eq!(m.settling_time.unwrap(), 0.2);
        let down = [0.0, -0.5, -1.0, -1.0];
        assert_relative_eq!(channel_metrics(&down, 0.0, -1.0, dt).settling_time.unwrap(), 0.2);
    }

    #[test]
    fn scenario_steps() {
        assert_eq!(Scenario::default().steps().unwrap(), 50_000);
        let s = Scenario { duration: 0.0105, ..Default::default() };
        assert!(s.steps().is_err());
    }

    #[test]
    fn latency_delays_position() {
        let mut s = Sensor::new(SensorModel { pos_latency_steps: 2, ..SensorModel::noise_free(3) });
        let at = |x: f64| State12 { x, ..Default::default() };
        assert_eq!(s.measure(&at(1.0)).x, 1.0);
        assert_eq!(s.measure(&at(2.0)).x, 1.0);
        assert_eq!(s.measure(&at(3.0)).x, 1.0);
        assert_eq!(s.measure(&at(4.0)).x, 2.0);
    }
}
