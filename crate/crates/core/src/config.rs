//! Flat `key = value` configuration. `#` starts a comment, missing keys take
//! their defaults, unknown keys are an error.

use std::fmt::Write as _;

use crate::control::{PidGains, PredictorWeights};
use crate::error::{Error, Result};
use crate::model::QuadParams;
use crate::sim::{IdentSettings, Scenario, SensorModel};
use crate::sysid::InputKind;

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub params: QuadParams,
    pub scenario: Scenario,
    pub sensors: SensorModel,
    pub lqr_q: f64,
    pub lqr_r: f64,
    pub predictor: PredictorWeights,
    pub pid: PidGains,
    pub ident: IdentSettings,
    pub input_kind: InputKind,
    /// Excitation amplitude as a fraction of hover speed.
    pub excitation: f64,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            params: QuadParams::default(),
            scenario: Scenario::default(),
            sensors: SensorModel::default(),
            lqr_q: 1.0,
            lqr_r: 0.001,
            predictor: PredictorWeights::default(),
            pid: PidGains::default(),
            ident: IdentSettings::default(),
            input_kind: InputKind::MotorSpeeds,
            excitation: 0.01,
        }
    }
}

enum Slot<'a> {
    F(&'a mut f64),
    U(&'a mut usize),
    U64(&'a mut u64),
    B(&'a mut bool),
    Deg(&'a mut f64),
    Kind(&'a mut InputKind),
    /// Regression window; 0 means one window.
    Seg(&'a mut Option<usize>),
}

impl Config {
    fn slots(&mut self) -> Vec<(&'static str, Slot<'_>)> {
        use Slot::*;
        let p = &mut self.params;
        let s = &mut self.scenario;
        let g = &mut self.pid;
        let o = &mut self.ident.subspace;
        vec![
            ("m", F(&mut p.m)),
            ("l", F(&mut p.l)),
            ("g", F(&mut p.g)),
            ("Jx", F(&mut p.jx)),
            ("Jy", F(&mut p.jy)),
            ("Jz", F(&mut p.jz)),
            ("Jr", F(&mut p.jr)),
            ("K_T", F(&mut p.k_t)),
            ("b", F(&mut p.b)),
            ("Kd_x", F(&mut p.kd_x)),
            ("Kd_y", F(&mut p.kd_y)),
            ("Kd_z", F(&mut p.kd_z)),
            ("rho", F(&mut p.rho)),
            ("D", F(&mut p.d)),
            ("K_tau", F(&mut p.k_tau)),
            ("K_v", F(&mut p.k_v)),
            ("R_m", F(&mut p.r_m)),
            ("I0", F(&mut p.i0)),
            ("x_d", F(&mut s.setpoint.x)),
            ("y_d", F(&mut s.setpoint.y)),
            ("z_d", F(&mut s.setpoint.z)),
            ("psi_d", F(&mut s.setpoint.psi)),
            ("x_init", F(&mut s.initial_state.x)),
            ("y_init", F(&mut s.initial_state.y)),
            ("z_init", F(&mut s.initial_state.z)),
            ("psi_init", F(&mut s.initial_state.psi)),
            ("duration", F(&mut s.duration)),
            ("dt", F(&mut s.dt)),
            ("pos_noise_std", F(&mut self.sensors.pos_noise_std)),
            ("att_noise_std", F(&mut self.sensors.att_noise_std)),
            ("pos_latency_steps", U(&mut self.sensors.pos_latency_steps)),
            ("seed", U64(&mut self.sensors.seed)),
            ("lqr_q", F(&mut self.lqr_q)),
            ("lqr_r", F(&mut self.lqr_r)),
            ("predictor_input_var", F(&mut self.predictor.input_var)),
            ("predictor_meas_var", F(&mut self.predictor.meas_var)),
            ("predictor_dist_var", F(&mut self.predictor.dist_var)),
            ("kz_p", F(&mut g.kz_p)),
            ("kz_d", F(&mut g.kz_d)),
            ("kphi_p", F(&mut g.kphi_p)),
            ("kphi_d", F(&mut g.kphi_d)),
            ("ktheta_p", F(&mut g.ktheta_p)),
            ("ktheta_d", F(&mut g.ktheta_d)),
            ("kpsi_p", F(&mut g.kpsi_p)),
            ("kpsi_d", F(&mut g.kpsi_d)),
            ("kx_p", F(&mut g.kx_p)),
            ("kx_i", F(&mut g.kx_i)),
            ("kx_d", F(&mut g.kx_d)),
            ("ky_p", F(&mut g.ky_p)),
            ("ky_i", F(&mut g.ky_i)),
            ("ky_d", F(&mut g.ky_d)),
            ("a_max", F(&mut g.a_max)),
            ("tilt_max_deg", Deg(&mut g.tilt_max)),
            ("order", U(&mut o.order)),
            ("horizon", U(&mut o.horizon)),
            ("segment", Seg(&mut o.segment)),
            ("detrend", B(&mut o.detrend)),
            ("split", F(&mut self.ident.split)),
            ("input_kind", Kind(&mut self.input_kind)),
            ("excitation", F(&mut self.excitation)),
        ]
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        let mut slots = cfg.slots();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse { line: i + 1, msg };
            let (key, value) = line.split_once('=').ok_or_else(|| err("expected key = value".into()))?;
            let (key, value) = (key.trim(), value.trim());
            let slot = slots
                .iter_mut()
                .find(|(k, _)| *k == key)
                .map(|(_, s)| s)
                .ok_or_else(|| err(format!("unknown key '{key}'")))?;
            let bad = || err(format!("bad value '{value}' for '{key}'"));
            match slot {
                Slot::F(v) => **v = value.parse().map_err(|_| bad())?,
                Slot::U(v) => **v = value.parse().map_err(|_| bad())?,
                Slot::U64(v) => **v = value.parse().map_err(|_| bad())?,
                Slot::B(v) => **v = value.parse().map_err(|_| bad())?,
                Slot::Deg(v) => **v = value.parse::<f64>().map_err(|_| bad())?.to_radians(),
                Slot::Kind(v) => **v = value.parse().map_err(|_| err(format!("bad input kind '{value}'")))?,
                Slot::Seg(v) => {
                    let n: usize = value.parse().map_err(|_| bad())?;
                    **v = (n > 0).then_some(n);
                }
            }
        }
        drop(slots);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Every key with its current value.
    pub fn to_text(&self) -> String {
        let mut copy = self.clone();
        let mut out = String::new();
        for (key, slot) in copy.slots() {
            let value = match slot {
                Slot::F(v) => v.to_string(),
                Slot::U(v) => v.to_string(),
                Slot::U64(v) => v.to_string(),
                Slot::B(v) => v.to_string(),
                Slot::Deg(v) => v.to_degrees().to_string(),
                Slot::Kind(v) => v.to_string(),
                Slot::Seg(v) => v.unwrap_or(0).to_string(),
            };
            let _ = writeln!(out, "{key} = {value}");
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.sensors.validate()?;
        self.pid.validate()?;
        self.scenario.steps()?;
        let bad = |m: &str| Err(Error::InvalidParams(m.into()));
        if !(self.lqr_q >= 0.0) || !(self.lqr_r > 0.0) {
            return bad("lqr_q must be >= 0 and lqr_r > 0");
        }
        let w = &self.predictor;
        if !(w.input_var >= 0.0 && w.meas_var > 0.0 && w.dist_var >= 0.0) {
            return bad("predictor variances must be >= 0 (meas > 0)");
        }
        if !(self.ident.split > 0.0 && self.ident.split < 1.0) {
            return bad("split must be in (0, 1)");
        }
        if self.ident.subspace.order == 0 {
            return bad("order must be >= 1");
        }
        if !(self.excitation >= 0.0) {
            return bad("excitation must be >= 0");
        }
        Ok(())
    }

    /// Excitation amplitude in rad/s.
    pub fn excitation_amplitude(&self) -> f64 {
        self.excitation * self.params.hover_speed()
    }
}

const PID_KEYS: [&str; 16] = [
    "kz_p", "kz_d", "kphi_p", "kphi_d", "ktheta_p", "ktheta_d", "kpsi_p", "kpsi_d", "kx_p", "kx_i", "kx_d",
    "ky_p", "ky_i", "ky_d", "a_max", "tilt_max_deg",
];

/// PID gain lines only, readable back through [`Config::parse`].
pub fn pid_gains_text(gains: &PidGains) -> String {
    let cfg = Config { pid: *gains, ..Config::default() };
    cfg.to_text()
        .lines()
        .filter(|l| PID_KEYS.iter().any(|k| l.split(" = ").next() == Some(*k)))
        .map(|l| format!("{l}\n"))
        .collect()
}
