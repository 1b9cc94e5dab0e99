//! Discrete LQR synthesis and the cascaded PID flight controller.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::matfile::{Entry, LabeledFile};
use crate::model::{euler_rate_map, ControlInputs, QuadParams, State12};
use crate::sysid::{spectral_radius, StateSpaceModel};

const DARE_TOL: f64 = 1e-12;
const DARE_MAX_DOUBLINGS: usize = 100;
const DARE_BLOWUP: f64 = 1e14;

#[derive(Debug, Clone, PartialEq)]
pub struct LqrWeights {
    /// Output weight, `p x p`.
    pub q: DMatrix<f64>,
    /// Input weight, `m x m`.
    pub r: DMatrix<f64>,
}

impl LqrWeights {
    pub fn scalar(p: usize, m: usize, q: f64, r: f64) -> Self {
        LqrWeights { q: DMatrix::identity(p, p) * q, r: DMatrix::identity(m, m) * r }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LqrGains {
    pub kf: DMatrix<f64>,
    pub kr: DMatrix<f64>,
    pub s: DMatrix<f64>,
}

impl LqrGains {
    pub fn to_text(&self) -> String {
        let mut f = LabeledFile::default();
        f.push("Kf", Entry::Matrix(self.kf.clone()));
        f.push("Kr", Entry::Matrix(self.kr.clone()));
        f.push("S", Entry::Matrix(self.s.clone()));
        f.to_text()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let f = LabeledFile::parse(text)?;
        Ok(LqrGains { kf: f.matrix("Kf")?, kr: f.matrix("Kr")?, s: f.matrix("S")? })
    }
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, v| a.max(v.abs()))
}

fn inverse(m: DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    m.try_inverse().ok_or_else(|| Error::InvalidParams(format!("{what} is singular")))
}

/// Stabilizing solution of
/// `S = Qs + A'SA - A'SB (R + B'SB)^-1 B'SA`.
///
/// Uses the doubling form of the fixed-point iteration started at `S = Qs`:
/// each pass squares the iteration count, so slow closed-loop modes near the
/// unit circle converge in a few dozen passes.
pub fn dare_solve(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    qs: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.shape() != (n, n) || b.nrows() != n || qs.shape() != (n, n) || r.shape() != (b.ncols(), b.ncols()) {
        return Err(Error::Dimension("dare_solve operand shapes".into()));
    }
    let rinv = inverse(r.clone(), "R")?;
    let eye = DMatrix::<f64>::identity(n, n);
    let mut ak = a.clone();
    let mut gk = b * &rinv * b.transpose();
    let mut hk = qs.clone();
    for _ in 0..DARE_MAX_DOUBLINGS {
        let w = inverse(&eye + &gk * &hk, "I + GH")?;
        let wa = &w * &ak;
        let a_next = &ak * &wa;
        let g_next = &gk + &ak * &w * &gk * ak.transpose();
        let h_next = &hk + ak.transpose() * &hk * &wa;
        let g_next = (&g_next + g_next.transpose()) * 0.5;
        let h_next = (&h_next + h_next.transpose()) * 0.5;
        let scale = max_abs(&h_next);
        if !scale.is_finite() || scale > DARE_BLOWUP {
            return Err(Error::NotStabilizable);
        }
        let delta = max_abs(&(&h_next - &hk));
        ak = a_next;
        gk = g_next;
        hk = h_next;
        if delta <= DARE_TOL * scale.max(1.0) {
            return Ok(polish(a, b, qs, r, hk));
        }
    }
    Err(Error::NoConvergence)
}

/// A few plain Riccati steps to shed the rounding error doubling accumulates.
fn polish(a: &DMatrix<f64>, b: &DMatrix<f64>, qs: &DMatrix<f64>, r: &DMatrix<f64>, s: DMatrix<f64>) -> DMatrix<f64> {
    let mut best = s;
    let mut best_res = dare_residual(a, b, qs, r, &best);
    for _ in 0..10 {
        let bsa = b.transpose() * &best * a;
        let Some(inner) = (r + b.transpose() * &best * b).try_inverse() else { break };
        let next = qs + a.transpose() * &best * a - bsa.transpose() * inner * &bsa;
        let next = (&next + next.transpose()) * 0.5;
        let res = dare_residual(a, b, qs, r, &next);
        if !(res < best_res) {
            break;
        }
        best = next;
        best_res = res;
    }
    best
}

/// Largest absolute entry of the DARE residual at `s`.
pub fn dare_residual(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    qs: &DMatrix<f64>,
    r: &DMatrix<f64>,
    s: &DMatrix<f64>,
) -> f64 {
    let bsa = b.transpose() * s * a;
    let inner = (r + b.transpose() * s * b).try_inverse().unwrap_or_else(|| DMatrix::zeros(r.nrows(), r.ncols()));
    let rhs = qs + a.transpose() * s * a - bsa.transpose() * inner * &bsa;
    max_abs(&(s - rhs))
}

/// Output-weighted LQR on `(A, B, C, D)`: penalizes `y' Q y + u' R u`.
/// `Kr` is filled by [`reference_gain`].
pub fn lqr_output_weighted(m: &StateSpaceModel, w: &LqrWeights) -> Result<LqrGains> {
    let (a, b, c, d) = (&m.a, &m.b, &m.c, &m.d);
    if w.q.shape() != (m.outputs(), m.outputs()) || w.r.shape() != (m.inputs(), m.inputs()) {
        return Err(Error::Dimension("LQR weight shapes".into()));
    }
    let qs = c.transpose() * &w.q * c;
    let nx = c.transpose() * &w.q * d;
    let rs = &w.r + d.transpose() * &w.q * d;
    let rs_inv = inverse(rs.clone(), "R + D'QD")?;
    let a_bar = a - b * &rs_inv * nx.transpose();
    let q_bar = &qs - &nx * &rs_inv * nx.transpose();
    let q_bar = (&q_bar + q_bar.transpose()) * 0.5;
    let s = dare_solve(&a_bar, b, &q_bar, &rs)?;
    let kf = inverse(&rs + b.transpose() * &s * b, "Rs + B'SB")? * (b.transpose() * &s * a + nx.transpose());
    let mut g = LqrGains { kr: DMatrix::zeros(m.inputs(), m.outputs()), kf, s };
    g.kr = reference_gain(m, &g, w)?.0;
    Ok(g)
}

/// `Kr = (B'SB + R)^-1 B' [I - (A - B Kf)']^-1 C'Q`, plus the closed-loop DC
/// gain `C (I - A + B Kf)^-1 B Kr` as a diagnostic.
pub fn reference_gain(m: &StateSpaceModel, g: &LqrGains, w: &LqrWeights) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = m.n();
    let eye = DMatrix::<f64>::identity(n, n);
    let acl = &m.a - &m.b * &g.kf;
    let ctq = m.c.transpose() * &w.q;
    let kr = if ctq.iter().all(|v| *v == 0.0) {
        DMatrix::zeros(m.inputs(), m.outputs())
    } else {
        let bracket = (&eye - acl.transpose()).try_inverse().ok_or(Error::SingularClosedLoop)?;
        let lead = inverse(m.b.transpose() * &g.s * &m.b + &w.r, "B'SB + R")?;
        lead * m.b.transpose() * bracket * ctq
    };
    let dc = match (&eye - &acl).try_inverse() {
        Some(inv) => &m.c * inv * &m.b * &kr,
        None => DMatrix::from_element(m.outputs(), m.outputs(), f64::NAN),
    };
    Ok((kr, dc))
}

pub fn closed_loop_radius(m: &StateSpaceModel, g: &LqrGains) -> f64 {
    spectral_radius(&(&m.a - &m.b * &g.kf))
}

/// `u = Kr ref - Kf x_hat`, unsaturated.
pub fn lqr_control(g: &LqrGains, x_hat: &DVector<f64>, reference: &DVector<f64>) -> DVector<f64> {
    &g.kr * reference - &g.kf * x_hat
}

/// Covariances for the input-disturbance predictor used by [`LqrController`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictorWeights {
    /// Process noise entering through B, per input.
    pub input_var: f64,
    /// Output measurement noise, per output.
    pub meas_var: f64,
    /// Random-walk rate of the input disturbance, per input.
    pub dist_var: f64,
}

impl Default for PredictorWeights {
    fn default() -> Self {
        PredictorWeights { input_var: 1.0, meas_var: 1e-6, dist_var: 0.03 }
    }
}

/// LQR acting on an identified model's state, propagated in innovation form
/// with an additive input-disturbance estimate.
///
/// ```text
/// x+ = A x + B (u + d) + Kx e      d+ = d + Kd e
/// e  = y - y0 - C x - D (u + d)    u  = u0 + Kr (r - y0) - Kf x - d
/// ```
///
/// Without measurements the prediction is the plain model simulation.
#[derive(Debug, Clone)]
pub struct LqrController {
    pub model: StateSpaceModel,
    pub gains: LqrGains,
    /// Stacked `[Kx; Kd]` innovation gain.
    pub innovation_gain: DMatrix<f64>,
    x: DVector<f64>,
    d: DVector<f64>,
}

impl LqrController {
    pub fn new(model: StateSpaceModel, gains: LqrGains, w: &PredictorWeights) -> Result<Self> {
        let (n, m, p) = (model.n(), model.inputs(), model.outputs());
        if gains.kf.shape() != (m, n) || gains.kr.shape() != (m, p) {
            return Err(Error::Dimension("gains do not match model".into()));
        }
        let na = n + m;
        let mut aa = DMatrix::<f64>::identity(na, na);
        aa.view_mut((0, 0), (n, n)).copy_from(&model.a);
        aa.view_mut((0, n), (n, m)).copy_from(&model.b);
        let mut ca = DMatrix::<f64>::zeros(p, na);
        ca.view_mut((0, 0), (p, n)).copy_from(&model.c);
        ca.view_mut((0, n), (p, m)).copy_from(&model.d);
        let mut qa = DMatrix::<f64>::zeros(na, na);
        let bb = &model.b * model.b.transpose() * w.input_var + DMatrix::identity(n, n) * 1e-14;
        qa.view_mut((0, 0), (n, n)).copy_from(&bb);
        qa.view_mut((n, n), (m, m)).fill_with_identity();
        for j in n..na {
            qa[(j, j)] = w.dist_var;
        }
        let rv = DMatrix::identity(p, p) * w.meas_var;
        let pcov = dare_solve(&aa.transpose(), &ca.transpose(), &qa, &rv)?;
        let innov = inverse(&ca * &pcov * ca.transpose() + &rv, "innovation covariance")?;
        let innovation_gain = &aa * &pcov * ca.transpose() * innov;
        Ok(LqrController { x: DVector::zeros(n), d: DVector::zeros(m), model, gains, innovation_gain })
    }

    pub fn state(&self) -> &DVector<f64> {
        &self.x
    }

    /// Starts from the equilibrium state that best reproduces the output `y`.
    pub fn reset(&mut self, y: &DVector<f64>) -> Result<()> {
        self.x = crate::sysid::equilibrium_state(&self.model, y)?;
        self.d.fill(0.0);
        Ok(())
    }

    /// Physical input command for the reference `r` (physical output units).
    pub fn command(&self, r: &DVector<f64>) -> DVector<f64> {
        let u = lqr_control(&self.gains, &self.x, &(r - &self.model.y0)) - &self.d;
        u + &self.model.u0
    }

    /// Advances the prediction after applying the physical input `u`. With a
    /// measurement the innovation corrects the state and disturbance.
    pub fn update(&mut self, u: &DVector<f64>, y: Option<&DVector<f64>>) {
        let m = &self.model;
        let n = m.n();
        let ud = u - &m.u0 + &self.d;
        let mut next = &m.a * &self.x + &m.b * &ud;
        if let Some(y) = y {
            let e = y - &m.y0 - &m.c * &self.x - &m.d * &ud;
            let corr = &self.innovation_gain * e;
            next += corr.rows(0, n);
            self.d += corr.rows(n, m.inputs());
        }
        self.x = next;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PidGains {
    pub kz_p: f64,
    pub kz_d: f64,
    pub kphi_p: f64,
    pub kphi_d: f64,
    pub ktheta_p: f64,
    pub ktheta_d: f64,
    pub kpsi_p: f64,
    pub kpsi_d: f64,
    pub kx_p: f64,
    pub kx_i: f64,
    pub kx_d: f64,
    pub ky_p: f64,
    pub ky_i: f64,
    pub ky_d: f64,
    /// Commanded horizontal acceleration limit, m/s^2.
    pub a_max: f64,
    /// Tilt command limit, rad.
    pub tilt_max: f64,
}

impl Default for PidGains {
    fn default() -> Self {
        PidGains {
            kz_p: 0.4,
            kz_d: 1.3,
            kphi_p: 100.0,
            kphi_d: 20.0,
            ktheta_p: 100.0,
            ktheta_d: 20.0,
            kpsi_p: 20.0,
            kpsi_d: 8.0,
            kx_p: 0.4,
            kx_i: 0.0,
            kx_d: 1.3,
            ky_p: 0.4,
            ky_i: 0.0,
            ky_d: 1.3,
            a_max: 3.0,
            tilt_max: 20f64.to_radians(),
        }
    }
}

impl PidGains {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.kz_p, self.kz_d, self.kphi_p, self.kphi_d, self.ktheta_p, self.ktheta_d, self.kpsi_p,
            self.kpsi_d, self.kx_p, self.kx_i, self.kx_d, self.ky_p, self.ky_i, self.ky_d, self.a_max,
            self.tilt_max,
        ];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidParams("PID gains must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

/// Attitude/altitude targets for the inner loop.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct InnerTarget {
    pub z: f64,
    pub phi: f64,
    pub theta: f64,
    pub psi: f64,
}

/// Altitude and attitude PD laws. Z is down, so a positive `z - z_d` (too
/// low) raises thrust.
pub fn pid_inner(x: &State12, t: &InnerTarget, g: &PidGains, params: &QuadParams) -> Result<ControlInputs> {
    let [dphi, dtheta, dpsi] = euler_rate_map(x.phi, x.theta, [x.p, x.q, x.r])?;
    let tilt = x.phi.cos() * x.theta.cos();
    Ok(ControlInputs {
        u1: (params.g + g.kz_p * (x.z - t.z) + g.kz_d * x.zdot) * params.m / tilt,
        u2: (g.kphi_p * (t.phi - x.phi) - g.kphi_d * dphi) * params.jx,
        u3: (g.ktheta_p * (t.theta - x.theta) - g.ktheta_d * dtheta) * params.jy,
        u4: (g.kpsi_p * (t.psi - x.psi) - g.kpsi_d * dpsi) * params.jz,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Setpoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub psi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuterCommand {
    pub ax: f64,
    pub ay: f64,
    pub phi_d: f64,
    pub theta_d: f64,
}

/// Position loops with integral state; one instance per vehicle.
#[derive(Debug, Clone, PartialEq)]
pub struct PidController {
    pub gains: PidGains,
    ix: f64,
    iy: f64,
    prev_err: Option<(f64, f64)>,
}

impl PidController {
    pub fn new(gains: PidGains) -> Self {
        PidController { gains, ix: 0.0, iy: 0.0, prev_err: None }
    }

    /// Horizontal position loop: PI on position error with velocity damping,
    /// mapped to tilt commands by small-angle inversion of the translational
    /// dynamics at thrust `u1`.
    pub fn outer(&mut self, x: &State12, sp: &Setpoint, u1: f64, params: &QuadParams, dt: f64) -> Result<OuterCommand> {
        if !(u1 > 0.0) {
            return Err(Error::InvalidThrust(u1));
        }
        let g = &self.gains;
        let (ex, ey) = (sp.x - x.x, sp.y - x.y);
        if let Some((px, py)) = self.prev_err {
            self.ix += 0.5 * (ex + px) * dt;
            self.iy += 0.5 * (ey + py) * dt;
        }
        self.prev_err = Some((ex, ey));
        if g.kx_i > 0.0 {
            self.ix = self.ix.clamp(-g.a_max / g.kx_i, g.a_max / g.kx_i);
        }
        if g.ky_i > 0.0 {
            self.iy = self.iy.clamp(-g.a_max / g.ky_i, g.a_max / g.ky_i);
        }
        let ax = (g.kx_p * ex + g.kx_i * self.ix - g.kx_d * x.xdot).clamp(-g.a_max, g.a_max);
        let ay = (g.ky_p * ey + g.ky_i * self.iy - g.ky_d * x.ydot).clamp(-g.a_max, g.a_max);
        let (s, c) = x.psi.sin_cos();
        let k = params.m / u1;
        let lim = g.tilt_max;
        Ok(OuterCommand {
            ax,
            ay,
            theta_d: (-k * (ax * c + ay * s)).clamp(-lim, lim),
            phi_d: (-k * (ax * s - ay * c)).clamp(-lim, lim),
        })
    }

    /// Outer loop feeding the inner loop. The outer loop sees the thrust the
    /// inner loop would command for level flight at the current tilt.
    pub fn step(&mut self, x: &State12, sp: &Setpoint, params: &QuadParams, dt: f64) -> Result<ControlInputs> {
        let level = InnerTarget { z: sp.z, phi: x.phi, theta: x.theta, psi: sp.psi };
        let u1 = pid_inner(x, &level, &self.gains, params)?.u1;
        let cmd = self.outer(x, sp, u1, params, dt)?;
        let target = InnerTarget { z: sp.z, phi: cmd.phi_d, theta: cmd.theta_d, psi: sp.psi };
        pid_inner(x, &target, &self.gains, params)
    }
}
