//! Nonlinear quadrotor model: kinematics, rigid-body dynamics, rotor
//! coefficients and the motor mixer.
//!
//! Axes are Z-down: gravity enters as `+g` on Z and thrust pushes along -Z
//! of the body frame.

use nalgebra::Matrix3;
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Distance from pitch = pi/2 at which the Euler-rate map is refused.
pub const GIMBAL_EPS: f64 = 1e-6;
const DIVERGENCE_LIMIT: f64 = 1e9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadParams {
    pub m: f64,
    pub l: f64,
    pub g: f64,
    pub jx: f64,
    pub jy: f64,
    pub jz: f64,
    pub jr: f64,
    pub k_t: f64,
    pub b: f64,
    pub kd_x: f64,
    pub kd_y: f64,
    pub kd_z: f64,
    pub rho: f64,
    pub d: f64,
    pub k_tau: f64,
    pub k_v: f64,
    pub r_m: f64,
    pub i0: f64,
}

impl Default for QuadParams {
    fn default() -> Self {
        QuadParams {
            m: 4.0,
            l: 0.25,
            g: 9.81,
            jx: 0.05,
            jy: 0.05,
            jz: 0.09,
            jr: 1e-4,
            k_t: 2.3950e-05,
            b: 6.8429e-07,
            kd_x: 0.1,
            kd_y: 0.1,
            kd_z: 0.1,
            rho: 1.225,
            d: 0.3,
            k_tau: 0.02,
            k_v: 0.02,
            r_m: 0.1,
            i0: 0.5,
        }
    }
}

impl QuadParams {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.m > 0.0, "m > 0"),
            (self.l > 0.0, "l > 0"),
            (self.g > 0.0, "g > 0"),
            (self.jx > 0.0, "Jx > 0"),
            (self.jy > 0.0, "Jy > 0"),
            (self.jz > 0.0, "Jz > 0"),
            (self.jr >= 0.0, "Jr >= 0"),
            (self.k_t > 0.0, "K_T > 0"),
            (self.b > 0.0, "b > 0"),
            (self.kd_x >= 0.0, "Kd_x >= 0"),
            (self.kd_y >= 0.0, "Kd_y >= 0"),
            (self.kd_z >= 0.0, "Kd_z >= 0"),
            (self.rho > 0.0, "rho > 0"),
        ];
        for (ok, what) in checks {
            if !ok {
                return Err(Error::InvalidParams(format!("requires {what}")));
            }
        }
        Ok(())
    }

    /// Rotor speed at which total thrust balances weight.
    pub fn hover_speed(&self) -> f64 {
        (self.m * self.g / (4.0 * self.k_t)).sqrt()
    }
}

/// Position, velocity (global frame), ZYX Euler angles and body rates.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct State12 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub xdot: f64,
    pub ydot: f64,
    pub zdot: f64,
    pub phi: f64,
    pub theta: f64,
    pub psi: f64,
    pub p: f64,
    pub q: f64,
    pub r: f64,
}

impl State12 {
    pub fn to_array(&self) -> [f64; 12] {
        [
            self.x, self.y, self.z, self.xdot, self.ydot, self.zdot, self.phi, self.theta,
            self.psi, self.p, self.q, self.r,
        ]
    }

    pub fn from_array(a: [f64; 12]) -> Self {
        State12 {
            x: a[0],
            y: a[1],
            z: a[2],
            xdot: a[3],
            ydot: a[4],
            zdot: a[5],
            phi: a[6],
            theta: a[7],
            psi: a[8],
            p: a[9],
            q: a[10],
            r: a[11],
        }
    }

    /// The six logged outputs: X, Y, Z, phi, theta, psi.
    pub fn outputs(&self) -> [f64; 6] {
        [self.x, self.y, self.z, self.phi, self.theta, self.psi]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MotorSpeeds(pub [f64; 4]);

impl MotorSpeeds {
    pub fn uniform(w: f64) -> Self {
        MotorSpeeds([w; 4])
    }

    fn squared(&self) -> [f64; 4] {
        self.0.map(|w| w * w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlInputs {
    pub u1: f64,
    pub u2: f64,
    pub u3: f64,
    pub u4: f64,
}

impl ControlInputs {
    pub fn to_array(&self) -> [f64; 4] {
        [self.u1, self.u2, self.u3, self.u4]
    }
}

/// ZYX Euler rotation taking body-frame vectors to the global frame.
pub fn rotation_body_to_global(phi: f64, theta: f64, psi: f64) -> Matrix3<f64> {
    let (sf, cf) = phi.sin_cos();
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = psi.sin_cos();
    Matrix3::new(
        cp * ct,
        cp * st * sf - sp * cf,
        cp * st * cf + sp * sf,
        sp * ct,
        sp * st * sf + cp * cf,
        sp * st * cf - cp * sf,
        -st,
        ct * sf,
        ct * cf,
    )
}

fn check_gimbal(theta: f64) -> Result<()> {
    if theta.abs() >= PI / 2.0 - GIMBAL_EPS || !theta.is_finite() {
        return Err(Error::GimbalLock { theta });
    }
    Ok(())
}

/// Body rates (p, q, r) to Euler-angle rates.
pub fn euler_rate_map(phi: f64, theta: f64, rates: [f64; 3]) -> Result<[f64; 3]> {
    check_gimbal(theta)?;
    let [p, q, r] = rates;
    let (sf, cf) = phi.sin_cos();
    let (st, ct) = theta.sin_cos();
    let tt = st / ct;
    Ok([
        p + sf * tt * q + cf * tt * r,
        cf * q - sf * r,
        (sf * q + cf * r) / ct,
    ])
}

/// Inverse of [`euler_rate_map`]: Euler-angle rates to body rates.
pub fn body_rates_from_euler(phi: f64, theta: f64, euler_rates: [f64; 3]) -> [f64; 3] {
    let [dphi, dtheta, dpsi] = euler_rates;
    let (sf, cf) = phi.sin_cos();
    let (st, ct) = theta.sin_cos();
    [
        dphi - st * dpsi,
        cf * dtheta + sf * ct * dpsi,
        -sf * dtheta + cf * ct * dpsi,
    ]
}

/// Electrical power drawn by one motor delivering torque `tau` at speed `omega`.
pub fn motor_power(tau: f64, omega: f64, params: &QuadParams) -> Result<f64> {
    let kt = params.k_tau;
    if kt == 0.0 {
        return Err(Error::InvalidParams("K_tau must be nonzero".into()));
    }
    let i0 = params.i0;
    let rm = params.r_m;
    Ok((tau + kt * i0) * (kt * i0 * rm + tau * rm + kt * params.k_v * omega) / (kt * kt))
}

/// Momentum-theory thrust with the slipstream speed increment taken as 2v.
pub fn momentum_thrust(v: f64, params: &QuadParams) -> f64 {
    let dv = 2.0 * v;
    PI / 4.0 * params.d * params.d * params.rho * v * dv
}

pub fn thrust_coefficient(thrust: f64, omega: f64) -> Result<f64> {
    if omega == 0.0 {
        return Err(Error::InvalidParams("omega must be nonzero".into()));
    }
    Ok(thrust / (omega * omega))
}

pub fn mix_forward(w: &MotorSpeeds, params: &QuadParams) -> ControlInputs {
    let [s1, s2, s3, s4] = w.squared();
    let lk = params.l * params.k_t;
    ControlInputs {
        u1: params.k_t * (s1 + s2 + s3 + s4),
        u2: lk * (s4 - s2),
        u3: lk * (s3 - s1),
        u4: params.b * (-s1 + s2 - s3 + s4),
    }
}

/// Exact inverse of the mixer. Negative squared speeds are clamped to zero and
/// reported through the returned flag.
pub fn mix_inverse(u: &ControlInputs, params: &QuadParams) -> (MotorSpeeds, bool) {
    let lk = params.l * params.k_t;
    let total = u.u1 / params.k_t;
    let roll = u.u2 / lk;
    let pitch = u.u3 / lk;
    let yaw = u.u4 / params.b;
    let odd = 0.5 * (total - yaw);
    let even = 0.5 * (total + yaw);
    let sq = [
        0.5 * (odd - pitch),
        0.5 * (even - roll),
        0.5 * (odd + pitch),
        0.5 * (even + roll),
    ];
    let saturated = sq.iter().any(|&s| s < 0.0);
    (MotorSpeeds(sq.map(|s| s.max(0.0).sqrt())), saturated)
}

/// Time derivative of the 12-state under constant rotor speeds.
pub fn dynamics_derivatives(x: &State12, w: &MotorSpeeds, params: &QuadParams) -> Result<State12> {
    let euler = euler_rate_map(x.phi, x.theta, [x.p, x.q, x.r])?;
    Ok(State12::from_array(deriv_array(&x.to_array(), euler, w, params)))
}

fn deriv_array(s: &[f64; 12], euler: [f64; 3], w: &MotorSpeeds, pr: &QuadParams) -> [f64; 12] {
    let [_, _, _, vx, vy, vz, phi, theta, psi, p, q, r] = *s;
    let sq = w.squared();
    let u1 = pr.k_t * sq.iter().sum::<f64>();
    let (sf, cf) = phi.sin_cos();
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = psi.sin_cos();
    let ax = (-(cf * st * cp + sf * sp) * u1 - pr.kd_x * vx) / pr.m;
    let ay = (-(cf * st * sp - sf * cp) * u1 - pr.kd_y * vy) / pr.m;
    let az = (-(cf * ct) * u1 - pr.kd_z * vz) / pr.m + pr.g;
    let omega = w.0[0] - w.0[1] + w.0[2] - w.0[3];
    let lk = pr.l * pr.k_t;
    let dp = ((pr.jy - pr.jz) * q * r - pr.jr * q * omega + lk * (sq[3] - sq[1])) / pr.jx;
    let dq = ((pr.jz - pr.jx) * p * r - pr.jr * p * omega + lk * (sq[2] - sq[0])) / pr.jy;
    let dr = ((pr.jx - pr.jy) * p * q - pr.b * (sq[0] - sq[1] + sq[2] - sq[3])) / pr.jz;
    [
        vx, vy, vz, ax, ay, az, euler[0], euler[1], euler[2], dp, dq, dr,
    ]
}

/// One classical RK4 step with rotor speeds held over the step.
pub fn step_rk4(x: &State12, w: &MotorSpeeds, params: &QuadParams, dt: f64) -> Result<State12> {
    let f = |s: &[f64; 12]| -> Result<[f64; 12]> {
        let e = euler_rate_map(s[6], s[7], [s[9], s[10], s[11]])?;
        Ok(deriv_array(s, e, w, params))
    };
    let axpy = |a: &[f64; 12], h: f64, k: &[f64; 12]| -> [f64; 12] {
        std::array::from_fn(|i| a[i] + h * k[i])
    };
    let s0 = x.to_array();
    let k1 = f(&s0)?;
    let k2 = f(&axpy(&s0, dt / 2.0, &k1))?;
    let k3 = f(&axpy(&s0, dt / 2.0, &k2))?;
    let k4 = f(&axpy(&s0, dt, &k3))?;
    let next: [f64; 12] =
        std::array::from_fn(|i| s0[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]));
    if next.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT) {
        return Err(Error::NumericalDivergence);
    }
    Ok(State12::from_array(next))
}
