//! Thrust and yaw-drag coefficient estimation from a flight log.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::model::{body_rates_from_euler, QuadParams};

use super::{FlightLog, RlsState};

/// Moving-average pre-smoother length applied before differencing.
pub const SMOOTH_TAPS: usize = 51;

fn moving_average(x: &[f64], taps: usize) -> Vec<f64> {
    if x.len() < taps {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(x.len() - taps + 1);
    let mut sum: f64 = x[..taps].iter().sum();
    out.push(sum / taps as f64);
    for k in taps..x.len() {
        sum += x[k] - x[k - taps];
        out.push(sum / taps as f64);
    }
    out
}

/// Runs a scalar RLS (lambda = 1) on the pairs and returns the estimate.
fn scalar_rls(reg: &[f64], meas: &[f64], what: &'static str) -> Result<f64> {
    let n = reg.len() as f64;
    let mean = reg.iter().sum::<f64>() / n;
    let var = reg.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    if !(var >= 1e-12 * mean.powi(2).max(1.0)) {
        return Err(Error::InsufficientExcitation(what));
    }
    // unit-RMS regressor keeps P0 meaningful
    let scale = (reg.iter().map(|r| r * r).sum::<f64>() / n).sqrt();
    let mut rls = RlsState::new(1, 1e8, 1.0)?;
    let mut phi = DVector::zeros(1);
    for (r, z) in reg.iter().zip(meas) {
        phi[0] = r / scale;
        rls.update(&phi, *z)?;
    }
    Ok(rls.theta[0] / scale)
}

/// Estimates `(K_T, b)` from logged rotor speeds and outputs.
///
/// Accelerations come from central differences of the smoothed outputs.
/// Vertical force balance gives `K_T` against `sum w_i^2`; yaw moment balance
/// gives `b` against `-w1^2 + w2^2 - w3^2 + w4^2`. Rotor speeds are held over
/// each sample interval, so each regressor is averaged with the weights the
/// difference stencil puts on those intervals.
pub fn estimate_coefficients(log: &FlightLog, params: &QuadParams) -> Result<(f64, f64)> {
    let t = log.len();
    let taps = SMOOTH_TAPS;
    if t < taps + 8 {
        return Err(Error::TooFewSamples { got: t, need: taps + 8 });
    }
    let dt = log.dt;
    let col = |j: usize| -> Vec<f64> { log.records.iter().map(|r| r.y[j]).collect() };
    let (z, phi, theta, psi) = (
        moving_average(&col(2), taps),
        moving_average(&col(3), taps),
        moving_average(&col(4), taps),
        moving_average(&col(5), taps),
    );
    let sq: Vec<[f64; 4]> = log.records.iter().map(|r| r.w.0.map(|w| w * w)).collect();
    let total: Vec<f64> = sq.iter().map(|s| s.iter().sum()).collect();
    let yaw: Vec<f64> = sq.iter().map(|s| -s[0] + s[1] - s[2] + s[3]).collect();

    // smoothed index j is centred on raw sample j + half
    let len = z.len();

    // vertical channel: second difference at centre c spans intervals c-1 and c
    let vert_raw: Vec<f64> = (1..t).map(|k| 0.5 * (total[k - 1] + total[k])).collect();
    let vert_reg = moving_average(&vert_raw, taps); // index j centred on raw j + half + 1
    let mut reg_v = Vec::with_capacity(len);
    let mut meas_v = Vec::with_capacity(len);
    for j in 1..len - 1 {
        let az = (z[j + 1] - 2.0 * z[j] + z[j - 1]) / (dt * dt);
        let vz = (z[j + 1] - z[j - 1]) / (2.0 * dt);
        let tilt = phi[j].cos() * theta[j].cos();
        reg_v.push(vert_reg[j - 1]);
        meas_v.push((params.m * (params.g - az) - params.kd_z * vz) / tilt);
    }
    let k_t = scalar_rls(&reg_v, &meas_v, "vertical")?;

    // yaw channel: body rates from central differences of the angles, then a
    // central difference of r; the combined stencil weights intervals
    // c-2..c+1 by (1, 3, 3, 1) / 8
    let rates: Vec<[f64; 3]> = (1..len - 1)
        .map(|j| {
            let d = |v: &[f64]| (v[j + 1] - v[j - 1]) / (2.0 * dt);
            body_rates_from_euler(phi[j], theta[j], [d(&phi), d(&theta), d(&psi)])
        })
        .collect();
    let yaw_raw: Vec<f64> = (2..t - 1)
        .map(|k| (yaw[k - 2] + 3.0 * yaw[k - 1] + 3.0 * yaw[k] + yaw[k + 1]) / 8.0)
        .collect();
    let yaw_reg = moving_average(&yaw_raw, taps); // index j centred on raw j + half + 2
    let mut reg_y = Vec::with_capacity(len);
    let mut meas_y = Vec::with_capacity(len);
    // rates index i is smoothed index i + 1
    for i in 1..rates.len() - 1 {
        let rdot = (rates[i + 1][2] - rates[i - 1][2]) / (2.0 * dt);
        let [p, q, _] = rates[i];
        reg_y.push(yaw_reg[i - 1]);
        meas_y.push(params.jz * rdot - (params.jx - params.jy) * p * q);
    }
    let b = scalar_rls(&reg_y, &meas_y, "yaw")?;
    Ok((k_t, b))
}
