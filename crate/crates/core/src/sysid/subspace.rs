//! MOESP subspace identification with least-squares B/D recovery.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{column_stats, lstsq, IncrementalQr};

use super::{fit_percent, simulate_ss, Dataset, StateSpaceModel};

const RANK_TOL: f64 = 1e-10;
const EXCITATION_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubspaceOptions {
    pub order: usize,
    /// Block rows of the Hankel matrices.
    pub horizon: usize,
    /// Samples per B/D regression window; `None` uses one window.
    pub segment: Option<usize>,
    /// Identify around the data's mean operating point and allow a constant
    /// output offset per regression window.
    pub detrend: bool,
}

impl SubspaceOptions {
    pub fn quadrotor(order: usize) -> Self {
        SubspaceOptions { order, horizon: 2 * order + 1, segment: Some(2000), detrend: true }
    }
}

#[derive(Debug, Clone)]
pub struct Identified {
    pub model: StateSpaceModel,
    /// Singular values of the projected output Hankel matrix, descending.
    pub singular_values: Vec<f64>,
}

pub fn subspace_identify(est: &Dataset, opts: &SubspaceOptions) -> Result<Identified> {
    let (n, i) = (opts.order, opts.horizon);
    let (t, m, p) = (est.len(), est.u.ncols(), est.y.ncols());
    if n == 0 || i < 2 * n {
        return Err(Error::InvalidParams(format!("horizon {i} must be >= 2 * order {n} > 0")));
    }
    let need = 10 * i * (m + p);
    if t < need {
        return Err(Error::TooFewSamples { got: t, need });
    }

    let (umean, ustd) = column_stats(&est.u);
    for j in 0..m {
        if ustd[j] <= 1e-9 * umean[j].abs().max(1.0) {
            return Err(Error::RankDeficientInputs(format!("input {} is constant", j + 1)));
        }
    }
    let (ymean, _) = column_stats(&est.y);

    // R factor of [1; U_hankel; Y_hankel]' with standardized inputs
    let k = 1 + i * m;
    let width = k + i * p;
    let cols = t - i + 1;
    let mut qr = IncrementalQr::new(width);
    let mut row = vec![0.0; width];
    for j in 0..cols {
        row[0] = 1.0;
        for b in 0..i {
            for q in 0..m {
                row[1 + b * m + q] = (est.u[(j + b, q)] - umean[q]) / ustd[q];
            }
            for q in 0..p {
                row[k + b * p + q] = est.y[(j + b, q)] - ymean[q];
            }
        }
        qr.push_row(&row);
    }
    let r = qr.finish();

    let diag: Vec<f64> = (0..k).map(|j| r[(j, j)].abs()).collect();
    let dmax = diag.iter().cloned().fold(0.0, f64::max);
    let dmin = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(dmin > EXCITATION_TOL * dmax) {
        return Err(Error::RankDeficientInputs(format!(
            "input Hankel matrix is numerically singular (ratio {:.3e})",
            dmin / dmax
        )));
    }

    let l22 = r.view((k, k), (i * p, i * p)).transpose();
    let svd = l22.svd(true, false);
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sv: Vec<f64> = order.iter().map(|&j| svd.singular_values[j]).collect();
    let rank = sv.iter().filter(|&&s| s > RANK_TOL * sv[0]).count();
    if sv[0] == 0.0 || n > rank {
        return Err(Error::OrderTooLarge { order: n, rank: if sv[0] == 0.0 { 0 } else { rank } });
    }
    let uu = svd.u.as_ref().expect("left vectors requested");
    let gamma = DMatrix::from_fn(i * p, n, |r, c| uu[(r, order[c])] * sv[c].sqrt());
    let c_mat = gamma.rows(0, p).into_owned();
    let up = gamma.rows(0, (i - 1) * p).into_owned();
    let down = gamma.rows(p, (i - 1) * p).into_owned();
    let a_mat = lstsq(&up, &down, 1e-13)?;

    let u0 = if opts.detrend { umean } else { DVector::zeros(m) };
    let y0 = if opts.detrend { ymean } else { DVector::zeros(p) };
    let (b_mat, d_mat) = regress_bd(&a_mat, &c_mat, est, &u0, opts)?;

    let mut model = StateSpaceModel::new(a_mat, b_mat, c_mat, d_mat, est.dt)?;
    model.u0 = u0;
    model.y0 = y0;
    model.input_kind = est.input_kind;
    Ok(Identified { model, singular_values: sv })
}

/// B and D minimizing the output simulation error over consecutive windows,
/// with each window's initial state (and output offset when detrending)
/// eliminated as a nuisance parameter.
fn regress_bd(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    est: &Dataset,
    u0: &DVector<f64>,
    opts: &SubspaceOptions,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (n, p, m, t) = (a.nrows(), c.nrows(), est.u.ncols(), est.len());
    let window = opts.segment.unwrap_or(t).clamp(1, t);
    let nuisance = n + if opts.detrend { p } else { 0 };
    let nb = n * m + p * m;
    let width = nuisance + nb + 1;

    let mut acc = IncrementalQr::new(nb + 1);
    let mut start = 0;
    while start + window <= t {
        let mut seg = IncrementalQr::new(width);
        let mut row = vec![0.0; width];
        let mut ak = DMatrix::<f64>::identity(n, n);
        let mut xs: Vec<DMatrix<f64>> = vec![DMatrix::zeros(n, n); m];
        let mut tmp = DMatrix::<f64>::zeros(n, n);
        let mut cx = DMatrix::<f64>::zeros(p, n);
        let mut phi = DMatrix::<f64>::zeros(p, n);
        for kk in 0..window {
            let s = start + kk;
            c.mul_to(&ak, &mut phi);
            a.mul_to(&ak, &mut tmp);
            std::mem::swap(&mut ak, &mut tmp);
            // cx rows for each input are filled per output channel below
            let mut bresp: Vec<DMatrix<f64>> = Vec::with_capacity(m);
            for (b, x) in xs.iter_mut().enumerate() {
                c.mul_to(x, &mut cx);
                bresp.push(cx.clone());
                a.mul_to(x, &mut tmp);
                std::mem::swap(x, &mut tmp);
                let ub = est.u[(s, b)] - u0[b];
                for d in 0..n {
                    x[(d, d)] += ub;
                }
            }
            for out in 0..p {
                row.iter_mut().for_each(|v| *v = 0.0);
                for col in 0..n {
                    row[col] = phi[(out, col)];
                }
                if opts.detrend {
                    row[n + out] = 1.0;
                }
                for st in 0..n {
                    for b in 0..m {
                        row[nuisance + st * m + b] = bresp[b][(out, st)];
                    }
                }
                for b in 0..m {
                    row[nuisance + n * m + out * m + b] = est.u[(s, b)] - u0[b];
                }
                row[width - 1] = est.y[(s, out)];
                seg.push_row(&row);
            }
        }
        let rs = seg.finish();
        acc.push_rows(&rs.view((nuisance, nuisance), (rs.nrows() - nuisance, nb + 1)).into_owned());
        start += window;
    }
    let r = acc.finish();
    if r.nrows() < nb {
        return Err(Error::TooFewSamples { got: t, need: nb + nuisance });
    }
    let theta = lstsq(
        &r.view((0, 0), (nb, nb)).into_owned(),
        &r.view((0, nb), (nb, 1)).into_owned(),
        1e-13,
    )?;
    let b_mat = DMatrix::from_fn(n, m, |st, b| theta[st * m + b]);
    let d_mat = DMatrix::from_fn(p, m, |out, b| theta[n * m + out * m + b]);
    Ok((b_mat, d_mat))
}

/// Fit of the simulated model response on `val`, with the initial state (and
/// optionally a constant output offset) fitted by least squares.
pub fn validation_fit(model: &StateSpaceModel, val: &Dataset, estimate_offset: bool) -> Result<Vec<f64>> {
    let predicted = simulate_with_fitted_start(model, val, estimate_offset)?;
    fit_percent(&val.y, &predicted)
}

pub(crate) fn simulate_with_fitted_start(
    model: &StateSpaceModel,
    val: &Dataset,
    estimate_offset: bool,
) -> Result<DMatrix<f64>> {
    let (n, p, t) = (model.n(), model.outputs(), val.len());
    let mut uin = val.u.clone();
    for mut r in uin.row_iter_mut() {
        r -= model.u0.transpose();
    }
    let free = simulate_ss(model, &uin, &DVector::zeros(n))?;
    let nuis = n + if estimate_offset { p } else { 0 };
    let mut qr = IncrementalQr::new(nuis + 1);
    let mut row = vec![0.0; nuis + 1];
    let mut ak = DMatrix::<f64>::identity(n, n);
    let mut phis = Vec::with_capacity(t);
    for k in 0..t {
        let phi = &model.c * &ak;
        for out in 0..p {
            row.iter_mut().for_each(|v| *v = 0.0);
            for col in 0..n {
                row[col] = phi[(out, col)];
            }
            if estimate_offset {
                row[n + out] = 1.0;
            }
            row[nuis] = val.y[(k, out)] - model.y0[out] - free[(k, out)];
            qr.push_row(&row);
        }
        phis.push(phi);
        ak = &model.a * ak;
    }
    let r = qr.finish();
    let theta = lstsq(
        &r.view((0, 0), (nuis, nuis)).into_owned(),
        &r.view((0, nuis), (nuis, 1)).into_owned(),
        1e-13,
    )?;
    let x0 = theta.rows(0, n).into_owned();
    Ok(DMatrix::from_fn(t, p, |k, out| {
        let off = if estimate_offset { theta[n + out] } else { 0.0 };
        free[(k, out)] + model.y0[out] + (phis[k].row(out) * &x0)[0] + off
    }))
}
