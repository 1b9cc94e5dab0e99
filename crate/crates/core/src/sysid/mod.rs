//! Flight logs, datasets, black-box state-space models and their fit metrics.

mod coeff;
mod log;
mod rls;
mod subspace;

pub use coeff::estimate_coefficients;
pub use log::{FlightLog, LogRecord};
pub use rls::RlsState;
pub use subspace::{subspace_identify, validation_fit, Identified, SubspaceOptions};

use nalgebra::{DMatrix, DVector};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::matfile::{Entry, LabeledFile};
use crate::model::{mix_forward, QuadParams};

pub const MIN_RECORDS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InputKind {
    #[default]
    MotorSpeeds,
    ControlInputs,
}

impl fmt::Display for InputKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InputKind::MotorSpeeds => "motor-speeds",
            InputKind::ControlInputs => "control-inputs",
        })
    }
}

impl FromStr for InputKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "motor-speeds" => Ok(InputKind::MotorSpeeds),
            "control-inputs" => Ok(InputKind::ControlInputs),
            _ => Err(Error::InvalidParams(format!("unknown input kind `{s}`"))),
        }
    }
}

/// Input/output samples as `T x m` and `T x p` matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub u: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub dt: f64,
    pub input_kind: InputKind,
}

impl Dataset {
    pub fn new(u: DMatrix<f64>, y: DMatrix<f64>, dt: f64, input_kind: InputKind) -> Result<Self> {
        if u.nrows() != y.nrows() {
            return Err(Error::Dimension(format!(
                "{} input rows vs {} output rows",
                u.nrows(),
                y.nrows()
            )));
        }
        if u.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("non-finite sample in dataset".into()));
        }
        Ok(Dataset { u, y, dt, input_kind })
    }

    /// Inputs are the logged rotor speeds, or the mixer outputs computed from them.
    pub fn from_log(log: &FlightLog, kind: InputKind, params: &QuadParams) -> Result<Self> {
        let t = log.records.len();
        let u = DMatrix::from_fn(t, 4, |k, j| match kind {
            InputKind::MotorSpeeds => log.records[k].w.0[j],
            InputKind::ControlInputs => mix_forward(&log.records[k].w, params).to_array()[j],
        });
        let y = DMatrix::from_fn(t, 6, |k, j| log.records[k].y[j]);
        Dataset::new(u, y, log.dt, kind)
    }

    pub fn len(&self) -> usize {
        self.u.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn rows(&self, start: usize, count: usize) -> Dataset {
        Dataset {
            u: self.u.rows(start, count).into_owned(),
            y: self.y.rows(start, count).into_owned(),
            dt: self.dt,
            input_kind: self.input_kind,
        }
    }
}

/// Contiguous estimation/validation split, no shuffling.
pub fn split_dataset(d: &Dataset, estimation_fraction: f64) -> Result<(Dataset, Dataset)> {
    if !(estimation_fraction > 0.0 && estimation_fraction < 1.0) {
        return Err(Error::InvalidParams("estimation fraction must be in (0, 1)".into()));
    }
    let t = d.len();
    let ne = (t as f64 * estimation_fraction).floor() as usize;
    for got in [ne, t - ne] {
        if got < MIN_RECORDS {
            return Err(Error::TooFewSamples { got, need: MIN_RECORDS });
        }
    }
    Ok((d.rows(0, ne), d.rows(ne, t - ne)))
}

/// Discrete model `x+ = A x + B u + K e`, `y = C x + D u + e`.
///
/// `u0`/`y0` are the operating point the model was identified around: the
/// model input is `u - u0` and the physical output is `y + y0`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub dt: f64,
    pub u0: DVector<f64>,
    pub y0: DVector<f64>,
    pub input_kind: InputKind,
}

impl StateSpaceModel {
    /// Model with zero innovation gain and zero operating point.
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
        dt: f64,
    ) -> Result<Self> {
        let (n, m, p) = (a.nrows(), b.ncols(), c.nrows());
        let m = StateSpaceModel {
            k: DMatrix::zeros(n, p),
            u0: DVector::zeros(m),
            y0: DVector::zeros(p),
            a,
            b,
            c,
            d,
            dt,
            input_kind: InputKind::MotorSpeeds,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.c.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let (n, m, p) = (self.n(), self.inputs(), self.outputs());
        let shapes = [
            ("A", self.a.shape(), (n, n)),
            ("B", self.b.shape(), (n, m)),
            ("C", self.c.shape(), (p, n)),
            ("D", self.d.shape(), (p, m)),
            ("K", self.k.shape(), (n, p)),
            ("u0", self.u0.shape(), (m, 1)),
            ("y0", self.y0.shape(), (p, 1)),
        ];
        for (name, got, want) in shapes {
            if got != want {
                return Err(Error::Dimension(format!("{name} is {got:?}, expected {want:?}")));
            }
        }
        let all = [&self.a, &self.b, &self.c, &self.d, &self.k];
        if all.iter().any(|m| m.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidParams("non-finite model entry".into()));
        }
        if !(self.dt > 0.0) {
            return Err(Error::InvalidParams("dt must be positive".into()));
        }
        Ok(())
    }

    pub fn to_labeled(&self) -> LabeledFile {
        let mut f = LabeledFile::default();
        f.push("n", Entry::Int(self.n()));
        f.push("dt", Entry::Real(self.dt));
        f.push("input_kind", Entry::Text(self.input_kind.to_string()));
        for (name, m) in [("A", &self.a), ("B", &self.b), ("C", &self.c), ("D", &self.d), ("K", &self.k)] {
            f.push(name, Entry::Matrix(m.clone()));
        }
        f.push("u0", Entry::Matrix(DMatrix::from_column_slice(1, self.u0.len(), self.u0.as_slice())));
        f.push("y0", Entry::Matrix(DMatrix::from_column_slice(1, self.y0.len(), self.y0.as_slice())));
        f
    }

    pub fn from_labeled(f: &LabeledFile) -> Result<Self> {
        let row = |name: &str| -> Result<DVector<f64>> {
            Ok(DVector::from_row_slice(f.matrix(name)?.as_slice()))
        };
        let m = StateSpaceModel {
            a: f.matrix("A")?,
            b: f.matrix("B")?,
            c: f.matrix("C")?,
            d: f.matrix("D")?,
            k: f.matrix("K")?,
            dt: f.real("dt")?,
            u0: row("u0")?,
            y0: row("y0")?,
            input_kind: f.text("input_kind")?.parse()?,
        };
        if f.int("n")? != m.n() {
            return Err(Error::Dimension("n does not match A".into()));
        }
        m.validate()?;
        Ok(m)
    }

    pub fn to_text(&self) -> String {
        self.to_labeled().to_text()
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_labeled(&LabeledFile::parse(text)?)
    }

    pub fn spectral_radius(&self) -> f64 {
        spectral_radius(&self.a)
    }
}

pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Deterministic response with `e = 0`. `u` is `T x m`; the result is `T x p`.
pub fn simulate_ss(m: &StateSpaceModel, u: &DMatrix<f64>, x0: &DVector<f64>) -> Result<DMatrix<f64>> {
    if u.ncols() != m.inputs() || x0.len() != m.n() {
        return Err(Error::Dimension(format!(
            "input width {} / x0 length {} vs model ({}, {})",
            u.ncols(),
            x0.len(),
            m.inputs(),
            m.n()
        )));
    }
    let mut x = x0.clone();
    let mut out = DMatrix::zeros(u.nrows(), m.outputs());
    for k in 0..u.nrows() {
        let uk = u.row(k).transpose();
        let yk = &m.c * &x + &m.d * &uk;
        out.set_row(k, &yk.transpose());
        x = &m.a * &x + &m.b * &uk;
    }
    Ok(out)
}

/// NRMSE fit in percent, one value per column.
pub fn fit_percent(y_true: &DMatrix<f64>, y_model: &DMatrix<f64>) -> Result<Vec<f64>> {
    if y_true.shape() != y_model.shape() || y_true.nrows() < 2 {
        return Err(Error::Dimension(format!(
            "fit needs equal shapes with >= 2 rows: {:?} vs {:?}",
            y_true.shape(),
            y_model.shape()
        )));
    }
    (0..y_true.ncols())
        .map(|j| {
            let t = y_true.column(j);
            let mean = t.mean();
            let dev = t.map(|v| v - mean).norm();
            if dev == 0.0 {
                return Err(Error::DegenerateReference(j));
            }
            Ok(100.0 * (1.0 - (t - y_model.column(j)).norm() / dev))
        })
        .collect()
}

/// Equilibrium state (`x = A x`) whose output best matches `y` in least squares.
pub fn equilibrium_state(model: &StateSpaceModel, y: &DVector<f64>) -> Result<DVector<f64>> {
    let (n, p) = (model.n(), model.outputs());
    if y.len() != p {
        return Err(Error::Dimension(format!("output has {} entries, model {p}", y.len())));
    }
    let mut lhs = DMatrix::<f64>::zeros(n + p, n);
    lhs.view_mut((0, 0), (n, n)).copy_from(&(DMatrix::identity(n, n) - &model.a));
    lhs.view_mut((n, 0), (p, n)).copy_from(&model.c);
    let mut rhs = DMatrix::<f64>::zeros(n + p, 1);
    for j in 0..p {
        rhs[(n + j, 0)] = y[j] - model.y0[j];
    }
    let sol = crate::linalg::lstsq(&lhs, &rhs, 1e-12)?;
    Ok(sol.column(0).into_owned())
}
