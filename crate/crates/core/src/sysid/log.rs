use crate::error::{Error, Result};
use crate::model::MotorSpeeds;

use super::MIN_RECORDS;

pub const HEADER: &str = "t,w1,w2,w3,w4,x,y,z,phi,theta,psi";
const SPACING_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRecord {
    pub t: f64,
    pub w: MotorSpeeds,
    /// X, Y, Z (m, Z down), phi, theta, psi (rad).
    pub y: [f64; 6],
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlightLog {
    pub dt: f64,
    pub records: Vec<LogRecord>,
}

impl FlightLog {
    /// Checks record count, strictly increasing time and constant spacing.
    pub fn new(records: Vec<LogRecord>) -> Result<Self> {
        if records.len() < MIN_RECORDS {
            return Err(Error::TooFewSamples { got: records.len(), need: MIN_RECORDS });
        }
        let dt = records[1].t - records[0].t;
        for (k, pair) in records.windows(2).enumerate() {
            let step = pair[1].t - pair[0].t;
            let line = k + 3;
            if !(step > 0.0) {
                return Err(Error::Parse { line, msg: "non-monotone time".into() });
            }
            if (step - dt).abs() > SPACING_TOL {
                return Err(Error::Parse { line, msg: format!("time step {step} differs from {dt}") });
            }
        }
        if records
            .iter()
            .any(|r| !r.t.is_finite() || r.y.iter().chain(r.w.0.iter()).any(|v| !v.is_finite()))
        {
            return Err(Error::InvalidParams("non-finite log entry".into()));
        }
        Ok(FlightLog { dt, records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.records.len() * 200);
        out.push_str(HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&r.t.to_string());
            for v in r.w.0.iter().chain(r.y.iter()) {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let body = text.strip_suffix('\n').unwrap_or(text);
        let mut lines = body.split('\n');
        match lines.next() {
            Some(h) if h == HEADER => {}
            _ => return Err(Error::Parse { line: 1, msg: format!("expected header `{HEADER}`") }),
        }
        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            if line.is_empty() {
                return Err(Error::Parse { line: line_no, msg: "blank line".into() });
            }
            let vals: Vec<f64> = line
                .split(',')
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse { line: line_no, msg: e.to_string() })?;
            if vals.len() != 11 {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("expected 11 fields, got {}", vals.len()),
                });
            }
            records.push(LogRecord {
                t: vals[0],
                w: MotorSpeeds([vals[1], vals[2], vals[3], vals[4]]),
                y: [vals[5], vals[6], vals[7], vals[8], vals[9], vals[10]],
            });
        }
        FlightLog::new(records)
    }
}
