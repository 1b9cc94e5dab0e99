use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Exponentially weighted recursive least squares.
#[derive(Debug, Clone, PartialEq)]
pub struct RlsState {
    pub theta: DVector<f64>,
    pub p: DMatrix<f64>,
    pub lambda: f64,
}

impl RlsState {
    /// Zero initial estimate with covariance `p0 * I`.
    pub fn new(dim: usize, p0: f64, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda <= 1.0) {
            return Err(Error::InvalidParams(format!("forgetting factor {lambda} not in (0, 1]")));
        }
        if !(p0 > 0.0) {
            return Err(Error::InvalidParams("initial covariance must be positive".into()));
        }
        Ok(RlsState {
            theta: DVector::zeros(dim),
            p: DMatrix::identity(dim, dim) * p0,
            lambda,
        })
    }

    pub fn update(&mut self, phi: &DVector<f64>, z: f64) -> Result<()> {
        let pphi = &self.p * phi;
        let denom = self.lambda + phi.dot(&pphi);
        if !(denom > 0.0) {
            return Err(Error::NumericalBreakdown(denom));
        }
        let gain = &pphi / denom;
        let err = z - phi.dot(&self.theta);
        self.theta += &gain * err;
        // P phi phi' P = pphi pphi' since P is symmetric
        self.p -= &gain * pphi.transpose();
        self.p /= self.lambda;
        let sym = (&self.p + self.p.transpose()) * 0.5;
        self.p = sym;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zero_regressor_only_scales_covariance() {
        let mut s = RlsState::new(3, 2.0, 0.9).unwrap();
        s.theta[1] = 0.4;
        let before = s.clone();
        s.update(&DVector::zeros(3), 7.0).unwrap();
        assert_eq!(s.theta, before.theta);
        assert_relative_eq!(s.p, before.p / 0.9, epsilon = 1e-15);
    }

    #[test]
    fn constant_measurement_converges_monotonically() {
        let mut s = RlsState::new(1, 1e6, 1.0).unwrap();
        let one = DVector::from_element(1, 1.0);
        let mut prev = (s.theta[0] - 3.0).abs();
        for _ in 0..50 {
            s.update(&one, 3.0).unwrap();
            let gap = (s.theta[0] - 3.0).abs();
            assert!(gap <= prev);
            prev = gap;
        }
        assert_relative_eq!(s.theta[0], 3.0, epsilon = 1e-6);
    }

    #[test]
    fn rejects_bad_lambda_and_breakdown() {
        assert!(RlsState::new(2, 1.0, 0.0).is_err());
        assert!(RlsState::new(2, 1.0, 1.5).is_err());
        let mut s = RlsState::new(1, 1.0, 1.0).unwrap();
        s.p[(0, 0)] = -2.0;
        assert!(matches!(
            s.update(&DVector::from_element(1, 1.0), 1.0),
            Err(Error::NumericalBreakdown(_))
        ));
    }
}
