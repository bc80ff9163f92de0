//! Piecewise-constant tables on `[0, ∞)`.

use crate::error::{Error, Result};

/// A step function given by left endpoints and the value on each piece.
///
/// Piece `n` covers `[breakpoints[n], breakpoints[n + 1])`; at a breakpoint the
/// function takes its right limit. The first breakpoint is always `0`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseConstant {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

impl PiecewiseConstant {
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let bad = |message: &str| Error::Validation {
            key: "breakpoints".into(),
            message: message.into(),
        };
        if breakpoints.is_empty() || breakpoints.len() != values.len() {
            return Err(bad("breakpoints and values must be non-empty and of equal length"));
        }
        if breakpoints[0] != 0.0 {
            return Err(bad("first breakpoint must be 0"));
        }
        if breakpoints.windows(2).any(|w| !(w[1] > w[0])) || breakpoints.iter().any(|b| !b.is_finite()) {
            return Err(bad("breakpoints must be finite and strictly increasing"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation {
                key: "values".into(),
                message: "values must be finite".into(),
            });
        }
        Ok(Self { breakpoints, values })
    }

    pub fn constant(value: f64) -> Self {
        Self {
            breakpoints: vec![0.0],
            values: vec![value],
        }
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn piece(&self, t: f64) -> usize {
        self.breakpoints.partition_point(|&b| b <= t).saturating_sub(1)
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.values[self.piece(t)]
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Exact `∫_a^b f(s) ds` for `0 <= a <= b`.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        let mut total = 0.0;
        let mut lo = a;
        let mut n = self.piece(a);
        while lo < b {
            let hi = self.breakpoints.get(n + 1).copied().unwrap_or(f64::INFINITY).min(b);
            total += self.values[n] * (hi - lo);
            lo = hi;
            n += 1;
        }
        total
    }

    /// Returns a copy shifted by a constant.
    pub fn shifted(&self, c: f64) -> Self {
        Self {
            breakpoints: self.breakpoints.clone(),
            values: self.values.iter().map(|v| v + c).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn right_limit_at_breakpoints() {
        let f = PiecewiseConstant::new(vec![0.0, 5.0], vec![1.0, 2.0]).unwrap();
        assert_eq!(f.eval(0.0), 1.0);
        assert_eq!(f.eval(4.999), 1.0);
        assert_eq!(f.eval(5.0), 2.0);
        assert_eq!(f.eval(100.0), 2.0);
    }

    #[test]
    fn integral_spans_pieces() {
        let f = PiecewiseConstant::new(vec![0.0, 1.0, 3.0], vec![1.0, 2.0, 4.0]).unwrap();
        assert!((f.integral(0.5, 4.0) - (0.5 + 4.0 + 4.0)).abs() < 1e-15);
        assert_eq!(f.integral(2.0, 2.0), 0.0);
    }

    #[test]
    fn rejects_bad_tables() {
        assert!(PiecewiseConstant::new(vec![0.5], vec![1.0]).is_err());
        assert!(PiecewiseConstant::new(vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
        assert!(PiecewiseConstant::new(vec![0.0], vec![1.0, 2.0]).is_err());
    }
}
