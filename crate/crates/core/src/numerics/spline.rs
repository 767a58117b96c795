//! Natural cubic splines for matrix-valued grid data.
//!
//! All entries share the same knot sequence, so the tridiagonal system for
//! the second derivatives is solved once with matrix-valued right-hand
//! sides. With two knots the natural spline degenerates to the straight
//! line through the data.

use crate::error::{LpvError, Result};
use crate::Mat;

/// Natural cubic spline through matrix values on a strictly increasing
/// knot grid. Evaluation outside the knot range continues the boundary
/// polynomial.
#[derive(Debug, Clone)]
pub struct CubicSpline {
    knots: Vec<f64>,
    values: Vec<Mat>,
    /// Second-derivative matrices at the knots (zero at both ends).
    second: Vec<Mat>,
}

impl CubicSpline {
    /// Fits a natural cubic spline; needs at least two knots, strictly
    /// increasing, one matrix per knot with a common shape.
    pub fn fit(knots: &[f64], values: &[Mat]) -> Result<Self> {
        let n = knots.len();
        if n < 2 {
            return Err(LpvError::InvalidModel(format!(
                "spline needs at least 2 knots, got {n}"
            )));
        }
        if values.len() != n {
            return Err(LpvError::Internal(format!(
                "spline got {} knots but {} values",
                n,
                values.len()
            )));
        }
        for (i, &x) in knots.iter().enumerate() {
            if i > 0 && x <= knots[i - 1] {
                return Err(LpvError::NonMonotoneGrid { index: i, value: x });
            }
        }
        let shape = values[0].shape();
        if values.iter().any(|v| v.shape() != shape) {
            return Err(LpvError::Internal(
                "spline values have inconsistent shapes".into(),
            ));
        }

        let (rows, cols) = shape;
        let mut second = vec![Mat::zeros(rows, cols); n];
        if n > 2 {
            // Thomas algorithm on the interior knots; natural boundary
            // conditions pin the end second derivatives to zero.
            let m = n - 2;
            let h: Vec<f64> = (0..n - 1).map(|i| knots[i + 1] - knots[i]).collect();
            let mut diag = vec![0.0; m];
            let mut upper = vec![0.0; m];
            let mut rhs: Vec<Mat> = Vec::with_capacity(m);
            for i in 0..m {
                diag[i] = (h[i] + h[i + 1]) / 3.0;
                upper[i] = h[i + 1] / 6.0;
                let d1 = (&values[i + 2] - &values[i + 1]) / h[i + 1];
                let d0 = (&values[i + 1] - &values[i]) / h[i];
                rhs.push(d1 - d0);
            }
            // Forward elimination (lower diagonal equals h[i]/6 shifted).
            for i in 1..m {
                let lower = h[i] / 6.0;
                let w = lower / diag[i - 1];
                diag[i] -= w * upper[i - 1];
                let prev = rhs[i - 1].clone();
                rhs[i] -= prev * w;
            }
            second[m] = &rhs[m - 1] / diag[m - 1];
            for i in (0..m - 1).rev() {
                let next = second[i + 2].clone();
                second[i + 1] = (&rhs[i] - next * upper[i]) / diag[i];
            }
        }

        Ok(CubicSpline {
            knots: knots.to_vec(),
            values: values.to_vec(),
            second,
        })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    fn interval(&self, x: f64) -> usize {
        let n = self.knots.len();
        self.knots
            .partition_point(|&k| k <= x)
            .clamp(1, n - 1)
            - 1
    }

    /// Spline value at `x`; exact at knots.
    pub fn evaluate(&self, x: f64) -> Mat {
        let i = self.interval(x);
        if x == self.knots[i] {
            return self.values[i].clone();
        }
        if x == self.knots[i + 1] {
            return self.values[i + 1].clone();
        }
        let h = self.knots[i + 1] - self.knots[i];
        let dl = self.knots[i + 1] - x;
        let dr = x - self.knots[i];
        // S = m_i dl³/(6h) + m_{i+1} dr³/(6h)
        //   + (y_i/h − m_i h/6) dl + (y_{i+1}/h − m_{i+1} h/6) dr
        &self.second[i] * (dl * dl * dl / (6.0 * h))
            + &self.second[i + 1] * (dr * dr * dr / (6.0 * h))
            + (&self.values[i] / h - &self.second[i] * (h / 6.0)) * dl
            + (&self.values[i + 1] / h - &self.second[i + 1] * (h / 6.0)) * dr
    }

    /// First derivative at `x`; continuous across interior knots.
    pub fn derivative(&self, x: f64) -> Mat {
        let i = self.interval(x);
        let h = self.knots[i + 1] - self.knots[i];
        let dl = self.knots[i + 1] - x;
        let dr = x - self.knots[i];
        &self.second[i] * (-dl * dl / (2.0 * h))
            + &self.second[i + 1] * (dr * dr / (2.0 * h))
            + (&self.values[i + 1] - &self.values[i]) / h
            - (&self.second[i + 1] - &self.second[i]) * (h / 6.0)
    }
}

/// Fits a natural cubic spline (see [`CubicSpline::fit`]).
pub fn spline_fit(knots: &[f64], values: &[Mat]) -> Result<CubicSpline> {
    CubicSpline::fit(knots, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Mat {
        Mat::from_row_slice(1, 1, &[v])
    }

    #[test]
    fn constant_data_has_zero_derivative() {
        let knots = [0.0, 0.5, 1.2, 2.0];
        let values: Vec<Mat> = knots.iter().map(|_| scalar(3.5)).collect();
        let s = CubicSpline::fit(&knots, &values).unwrap();
        for &x in &[0.0, 0.3, 0.9, 1.7, 2.0] {
            assert!((s.evaluate(x)[(0, 0)] - 3.5).abs() < 1e-14);
            assert!(s.derivative(x)[(0, 0)].abs() < 1e-13);
        }
    }

    #[test]
    fn linear_data_reproduced_with_exact_slope() {
        let knots = [0.0, 1.0, 2.5, 4.0];
        let values: Vec<Mat> = knots.iter().map(|&x| scalar(2.0 * x - 1.0)).collect();
        let s = CubicSpline::fit(&knots, &values).unwrap();
        for &x in &[0.0, 0.4, 1.9, 3.3, 4.0] {
            assert!((s.evaluate(x)[(0, 0)] - (2.0 * x - 1.0)).abs() < 1e-12);
            assert!((s.derivative(x)[(0, 0)] - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sine_derivative_matches_cosine() {
        let n = 50;
        let knots: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64 * 3.0).collect();
        let values: Vec<Mat> = knots.iter().map(|&x| scalar(x.sin())).collect();
        let s = CubicSpline::fit(&knots, &values).unwrap();
        for i in 0..n - 1 {
            let mid = 0.5 * (knots[i] + knots[i + 1]);
            let got = s.derivative(mid)[(0, 0)];
            // Natural boundary conditions leave an O(h²) error layer in the
            // last few intervals; away from the ends the error is O(h⁴).
            let tol = if i < 5 || i >= n - 6 { 5e-4 } else { 1e-5 };
            assert!(
                (got - mid.cos()).abs() < tol,
                "derivative at {mid}: {got} vs {}",
                mid.cos()
            );
        }
    }

    #[test]
    fn exact_at_knots_and_derivative_continuous() {
        let knots = [0.0, 0.7, 1.1, 2.0, 3.1];
        let values: Vec<Mat> = knots
            .iter()
            .map(|&x| Mat::from_row_slice(2, 1, &[x * x - x, (3.0 * x).cos()]))
            .collect();
        let s = CubicSpline::fit(&knots, &values).unwrap();
        for (i, &x) in knots.iter().enumerate() {
            assert_eq!(s.evaluate(x), values[i]);
        }
        for &x in &knots[1..4] {
            let left = s.derivative(x - 1e-9);
            let right = s.derivative(x + 1e-9);
            assert!((left - right).norm() < 1e-6);
        }
    }

    #[test]
    fn derivative_matches_central_differences() {
        let knots: Vec<f64> = (0..20).map(|i| i as f64 * 0.25).collect();
        let values: Vec<Mat> = knots.iter().map(|&x| scalar((x * 0.9).exp())).collect();
        let s = CubicSpline::fit(&knots, &values).unwrap();
        for i in 1..19 {
            let x = knots[i] + 0.1;
            let h = 1e-6;
            let fd = (s.evaluate(x + h)[(0, 0)] - s.evaluate(x - h)[(0, 0)]) / (2.0 * h);
            let d = s.derivative(x)[(0, 0)];
            assert!(
                (fd - d).abs() <= 1e-6 * d.abs().max(1.0),
                "at {x}: fd {fd} vs {d}"
            );
        }
    }

    #[test]
    fn two_knots_is_linear() {
        let s = CubicSpline::fit(&[0.0, 2.0], &[scalar(1.0), scalar(5.0)]).unwrap();
        assert!((s.evaluate(1.0)[(0, 0)] - 3.0).abs() < 1e-14);
        assert!((s.derivative(0.5)[(0, 0)] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn too_few_knots_rejected() {
        assert!(CubicSpline::fit(&[0.0], &[scalar(1.0)]).is_err());
    }
}
