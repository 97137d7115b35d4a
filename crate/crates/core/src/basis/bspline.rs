//! One-dimensional B-spline bases on a clamped (open uniform) knot vector.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A univariate B-spline basis over [lo, hi] with clamped boundary knots, so
/// the basis interpolates at the domain endpoints.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BSpline1d {
    degree: usize,
    /// Full knot vector: lo repeated degree+1 times, interior knots, hi
    /// repeated degree+1 times.
    knots: Vec<f64>,
    domain: (f64, f64),
    n_basis: usize,
}

impl BSpline1d {
    pub fn new(degree: usize, interior_knots: &[f64], domain: (f64, f64)) -> Result<Self> {
        let (lo, hi) = domain;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidKnots(format!(
                "domain [{lo}, {hi}] is not a proper interval"
            )));
        }
        for pair in interior_knots.windows(2) {
            if !(pair[0] < pair[1]) {
                return Err(Error::InvalidKnots(format!(
                    "interior knots must be strictly increasing, got {} then {}",
                    pair[0], pair[1]
                )));
            }
        }
        if interior_knots.iter().any(|&k| k <= lo || k >= hi) {
            return Err(Error::InvalidKnots(
                "interior knots must lie strictly inside the domain".into(),
            ));
        }
        let mut knots = Vec::with_capacity(2 * (degree + 1) + interior_knots.len());
        knots.extend(std::iter::repeat_n(lo, degree + 1));
        knots.extend_from_slice(interior_knots);
        knots.extend(std::iter::repeat_n(hi, degree + 1));
        Ok(Self {
            degree,
            n_basis: degree + 1 + interior_knots.len(),
            knots,
            domain,
        })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn n_basis(&self) -> usize {
        self.n_basis
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    pub fn interior_knots(&self) -> &[f64] {
        &self.knots[self.degree + 1..self.knots.len() - self.degree - 1]
    }

    /// Knot spans as consecutive pairs (lo, k1), (k1, k2), ..., (km, hi).
    pub fn spans(&self) -> Vec<(f64, f64)> {
        let mut edges = vec![self.domain.0];
        edges.extend_from_slice(self.interior_knots());
        edges.push(self.domain.1);
        edges.windows(2).map(|w| (w[0], w[1])).collect()
    }

    fn contains(&self, t: f64) -> bool {
        t >= self.domain.0 && t <= self.domain.1
    }

    /// Index of the knot span containing t, such that knots[s] <= t < knots[s+1]
    /// (the last span is closed on the right).
    fn span_index(&self, t: f64) -> usize {
        let d = self.degree;
        let last = self.knots.len() - d - 2;
        if t >= self.domain.1 {
            return last;
        }
        let mut s = d;
        while s < last && t >= self.knots[s + 1] {
            s += 1;
        }
        s
    }

    /// All basis function values at t, via the Cox-de Boor recursion on the
    /// degree+1 locally supported functions.
    pub fn eval(&self, t: f64) -> Result<Vec<f64>> {
        if !self.contains(t) {
            return Err(Error::OutsideDomain { point: vec![t] });
        }
        let d = self.degree;
        let s = self.span_index(t);
        // de Boor's basis algorithm: local[j] = B_{s-d+j, d}(t).
        let mut local = vec![0.0f64; d + 1];
        local[0] = 1.0;
        let mut left = vec![0.0f64; d + 1];
        let mut right = vec![0.0f64; d + 1];
        for j in 1..=d {
            left[j] = t - self.knots[s + 1 - j];
            right[j] = self.knots[s + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let term = if denom == 0.0 { 0.0 } else { local[r] / denom };
                local[r] = saved + right[r + 1] * term;
                saved = left[j - r] * term;
            }
            local[j] = saved;
        }
        let mut values = vec![0.0; self.n_basis];
        for (j, &v) in local.iter().enumerate() {
            values[s - d + j] = v;
        }
        Ok(values)
    }
}

/// Equally spaced interior knots for [lo, hi].
pub fn equally_spaced_knots(count: usize, domain: (f64, f64)) -> Vec<f64> {
    let (lo, hi) = domain;
    (1..=count)
        .map(|i| lo + (hi - lo) * i as f64 / (count as f64 + 1.0))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_basis() {
        let b = BSpline1d::new(0, &[], (0.0, 1.0)).unwrap();
        assert_eq!(b.n_basis(), 1);
        assert_eq!(b.eval(0.3).unwrap(), vec![1.0]);
        assert_eq!(b.eval(1.0).unwrap(), vec![1.0]);
    }

    #[test]
    fn quadratic_single_knot_matches_hand_recursion() {
        // degree 2, knot {0.5} on [0,1]: knot vector (0,0,0,0.5,1,1,1), P=4.
        // At t=0.25 (span [0,0.5)) the hand Cox-de Boor recursion gives:
        //   B1 = (1-2t)^2, B2 = 2t(1-2t) + t(3-4t)/... worked out below.
        let b = BSpline1d::new(2, &[0.5], (0.0, 1.0)).unwrap();
        assert_eq!(b.n_basis(), 4);
        let t: f64 = 0.25;
        let v = b.eval(t).unwrap();
        // Degree-1 on span [0, 0.5): N2_1 = (0.5 - t)/0.5, N3_1 = t/0.5.
        let n2 = (0.5 - t) / 0.5;
        let n3 = t / 0.5;
        // Degree-2: B1 = (0.5-t)/0.5 * n2; B2 = (t-0)/0.5*n2 + (1-t)/1 * n3;
        // B3 = (t-0)/1 * n3; B4 = 0.
        let b1 = (0.5 - t) / 0.5 * n2;
        let b2 = t / 0.5 * n2 + (1.0 - t) / 1.0 * n3;
        let b3 = t / 1.0 * n3;
        assert!((v[0] - b1).abs() < 1e-15);
        assert!((v[1] - b2).abs() < 1e-15);
        assert!((v[2] - b3).abs() < 1e-15);
        assert!(v[3].abs() < 1e-15);
        // Partition of unity at the interior knot itself.
        let at_knot = b.eval(0.5).unwrap();
        assert!((at_knot.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn clamped_boundary_is_interpolating() {
        let b = BSpline1d::new(3, &equally_spaced_knots(4, (0.0, 1.0)), (0.0, 1.0)).unwrap();
        assert_eq!(b.n_basis(), 8);
        let lo = b.eval(0.0).unwrap();
        assert!((lo[0] - 1.0).abs() < 1e-15);
        assert!(lo[1..].iter().all(|&v| v.abs() < 1e-15));
        let hi = b.eval(1.0).unwrap();
        assert!((hi[7] - 1.0).abs() < 1e-15);
        assert!(hi[..7].iter().all(|&v| v.abs() < 1e-15));
    }

    #[test]
    fn rejects_bad_knots() {
        assert!(BSpline1d::new(2, &[0.7, 0.3], (0.0, 1.0)).is_err());
        assert!(BSpline1d::new(2, &[1.5], (0.0, 1.0)).is_err());
        assert!(BSpline1d::new(2, &[0.0], (0.0, 1.0)).is_err());
    }

    #[test]
    fn outside_domain_errors() {
        let b = BSpline1d::new(2, &[0.5], (0.0, 1.0)).unwrap();
        assert!(b.eval(-0.01).is_err());
        assert!(b.eval(1.01).is_err());
    }
}
