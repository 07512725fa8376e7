//! Univariate clamped B-spline bases.
//!
//! Values and derivatives are produced by the Cox-de Boor recursion together
//! with the derivative recurrence (the derivative of an order-`o` spline is a
//! signed combination of order-`o - 1` splines). Nothing here uses finite
//! differences.
//!
//! Evaluation convention: a point lying exactly on an interior knot belongs
//! to the interval on its right, and the right end `b` belongs to the last
//! interval, so the last basis function attains 1 at `b`.

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

/// Clamped knot vector with uniform multiplicity `order` at both ends.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotVector {
    order: usize,
    distinct: Vec<f64>,
    full: Vec<f64>,
}

impl KnotVector {
    /// Builds a clamped knot vector from strictly increasing breakpoints.
    pub fn clamped(distinct: Vec<f64>, order: usize) -> Result<Self> {
        if order < 1 {
            return Err(Error::argument(format!("spline order must be >= 1, got {order}")));
        }
        if distinct.len() < 2 {
            return Err(Error::argument(format!(
                "need at least 2 distinct knots, got {}",
                distinct.len()
            )));
        }
        if distinct.iter().any(|v| !v.is_finite()) {
            return Err(Error::argument("knots must be finite"));
        }
        if distinct.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::argument("distinct knots must be strictly increasing"));
        }
        let a = distinct[0];
        let b = *distinct.last().unwrap();
        let mut full = Vec::with_capacity(distinct.len() + 2 * (order - 1));
        full.extend(std::iter::repeat_n(a, order - 1));
        full.extend_from_slice(&distinct);
        full.extend(std::iter::repeat_n(b, order - 1));
        Ok(Self { order, distinct, full })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn degree(&self) -> usize {
        self.order - 1
    }

    pub fn distinct_knots(&self) -> &[f64] {
        &self.distinct
    }

    pub fn full_knots(&self) -> &[f64] {
        &self.full
    }

    /// Number of basis functions, `k + o - 2`.
    pub fn basis_count(&self) -> usize {
        self.distinct.len() + self.order - 2
    }

    pub fn lower(&self) -> f64 {
        self.distinct[0]
    }

    pub fn upper(&self) -> f64 {
        *self.distinct.last().unwrap()
    }

    /// Index (into the full knot vector) of the knot interval containing `x`.
    fn span(&self, x: f64) -> usize {
        let k = self.distinct.len();
        // first i with distinct[i] > x, minus one, clamped to the last interval
        let i = self.distinct.partition_point(|&t| t <= x);
        let interval = i.saturating_sub(1).min(k - 2);
        interval + self.order - 1
    }

    fn check_point(&self, x: f64) -> Result<f64> {
        let (a, b) = (self.lower(), self.upper());
        let slack = 1e-12 * (b - a);
        if !x.is_finite() || x < a - slack || x > b + slack {
            return Err(Error::Domain { value: x, lower: a, upper: b });
        }
        Ok(x.clamp(a, b))
    }

    /// Evaluates the `order` potentially nonzero basis functions at `x` and
    /// their derivatives up to `max_deriv`.
    ///
    /// Returns the index of the first nonzero basis function; `out` receives
    /// `(max_deriv + 1) * order` values laid out derivative-major.
    pub fn eval_local(&self, x: f64, max_deriv: usize, out: &mut [f64]) -> Result<usize> {
        if max_deriv >= self.order {
            return Err(Error::DerivativeOrder { requested: max_deriv, order: self.order });
        }
        let x = self.check_point(x)?;
        let o = self.order;
        debug_assert!(out.len() >= (max_deriv + 1) * o);
        let span = self.span(x);
        let deg = o - 1;
        let t = &self.full;

        // ndu: upper triangle holds basis values, lower triangle knot differences
        let mut ndu = vec![0.0; o * o];
        let mut left = vec![0.0; o];
        let mut right = vec![0.0; o];
        ndu[0] = 1.0;
        for j in 1..=deg {
            left[j] = x - t[span + 1 - j];
            right[j] = t[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j * o + r] = right[r + 1] + left[j - r];
                let temp = ndu[r * o + (j - 1)] / ndu[j * o + r];
                ndu[r * o + j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j * o + j] = saved;
        }
        for j in 0..o {
            out[j] = ndu[j * o + deg];
        }

        let mut a = vec![0.0; 2 * o];
        for r in 0..o {
            let (mut s1, mut s2) = (0usize, 1usize);
            a[0] = 1.0;
            for k in 1..=max_deriv {
                let mut d = 0.0;
                let rk = r as isize - k as isize;
                let pk = (deg - k) as isize;
                if r >= k {
                    let v = a[s1 * o] / ndu[(pk as usize + 1) * o + rk as usize];
                    a[s2 * o] = v;
                    d = v * ndu[rk as usize * o + pk as usize];
                }
                let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
                let j2 = if (r as isize - 1) <= pk { k - 1 } else { deg - r };
                for j in j1..=j2 {
                    let idx = (rk + j as isize) as usize;
                    let v = (a[s1 * o + j] - a[s1 * o + j - 1]) / ndu[(pk as usize + 1) * o + idx];
                    a[s2 * o + j] = v;
                    d += v * ndu[idx * o + pk as usize];
                }
                if r as isize <= pk {
                    let v = -a[s1 * o + k - 1] / ndu[(pk as usize + 1) * o + r];
                    a[s2 * o + k] = v;
                    d += v * ndu[r * o + pk as usize];
                }
                out[k * o + r] = d;
                std::mem::swap(&mut s1, &mut s2);
            }
        }
        let mut factor = deg as f64;
        for k in 1..=max_deriv {
            for j in 0..o {
                out[k * o + j] *= factor;
            }
            factor *= (deg - k) as f64;
        }
        Ok(span - deg)
    }
}

/// `k` equally spaced distinct knots on `[a, b]`, clamped at order `o`.
pub fn make_uniform_knots(a: f64, b: f64, k: usize, o: usize) -> Result<KnotVector> {
    if !a.is_finite() || !b.is_finite() {
        return Err(Error::argument("knot bounds must be finite"));
    }
    if b <= a {
        return Err(Error::argument(format!("knot range is empty: [{a}, {b}]")));
    }
    if k < 2 {
        return Err(Error::argument(format!("need at least 2 knots, got {k}")));
    }
    let h = (b - a) / (k - 1) as f64;
    let mut distinct: Vec<f64> = (0..k).map(|i| a + h * i as f64).collect();
    distinct[k - 1] = b;
    KnotVector::clamped(distinct, o)
}

/// Dense `points.len() x basis_count` matrix of `d`-th derivatives.
pub fn eval_basis(kv: &KnotVector, points: &[f64], d: usize) -> Result<DenseMatrix> {
    if d >= kv.order() {
        return Err(Error::DerivativeOrder { requested: d, order: kv.order() });
    }
    let o = kv.order();
    let p = kv.basis_count();
    let mut m = DenseMatrix::zeros(points.len(), p);
    let mut buf = vec![0.0; (d + 1) * o];
    for (i, &x) in points.iter().enumerate() {
        let first = kv.eval_local(x, d, &mut buf)?;
        for j in 0..o {
            m[(i, first + j)] = buf[d * o + j];
        }
    }
    Ok(m)
}
