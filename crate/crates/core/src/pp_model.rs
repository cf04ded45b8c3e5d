//! Piecewise polynomials in the global power basis.
//!
//! Segment `s` (0-based) covers `[ξ_s, ξ_{s+1}]` and carries the polynomial
//! `p_s(x) = Σ_j c[s, j] x^j` with `x` in global coordinates, so the same
//! coefficient row evaluates identically wherever it is used. Intervals are
//! half-open `[ξ_s, ξ_{s+1})` except the last one, which is closed.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Strictly increasing breakpoints `ξ_0 < ξ_1 < … < ξ_m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Breakpoints(Vec<f64>);

impl Breakpoints {
    pub fn new(xi: Vec<f64>) -> Result<Self> {
        if xi.len() < 2 {
            return Err(Error::invalid("breakpoints need at least two entries"));
        }
        if xi.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("breakpoints must be finite"));
        }
        if xi.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("breakpoints must be strictly increasing"));
        }
        Ok(Self(xi))
    }

    /// `m` equal-width segments over `[lo, hi]`. The end points are exact.
    pub fn uniform(lo: f64, hi: f64, m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::invalid("segment count must be at least 1"));
        }
        let width = hi - lo;
        let mut xi: Vec<f64> = (0..=m).map(|i| lo + width * i as f64 / m as f64).collect();
        xi[m] = hi;
        Self::new(xi)
    }

    /// Breakpoints at the empirical quantiles `i/m` of the data abscissae
    /// (linear interpolation between order statistics).
    pub fn quantile(data: &Dataset, m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::invalid("segment count must be at least 1"));
        }
        let xs = data.xs();
        let n = xs.len();
        let xi: Vec<f64> = (0..=m)
            .map(|i| {
                let pos = (n - 1) as f64 * i as f64 / m as f64;
                let lo = pos.floor() as usize;
                let hi = (lo + 1).min(n - 1);
                let frac = pos - lo as f64;
                xs[lo] + frac * (xs[hi] - xs[lo])
            })
            .collect();
        Self::new(xi).map_err(|_| {
            Error::invalid(format!(
                "quantile placement of {m} segments yields repeated breakpoints; use fewer segments"
            ))
        })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn segment_count(&self) -> usize {
        self.0.len() - 1
    }

    pub fn start(&self) -> f64 {
        self.0[0]
    }

    pub fn end(&self) -> f64 {
        self.0[self.0.len() - 1]
    }

    /// Closed interval `[ξ_s, ξ_{s+1}]` of segment `s`.
    pub fn interval(&self, s: usize) -> (f64, f64) {
        (self.0[s], self.0[s + 1])
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.start() && x <= self.end()
    }

    /// 0-based index of the segment containing `x` under the half-open
    /// convention; `x = ξ_m` maps to the last segment.
    pub fn segment_index(&self, x: f64) -> Result<usize> {
        if !self.contains(x) {
            return Err(Error::Domain {
                x,
                lo: self.start(),
                hi: self.end(),
            });
        }
        // Number of breakpoints ξ_1..ξ_{m-1} that are <= x.
        let interior = &self.0[1..self.0.len() - 1];
        Ok(interior.partition_point(|&b| b <= x))
    }
}

impl TryFrom<Vec<f64>> for Breakpoints {
    type Error = Error;

    fn try_from(xi: Vec<f64>) -> Result<Self> {
        Self::new(xi)
    }
}

impl From<Breakpoints> for Vec<f64> {
    fn from(bp: Breakpoints) -> Self {
        bp.0
    }
}

/// Which end of a segment a one-sided boundary evaluation refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// `l! / (l - r)!`, zero when `r > l`.
pub fn falling_factorial(l: usize, r: usize) -> f64 {
    if r > l {
        return 0.0;
    }
    ((l - r + 1)..=l).fold(1.0, |acc, v| acc * v as f64)
}

/// r-th derivative of `Σ_j coeffs[j] x^j` at `x` (Horner on the differentiated
/// coefficients).
pub fn eval_monomial(coeffs: &[f64], x: f64, r: usize) -> f64 {
    let d = coeffs.len();
    if r >= d {
        return 0.0;
    }
    let mut acc = 0.0;
    for l in (r..d).rev() {
        acc = acc * x + coeffs[l] * falling_factorial(l, r);
    }
    acc
}

/// The row vector `[∂^r/∂x^r x^l]_{l=0..=degree}` at `x`, i.e. the linear map
/// from a coefficient row to its r-th derivative at `x`.
pub fn derivative_row(degree: usize, x: f64, r: usize) -> Vec<f64> {
    (0..=degree)
        .map(|l| {
            if l < r {
                0.0
            } else {
                falling_factorial(l, r) * x.powi((l - r) as i32)
            }
        })
        .collect()
}

/// Expands `Σ_q local[q] ((x - shift) / scale)^q` into global power-basis
/// coefficients of length `len` (`len >= local.len()`).
pub fn local_to_global(local: &[f64], shift: f64, scale: f64, len: usize) -> Vec<f64> {
    debug_assert!(len >= local.len());
    let mut out = vec![0.0; len];
    // binom[l] holds C(q, l) for the current q.
    let mut binom = vec![0.0; local.len().max(1)];
    for (q, &cq) in local.iter().enumerate() {
        for l in (1..=q).rev() {
            binom[l] += binom[l - 1];
        }
        binom[0] = 1.0;
        if q > 0 {
            binom[q] = 1.0;
        }
        if cq == 0.0 {
            continue;
        }
        let inv = scale.powi(-(q as i32));
        for (l, slot) in out.iter_mut().enumerate().take(q + 1) {
            *slot += cq * inv * binom[l] * (-shift).powi((q - l) as i32);
        }
    }
    out
}

/// A piecewise polynomial: breakpoints, degree and an `m × (d+1)` coefficient
/// matrix in the global power basis.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewisePolynomial {
    breakpoints: Breakpoints,
    degree: usize,
    coeffs: DMatrix<f64>,
}

impl PiecewisePolynomial {
    pub fn new(breakpoints: Breakpoints, coeffs: DMatrix<f64>) -> Result<Self> {
        let m = breakpoints.segment_count();
        if coeffs.nrows() != m {
            return Err(Error::invalid(format!(
                "coefficient matrix has {} rows, expected one per segment ({m})",
                coeffs.nrows()
            )));
        }
        if coeffs.ncols() == 0 {
            return Err(Error::invalid(
                "coefficient matrix needs at least one column",
            ));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("coefficients must be finite"));
        }
        let degree = coeffs.ncols() - 1;
        Ok(Self {
            breakpoints,
            degree,
            coeffs,
        })
    }

    /// Builds from one coefficient row per segment (all rows the same length).
    pub fn from_rows(breakpoints: Breakpoints, rows: &[Vec<f64>]) -> Result<Self> {
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(Error::invalid("coefficient rows differ in length"));
        }
        let coeffs = DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]);
        Self::new(breakpoints, coeffs)
    }

    /// All-zero model.
    pub fn zeros(breakpoints: Breakpoints, degree: usize) -> Self {
        let m = breakpoints.segment_count();
        Self {
            breakpoints,
            degree,
            coeffs: DMatrix::zeros(m, degree + 1),
        }
    }

    pub fn breakpoints(&self) -> &Breakpoints {
        &self.breakpoints
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn segment_count(&self) -> usize {
        self.breakpoints.segment_count()
    }

    pub fn coeffs(&self) -> &DMatrix<f64> {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> DMatrix<f64> {
        self.coeffs
    }

    /// Coefficient row of segment `s`.
    pub fn row(&self, s: usize) -> Vec<f64> {
        self.coeffs.row(s).iter().copied().collect()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.segment_count()).map(|s| self.row(s)).collect()
    }

    /// Same breakpoints, new coefficients.
    pub fn with_coeffs(&self, coeffs: DMatrix<f64>) -> Result<Self> {
        Self::new(self.breakpoints.clone(), coeffs)
    }

    /// `f^{(r)}(x)` using the segment selected by the half-open convention.
    pub fn eval(&self, x: f64, r: usize) -> Result<f64> {
        let s = self.breakpoints.segment_index(x)?;
        Ok(self.eval_segment(s, x, r))
    }

    /// `p_s^{(r)}(x)` for an explicit segment, without any domain check.
    pub fn eval_segment(&self, s: usize, x: f64, r: usize) -> f64 {
        let d = self.degree;
        if r > d {
            return 0.0;
        }
        let mut acc = 0.0;
        for l in (r..=d).rev() {
            acc = acc * x + self.coeffs[(s, l)] * falling_factorial(l, r);
        }
        acc
    }

    /// One-sided value of segment `s` at its own left or right end.
    pub fn eval_at_boundary(&self, s: usize, side: Side, r: usize) -> Result<f64> {
        let m = self.segment_count();
        if s >= m {
            return Err(Error::IndexOutOfRange {
                index: s,
                lo: 0,
                hi: m - 1,
            });
        }
        let (a, b) = self.breakpoints.interval(s);
        let x = match side {
            Side::Left => a,
            Side::Right => b,
        };
        Ok(self.eval_segment(s, x, r))
    }

    /// `per_segment` uniformly spaced samples on every segment (both ends
    /// included), each evaluated on its own segment.
    pub fn dense_sample(&self, per_segment: usize) -> Result<Vec<SampleRow>> {
        if per_segment < 2 {
            return Err(Error::invalid("need at least two samples per segment"));
        }
        let mut rows = Vec::with_capacity(per_segment * self.segment_count());
        for s in 0..self.segment_count() {
            let (a, b) = self.breakpoints.interval(s);
            for q in 0..per_segment {
                let x = if q + 1 == per_segment {
                    b
                } else {
                    a + (b - a) * q as f64 / (per_segment - 1) as f64
                };
                rows.push(SampleRow {
                    x,
                    f: self.eval_segment(s, x, 0),
                    f1: self.eval_segment(s, x, 1),
                    f2: self.eval_segment(s, x, 2),
                });
            }
        }
        Ok(rows)
    }
}

/// One row of dense plot data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub x: f64,
    pub f: f64,
    pub f1: f64,
    pub f2: f64,
}

/// Points `(x, y)` sorted by ascending `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl Dataset {
    /// Sorts by `x` (stable) and rejects empty or non-finite input.
    pub fn new(mut points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("dataset is empty"));
        }
        if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(Error::invalid("dataset contains non-finite values"));
        }
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (xs, ys) = points.into_iter().unzip();
        Ok(Self { xs, ys })
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.xs.iter().copied().zip(self.ys.iter().copied())
    }

    pub fn x_range(&self) -> (f64, f64) {
        (self.xs[0], self.xs[self.xs.len() - 1])
    }

    /// Applies `x ↦ (x - offset) / scale` to every abscissa.
    pub fn map_x(&self, offset: f64, scale: f64) -> Self {
        Self {
            xs: self.xs.iter().map(|x| (x - offset) / scale).collect(),
            ys: self.ys.clone(),
        }
    }
}
