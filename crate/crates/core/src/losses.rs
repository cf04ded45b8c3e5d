//! Loss terms, their scalarization and analytic gradients.
//!
//! * `l2`: mean squared residual over the data.
//! * `lck`: mean squared jump of derivatives `0..=k` across the breakpoints.
//! * `le`: elastic strain energy `∫ f''(x)^2 dx`, evaluated in closed form.
//!
//! The scalarized objective is `α·lck + β·l2 + (1 − α − β)·le`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pp_model::{derivative_row, Breakpoints, Dataset, PiecewisePolynomial};

/// How the last segment relates to the first one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Wrap {
    /// No condition across `ξ_m` / `ξ_0`.
    Open,
    /// Derivatives `1..=k` wrap around; the value does not.
    Cyclic,
    /// Value and derivatives `1..=k` wrap around.
    Periodic,
}

impl std::str::FromStr for Wrap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "open" => Ok(Wrap::Open),
            "cyclic" => Ok(Wrap::Cyclic),
            "periodic" => Ok(Wrap::Periodic),
            other => Err(Error::invalid(format!("unknown continuity mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for Wrap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Wrap::Open => "open",
            Wrap::Cyclic => "cyclic",
            Wrap::Periodic => "periodic",
        })
    }
}

/// Continuity order `k` plus the wrap-around behaviour.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContinuityMode {
    pub wrap: Wrap,
    pub k: usize,
}

impl ContinuityMode {
    pub fn new(wrap: Wrap, k: usize) -> Self {
        Self { wrap, k }
    }

    pub fn open(k: usize) -> Self {
        Self::new(Wrap::Open, k)
    }

    pub fn cyclic(k: usize) -> Self {
        Self::new(Wrap::Cyclic, k)
    }

    pub fn periodic(k: usize) -> Self {
        Self::new(Wrap::Periodic, k)
    }

    pub fn wraps(&self) -> bool {
        self.wrap != Wrap::Open
    }

    /// Highest valid breakpoint index for `discontinuity` on `m` segments.
    fn last_breakpoint(&self, m: usize) -> usize {
        if self.wraps() {
            m
        } else {
            m - 1
        }
    }

    /// Every `(breakpoint, order)` pair the mode constrains, breakpoint in
    /// `1..=m` where `m` stands for the wrap-around joint `ξ_m → ξ_0`.
    pub fn constraints(&self, m: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity((m + 1) * (self.k + 1));
        for b in 1..m {
            out.extend((0..=self.k).map(|j| (b, j)));
        }
        if self.wraps() {
            let first = if self.wrap == Wrap::Cyclic { 1 } else { 0 };
            out.extend((first..=self.k).map(|j| (m, j)));
        }
        out
    }

    /// Divisor of the squared-jump sum: `m − 1` open, `m` when wrapping.
    pub fn normalizer(&self, m: usize) -> usize {
        if self.wraps() {
            m
        } else {
            m - 1
        }
    }
}

/// Objective weights `(α, β)`; the energy weight is `1 − α − β`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawWeights")]
pub struct ObjectiveWeights {
    alpha: f64,
    beta: f64,
}

#[derive(Deserialize)]
struct RawWeights {
    alpha: f64,
    beta: f64,
}

impl TryFrom<RawWeights> for ObjectiveWeights {
    type Error = Error;

    fn try_from(raw: RawWeights) -> Result<Self> {
        Self::new(raw.alpha, raw.beta)
    }
}

/// Slack on `α + β ≤ 1` so that decimal pairs like (0.7, 0.3) are accepted.
const WEIGHT_SUM_SLACK: f64 = 1e-12;

impl ObjectiveWeights {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha.is_finite() && beta.is_finite()) {
            return Err(Error::invalid("weights must be finite"));
        }
        if alpha < 0.0 || beta < 0.0 {
            return Err(Error::invalid(format!(
                "weights must be non-negative (alpha = {alpha}, beta = {beta})"
            )));
        }
        if alpha + beta > 1.0 + WEIGHT_SUM_SLACK {
            return Err(Error::invalid(format!(
                "alpha + beta must not exceed 1 (alpha = {alpha}, beta = {beta})"
            )));
        }
        Ok(Self { alpha, beta })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn energy_weight(&self) -> f64 {
        (1.0 - (self.alpha + self.beta)).max(0.0)
    }

    pub fn combine(&self, l2: f64, lck: f64, le: f64) -> f64 {
        self.alpha * lck + self.beta * l2 + self.energy_weight() * le
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l2: f64,
    pub lck: f64,
    pub le: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.l2.is_finite() && self.lck.is_finite() && self.le.is_finite() && self.total.is_finite()
    }
}

/// Mean squared residual `(1/n) Σ (f(x_i) − y_i)^2`.
pub fn loss_l2(pp: &PiecewisePolynomial, data: &Dataset) -> Result<f64> {
    let assignment = assign_segments(pp.breakpoints(), data)?;
    Ok(l2_with_assignment(pp, data, &assignment))
}

fn assign_segments(bp: &Breakpoints, data: &Dataset) -> Result<Vec<usize>> {
    if data.is_empty() {
        return Err(Error::invalid("dataset is empty"));
    }
    data.xs().iter().map(|&x| bp.segment_index(x)).collect()
}

fn l2_with_assignment(pp: &PiecewisePolynomial, data: &Dataset, assignment: &[usize]) -> f64 {
    let sum: f64 = data
        .points()
        .zip(assignment)
        .map(|((x, y), &s)| {
            let r = pp.eval_segment(s, x, 0) - y;
            r * r
        })
        .sum();
    sum / data.len() as f64
}

/// `Δ_{b,j} = p_{b+1}^{(j)}(ξ_b) − p_b^{(j)}(ξ_b)` in 1-based segment terms.
///
/// `breakpoint` ranges over `1..=m-1` (open) or `1..=m` (wrapping); `b = m`
/// compares the first segment at `ξ_0` with the last one at `ξ_m`.
pub fn discontinuity(
    pp: &PiecewisePolynomial,
    breakpoint: usize,
    order: usize,
    mode: ContinuityMode,
) -> Result<f64> {
    let m = pp.segment_count();
    let hi = mode.last_breakpoint(m);
    if breakpoint < 1 || breakpoint > hi {
        return Err(Error::IndexOutOfRange {
            index: breakpoint,
            lo: 1,
            hi,
        });
    }
    Ok(jump(pp, breakpoint, order))
}

fn jump(pp: &PiecewisePolynomial, breakpoint: usize, order: usize) -> f64 {
    let m = pp.segment_count();
    let xi = pp.breakpoints().as_slice();
    if breakpoint < m {
        pp.eval_segment(breakpoint, xi[breakpoint], order)
            - pp.eval_segment(breakpoint - 1, xi[breakpoint], order)
    } else {
        pp.eval_segment(0, xi[0], order) - pp.eval_segment(m - 1, xi[m], order)
    }
}

/// Mean squared discontinuity over all constrained `(breakpoint, order)` pairs.
/// A single open segment has no joints and yields 0.
pub fn loss_ck(pp: &PiecewisePolynomial, mode: ContinuityMode) -> f64 {
    let m = pp.segment_count();
    let denom = mode.normalizer(m);
    if denom == 0 {
        return 0.0;
    }
    let sum: f64 = mode
        .constraints(m)
        .into_iter()
        .map(|(b, j)| {
            let d = jump(pp, b, j);
            d * d
        })
        .sum();
    sum / denom as f64
}

/// Entry `(j, k)` of the energy Gram matrix on `[a, b]`:
/// `∫_a^b j(j−1)x^{j−2} · k(k−1)x^{k−2} dx`.
fn energy_kernel_entry(j: usize, k: usize, a: f64, b: f64) -> f64 {
    if j < 2 || k < 2 {
        return 0.0;
    }
    let p = (j + k - 3) as i32;
    let w = (j * k * (j - 1) * (k - 1)) as f64 / p as f64;
    w * (b.powi(p) - a.powi(p))
}

/// Elastic strain energy `∫ f''^2` in closed form, summed over segments.
pub fn loss_energy(pp: &PiecewisePolynomial) -> f64 {
    let d = pp.degree();
    let c = pp.coeffs();
    let mut total = 0.0;
    for s in 0..pp.segment_count() {
        let (a, b) = pp.breakpoints().interval(s);
        let mut seg = 0.0;
        for j in 2..=d {
            for k in 2..=d {
                seg += c[(s, j)] * c[(s, k)] * energy_kernel_entry(j, k, a, b);
            }
        }
        total += seg;
    }
    total
}

/// Per-segment energy Gram matrices, built once per breakpoint vector.
#[derive(Debug, Clone)]
pub struct EnergyKernel {
    degree: usize,
    blocks: Vec<DMatrix<f64>>,
}

impl EnergyKernel {
    pub fn new(bp: &Breakpoints, degree: usize) -> Self {
        let blocks = (0..bp.segment_count())
            .map(|s| {
                let (a, b) = bp.interval(s);
                DMatrix::from_fn(degree + 1, degree + 1, |j, k| {
                    energy_kernel_entry(j, k, a, b)
                })
            })
            .collect();
        Self { degree, blocks }
    }

    pub fn energy(&self, coeffs: &DMatrix<f64>) -> f64 {
        let d = self.degree;
        let mut total = 0.0;
        for (s, kern) in self.blocks.iter().enumerate() {
            let mut seg = 0.0;
            for j in 2..=d {
                for k in 2..=d {
                    seg += coeffs[(s, j)] * coeffs[(s, k)] * kern[(j, k)];
                }
            }
            total += seg;
        }
        total
    }

    /// Adds `weight · ∂le/∂c` to `grad`.
    pub fn add_gradient(&self, coeffs: &DMatrix<f64>, weight: f64, grad: &mut DMatrix<f64>) {
        let d = self.degree;
        for (s, kern) in self.blocks.iter().enumerate() {
            for j in 2..=d {
                let mut acc = 0.0;
                for k in 2..=d {
                    acc += kern[(j, k)] * coeffs[(s, k)];
                }
                grad[(s, j)] += 2.0 * weight * acc;
            }
        }
    }
}

/// Composite Simpson quadrature of `∫ f''^2` with `subdivisions` panels per
/// segment, sharpened by one Richardson step against `2·subdivisions` panels
/// (the composite Boole rule). Exact for integrands up to degree 5.
pub fn energy_quadrature(pp: &PiecewisePolynomial, subdivisions: usize) -> Result<f64> {
    if subdivisions == 0 {
        return Err(Error::invalid("subdivisions must be at least 1"));
    }
    let mut total = 0.0;
    for s in 0..pp.segment_count() {
        let (a, b) = pp.breakpoints().interval(s);
        let integrand = |x: f64| {
            let f2 = pp.eval_segment(s, x, 2);
            f2 * f2
        };
        let coarse = simpson(&integrand, a, b, subdivisions);
        let fine = simpson(&integrand, a, b, 2 * subdivisions);
        total += (16.0 * fine - coarse) / 15.0;
    }
    Ok(total)
}

/// Composite Simpson rule with `panels` panels (2·panels + 1 nodes).
pub fn simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let nodes = 2 * panels;
    let h = (b - a) / nodes as f64;
    let mut sum = f(a) + f(b);
    for q in 1..nodes {
        let w = if q % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(a + h * q as f64);
    }
    sum * h / 3.0
}

/// One continuity constraint, linearized: `Δ = right_row·c[right] − left_row·c[left]`.
#[derive(Debug, Clone)]
struct Joint {
    breakpoint: usize,
    order: usize,
    left: usize,
    right: usize,
    left_row: Vec<f64>,
    right_row: Vec<f64>,
}

/// The scalarized objective for fixed data, breakpoints, mode and weights,
/// with everything that does not depend on the coefficients precomputed.
#[derive(Debug, Clone)]
pub struct Objective<'a> {
    data: &'a Dataset,
    breakpoints: Breakpoints,
    degree: usize,
    mode: ContinuityMode,
    weights: ObjectiveWeights,
    assignment: Vec<usize>,
    powers: Vec<Vec<f64>>,
    joints: Vec<Joint>,
    kernel: EnergyKernel,
}

impl<'a> Objective<'a> {
    pub fn new(
        data: &'a Dataset,
        breakpoints: Breakpoints,
        degree: usize,
        mode: ContinuityMode,
        weights: ObjectiveWeights,
    ) -> Result<Self> {
        let assignment = assign_segments(&breakpoints, data)?;
        let powers = data
            .xs()
            .iter()
            .map(|&x| derivative_row(degree, x, 0))
            .collect();
        let m = breakpoints.segment_count();
        let xi = breakpoints.as_slice();
        let joints = mode
            .constraints(m)
            .into_iter()
            .map(|(b, j)| {
                let (left, right, x_left, x_right) = if b < m {
                    (b - 1, b, xi[b], xi[b])
                } else {
                    (m - 1, 0, xi[m], xi[0])
                };
                Joint {
                    breakpoint: b,
                    order: j,
                    left,
                    right,
                    left_row: derivative_row(degree, x_left, j),
                    right_row: derivative_row(degree, x_right, j),
                }
            })
            .collect();
        let kernel = EnergyKernel::new(&breakpoints, degree);
        Ok(Self {
            data,
            breakpoints,
            degree,
            mode,
            weights,
            assignment,
            powers,
            joints,
            kernel,
        })
    }

    pub fn breakpoints(&self) -> &Breakpoints {
        &self.breakpoints
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn mode(&self) -> ContinuityMode {
        self.mode
    }

    pub fn weights(&self) -> ObjectiveWeights {
        self.weights
    }

    pub fn data(&self) -> &Dataset {
        self.data
    }

    fn check_shape(&self, coeffs: &DMatrix<f64>) {
        assert_eq!(
            coeffs.shape(),
            (self.breakpoints.segment_count(), self.degree + 1),
            "coefficient matrix shape does not match the objective"
        );
    }

    fn model(&self, coeffs: &DMatrix<f64>) -> Result<PiecewisePolynomial> {
        PiecewisePolynomial::new(self.breakpoints.clone(), coeffs.clone())
    }

    /// All three losses and the scalarized total. Values agree bitwise with
    /// [`loss_l2`], [`loss_ck`] and [`loss_energy`] on the same model.
    pub fn evaluate(&self, coeffs: &DMatrix<f64>) -> LossBreakdown {
        self.check_shape(coeffs);
        let l2 = self.l2(coeffs);
        let lck = self.lck(coeffs);
        let le = self.kernel.energy(coeffs);
        LossBreakdown {
            l2,
            lck,
            le,
            total: self.weights.combine(l2, lck, le),
        }
    }

    fn l2(&self, coeffs: &DMatrix<f64>) -> f64 {
        let sum: f64 = self
            .data
            .points()
            .zip(&self.assignment)
            .map(|((x, y), &s)| {
                let r = horner(coeffs, s, self.degree, x) - y;
                r * r
            })
            .sum();
        sum / self.data.len() as f64
    }

    fn joint_jump(&self, joint: &Joint, coeffs: &DMatrix<f64>) -> f64 {
        let xi = self.breakpoints.as_slice();
        let m = self.breakpoints.segment_count();
        let (x_left, x_right) = if joint.breakpoint < m {
            (xi[joint.breakpoint], xi[joint.breakpoint])
        } else {
            (xi[m], xi[0])
        };
        horner_deriv(coeffs, joint.right, self.degree, x_right, joint.order)
            - horner_deriv(coeffs, joint.left, self.degree, x_left, joint.order)
    }

    fn lck(&self, coeffs: &DMatrix<f64>) -> f64 {
        let denom = self.mode.normalizer(self.breakpoints.segment_count());
        if denom == 0 {
            return 0.0;
        }
        let sum: f64 = self
            .joints
            .iter()
            .map(|jt| {
                let d = self.joint_jump(jt, coeffs);
                d * d
            })
            .sum();
        sum / denom as f64
    }

    /// `∂ total / ∂ c[s, j]` for every coefficient.
    pub fn gradient(&self, coeffs: &DMatrix<f64>) -> DMatrix<f64> {
        self.check_shape(coeffs);
        let mut grad = DMatrix::zeros(coeffs.nrows(), coeffs.ncols());
        let d = self.degree;

        let w2 = self.weights.beta();
        if w2 != 0.0 {
            let scale = 2.0 * w2 / self.data.len() as f64;
            for (((x, y), &s), pw) in self.data.points().zip(&self.assignment).zip(&self.powers) {
                let r = horner(coeffs, s, d, x) - y;
                for l in 0..=d {
                    grad[(s, l)] += scale * r * pw[l];
                }
            }
        }

        let wck = self.weights.alpha();
        let denom = self.mode.normalizer(self.breakpoints.segment_count());
        if wck != 0.0 && denom > 0 {
            let scale = 2.0 * wck / denom as f64;
            for jt in &self.joints {
                let delta = self.joint_jump(jt, coeffs);
                for l in 0..=d {
                    grad[(jt.right, l)] += scale * delta * jt.right_row[l];
                    grad[(jt.left, l)] -= scale * delta * jt.left_row[l];
                }
            }
        }

        let we = self.weights.energy_weight();
        if we != 0.0 {
            self.kernel.add_gradient(coeffs, we, &mut grad);
        }
        grad
    }

    pub fn evaluate_with_gradient(&self, coeffs: &DMatrix<f64>) -> (LossBreakdown, DMatrix<f64>) {
        (self.evaluate(coeffs), self.gradient(coeffs))
    }

    /// Wraps `coeffs` into a model on this objective's breakpoints.
    pub fn to_model(&self, coeffs: &DMatrix<f64>) -> Result<PiecewisePolynomial> {
        self.model(coeffs)
    }
}

// Same arithmetic as `PiecewisePolynomial::eval_segment`, so both paths agree bitwise.
fn horner_deriv(coeffs: &DMatrix<f64>, s: usize, d: usize, x: f64, r: usize) -> f64 {
    if r > d {
        return 0.0;
    }
    let mut acc = 0.0;
    for l in (r..=d).rev() {
        acc = acc * x + coeffs[(s, l)] * crate::pp_model::falling_factorial(l, r);
    }
    acc
}

fn horner(coeffs: &DMatrix<f64>, s: usize, d: usize, x: f64) -> f64 {
    horner_deriv(coeffs, s, d, x, 0)
}

/// All loss terms of `pp` plus the weighted total.
pub fn scalarized(
    pp: &PiecewisePolynomial,
    data: &Dataset,
    mode: ContinuityMode,
    weights: ObjectiveWeights,
) -> Result<LossBreakdown> {
    let objective = Objective::new(data, pp.breakpoints().clone(), pp.degree(), mode, weights)?;
    Ok(objective.evaluate(pp.coeffs()))
}

/// Analytic gradient of the scalarized total with respect to every coefficient.
pub fn gradient(
    pp: &PiecewisePolynomial,
    data: &Dataset,
    mode: ContinuityMode,
    weights: ObjectiveWeights,
) -> Result<DMatrix<f64>> {
    let objective = Objective::new(data, pp.breakpoints().clone(), pp.degree(), mode, weights)?;
    Ok(objective.gradient(pp.coeffs()))
}
