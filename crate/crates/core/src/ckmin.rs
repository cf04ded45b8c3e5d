//! Projection onto exact `C^k` continuity by local Hermite corrections.
//!
//! Every constrained joint splits its jump `Δ_j` in half: the segment to the
//! left receives `+Δ_j/2` on its `j`-th derivative at its right end, the
//! segment to the right receives `−Δ_j/2` at its left end. The corrections
//! are degree `2k+1` polynomials whose derivatives `0..=k` vanish at the
//! opposite end of the segment, so the two ends of a segment never interact
//! and a single pass over all joints, computed from the input model, is exact
//! up to rounding. The pass is repeated on the rounding residue while that
//! keeps shrinking.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{discontinuity, loss_energy, loss_l2, ContinuityMode};
use crate::pp_model::{falling_factorial, local_to_global, Dataset, PiecewisePolynomial, Side};

/// Degree-`2k+1` Hermite basis on the unit interval with derivatives
/// `0..=k` prescribed at both ends: derivative `j` equals 1 at `end`, every
/// other prescribed value is 0. Returned as local power-basis coefficients.
fn unit_hermite(k: usize, end: Side) -> Vec<Vec<f64>> {
    let n = 2 * k + 2;
    // rows 0..=k: derivatives at t = 0; rows k+1..: derivatives at t = 1
    let system = DMatrix::from_fn(n, n, |row, col| {
        let (t, r) = if row <= k {
            (0.0f64, row)
        } else {
            (1.0, row - k - 1)
        };
        if col < r {
            0.0
        } else {
            falling_factorial(col, r) * t.powi((col - r) as i32)
        }
    });
    let lu = system.lu();
    (0..=k)
        .map(|j| {
            let mut rhs = DVector::zeros(n);
            let row = match end {
                Side::Left => j,
                Side::Right => k + 1 + j,
            };
            rhs[row] = 1.0;
            let sol = lu
                .solve(&rhs)
                .expect("Hermite system on the unit interval is regular");
            sol.iter().copied().collect()
        })
        .collect()
}

/// Hermite basis `H_0..H_k` on `[a, b]`, in global power-basis coefficients
/// (each of length `2k+2`), prescribed at the given end:
///
/// * `Side::Right`: `H_j^{(r)}(a) = 0` and `H_j^{(r)}(b) = δ_{rj}` for `r ≤ k`.
/// * `Side::Left`: the mirror image, `H_j^{(r)}(a) = δ_{rj}`, `H_j^{(r)}(b) = 0`.
pub fn hermite_basis(k: usize, a: f64, b: f64, end: Side) -> Result<Vec<Vec<f64>>> {
    if !(a.is_finite() && b.is_finite()) || b <= a {
        return Err(Error::invalid(format!("degenerate interval [{a}, {b}]")));
    }
    let h = b - a;
    // H(x) = h^j · Ĥ((x − a) / h) carries the unit-interval conditions over.
    Ok(unit_hermite(k, end)
        .into_iter()
        .enumerate()
        .map(|(j, local)| {
            let scaled: Vec<f64> = local.iter().map(|c| c * h.powi(j as i32)).collect();
            local_to_global(&scaled, a, h, 2 * k + 2)
        })
        .collect())
}

/// "Step" basis: zero to order `k` at `a`, unit `j`-th derivative at `b`.
pub fn hermite_step_basis(k: usize, a: f64, b: f64) -> Result<Vec<Vec<f64>>> {
    hermite_basis(k, a, b, Side::Right)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrectionReport {
    pub max_abs_delta_before: f64,
    pub max_abs_delta_after: f64,
    /// `None` when no data was supplied.
    pub l2_before: Option<f64>,
    pub l2_after: Option<f64>,
    pub le_before: f64,
    pub le_after: f64,
    /// `max(1, max|c| · max|ξ|^d)` of the corrected model.
    pub scale: f64,
}

/// Magnitude against which residual jumps are judged.
pub fn continuity_scale(pp: &PiecewisePolynomial) -> f64 {
    let max_coeff = pp.coeffs().iter().fold(0.0f64, |acc, c| acc.max(c.abs()));
    let max_xi = pp
        .breakpoints()
        .as_slice()
        .iter()
        .fold(0.0f64, |acc, x| acc.max(x.abs()));
    (max_coeff * max_xi.powi(pp.degree() as i32)).max(1.0)
}

/// Largest `|Δ_{b,j}|` over the joints the mode constrains (0 if none).
pub fn max_abs_discontinuity(pp: &PiecewisePolynomial, mode: ContinuityMode) -> f64 {
    mode.constraints(pp.segment_count())
        .into_iter()
        .map(|(b, j)| {
            discontinuity(pp, b, j, mode)
                .expect("constraint indices are in range")
                .abs()
        })
        .fold(0.0, f64::max)
}

/// Projects `pp` onto `C^k` continuity (with wrap-around per `mode`).
///
/// Requires `degree >= 2k + 1`. Segments not adjacent to any jump keep their
/// coefficients bit for bit.
pub fn enforce_ck(
    pp: &PiecewisePolynomial,
    mode: ContinuityMode,
) -> Result<(PiecewisePolynomial, CorrectionReport)> {
    let k = mode.k;
    let d = pp.degree();
    if d < 2 * k + 1 {
        return Err(Error::Precondition(format!(
            "degree {d} cannot absorb C^{k} corrections (need degree >= {})",
            2 * k + 1
        )));
    }
    // Rounding in the global basis leaves a residue. Passes are repeated while
    // they still shrink it; stopping at the first one that does not makes a
    // second projection return its input unchanged.
    let mut out = pp.clone();
    let mut residual = max_abs_discontinuity(pp, mode);
    for _ in 0..MAX_PASSES {
        if residual == 0.0 {
            break;
        }
        let next = correction_pass(&out, mode)?;
        let next_residual = max_abs_discontinuity(&next, mode);
        if next_residual >= residual {
            break;
        }
        out = next;
        residual = next_residual;
    }

    let report = CorrectionReport {
        max_abs_delta_before: max_abs_discontinuity(pp, mode),
        max_abs_delta_after: max_abs_discontinuity(&out, mode),
        l2_before: None,
        l2_after: None,
        le_before: loss_energy(pp),
        le_after: loss_energy(&out),
        scale: continuity_scale(&out),
    };
    Ok((out, report))
}

const MAX_PASSES: usize = 16;

/// One simultaneous correction pass with all jumps taken from `pp`.
fn correction_pass(pp: &PiecewisePolynomial, mode: ContinuityMode) -> Result<PiecewisePolynomial> {
    let k = mode.k;
    let m = pp.segment_count();
    let xi = pp.breakpoints().as_slice();

    // jumps grouped by joint
    let mut joints: Vec<(usize, Vec<f64>)> = Vec::new();
    for (b, j) in mode.constraints(m) {
        let delta = discontinuity(pp, b, j, mode)?;
        match joints.last_mut() {
            Some((last, deltas)) if *last == b => deltas[j] = delta,
            _ => {
                let mut deltas = vec![0.0; k + 1];
                deltas[j] = delta;
                joints.push((b, deltas));
            }
        }
    }

    let mut coeffs = pp.coeffs().clone();
    for (b, deltas) in &joints {
        if deltas.iter().all(|&v| v == 0.0) {
            continue;
        }
        let (left, right) = if *b < m { (b - 1, *b) } else { (m - 1, 0) };

        let (a, e) = (xi[left], xi[left + 1]);
        let raise = hermite_basis(k, a, e, Side::Right)?;
        add_combination(&mut coeffs, left, &raise, deltas, 0.5);

        let (a, e) = (xi[right], xi[right + 1]);
        let lower = hermite_basis(k, a, e, Side::Left)?;
        add_combination(&mut coeffs, right, &lower, deltas, -0.5);
    }
    pp.with_coeffs(coeffs)
}

/// [`enforce_ck`] plus the approximation loss before and after on `data`.
pub fn enforce_ck_on(
    pp: &PiecewisePolynomial,
    mode: ContinuityMode,
    data: &Dataset,
) -> Result<(PiecewisePolynomial, CorrectionReport)> {
    let (out, mut report) = enforce_ck(pp, mode)?;
    report.l2_before = Some(loss_l2(pp, data)?);
    report.l2_after = Some(loss_l2(&out, data)?);
    Ok((out, report))
}

fn add_combination(
    coeffs: &mut DMatrix<f64>,
    segment: usize,
    basis: &[Vec<f64>],
    weights: &[f64],
    factor: f64,
) {
    for (poly, &w) in basis.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        for (l, &c) in poly.iter().enumerate() {
            coeffs[(segment, l)] += factor * w * c;
        }
    }
}
