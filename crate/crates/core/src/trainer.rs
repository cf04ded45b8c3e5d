//! Full-batch gradient descent (AMSGrad, Adam or plain SGD) on the scalarized
//! objective, with patience-based early stopping and best-epoch restore.

use nalgebra::{DMatrix, DVector, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{ContinuityMode, LossBreakdown, Objective, ObjectiveWeights};
use crate::pp_model::{local_to_global, Breakpoints, Dataset, PiecewisePolynomial};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerVariant {
    Amsgrad,
    Adam,
    Sgd,
}

impl std::str::FromStr for OptimizerVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "amsgrad" => Ok(Self::Amsgrad),
            "adam" => Ok(Self::Adam),
            "sgd" => Ok(Self::Sgd),
            other => Err(Error::invalid(format!("unknown optimizer {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub variant: OptimizerVariant,
}

impl Default for OptimizerHyper {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
            variant: OptimizerVariant::Amsgrad,
        }
    }
}

impl OptimizerHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("moment decay rates must lie in [0, 1)"));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid("epsilon must be positive"));
        }
        Ok(())
    }
}

/// Moment estimates, shaped like the coefficient matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub first_moment: DMatrix<f64>,
    pub second_moment: DMatrix<f64>,
    pub second_moment_max: DMatrix<f64>,
    pub step_count: u64,
}

impl OptimizerState {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            first_moment: DMatrix::zeros(rows, cols),
            second_moment: DMatrix::zeros(rows, cols),
            second_moment_max: DMatrix::zeros(rows, cols),
            step_count: 0,
        }
    }
}

/// One optimizer update of `coeffs` in place.
///
/// AMSGrad follows its original formulation without bias correction; Adam
/// applies the usual `1 − β^t` corrections.
pub fn step(
    state: &mut OptimizerState,
    coeffs: &mut DMatrix<f64>,
    grads: &DMatrix<f64>,
    hyper: &OptimizerHyper,
) -> Result<()> {
    assert_eq!(coeffs.shape(), grads.shape(), "gradient shape mismatch");
    assert_eq!(
        coeffs.shape(),
        state.first_moment.shape(),
        "optimizer state shape mismatch"
    );
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::Divergence {
            epoch: state.step_count as usize,
            reason: "non-finite gradient".into(),
            history: Vec::new(),
        });
    }
    state.step_count += 1;
    let lr = hyper.learning_rate;
    let (b1, b2, eps) = (hyper.beta1, hyper.beta2, hyper.epsilon);

    match hyper.variant {
        OptimizerVariant::Sgd => {
            coeffs.zip_apply(grads, |c, g| *c -= lr * g);
        }
        OptimizerVariant::Amsgrad | OptimizerVariant::Adam => {
            let t = state.step_count as i32;
            let bias1 = 1.0 - b1.powi(t);
            let bias2 = 1.0 - b2.powi(t);
            for idx in 0..coeffs.len() {
                let g = grads[idx];
                let m = b1 * state.first_moment[idx] + (1.0 - b1) * g;
                let v = b2 * state.second_moment[idx] + (1.0 - b2) * g * g;
                state.first_moment[idx] = m;
                state.second_moment[idx] = v;
                let update = if hyper.variant == OptimizerVariant::Amsgrad {
                    let vmax = state.second_moment_max[idx].max(v);
                    state.second_moment_max[idx] = vmax;
                    lr * m / (vmax.sqrt() + eps)
                } else {
                    lr * (m / bias1) / ((v / bias2).sqrt() + eps)
                };
                coeffs[idx] -= update;
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitStrategy {
    PerSegmentLsq,
    Zeros,
}

impl std::str::FromStr for InitStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_segment_lsq" | "lsq" => Ok(Self::PerSegmentLsq),
            "zeros" => Ok(Self::Zeros),
            other => Err(Error::invalid(format!("unknown init strategy {other:?}"))),
        }
    }
}

/// Where breakpoints go when a fit places them itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    /// Equal-width segments over `[x_1, x_n]`.
    #[default]
    Uniform,
    /// Breakpoints at data quantiles.
    Quantile,
}

impl Placement {
    pub fn breakpoints(&self, data: &Dataset, segments: usize) -> Result<Breakpoints> {
        match self {
            Placement::Uniform => {
                let (lo, hi) = data.x_range();
                Breakpoints::uniform(lo, hi, segments)
            }
            Placement::Quantile => Breakpoints::quantile(data, segments),
        }
    }
}

impl std::str::FromStr for Placement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "quantile" => Ok(Self::Quantile),
            other => Err(Error::invalid(format!(
                "unknown breakpoint placement {other:?}"
            ))),
        }
    }
}

/// Relative singular-value cutoff of the per-segment least-squares solve.
pub const LSQ_DAMPING: f64 = 1e-8;

/// Local least-squares coefficients below this fraction of the largest one
/// are treated as zero.
pub const LSQ_COEFF_FLOOR: f64 = 1e-12;

/// Initial coefficients for a fit.
///
/// `PerSegmentLsq` fits each segment to its own points (half-open
/// assignment) in centered local coordinates and expands the result to the
/// global basis. Segments with at most `d` points get the constant mean of
/// their `y` values, empty segments get zeros.
pub fn init_coeffs(
    data: &Dataset,
    bp: &Breakpoints,
    degree: usize,
    strategy: InitStrategy,
) -> Result<DMatrix<f64>> {
    let m = bp.segment_count();
    let mut coeffs = DMatrix::zeros(m, degree + 1);
    if strategy == InitStrategy::Zeros {
        return Ok(coeffs);
    }

    let mut buckets: Vec<Vec<(f64, f64)>> = vec![Vec::new(); m];
    for (x, y) in data.points() {
        buckets[bp.segment_index(x)?].push((x, y));
    }
    for (s, points) in buckets.iter().enumerate() {
        if points.is_empty() {
            continue;
        }
        if points.len() <= degree {
            coeffs[(s, 0)] = points.iter().map(|p| p.1).sum::<f64>() / points.len() as f64;
            continue;
        }
        let (a, b) = bp.interval(s);
        let center = 0.5 * (a + b);
        let half = 0.5 * (b - a);
        let local = local_lsq(points, center, half, degree);
        let global = local_to_global(&local, center, half, degree + 1);
        for (l, c) in global.into_iter().enumerate() {
            coeffs[(s, l)] = c;
        }
    }
    Ok(coeffs)
}

fn local_lsq(points: &[(f64, f64)], center: f64, half: f64, degree: usize) -> Vec<f64> {
    let n = points.len();
    let design = DMatrix::from_fn(n, degree + 1, |i, j| {
        ((points[i].0 - center) / half).powi(j as i32)
    });
    let rhs = DVector::from_iterator(n, points.iter().map(|p| p.1));
    let svd = SVD::new(design, true, true);
    let cutoff = LSQ_DAMPING * svd.singular_values.max();
    let sol = svd
        .solve(&rhs, cutoff)
        .expect("both singular vector sets were computed");
    // Coefficients at the rounding level of the solve would be amplified by
    // up to (2/width)^d in the global expansion; they are zeroed instead.
    let floor = LSQ_COEFF_FLOOR * sol.amax();
    sol.iter()
        .map(|&c| if c.abs() <= floor { 0.0 } else { c })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub degree: usize,
    pub segments: usize,
    pub mode: ContinuityMode,
    pub weights: ObjectiveWeights,
    pub epochs: usize,
    pub patience: usize,
    pub hyper: OptimizerHyper,
    pub init: InitStrategy,
    #[serde(default)]
    pub placement: Placement,
    /// Carried into every artifact derived from this config; the two init
    /// strategies are deterministic and do not draw from it.
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            degree: 7,
            segments: 16,
            mode: ContinuityMode::periodic(2),
            weights: ObjectiveWeights::new(0.1, 0.9).expect("valid default weights"),
            epochs: 1000,
            patience: 100,
            hyper: OptimizerHyper::default(),
            init: InitStrategy::PerSegmentLsq,
            placement: Placement::Uniform,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.segments == 0 {
            return Err(Error::invalid("segment count must be at least 1"));
        }
        if self.mode.k > self.degree {
            return Err(Error::invalid(format!(
                "continuity order k = {} exceeds degree {}",
                self.mode.k, self.degree
            )));
        }
        self.hyper.validate()
    }

    /// Degree requirement of the continuity projection run after fitting.
    pub fn validate_for_projection(&self) -> Result<()> {
        self.validate()?;
        if self.degree < 2 * self.mode.k + 1 {
            return Err(Error::invalid(format!(
                "degree {} is below 2k+1 = {} required by the continuity projection",
                self.degree,
                2 * self.mode.k + 1
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub model: PiecewisePolynomial,
    pub history: Vec<LossBreakdown>,
    /// 0-based index into `history` of the restored coefficients.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl FitResult {
    pub fn best(&self) -> &LossBreakdown {
        &self.history[self.best_epoch]
    }

    pub fn epochs_run(&self) -> usize {
        self.history.len()
    }
}

/// Fits on breakpoints placed according to `config.placement`.
pub fn fit(data: &Dataset, config: &FitConfig) -> Result<FitResult> {
    let bp = config.placement.breakpoints(data, config.segments)?;
    fit_with_breakpoints(data, bp, config)
}

/// Each epoch evaluates the losses at the current coefficients, records them,
/// checks early stopping, then takes one optimizer step. Training stops after
/// `patience + 1` consecutive epochs without a strict decrease of the total.
pub fn fit_with_breakpoints(
    data: &Dataset,
    bp: Breakpoints,
    config: &FitConfig,
) -> Result<FitResult> {
    config.validate()?;
    if bp.segment_count() != config.segments {
        return Err(Error::invalid(
            "breakpoints disagree with the configured segment count",
        ));
    }
    let objective = Objective::new(data, bp.clone(), config.degree, config.mode, config.weights)?;
    let mut coeffs = init_coeffs(data, &bp, config.degree, config.init)?;
    let mut state = OptimizerState::new(coeffs.nrows(), coeffs.ncols());

    let mut history = Vec::with_capacity(config.epochs);
    let mut best_total = f64::INFINITY;
    let mut best_coeffs = coeffs.clone();
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut stopped_early = false;

    for epoch in 0..config.epochs {
        let (losses, grads) = objective.evaluate_with_gradient(&coeffs);
        if !losses.is_finite() {
            return Err(Error::Divergence {
                epoch,
                reason: "non-finite loss".into(),
                history,
            });
        }
        history.push(losses);
        if losses.total < best_total {
            best_total = losses.total;
            best_coeffs.copy_from(&coeffs);
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > config.patience {
                stopped_early = true;
                break;
            }
        }
        if epoch + 1 == config.epochs {
            break;
        }
        if let Err(Error::Divergence { reason, .. }) =
            step(&mut state, &mut coeffs, &grads, &config.hyper)
        {
            return Err(Error::Divergence {
                epoch,
                reason,
                history,
            });
        }
    }

    Ok(FitResult {
        model: objective.to_model(&best_coeffs)?,
        history,
        best_epoch,
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::scalarized;
    use proptest::prelude::*;

    fn line_data(n: usize) -> Dataset {
        Dataset::new(
            (0..n)
                .map(|i| {
                    let x = i as f64 / (n - 1) as f64;
                    (x, x)
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn sgd_step_example() {
        let mut state = OptimizerState::new(1, 1);
        let mut c = DMatrix::from_element(1, 1, 1.0);
        let g = DMatrix::from_element(1, 1, 2.0);
        let hyper = OptimizerHyper {
            learning_rate: 0.1,
            variant: OptimizerVariant::Sgd,
            ..Default::default()
        };
        step(&mut state, &mut c, &g, &hyper).unwrap();
        assert!((c[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn amsgrad_first_step_magnitude() {
        let mut state = OptimizerState::new(1, 1);
        let mut c = DMatrix::from_element(1, 1, 0.0);
        let g = DMatrix::from_element(1, 1, 1.0);
        step(&mut state, &mut c, &g, &OptimizerHyper::default()).unwrap();
        // 0.001 · 0.1 / (sqrt(0.001) + 1e-7)
        let expected = 0.001 * 0.1 / (0.001f64.sqrt() + 1e-7);
        assert!((c[0] + expected).abs() < 1e-12 * expected);
        assert!((expected - 3.1623e-3).abs() < 1e-7);
    }

    #[test]
    fn adam_first_step_is_learning_rate() {
        let mut state = OptimizerState::new(1, 1);
        let mut c = DMatrix::from_element(1, 1, 0.0);
        let g = DMatrix::from_element(1, 1, 3.0);
        let hyper = OptimizerHyper {
            variant: OptimizerVariant::Adam,
            ..Default::default()
        };
        step(&mut state, &mut c, &g, &hyper).unwrap();
        assert!((c[0] + 0.001).abs() < 1e-9);
    }

    #[test]
    fn amsgrad_keeps_the_largest_second_moment() {
        let mut state = OptimizerState::new(1, 1);
        let mut c = DMatrix::from_element(1, 1, 0.0);
        let hyper = OptimizerHyper::default();
        step(
            &mut state,
            &mut c,
            &DMatrix::from_element(1, 1, 100.0),
            &hyper,
        )
        .unwrap();
        let peak = state.second_moment_max[0];
        step(
            &mut state,
            &mut c,
            &DMatrix::from_element(1, 1, 1e-3),
            &hyper,
        )
        .unwrap();
        assert_eq!(state.second_moment_max[0], peak);
        assert!(state.second_moment[0] < peak);
    }

    #[test]
    fn step_rejects_non_finite_gradients() {
        let mut state = OptimizerState::new(1, 2);
        let mut c = DMatrix::zeros(1, 2);
        let g = DMatrix::from_row_slice(1, 2, &[1.0, f64::NAN]);
        assert!(matches!(
            step(&mut state, &mut c, &g, &OptimizerHyper::default()),
            Err(Error::Divergence { .. })
        ));
    }

    #[test]
    fn lsq_init_recovers_a_line() {
        let data = line_data(50);
        for m in [1, 2, 4, 6] {
            let bp = Breakpoints::uniform(0.0, 1.0, m).unwrap();
            let c = init_coeffs(&data, &bp, 7, InitStrategy::PerSegmentLsq).unwrap();
            for s in 0..m {
                assert!(c[(s, 0)].abs() < 1e-6, "m={m} s={s} {}", c[(s, 0)]);
                assert!((c[(s, 1)] - 1.0).abs() < 1e-6, "m={m} s={s}");
                for l in 2..=7 {
                    assert!(c[(s, l)].abs() < 1e-6, "m={m} s={s} l={l} {}", c[(s, l)]);
                }
            }
        }
    }

    #[test]
    fn zeros_init_and_empty_segments() {
        let data = Dataset::new(vec![(0.1, 1.0), (0.2, 3.0), (0.9, 5.0)]).unwrap();
        let bp = Breakpoints::uniform(0.0, 1.0, 4).unwrap();
        let z = init_coeffs(&data, &bp, 3, InitStrategy::Zeros).unwrap();
        assert!(z.iter().all(|&c| c == 0.0));

        let c = init_coeffs(&data, &bp, 3, InitStrategy::PerSegmentLsq).unwrap();
        // segments 1 and 2 hold no points
        assert!(c.row(1).iter().all(|&v| v == 0.0));
        assert!(c.row(2).iter().all(|&v| v == 0.0));
        // fewer than d + 1 points: constant at the mean
        assert_eq!(
            c.row(0).iter().copied().collect::<Vec<_>>(),
            vec![2.0, 0.0, 0.0, 0.0]
        );
        assert_eq!(
            c.row(3).iter().copied().collect::<Vec<_>>(),
            vec![5.0, 0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn single_epoch_run() {
        let config = FitConfig {
            degree: 3,
            segments: 2,
            mode: ContinuityMode::open(1),
            epochs: 1,
            patience: 0,
            ..Default::default()
        };
        let res = fit(&line_data(10), &config).unwrap();
        assert_eq!(res.history.len(), 1);
        assert!(!res.stopped_early);
        assert_eq!(res.best_epoch, 0);
    }

    #[test]
    fn fits_a_line_with_all_objectives() {
        let config = FitConfig {
            degree: 7,
            segments: 4,
            mode: ContinuityMode::open(2),
            weights: ObjectiveWeights::new(0.1, 0.9).unwrap(),
            ..Default::default()
        };
        let data = line_data(50);
        let res = fit(&data, &config).unwrap();
        let best = res.best();
        assert!(best.l2 < 1e-4, "l2 = {}", best.l2);
        assert!(best.le < 1e-3, "le = {}", best.le);
    }

    #[test]
    fn best_restore_matches_history_minimum() {
        let data = Dataset::new(
            (0..40)
                .map(|i| {
                    let x = i as f64 / 39.0;
                    (x, (6.0 * x).sin())
                })
                .collect(),
        )
        .unwrap();
        let config = FitConfig {
            degree: 5,
            segments: 4,
            mode: ContinuityMode::periodic(1),
            weights: ObjectiveWeights::new(0.3, 0.5).unwrap(),
            epochs: 300,
            patience: 20,
            hyper: OptimizerHyper {
                learning_rate: 0.05,
                ..Default::default()
            },
            ..Default::default()
        };
        let res = fit(&data, &config).unwrap();
        let min = res
            .history
            .iter()
            .map(|h| h.total)
            .fold(f64::INFINITY, f64::min);
        let recomputed = scalarized(&res.model, &data, config.mode, config.weights).unwrap();
        assert_eq!(recomputed.total.to_bits(), min.to_bits());
        assert_eq!(res.best().total.to_bits(), min.to_bits());

        let again = fit(&data, &config).unwrap();
        assert_eq!(again, res);
    }

    #[test]
    fn rejects_bad_configs() {
        let data = line_data(10);
        let mut config = FitConfig {
            epochs: 0,
            ..Default::default()
        };
        assert!(fit(&data, &config).is_err());
        config.epochs = 10;
        config.mode = ContinuityMode::open(9);
        assert!(fit(&data, &config).is_err());
        config.mode = ContinuityMode::open(4);
        assert!(config.validate().is_ok());
        assert!(config.validate_for_projection().is_err());
    }

    #[test]
    fn divergence_reports_history() {
        let data = line_data(20);
        let config = FitConfig {
            degree: 3,
            segments: 2,
            mode: ContinuityMode::open(1),
            weights: ObjectiveWeights::new(0.0, 1.0).unwrap(),
            init: InitStrategy::Zeros,
            epochs: 500,
            hyper: OptimizerHyper {
                learning_rate: 1e3,
                variant: OptimizerVariant::Sgd,
                ..Default::default()
            },
            ..Default::default()
        };
        match fit(&data, &config) {
            Err(Error::Divergence { history, .. }) => {
                assert!(!history.is_empty());
                assert!(history.iter().all(LossBreakdown::is_finite));
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn sgd_descends_on_pure_l2(ys in prop::collection::vec(-1.0f64..1.0, 5..20)) {
            let n = ys.len();
            let data = Dataset::new(ys.iter().enumerate().map(|(i, &y)| (i as f64 / (n - 1) as f64, y)).collect()).unwrap();
            let config = FitConfig {
                degree: 3,
                segments: 2,
                mode: ContinuityMode::open(1),
                weights: ObjectiveWeights::new(0.0, 1.0).unwrap(),
                init: InitStrategy::Zeros,
                epochs: 200,
                patience: 200,
                hyper: OptimizerHyper { learning_rate: 1e-4, variant: OptimizerVariant::Sgd, ..Default::default() },
                ..Default::default()
            };
            let res = fit(&data, &config).unwrap();
            prop_assert!(res.history.windows(2).all(|w| w[1].total <= w[0].total));
        }

        #[test]
        fn amsgrad_second_moment_max_never_decreases(gs in prop::collection::vec(-10.0f64..10.0, 1..40)) {
            let mut state = OptimizerState::new(1, 1);
            let mut c = DMatrix::zeros(1, 1);
            let mut prev = 0.0;
            for g in gs {
                step(&mut state, &mut c, &DMatrix::from_element(1, 1, g), &OptimizerHyper::default()).unwrap();
                prop_assert!(state.second_moment_max[0] >= prev);
                prop_assert!(state.second_moment_max[0] >= state.second_moment[0]);
                prev = state.second_moment_max[0];
            }
        }
    }
}
