//! Weight sweeps over `(α, β)` and Pareto filtering of the resulting
//! `(l2, le)` pairs.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ckmin::{enforce_ck_on, CorrectionReport};
use crate::error::Result;
use crate::losses::{scalarized, LossBreakdown, ObjectiveWeights};
use crate::pp_model::{Dataset, PiecewisePolynomial};
use crate::trainer::{fit, FitConfig, FitResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub alpha: f64,
    pub beta: f64,
    pub l2: f64,
    pub le: f64,
    pub lck: f64,
    pub seed: u64,
    pub epochs_run: usize,
    /// Where the projected model was persisted, if it was.
    pub model_ref: Option<String>,
    /// Set when the fit failed; the loss fields are NaN in that case.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl SweepRecord {
    pub fn succeeded(&self) -> bool {
        self.failure.is_none()
    }
}

/// Everything produced for one grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub config: FitConfig,
    pub fit: FitResult,
    pub projected: PiecewisePolynomial,
    pub report: CorrectionReport,
    /// Losses of the projected model.
    pub losses: LossBreakdown,
}

impl RunOutcome {
    pub fn record(&self) -> SweepRecord {
        SweepRecord {
            alpha: self.config.weights.alpha(),
            beta: self.config.weights.beta(),
            l2: self.losses.l2,
            le: self.losses.le,
            lck: self.losses.lck,
            seed: self.config.seed,
            epochs_run: self.fit.epochs_run(),
            model_ref: None,
            failure: None,
        }
    }
}

/// Fit, project onto `C^k`, and measure the projected model.
pub fn run_point(data: &Dataset, config: &FitConfig) -> Result<RunOutcome> {
    config.validate_for_projection()?;
    let fitted = fit(data, config)?;
    let (projected, report) = enforce_ck_on(&fitted.model, config.mode, data)?;
    let losses = scalarized(&projected, data, config.mode, config.weights)?;
    Ok(RunOutcome {
        config: *config,
        fit: fitted,
        projected,
        report,
        losses,
    })
}

/// Runs every grid point (in parallel when `parallel`), in grid order.
/// A failed grid point yields `Err` in its slot and the sweep goes on.
pub fn sweep_runs(
    data: &Dataset,
    base: &FitConfig,
    grid: &[ObjectiveWeights],
    parallel: bool,
) -> Vec<Result<RunOutcome>> {
    let run = |w: &ObjectiveWeights| {
        let config = FitConfig {
            weights: *w,
            ..*base
        };
        run_point(data, &config)
    };
    if parallel {
        grid.par_iter().map(run).collect()
    } else {
        grid.iter().map(run).collect()
    }
}

/// One record per grid point, failed fits marked with `failure`.
pub fn sweep(data: &Dataset, base: &FitConfig, grid: &[ObjectiveWeights]) -> Vec<SweepRecord> {
    sweep_runs(data, base, grid, true)
        .into_iter()
        .zip(grid)
        .map(|(res, w)| match res {
            Ok(outcome) => outcome.record(),
            Err(e) => failed_record(w, base, e.to_string()),
        })
        .collect()
}

pub fn failed_record(w: &ObjectiveWeights, base: &FitConfig, reason: String) -> SweepRecord {
    SweepRecord {
        alpha: w.alpha(),
        beta: w.beta(),
        l2: f64::NAN,
        le: f64::NAN,
        lck: f64::NAN,
        seed: base.seed,
        epochs_run: 0,
        model_ref: None,
        failure: Some(reason),
    }
}

/// The eight `(α, β)` pairs of the reference trade-off table.
pub fn table1_grid() -> Vec<ObjectiveWeights> {
    [
        (0.10, 0.900),
        (0.10, 0.450),
        (0.50, 0.500),
        (0.50, 0.250),
        (0.75, 0.250),
        (0.75, 0.125),
        (0.99, 0.010),
        (0.99, 0.005),
    ]
    .into_iter()
    .map(|(a, b)| ObjectiveWeights::new(a, b).expect("table weights are valid"))
    .collect()
}

/// The table grid followed by, for each α in {0.10, 0.50, 0.75, 0.99}, eight
/// β values log-spaced over `[(1 − α)·10^-3, 1 − α]`.
pub fn default_grid() -> Vec<ObjectiveWeights> {
    let mut grid = table1_grid();
    for alpha in [0.10, 0.50, 0.75, 0.99] {
        let top: f64 = 1.0 - alpha;
        for q in 0..8 {
            let beta = top * 10f64.powf(-3.0 + 3.0 * q as f64 / 7.0);
            grid.push(
                ObjectiveWeights::new(alpha, beta.min(top)).expect("log grid stays in range"),
            );
        }
    }
    grid
}

/// Records not dominated in `(l2, le)` (both minimized), in input order.
/// Of several identical points only the first is kept; failed or non-finite
/// records are ignored.
pub fn pareto_front(records: &[SweepRecord]) -> Vec<SweepRecord> {
    let mut order: Vec<usize> = (0..records.len())
        .filter(|&i| {
            records[i].succeeded() && records[i].l2.is_finite() && records[i].le.is_finite()
        })
        .collect();
    order.sort_by(|&i, &j| {
        records[i]
            .l2
            .total_cmp(&records[j].l2)
            .then(records[i].le.total_cmp(&records[j].le))
            .then(i.cmp(&j))
    });
    let mut keep = vec![false; records.len()];
    let mut best_le = f64::INFINITY;
    for i in order {
        if records[i].le < best_le {
            best_le = records[i].le;
            keep[i] = true;
        }
    }
    records
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(r, _)| r.clone())
        .collect()
}
