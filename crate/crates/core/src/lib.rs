//! Energy-regularized piecewise polynomial fitting.
//!
//! A [`PiecewisePolynomial`] in the global power basis is trained by
//! full-batch gradient descent on the weighted sum of three losses: the
//! `C^k` continuity violation, the mean squared approximation error and the
//! elastic strain energy `∫ f''^2`. After training, [`enforce_ck`] adds local
//! Hermite corrections so that continuity holds exactly, and
//! [`pareto::sweep`] traces the trade-off between approximation error and
//! energy over a grid of weights.

pub mod ckmin;
pub mod cli;
pub mod error;
pub mod io;
pub mod losses;
pub mod pareto;
pub mod pp_model;
pub mod trainer;

pub use ckmin::{enforce_ck, enforce_ck_on, hermite_step_basis, CorrectionReport};
pub use error::{Error, Result};
pub use losses::{
    discontinuity, energy_quadrature, gradient, loss_ck, loss_energy, loss_l2, scalarized,
    ContinuityMode, LossBreakdown, Objective, ObjectiveWeights, Wrap,
};
pub use pareto::{pareto_front, sweep, SweepRecord};
pub use pp_model::{Breakpoints, Dataset, PiecewisePolynomial, SampleRow, Side};
pub use trainer::{
    fit, FitConfig, FitResult, InitStrategy, OptimizerHyper, OptimizerVariant, Placement,
};
