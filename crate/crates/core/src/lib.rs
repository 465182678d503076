//! Bounds for the marginal treatment effect of the always-observed
//! subpopulation under endogenous treatment and sample selection.
//!
//! The library is organized around one pipeline:
//!
//! 1. [`dgp`] generates synthetic samples from a normal-factor selection
//!    model (or samples are read from CSV),
//! 2. [`propensity`] fits a logit propensity score with trimming,
//! 3. [`smoother`] turns the fitted scores into local polynomial
//!    derivative estimates and binned conditional outcome tables,
//! 4. [`npbounds`] assembles trimming-based bounds from those tables
//!    under each assumption tier,
//! 5. [`aggregate`] integrates bound curves into ATE/ATT/ATU/LATE/PRTE
//!    bounds.
//!
//! [`oracle`] computes the exact population counterparts of everything the
//! estimators target, for the synthetic model only, and backs the test
//! suite. [`parbounds`] is a parametric (logit index) alternative to steps
//! 3-4 that supports covariates, [`discrete`] handles multi-valued discrete
//! instruments, [`dmte`] bounds distributional effects, [`diagnostics`]
//! evaluates the model's testable implications, and [`montecarlo`] wraps
//! the whole pipeline in a replication harness.

pub mod aggregate;
pub mod dgp;
pub mod diagnostics;
pub mod discrete;
pub mod dmte;
pub mod montecarlo;
pub mod npbounds;
pub mod num;
pub mod oracle;
pub mod parbounds;
pub mod propensity;
pub mod smoother;
