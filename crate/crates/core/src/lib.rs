//! Fixed-smoothing inference for the mean of a Gaussian stationary series.
//!
//! The subsampling t statistic over K groups and the kernel Wald statistic,
//! their higher-order expansions, the Gaussian dependent bootstrap, and a
//! seeded Monte Carlo harness around all of them.

pub mod bootstrap;
pub mod distributions;
pub mod error;
pub mod expansion;
pub mod harness;
pub mod kernels;
pub mod models;
pub mod quadrature;
pub mod rng;
pub mod statistics;

pub use bootstrap::{
    bootstrap_distribution, bootstrap_test, default_taper_width, BootStatistic, BootstrapConfig, BootstrapOutcome,
    BootstrapTest, TaperedCovariance,
};
pub use distributions::MCExpectation;
pub use error::{Error, Result};
pub use expansion::{
    aleph, exact_coeff_expansion, fix_small_leading, fixed_b_limit_cdf, increasing_k_expansion, psi,
    small_b_second_order, upsilon, upsilon_local, xi_variances, AlephWeights, ExpansionEstimate,
};
pub use harness::{ErpRow, ExperimentConfig, Method, Smoothing};
pub use kernels::{
    analytic_eigs, eigensystem, nystrom_eigs, DifferenceKernel, EigenSystem, KernelConstants, KernelForm, KernelSpec,
    ParzenExponent, Truncation,
};
pub use models::{GroupCovariance, ModelKind, ProcessModel};
pub use statistics::{
    lrv_estimate, projections, subsampling_t, wald_f, wald_f_truncated, Ingredients, ProjectionBasis, StatResult,
};
