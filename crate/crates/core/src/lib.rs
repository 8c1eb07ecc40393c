//! Estimation toolkit for factor-augmented VARs identified with narrative
//! tax shocks and sign restrictions.
//!
//! The modules follow the estimation sequence: [`panel`] ingestion and
//! transforms, principal-component [`factors`], state-space [`smoothing`] of
//! the factors, [`narrative`] tax rates and exogeneity tests, reduced-form
//! [`var`] estimation, sign-restriction identification in [`identify`], and
//! responses, variance decompositions and diagnostics in [`analysis`].

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod analysis;
pub mod error;
pub mod factors;
pub mod identify;
pub mod linalg;
pub mod narrative;
pub mod panel;
pub mod smoothing;
pub mod synthetic;
pub mod var;

pub use analysis::{
    benchmark_draw, bootstrap_bands, cumulative_irf, fevd, fevd_combinations, median_target_select, observable_irf,
    observable_loadings, reliability_row, shock_correlation, structural_irf, structural_shock_series, BootstrapOptions,
    BootstrapResult, FevdTable, IrfSet, MtResult, ObservableLoadings, Reidentify, ReliabilityReport, ReliabilityRow,
    ShockCorrelation, MIN_REPLICATIONS,
};
pub use error::{FavarError, Result};
pub use factors::{
    component_importance, estimate_factors, fit_factor_transition, idiosyncratic_cov, select_num_factors,
    ComponentImportance, FactorModel, FactorTransition, IcResult, TransitionForm,
};
pub use identify::{
    draw_candidate, evaluate_restrictions, identify_tax_shock, AcceptedDraw, DrawSet, IdentMode, IdentifyOptions,
    ImpulseVector, Sign, SignRestrictionSpec,
};
pub use narrative::{
    compute_narrative_rates, granger_battery, granger_exogeneity_test, granger_exogeneity_test_with, load_events,
    write_events, GrangerCell, GrangerOptions, GrangerResult, NarrativeEvent, NarrativeTaxSeries, TaxType,
};
pub use panel::{
    apply_transforms, load_panel, standardize_and_balance, write_panel, BalancePolicy, DropLog, Quarter, SeriesMeta,
    TimeSeriesPanel, TransformCode,
};
pub use smoothing::{
    fit_local_linear_trend, hp_filter_oracle, kalman_smooth, lr_test, LltParams, LrTestResult, TrendCycleDecomposition,
    HP_QUARTERLY_LAMBDA,
};
pub use var::{cholesky_factor, fit_var, fit_varx, reduced_form_irf, VarModel};
