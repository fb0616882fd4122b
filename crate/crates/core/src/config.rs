use serde::{Deserialize, Serialize};

use crate::stats::IntervalStrategy;

/// Which error yield enters the single-photon error-rate upper bound.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorYieldBound {
    /// The observed error yield `T`.
    #[default]
    Observed,
    /// The upper end of its fluctuation interval, `T̄`.
    UpperFluctuation,
}

/// Knobs of the finite-size analysis and the worst-case scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    /// Failure probability of each fluctuation bound.
    pub epsilon: f64,
    pub interval_strategy: IntervalStrategy,
    /// Collapse every confidence interval onto its observed value.
    pub fluctuation_free: bool,
    /// Use the Z-key phase error inside the X-key rate term as well.
    pub rx2_literal: bool,
    pub e1_error_yield: ErrorYieldBound,
    /// Grid points per vacuum-yield axis in the worst-case scan.
    pub grid_points: usize,
    /// Relative tolerance of the golden-section refinement after the grid.
    pub refine_tolerance: f64,
    /// Error-correction inefficiency `f_e`.
    pub error_correction_efficiency: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            epsilon: 1e-10,
            interval_strategy: IntervalStrategy::GaussianApprox,
            fluctuation_free: false,
            rx2_literal: false,
            e1_error_yield: ErrorYieldBound::Observed,
            grid_points: 200,
            refine_tolerance: 1e-4,
            error_correction_efficiency: 1.16,
        }
    }
}

impl AnalysisConfig {
    pub fn fluctuation_free() -> Self {
        AnalysisConfig {
            fluctuation_free: true,
            ..Default::default()
        }
    }
}
