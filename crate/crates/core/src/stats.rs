//! Finite-size fluctuation machinery.
//!
//! Observed relative frequencies are turned into confidence intervals for
//! their expected values, either with the fast `lambda / sqrt(counts)` form or
//! by solving the multiplicative Chernoff tail equations exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied to error rates entering the random-sampling deviation.
pub const ERROR_RATE_FLOOR: f64 = 1e-12;

/// Cap on the random-sampling deviation.
pub const MAX_SAMPLING_DEVIATION: f64 = 0.5;

/// How a yield interval is derived from an observation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntervalStrategy {
    /// `S / (1 ± delta)` with `delta = lambda(eps) / sqrt(n S)`.
    #[default]
    GaussianApprox,
    /// Asymmetric bounds from the multiplicative Chernoff tails, `eps` per side.
    ChernoffExact,
}

/// Confidence interval on the expected value of an observed frequency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluctuationInterval {
    pub lower: f64,
    pub upper: f64,
    pub observed: f64,
    pub trials: f64,
    pub epsilon: f64,
}

impl FluctuationInterval {
    /// The degenerate interval used when fluctuations are ignored.
    pub fn exact(observed: f64, trials: f64) -> Self {
        FluctuationInterval {
            lower: observed,
            upper: observed,
            observed,
            trials,
            epsilon: 0.0,
        }
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// `lambda = sqrt(-2 ln eps)`.
pub fn lambda_of(epsilon: f64) -> Result<f64> {
    check_epsilon(epsilon)?;
    Ok((-2.0 * epsilon.ln()).sqrt())
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "failure probability must lie in (0, 1), got {epsilon}"
        )))
    }
}

/// Interval for the expected yield given observed frequency `observed` over
/// `trials` pulses.
pub fn yield_interval(
    observed: f64,
    trials: f64,
    epsilon: f64,
    strategy: IntervalStrategy,
) -> Result<FluctuationInterval> {
    check_epsilon(epsilon)?;
    if !(0.0..=1.0).contains(&observed) {
        return Err(Error::InvalidParameter(format!(
            "observed frequency {observed} outside [0, 1]"
        )));
    }
    if !(trials > 0.0) {
        return Err(Error::InfeasibleStatistics(format!(
            "no trials behind observed frequency {observed}"
        )));
    }
    let interval = |lower, upper| FluctuationInterval {
        lower,
        upper,
        observed,
        trials,
        epsilon,
    };
    if observed == 0.0 {
        return Ok(interval(0.0, -epsilon.ln() / trials));
    }
    match strategy {
        IntervalStrategy::GaussianApprox => {
            let delta = lambda_of(epsilon)? / (trials * observed).sqrt();
            if delta >= 1.0 {
                return Err(Error::InfeasibleStatistics(format!(
                    "{:.3} counts are too few for a fluctuation bound (delta = {delta:.3})",
                    trials * observed
                )));
            }
            Ok(interval(observed / (1.0 + delta), observed / (1.0 - delta)))
        }
        IntervalStrategy::ChernoffExact => {
            let (lo, hi) = chernoff_mean_bounds(trials * observed, -epsilon.ln());
            Ok(interval(lo / trials, hi / trials))
        }
    }
}

/// Solves `m - x + x ln(x/m) = c` on both sides of `x`.
///
/// The left-hand side is the exponent of the multiplicative Chernoff bound
/// for a sum with mean `m` landing at `x`, so the returned means bracket
/// the true mean with failure probability `e^{-c}` per side.
fn chernoff_mean_bounds(x: f64, c: f64) -> (f64, f64) {
    if x <= 0.0 {
        return (0.0, c);
    }
    let target = c / x;
    // m = x e^{-t}:  t - 1 + e^{-t} = c / x
    let t_lo = solve_increasing(|t| t + (-t).exp_m1(), target);
    // m = x e^{t}:   e^{t} - 1 - t = c / x
    let t_hi = solve_increasing(|t| t.exp_m1() - t, target);
    (x * (-t_lo).exp(), x * t_hi.exp())
}

/// Root of an increasing `f` with `f(0) = 0` at level `target > 0`.
fn solve_increasing(f: impl Fn(f64) -> f64, target: f64) -> f64 {
    let mut hi = 1.0;
    while f(hi) < target {
        hi *= 2.0;
        if hi > 1e6 {
            break;
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Random-sampling deviation between the error rate of a test sample of
/// size `n_x` and the phase error of a key sample of size `n_z`.
pub fn sampling_deviation(n_x: f64, n_z: f64, e1: f64, epsilon: f64) -> Result<f64> {
    check_epsilon(epsilon)?;
    if !(n_x > 0.0 && n_z > 0.0) {
        return Err(Error::InfeasibleStatistics(format!(
            "sampling deviation needs positive sample sizes, got {n_x} and {n_z}"
        )));
    }
    let e = e1.clamp(ERROR_RATE_FLOOR, 1.0 - ERROR_RATE_FLOOR);
    let total = n_x + n_z;
    // g (1 - g) written symmetrically in the two sample sizes.
    let g_mix = (n_x * n_z) / (total * total);
    let d_theta = g_mix * std::f64::consts::LN_2 / (2.0 * (1.0 - e) * e);
    let n_theta = -(epsilon * (e * (1.0 - e) * n_x * n_z / total).sqrt()).ln() / total;
    if n_theta <= 0.0 {
        return Ok(0.0);
    }
    Ok((n_theta / d_theta).sqrt().min(MAX_SAMPLING_DEVIATION))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_values() {
        assert!((lambda_of((-2.0f64).exp()).unwrap() - 2.0).abs() < 1e-15);
        assert!((lambda_of(1e-10).unwrap() - (20.0 * 10f64.ln()).sqrt()).abs() < 1e-14);
        assert!((lambda_of(0.5).unwrap() - (2.0 * 2f64.ln()).sqrt()).abs() < 1e-15);
        assert!(lambda_of(0.0).is_err());
        assert!(lambda_of(1.0).is_err());
    }

    #[test]
    fn gaussian_interval_formula() {
        let iv = yield_interval(0.1, 1e8, 1e-10, IntervalStrategy::GaussianApprox).unwrap();
        let delta = lambda_of(1e-10).unwrap() / 1e7f64.sqrt();
        assert!((iv.lower - 0.1 / (1.0 + delta)).abs() < 1e-16);
        assert!((iv.upper - 0.1 / (1.0 - delta)).abs() < 1e-16);
        let wide = yield_interval(0.1, 1e30, 1e-10, IntervalStrategy::GaussianApprox).unwrap();
        assert!(wide.width() < 1e-14);
    }

    #[test]
    fn zero_counts() {
        for strategy in [IntervalStrategy::GaussianApprox, IntervalStrategy::ChernoffExact] {
            let iv = yield_interval(0.0, 1e6, 1e-10, strategy).unwrap();
            assert_eq!(iv.lower, 0.0);
            assert!((iv.upper - 10.0 * 10f64.ln() / 1e6).abs() < 1e-18);
        }
    }

    #[test]
    fn too_few_counts_is_infeasible() {
        let err = yield_interval(1e-6, 1e6, 1e-10, IntervalStrategy::GaussianApprox).unwrap_err();
        assert!(err.is_infeasible());
        // the exact solve always yields a (wide) interval
        let iv = yield_interval(1e-6, 1e6, 1e-10, IntervalStrategy::ChernoffExact).unwrap();
        assert!(iv.lower < 1e-6 && iv.upper > 1e-6);
    }

    #[test]
    fn chernoff_roots_satisfy_equation() {
        let (x, c) = (250.0, 10.0);
        let (lo, hi) = chernoff_mean_bounds(x, c);
        let g = |m: f64| m - x + x * (x / m).ln();
        assert!((g(lo) - c).abs() < 1e-9);
        assert!((g(hi) - c).abs() < 1e-9);
        assert!(lo < x && x < hi);
    }

    #[test]
    fn sampling_deviation_formula() {
        let (nx, nz, e, eps) = (1e6, 1e6, 0.03, 1e-10);
        // independent evaluation of the three sub-expressions
        let g = nx / (nx + nz);
        let d = (1.0 - g) * g * 2f64.ln() / (2.0 * (1.0 - e) * e);
        let n = -(eps * (e * (1.0 - e) * nx * nz / (nx + nz)).sqrt()).ln() / (nx + nz);
        let expected = (n / d).sqrt();
        let got = sampling_deviation(nx, nz, e, eps).unwrap();
        assert!((got - expected).abs() < 1e-15, "{got} vs {expected}");
        assert!((got - 0.001_749_826_313_451_349).abs() < 1e-15);
    }

    #[test]
    fn sampling_deviation_limits() {
        assert!(sampling_deviation(1e30, 1e30, 0.25, 1e-10).unwrap() < 1e-12);
        let floored = sampling_deviation(1e6, 1e7, 0.0, 1e-10).unwrap();
        assert_eq!(floored, sampling_deviation(1e6, 1e7, ERROR_RATE_FLOOR, 1e-10).unwrap());
        assert_eq!(sampling_deviation(10.0, 10.0, 0.25, 1e-10).unwrap(), 0.5);
        assert!(sampling_deviation(0.0, 10.0, 0.1, 1e-10).unwrap_err().is_infeasible());
    }
}
