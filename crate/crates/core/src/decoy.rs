//! Decoy-state bounds on the vacuum and single-photon contributions.
//!
//! Yields are indexed by the measurement basis only: a source prepared in
//! either basis sees the same basis-averaged photon-number yields `<s_k>`
//! when measured in a given basis. Every pair of sources prepared in the same
//! basis therefore bounds the single-photon yield of the measurement basis,
//! whichever basis that is.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::channel::ObservedStats;
use crate::config::{AnalysisConfig, ErrorYieldBound};
use crate::error::{Error, Result};
use crate::sources::{Basis, PhotonDistribution, ProtocolInstance, SourceLabel};
use crate::stats::{lambda_of, sampling_deviation, yield_interval, FluctuationInterval};

/// Upper bound on any error rate.
pub const MAX_ERROR_RATE: f64 = 0.5;

/// Basis-averaged yields `<s_k>` for one measurement basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragedYieldModel {
    pub yields: Vec<f64>,
}

impl AveragedYieldModel {
    /// Expected yield of a source, `sum_k a_k <s_k>`.
    pub fn source_yield(&self, dist: &PhotonDistribution) -> f64 {
        dist.coeffs()
            .iter()
            .zip(&self.yields)
            .map(|(a, s)| a * s)
            .sum()
    }
}

/// `A^{i,j} = a_{i,lo} a_{j,hi} - a_{i,hi} a_{j,lo}`.
pub fn cross_coefficient(lo: &PhotonDistribution, hi: &PhotonDistribution, i: usize, j: usize) -> f64 {
    lo.coeff(i) * hi.coeff(j) - hi.coeff(i) * lo.coeff(j)
}

/// Expected number of `k`-photon pulses from `source` measured in `basis`.
pub fn n_k_photons(protocol: &ProtocolInstance, source: SourceLabel, k: usize, basis: Basis) -> Result<f64> {
    let src = protocol.try_source(source)?;
    Ok(src.dist.coeff(k) * src.prob * protocol.q(basis) * protocol.n_total)
}

/// Lower bound on `<s_1>` from one (weak, strong) pair as an affine function
/// of `<s_0>`: `max(0, intercept - slope * s0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairBound {
    pub weak: SourceLabel,
    pub strong: SourceLabel,
    pub intercept: f64,
    pub slope: f64,
}

impl PairBound {
    /// Builds the bound from the weak source's lower yield bound and the
    /// strong source's upper yield bound.
    pub fn new(
        weak: (SourceLabel, &PhotonDistribution),
        strong: (SourceLabel, &PhotonDistribution),
        weak_yield_lower: f64,
        strong_yield_upper: f64,
    ) -> Result<Self> {
        let (lo, hi) = (weak.1, strong.1);
        let a12 = cross_coefficient(lo, hi, 1, 2);
        if !(a12 > 0.0) {
            return Err(Error::OrderingUndefined(format!(
                "A^(1,2) = {a12:e} for pair ({}, {}) is not positive",
                weak.0, strong.0
            )));
        }
        let a02 = cross_coefficient(lo, hi, 0, 2);
        Ok(PairBound {
            weak: weak.0,
            strong: strong.0,
            intercept: (hi.coeff(2) * weak_yield_lower - lo.coeff(2) * strong_yield_upper) / a12,
            slope: a02 / a12,
        })
    }

    pub fn unclamped(&self, s0_mean: f64) -> f64 {
        self.intercept - self.slope * s0_mean
    }

    pub fn at(&self, s0_mean: f64) -> f64 {
        self.unclamped(s0_mean).max(0.0)
    }
}

/// Best (largest) lower bound on `<s_1>` over the usable pairs.
pub fn s1_mean_lower(pairs: &[PairBound], s0_mean: f64) -> Result<f64> {
    pairs
        .iter()
        .map(|p| p.at(s0_mean))
        .reduce(f64::max)
        .ok_or_else(|| Error::AnalysisInfeasible("no usable decoy pair to bound the single-photon yield".into()))
}

/// Per-source single-photon yield bound `<s_1^L> (1 - delta)` with
/// `delta = lambda / sqrt(n1 <s_1^L>)`. Zero when the deviation swamps it.
/// `epsilon = None` disables the correction.
pub fn s1_source_lower(mean_lower: f64, n1: f64, epsilon: Option<f64>) -> Result<f64> {
    let Some(eps) = epsilon else {
        return Ok(mean_lower.max(0.0));
    };
    if !(mean_lower > 0.0) || !(n1 > 0.0) {
        return Ok(0.0);
    }
    let delta = lambda_of(eps)? / (n1 * mean_lower).sqrt();
    Ok(if delta >= 1.0 { 0.0 } else { mean_lower * (1.0 - delta) })
}

/// Upper bound on the single-photon error rate of a test source.
///
/// `error_yield` is the observed (or upper-bounded) error yield, `a0`/`a1`
/// its vacuum and single-photon coefficients and `n0` its expected number of
/// vacuum pulses in the test basis.
pub fn e1_upper(
    error_yield: f64,
    dist: &PhotonDistribution,
    n0: f64,
    s0_mean: f64,
    s1_lower: f64,
    epsilon: Option<f64>,
) -> Result<f64> {
    let a1 = dist.coeff(1);
    if !(s1_lower > 0.0) || !(a1 > 0.0) {
        return Err(Error::AnalysisInfeasible(
            "single-photon yield bound is zero, error rate unbounded".into(),
        ));
    }
    let shrink = match epsilon {
        None => 1.0,
        Some(eps) => {
            let delta0 = if s0_mean > 0.0 && n0 > 0.0 {
                lambda_of(eps)? / (n0 * s0_mean).sqrt()
            } else {
                f64::INFINITY
            };
            (1.0 - delta0).max(0.0)
        }
    };
    let numerator = (error_yield - dist.coeff(0) * s0_mean * shrink / 2.0).max(0.0);
    Ok((numerator / (a1 * s1_lower)).clamp(0.0, MAX_ERROR_RATE))
}

/// Phase-error upper bound `min(e1 + theta, 1/2)` for a key sample of
/// `n_key` single photons tested with `n_test` single photons.
pub fn phase_error_upper(e1: f64, n_test: f64, n_key: f64, epsilon: Option<f64>) -> Result<f64> {
    let theta = match epsilon {
        None => 0.0,
        Some(eps) => sampling_deviation(n_test, n_key, e1, eps)?,
    };
    Ok((e1 + theta).min(MAX_ERROR_RATE))
}

/// Bounds that depend on the vacuum yield of a single measurement basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisBounds {
    pub basis: Basis,
    pub s0_mean: f64,
    pub s1_mean_lower: f64,
    /// Per-source single-photon yield bounds for sources prepared in `basis`.
    pub s1_source_lower: Vec<(SourceLabel, f64)>,
    /// Single-photon error-rate bound of the test source of `basis`; `None`
    /// when the single-photon yield bound vanishes.
    pub e1_upper: Option<f64>,
    /// Phase-error bound this basis' test data gives for keys in the other basis.
    pub phase_error_other: f64,
}

impl AxisBounds {
    pub fn s1_of(&self, label: SourceLabel) -> f64 {
        self.s1_source_lower
            .iter()
            .find(|(l, _)| *l == label)
            .map_or(0.0, |(_, v)| *v)
    }
}

/// Every bound at one point `(<s_0^Z>, <s_0^X>)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundSet {
    pub z: AxisBounds,
    pub x: AxisBounds,
}

/// Precomputed intervals and pair bounds for one protocol and data set.
#[derive(Debug, Clone)]
pub struct DecoyAnalysis<'a> {
    protocol: &'a ProtocolInstance,
    config: AnalysisConfig,
    stats: ObservedStats,
    /// Yield intervals; `None` when the source is absent or too sparse.
    intervals: BTreeMap<(SourceLabel, Basis), Option<FluctuationInterval>>,
    pairs: [Vec<PairBound>; 2],
    s0_intervals: [(f64, f64); 2],
}

fn basis_index(b: Basis) -> usize {
    match b {
        Basis::Z => 0,
        Basis::X => 1,
    }
}

impl<'a> DecoyAnalysis<'a> {
    pub fn new(protocol: &'a ProtocolInstance, stats: &ObservedStats, config: &AnalysisConfig) -> Result<Self> {
        if !config.fluctuation_free {
            lambda_of(config.epsilon)?;
        }
        let mut intervals = BTreeMap::new();
        for src in &protocol.sources {
            for basis in Basis::BOTH {
                let iv = match stats.get(src.label, basis) {
                    Some(obs) if src.prob > 0.0 && obs.trials > 0.0 => {
                        if config.fluctuation_free {
                            Some(FluctuationInterval::exact(obs.yield_, obs.trials))
                        } else {
                            match yield_interval(obs.yield_, obs.trials, config.epsilon, config.interval_strategy) {
                                Ok(iv) => Some(iv),
                                Err(e) if e.is_infeasible() => None,
                                Err(e) => return Err(e),
                            }
                        }
                    }
                    _ => None,
                };
                intervals.insert((src.label, basis), iv);
            }
        }
        let mut analysis = DecoyAnalysis {
            protocol,
            config: config.clone(),
            stats: stats.clone(),
            intervals,
            pairs: [Vec::new(), Vec::new()],
            s0_intervals: [(0.0, 1.0); 2],
        };
        for basis in Basis::BOTH {
            analysis.pairs[basis_index(basis)] = analysis.build_pairs(basis)?;
        }
        for basis in Basis::BOTH {
            analysis.s0_intervals[basis_index(basis)] = analysis.compute_s0_interval(basis)?;
        }
        Ok(analysis)
    }

    pub fn protocol(&self) -> &ProtocolInstance {
        self.protocol
    }

    pub fn config(&self) -> &AnalysisConfig {
        &self.config
    }

    pub fn stats(&self) -> &ObservedStats {
        &self.stats
    }

    fn epsilon(&self) -> Option<f64> {
        (!self.config.fluctuation_free).then_some(self.config.epsilon)
    }

    pub fn interval(&self, source: SourceLabel, basis: Basis) -> Option<&FluctuationInterval> {
        self.intervals.get(&(source, basis)).and_then(|iv| iv.as_ref())
    }

    /// Pair bounds on `<s_1>` for measurement basis `basis`.
    pub fn pairs(&self, basis: Basis) -> &[PairBound] {
        &self.pairs[basis_index(basis)]
    }

    /// Feasible range of `<s_0>` in `basis`.
    pub fn s0_interval(&self, basis: Basis) -> (f64, f64) {
        self.s0_intervals[basis_index(basis)]
    }

    fn build_pairs(&self, measured: Basis) -> Result<Vec<PairBound>> {
        let mut pairs = Vec::new();
        for prepared in Basis::BOTH {
            let (w, s) = (SourceLabel::weak(prepared), SourceLabel::strong(prepared));
            let (Some(weak), Some(strong)) = (self.protocol.source(w), self.protocol.source(s)) else {
                continue;
            };
            let (Some(lo), Some(hi)) = (self.interval(w, measured), self.interval(s, measured)) else {
                continue;
            };
            pairs.push(PairBound::new((w, &weak.dist), (s, &strong.dist), lo.lower, hi.upper)?);
        }
        Ok(pairs)
    }

    fn error_yield_used(&self, source: SourceLabel, basis: Basis) -> Option<f64> {
        let obs = self.stats.get(source, basis)?;
        match self.config.e1_error_yield {
            ErrorYieldBound::Observed => Some(obs.error_yield),
            ErrorYieldBound::UpperFluctuation => self.error_yield_upper(source, basis),
        }
    }

    fn error_yield_upper(&self, source: SourceLabel, basis: Basis) -> Option<f64> {
        let obs = self.stats.get(source, basis)?;
        if self.config.fluctuation_free {
            return Some(obs.error_yield);
        }
        yield_interval(obs.error_yield, obs.trials, self.config.epsilon, self.config.interval_strategy)
            .ok()
            .map(|iv| iv.upper)
    }

    fn compute_s0_interval(&self, basis: Basis) -> Result<(f64, f64)> {
        let vacuum = self
            .protocol
            .source(SourceLabel::O)
            .filter(|o| o.prob > 0.0)
            .and_then(|_| self.interval(SourceLabel::O, basis));
        let (lower, upper) = match vacuum {
            Some(iv) => (iv.lower.max(0.0), iv.upper.min(1.0)),
            None => (self.s0_lower_without_vacuum(basis), self.s0_upper_without_vacuum(basis)),
        };
        if lower > upper {
            return Err(Error::InfeasibleStatistics(format!(
                "empty vacuum-yield interval [{lower:e}, {upper:e}] in basis {basis}"
            )));
        }
        Ok((lower, upper))
    }

    fn s0_lower_without_vacuum(&self, measured: Basis) -> f64 {
        let mut best = 0.0f64;
        for prepared in Basis::BOTH {
            let (w, s) = (SourceLabel::weak(prepared), SourceLabel::strong(prepared));
            let (Some(weak), Some(strong)) = (self.protocol.source(w), self.protocol.source(s)) else {
                continue;
            };
            let (Some(lo), Some(hi)) = (self.interval(w, measured), self.interval(s, measured)) else {
                continue;
            };
            let a01 = cross_coefficient(&weak.dist, &strong.dist, 0, 1);
            if a01 > 0.0 {
                let v = (strong.dist.coeff(1) * lo.lower - weak.dist.coeff(1) * hi.upper) / a01;
                best = best.max(v);
            }
        }
        best
    }

    fn s0_upper_without_vacuum(&self, measured: Basis) -> f64 {
        let mut upper = 1.0f64;
        let test = SourceLabel::weak(measured);
        if let (Some(src), Some(t)) = (self.protocol.source(test), self.error_yield_upper(test, measured)) {
            if src.prob > 0.0 && src.dist.coeff(0) > 0.0 {
                upper = upper.min(2.0 * t / src.dist.coeff(0));
            }
        }
        for weak in [SourceLabel::Z1, SourceLabel::X1] {
            if let (Some(src), Some(iv)) = (self.protocol.source(weak), self.interval(weak, measured)) {
                if src.dist.coeff(0) > 0.0 {
                    upper = upper.min(iv.upper / src.dist.coeff(0));
                }
            }
        }
        upper
    }

    /// Expected single-photon pulses of `source` measured in its own basis.
    fn n1(&self, source: SourceLabel) -> f64 {
        let basis = source.basis().unwrap_or(Basis::Z);
        n_k_photons(self.protocol, source, 1, basis).unwrap_or(0.0)
    }

    /// All bounds that depend on `<s_0>` of `basis`.
    pub fn axis(&self, basis: Basis, s0_mean: f64) -> Result<AxisBounds> {
        let eps = self.epsilon();
        let mean = s1_mean_lower(self.pairs(basis), s0_mean)?;
        let mut per_source = Vec::with_capacity(2);
        for label in [SourceLabel::weak(basis), SourceLabel::strong(basis)] {
            if self.protocol.source(label).is_some_and(|s| s.prob > 0.0) {
                per_source.push((label, s1_source_lower(mean, self.n1(label), eps)?));
            }
        }
        let test = SourceLabel::weak(basis);
        let mut e1 = None;
        let mut phase = MAX_ERROR_RATE;
        if let (Some(src), Some(t)) = (self.protocol.source(test), self.error_yield_used(test, basis)) {
            let s1_test = per_source
                .iter()
                .find(|(l, _)| *l == test)
                .map_or(0.0, |(_, v)| *v);
            let n0 = n_k_photons(self.protocol, test, 0, basis)?;
            match e1_upper(t, &src.dist, n0, s0_mean, s1_test, eps) {
                Ok(e) => {
                    e1 = Some(e);
                    let key_basis = basis.other();
                    let n_test = self.n1(test);
                    // Single photons behind the key bits of the other basis.
                    let n_key: f64 = self
                        .protocol
                        .distill_plan
                        .iter()
                        .filter(|k| k.source.basis() == Some(key_basis))
                        .map(|k| k.fraction * self.n1(k.source))
                        .sum();
                    phase = match phase_error_upper(e, n_test, n_key, eps) {
                        Ok(p) => p,
                        Err(err) if err.is_infeasible() => MAX_ERROR_RATE,
                        Err(err) => return Err(err),
                    };
                }
                Err(err) if err.is_infeasible() => {}
                Err(err) => return Err(err),
            }
        }
        Ok(AxisBounds {
            basis,
            s0_mean,
            s1_mean_lower: mean,
            s1_source_lower: per_source,
            e1_upper: e1,
            phase_error_other: phase,
        })
    }

    pub fn bounds_at(&self, s0_z: f64, s0_x: f64) -> Result<BoundSet> {
        Ok(BoundSet {
            z: self.axis(Basis::Z, s0_z)?,
            x: self.axis(Basis::X, s0_x)?,
        })
    }
}

/// Feasible range of `<s_0>` in `basis` for the given data.
pub fn s0_interval(
    protocol: &ProtocolInstance,
    stats: &ObservedStats,
    basis: Basis,
    config: &AnalysisConfig,
) -> Result<(f64, f64)> {
    Ok(DecoyAnalysis::new(protocol, stats, config)?.s0_interval(basis))
}
