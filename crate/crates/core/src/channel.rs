//! Linear channel-loss model producing the yields and error yields an
//! experiment would observe.
//!
//! Bob uses two detectors per basis and counts an event as successful when
//! exactly one of them clicks. `s0` below is the per-detector background
//! (dark-count) probability, so the vacuum-state yield is `2 s0 (1 - s0)`.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sources::{Basis, PhotonDistribution, ProtocolInstance, SourceLabel};

/// Fiber and detector parameters. Defaults are the standard-fiber values
/// used throughout the crate's reference runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelParams {
    /// Fiber length in km.
    pub distance_km: f64,
    /// Fiber loss in dB/km.
    pub loss_db_per_km: f64,
    /// Detector efficiency.
    pub detector_efficiency: f64,
    /// Background count probability per detector and pulse.
    pub dark_count: f64,
    /// Misalignment error probability.
    pub misalignment: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta_x_override: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta_z_override: Option<f64>,
}

impl Default for ChannelParams {
    fn default() -> Self {
        ChannelParams {
            distance_km: 0.0,
            loss_db_per_km: 0.2,
            detector_efficiency: 0.045,
            dark_count: 1.7e-6,
            misalignment: 0.033,
            eta_x_override: None,
            eta_z_override: None,
        }
    }
}

impl ChannelParams {
    pub fn at_distance(&self, distance_km: f64) -> Self {
        ChannelParams {
            distance_km,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [
            ("detector_efficiency", Some(self.detector_efficiency)),
            ("dark_count", Some(self.dark_count)),
            ("misalignment", Some(self.misalignment)),
            ("eta_x_override", self.eta_x_override),
            ("eta_z_override", self.eta_z_override),
        ];
        for (name, v) in probs {
            if let Some(v) = v {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::validation(
                        "channel-range",
                        format!("{name} = {v} outside [0, 1]"),
                    ));
                }
            }
        }
        if !(self.distance_km >= 0.0) || !(self.loss_db_per_km >= 0.0) {
            return Err(Error::validation(
                "channel-range",
                "distance and loss coefficient must be non-negative",
            ));
        }
        Ok(())
    }

    /// Overall transmittance `eta_d * 10^(-alpha L / 10)` seen in `basis`.
    pub fn overall_transmittance(&self, basis: Basis) -> f64 {
        let over = match basis {
            Basis::X => self.eta_x_override,
            Basis::Z => self.eta_z_override,
        };
        over.unwrap_or_else(|| {
            self.detector_efficiency * 10f64.powf(-self.loss_db_per_km * self.distance_km / 10.0)
        })
    }
}

/// Yield of a `k`-photon state.
pub fn yield_k(k: usize, s0: f64, eta: f64, same_basis: bool) -> f64 {
    // Written to avoid cancellation when s0 and eta are tiny.
    let log_miss = k as f64 * (-eta).ln_1p();
    let miss = log_miss.exp();
    if same_basis {
        (1.0 - s0) * (-log_miss.exp_m1() + 2.0 * s0 * miss)
    } else {
        let half_gap = if eta < 1.0 {
            miss * (k as f64 * ((-eta / 2.0).ln_1p() - log_miss / k.max(1) as f64)).exp_m1()
        } else {
            (1.0 - eta / 2.0).powi(k as i32)
        };
        2.0 * (1.0 - s0) * (half_gap + s0 * miss)
    }
}

/// Probability that only the wrong detector fires on a `k`-photon state
/// without misalignment: `s0 (1 - s0) (1 - eta)^k`.
pub fn ideal_error_yield_k(k: usize, s0: f64, eta: f64) -> f64 {
    s0 * (1.0 - s0) * (1.0 - eta).powi(k as i32)
}

/// Error yield of a `k`-photon state measured in its preparation basis.
pub fn error_yield_k(k: usize, s0: f64, eta: f64, e_d: f64) -> f64 {
    let ideal = ideal_error_yield_k(k, s0, eta);
    ideal + e_d * (yield_k(k, s0, eta, true) - 2.0 * ideal)
}

/// Error rate of a `k`-photon state measured in its preparation basis:
/// `e_d (1 - 2 r) + r` with `r` the ideal (misalignment-free) error rate.
pub fn error_rate_k(k: usize, s0: f64, eta: f64, e_d: f64) -> f64 {
    let y = yield_k(k, s0, eta, true);
    let r = if y > 0.0 {
        ideal_error_yield_k(k, s0, eta) / y
    } else {
        0.0
    };
    e_d * (1.0 - 2.0 * r) + r
}

/// Yield of a whole source by summing over its photon-number distribution.
pub fn source_yield_sum(dist: &PhotonDistribution, s0: f64, eta: f64, same_basis: bool) -> f64 {
    dist.coeffs()
        .iter()
        .enumerate()
        .map(|(k, a)| a * yield_k(k, s0, eta, same_basis))
        .sum()
}

/// Same-basis error yield of a whole source by summing over photon numbers.
pub fn source_error_yield_sum(dist: &PhotonDistribution, s0: f64, eta: f64, e_d: f64) -> f64 {
    dist.coeffs()
        .iter()
        .enumerate()
        .map(|(k, a)| a * error_yield_k(k, s0, eta, e_d))
        .sum()
}

/// Closed-form yield of a phase-randomized coherent state of intensity `mu`.
pub fn coherent_yield(mu: f64, s0: f64, eta: f64, same_basis: bool) -> f64 {
    if same_basis {
        let x = -mu * eta;
        (1.0 - s0) * (-x.exp_m1() + 2.0 * s0 * x.exp())
    } else {
        let x = -mu * eta / 2.0;
        let half = x.exp();
        2.0 * (1.0 - s0) * half * (-x.exp_m1() + s0 * half)
    }
}

/// Closed-form same-basis error yield of a coherent state.
pub fn coherent_error_yield(mu: f64, s0: f64, eta: f64, e_d: f64) -> f64 {
    let ideal = s0 * (1.0 - s0) * (-mu * eta).exp();
    ideal + e_d * (coherent_yield(mu, s0, eta, true) - 2.0 * ideal)
}

/// What is observed for one (source, measurement basis) combination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    #[serde(rename = "yield")]
    pub yield_: f64,
    pub error_yield: f64,
    /// Pulses sent from the source and measured in the basis.
    pub trials: f64,
}

impl Observation {
    /// Quantum bit error rate `T / S` (0 when nothing was detected).
    pub fn error_rate(&self) -> f64 {
        if self.yield_ > 0.0 {
            self.error_yield / self.yield_
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ObservationEntry {
    source: SourceLabel,
    basis: Basis,
    #[serde(flatten)]
    obs: Observation,
}

/// Observed yields keyed by (source, measurement basis).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<ObservationEntry>", into = "Vec<ObservationEntry>")]
pub struct ObservedStats {
    pub entries: BTreeMap<(SourceLabel, Basis), Observation>,
}

impl From<Vec<ObservationEntry>> for ObservedStats {
    fn from(v: Vec<ObservationEntry>) -> Self {
        ObservedStats {
            entries: v.into_iter().map(|e| ((e.source, e.basis), e.obs)).collect(),
        }
    }
}

impl From<ObservedStats> for Vec<ObservationEntry> {
    fn from(s: ObservedStats) -> Self {
        s.entries
            .into_iter()
            .map(|((source, basis), obs)| ObservationEntry { source, basis, obs })
            .collect()
    }
}

impl ObservedStats {
    pub fn get(&self, source: SourceLabel, basis: Basis) -> Option<&Observation> {
        self.entries.get(&(source, basis))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Expected yields and error yields for every source in both measurement bases.
///
/// Coherent sources use the closed forms; other distributions are summed
/// term by term. Error yields across mismatched bases are `S / 2`.
pub fn simulate_observed(protocol: &ProtocolInstance, ch: &ChannelParams) -> ObservedStats {
    let s0 = ch.dark_count;
    let e_d = ch.misalignment;
    let mut entries = BTreeMap::new();
    for src in &protocol.sources {
        for basis in Basis::BOTH {
            let eta = ch.overall_transmittance(basis);
            // The vacuum carries no basis information: treat it as matched.
            let same = src.label.basis().is_none_or(|b| b == basis);
            let (s, t) = match src.dist.intensity() {
                Some(mu) => {
                    let s = coherent_yield(mu, s0, eta, same);
                    let t = if same {
                        coherent_error_yield(mu, s0, eta, e_d)
                    } else {
                        s / 2.0
                    };
                    (s, t)
                }
                None => {
                    let s = source_yield_sum(&src.dist, s0, eta, same);
                    let t = if same {
                        source_error_yield_sum(&src.dist, s0, eta, e_d)
                    } else {
                        s / 2.0
                    };
                    (s, t)
                }
            };
            entries.insert(
                (src.label, basis),
                Observation {
                    yield_: s.clamp(0.0, 1.0),
                    error_yield: t.clamp(0.0, s.clamp(0.0, 1.0)),
                    trials: src.prob * protocol.q(basis) * protocol.n_total,
                },
            );
        }
    }
    ObservedStats { entries }
}

/// Replaces expected values with binomially sampled relative frequencies.
pub fn sample_observed<R: Rng + ?Sized>(expected: &ObservedStats, rng: &mut R) -> ObservedStats {
    let entries = expected
        .entries
        .iter()
        .map(|(key, obs)| {
            let n = obs.trials.round().max(0.0) as u64;
            let sampled = if n == 0 {
                *obs
            } else {
                let clicks = Binomial::new(n, obs.yield_.clamp(0.0, 1.0))
                    .map(|b| b.sample(rng))
                    .unwrap_or(0);
                let errors = Binomial::new(clicks, obs.error_rate().clamp(0.0, 1.0))
                    .map(|b| b.sample(rng))
                    .unwrap_or(0);
                Observation {
                    yield_: clicks as f64 / n as f64,
                    error_yield: errors as f64 / n as f64,
                    trials: obs.trials,
                }
            };
            (*key, sampled)
        })
        .collect();
    ObservedStats { entries }
}
