//! Coordinate-descent search for the parameters maximizing the worst-case
//! key rate of a protocol family.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{simulate_observed, ChannelParams};
use crate::config::AnalysisConfig;
use crate::error::{Error, Result};
use crate::keyrate::{worst_case_rate, KeyRateReport};
use crate::search::{golden_section_min, linspace};
use crate::sources::{
    build_protocol, ProtocolFamily, ProtocolParams, Param, DEFAULT_K_MAX, THREE_INT_1_SIGNAL_INTENSITY,
};

pub const MU_MIN: f64 = 1e-4;
pub const MU_MAX: f64 = 1.0;
/// Minimum separation between a weak and a strong intensity.
pub const MU_GAP: f64 = 1e-4;
pub const Q_MIN: f64 = 1e-3;

/// Points of the coarse scan that brackets each one-variable search.
const COARSE_POINTS: usize = 9;

/// Free parameters of a family and their (partly point-dependent) bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterBox {
    pub family: ProtocolFamily,
    pub names: Vec<Param>,
    /// Static bounds; [`ParameterBox::coordinate_bounds`] tightens them.
    /// The `p_s_z1` coordinate is searched as the fraction `p_s_z1 / p_z1`.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ParameterBox {
    pub fn for_family(family: ProtocolFamily) -> Self {
        let names = family.free_params().to_vec();
        let (lower, upper) = names
            .iter()
            .map(|p| match p {
                Param::QX => (Q_MIN, 1.0 - Q_MIN),
                p if p.is_intensity() => (MU_MIN, MU_MAX),
                _ => (0.0, 1.0),
            })
            .unzip();
        ParameterBox {
            family,
            names,
            lower,
            upper,
        }
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    fn index(&self, p: Param) -> Option<usize> {
        self.names.iter().position(|n| *n == p)
    }

    fn value(&self, point: &[f64], p: Param) -> Option<f64> {
        self.index(p).map(|i| point[i])
    }

    /// Weight of a probability coordinate in the normalization.
    fn simplex_weight(&self, p: Param) -> f64 {
        match (self.family, p) {
            (ProtocolFamily::ThreeInt0, Param::PZ1 | Param::PZ2) => 2.0,
            (_, Param::PSZ1) => 0.0,
            (_, p) if p.is_probability() => 1.0,
            _ => 0.0,
        }
    }

    /// Feasible range of coordinate `i` with every other coordinate held at
    /// its value in `point`.
    pub fn coordinate_bounds(&self, i: usize, point: &[f64]) -> (f64, f64) {
        let p = self.names[i];
        let (mut lo, mut hi) = (self.lower[i], self.upper[i]);
        if self.simplex_weight(p) > 0.0 {
            let others: f64 = self
                .names
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(j, q)| self.simplex_weight(*q) * point[j])
                .sum();
            hi = ((1.0 - others) / self.simplex_weight(p)).min(hi);
        } else if let Some((partner, weak)) = intensity_partner(p) {
            let other = self.value(point, partner).or_else(|| {
                (self.family == ProtocolFamily::ThreeInt1 && partner == Param::MuZ2)
                    .then_some(THREE_INT_1_SIGNAL_INTENSITY)
            });
            if let Some(v) = other {
                if weak {
                    hi = hi.min(v - MU_GAP);
                } else {
                    lo = lo.max(v + MU_GAP);
                }
            }
        }
        (lo, hi.max(lo))
    }

    /// Whether `point` satisfies every bound, up to `slack`.
    pub fn contains(&self, point: &[f64], slack: f64) -> bool {
        (0..self.dim()).all(|i| {
            let (lo, hi) = self.coordinate_bounds(i, point);
            point[i] >= lo - slack && point[i] <= hi + slack
        })
    }

    pub fn to_params(&self, point: &[f64]) -> ProtocolParams {
        let mut params = ProtocolParams::from_pairs(&self.names, point);
        if let (Some(f), Some(z1)) = (self.value(point, Param::PSZ1), self.value(point, Param::PZ1)) {
            params.set(Param::PSZ1, f * z1);
        }
        params
    }

    fn source_count(&self) -> f64 {
        match self.family {
            ProtocolFamily::ThreeInt0 | ProtocolFamily::FiveInt1 => 5.0,
            _ => 4.0,
        }
    }

    /// Intensities 0.1 / 0.4, probabilities uniform over the sources, `q_x = 1/2`.
    pub fn reference_start(&self) -> Vec<f64> {
        let uniform = 1.0 / self.source_count();
        let mut point: Vec<f64> = self
            .names
            .iter()
            .map(|p| match p {
                Param::QX => 0.5,
                Param::MuZ2 | Param::MuX2 => 0.4,
                p if p.is_intensity() => 0.1,
                _ => uniform,
            })
            .collect();
        if let Some(s) = self.index(Param::PSZ1) {
            point[s] = 0.5;
        }
        point
    }

    /// Starts on the two faces where five sources reduce to four: no second
    /// X source with all of Z1 distilled, and no vacuum source with none of
    /// Z1 distilled.
    fn degenerate_starts(&self) -> Vec<Vec<f64>> {
        if self.family != ProtocolFamily::FiveInt1 {
            return Vec::new();
        }
        let mut faces = Vec::new();
        for (p_o, key_z1) in [(0.25, true), (0.0, false)] {
            let mut point = self.reference_start();
            for (i, p) in self.names.iter().enumerate() {
                match p {
                    Param::PO => point[i] = p_o,
                    Param::PZ1 | Param::PZ2 | Param::PX1 => point[i] = 0.25,
                    _ => {}
                }
            }
            let s = self.index(Param::PSZ1).expect("5Int-1 distills part of Z1");
            point[s] = if key_z1 { 1.0 } else { 0.0 };
            faces.push(point);
        }
        faces
    }

    /// A uniformly random feasible point.
    pub fn random_start<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut point = vec![0.0; self.dim()];
        // Uniform on the probability simplex (including the remainder).
        let probs: Vec<usize> = (0..self.dim())
            .filter(|&i| self.simplex_weight(self.names[i]) > 0.0)
            .collect();
        let draws: Vec<f64> = (0..=probs.len()).map(|_| Exp1.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        for (k, &i) in probs.iter().enumerate() {
            point[i] = draws[k] / total / self.simplex_weight(self.names[i]);
        }
        for i in 0..self.dim() {
            match self.names[i] {
                Param::QX => point[i] = rng.random_range(Q_MIN..1.0 - Q_MIN),
                Param::PSZ1 => {}
                p if p.is_intensity() => point[i] = rng.random_range(MU_MIN..MU_MAX),
                _ => {}
            }
        }
        if let Some(s) = self.index(Param::PSZ1) {
            point[s] = rng.random::<f64>();
        }
        // Order each weak/strong pair and keep them apart.
        for (weak, strong) in [(Param::MuZ1, Param::MuZ2), (Param::MuX1, Param::MuX2)] {
            if let (Some(w), Some(s)) = (self.index(weak), self.index(strong)) {
                let (a, b) = (point[w].min(point[s]), point[w].max(point[s]));
                point[w] = a.min(MU_MAX - MU_GAP);
                point[s] = b.max(point[w] + MU_GAP);
            }
        }
        if self.family == ProtocolFamily::ThreeInt1 {
            if let Some(w) = self.index(Param::MuZ1) {
                point[w] = rng.random_range(MU_MIN..THREE_INT_1_SIGNAL_INTENSITY - MU_GAP);
            }
        }
        point
    }
}

/// The other member of a weak/strong intensity pair, and whether `p` is the weak one.
fn intensity_partner(p: Param) -> Option<(Param, bool)> {
    match p {
        Param::MuZ1 => Some((Param::MuZ2, true)),
        Param::MuZ2 => Some((Param::MuZ1, false)),
        Param::MuX1 => Some((Param::MuX2, true)),
        Param::MuX2 => Some((Param::MuX1, false)),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizeOptions {
    pub restarts: usize,
    pub seed: u64,
    /// A restart stops once a full sweep improves the rate by less than this
    /// relative amount.
    pub tolerance: f64,
    pub max_sweeps: usize,
    pub k_max: usize,
    pub analysis: AnalysisConfig,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        OptimizeOptions {
            restarts: 10,
            seed: 0,
            tolerance: 1e-4,
            max_sweeps: 40,
            k_max: DEFAULT_K_MAX,
            analysis: AnalysisConfig::default(),
        }
    }
}

/// Progress of one restart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartTrace {
    pub start: ProtocolParams,
    /// Best rate after each completed sweep.
    pub sweep_best: Vec<f64>,
    pub best_rate: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub family: ProtocolFamily,
    pub best_params: ProtocolParams,
    pub best_rate: f64,
    /// Report at the optimum; `None` only if the optimum itself is infeasible.
    pub report: Option<KeyRateReport>,
    pub restarts_used: usize,
    pub seed: u64,
    pub trace: Vec<RestartTrace>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<String>,
}

/// Build, simulate and evaluate one parameter point.
pub fn evaluate_params(
    family: ProtocolFamily,
    params: &ProtocolParams,
    channel: &ChannelParams,
    n_total: f64,
    config: &AnalysisConfig,
) -> Result<KeyRateReport> {
    evaluate_with_kmax(family, params, channel, n_total, config, DEFAULT_K_MAX)
}

fn evaluate_with_kmax(
    family: ProtocolFamily,
    params: &ProtocolParams,
    channel: &ChannelParams,
    n_total: f64,
    config: &AnalysisConfig,
    k_max: usize,
) -> Result<KeyRateReport> {
    channel.validate()?;
    let protocol = build_protocol(family, params, n_total, k_max)?;
    let stats = simulate_observed(&protocol, channel);
    worst_case_rate(&protocol, &stats, config, false)
}

struct Objective<'a> {
    family: ProtocolFamily,
    bx: &'a ParameterBox,
    channel: &'a ChannelParams,
    n_total: f64,
    options: &'a OptimizeOptions,
}

impl Objective<'_> {
    fn rate(&self, point: &[f64], evaluations: &mut usize) -> f64 {
        *evaluations += 1;
        evaluate_with_kmax(
            self.family,
            &self.bx.to_params(point),
            self.channel,
            self.n_total,
            &self.options.analysis,
            self.options.k_max,
        )
        .map_or(0.0, |r| r.rate)
    }

    fn local_search(&self, start: Vec<f64>) -> (Vec<f64>, RestartTrace) {
        let mut evaluations = 0;
        let mut x = start.clone();
        let mut best = self.rate(&x, &mut evaluations);
        let mut sweep_best = Vec::new();
        for _ in 0..self.options.max_sweeps {
            let before = best;
            for i in 0..self.bx.dim() {
                let (lo, hi) = self.bx.coordinate_bounds(i, &x);
                if hi - lo <= 1e-12 {
                    continue;
                }
                let mut probe = x.clone();
                let mut at = |v: f64, evaluations: &mut usize| {
                    probe[i] = v;
                    self.rate(&probe, evaluations)
                };
                // Coarse scan to bracket the best region, then golden section.
                let grid = linspace(lo, hi, COARSE_POINTS);
                let values: Vec<f64> = grid.iter().map(|&v| at(v, &mut evaluations)).collect();
                let k = values
                    .iter()
                    .enumerate()
                    .fold(0, |b, (j, v)| if *v > values[b] { j } else { b });
                let (mut cand, mut cand_rate) = (grid[k], values[k]);
                if values[k] > 0.0 {
                    let (a, b) = (grid[k.saturating_sub(1)], grid[(k + 1).min(grid.len() - 1)]);
                    let tol = self.options.tolerance * (hi - lo);
                    let (v, neg) = golden_section_min(|v| -at(v, &mut evaluations), a, b, tol, 100);
                    if -neg > cand_rate {
                        (cand, cand_rate) = (v, -neg);
                    }
                }
                if cand_rate > best {
                    x[i] = cand;
                    best = cand_rate;
                }
            }
            sweep_best.push(best);
            if best - before <= self.options.tolerance * best.abs() {
                break;
            }
        }
        let trace = RestartTrace {
            start: self.bx.to_params(&start),
            sweep_best,
            best_rate: best,
            evaluations,
        };
        (x, trace)
    }
}

/// Maximizes the worst-case key rate of `family` over its free parameters.
///
/// Starting points come from one seeded stream, so a fixed seed gives
/// identical results however the restarts are scheduled.
pub fn optimize(
    family: ProtocolFamily,
    channel: &ChannelParams,
    n_total: f64,
    options: &OptimizeOptions,
) -> Result<OptimizationResult> {
    channel.validate()?;
    if !(n_total > 0.0) || !n_total.is_finite() {
        return Err(Error::validation(
            "pulse-count",
            format!("total pulse count must be positive, got {n_total}"),
        ));
    }
    if options.restarts == 0 {
        return Err(Error::InvalidParameter("at least one restart is required".into()));
    }
    let bx = ParameterBox::for_family(family);
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut starts = vec![bx.reference_start()];
    starts.extend(bx.degenerate_starts());
    starts.truncate(options.restarts);
    while starts.len() < options.restarts {
        starts.push(bx.random_start(&mut rng));
    }

    let objective = Objective {
        family,
        bx: &bx,
        channel,
        n_total,
        options,
    };
    let runs: Vec<(Vec<f64>, RestartTrace)> = starts
        .into_par_iter()
        .map(|s| objective.local_search(s))
        .collect();

    let best_idx = runs
        .iter()
        .enumerate()
        .fold(0, |b, (i, r)| if r.1.best_rate > runs[b].1.best_rate { i } else { b });
    let best_point = runs[best_idx].0.clone();
    let best_params = bx.to_params(&best_point);
    let mut diagnostics = Vec::new();
    let report = match evaluate_with_kmax(family, &best_params, channel, n_total, &options.analysis, options.k_max) {
        Ok(r) => Some(r),
        Err(e) => {
            diagnostics.push(format!("optimum is not evaluable: {e}"));
            None
        }
    };
    let best_rate = report.as_ref().map_or(0.0, |r| r.rate);
    if best_rate == 0.0 {
        diagnostics.push(format!("{family}: no positive key rate found from {} starts", runs.len()));
    }
    Ok(OptimizationResult {
        family,
        best_params,
        best_rate,
        report,
        restarts_used: runs.len(),
        seed: options.seed,
        trace: runs.into_iter().map(|r| r.1).collect(),
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn starts_are_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for family in ProtocolFamily::ALL {
            let bx = ParameterBox::for_family(family);
            let mut starts = vec![bx.reference_start()];
            starts.extend(bx.degenerate_starts());
            for _ in 0..50 {
                starts.push(bx.random_start(&mut rng));
            }
            for s in starts {
                assert!(bx.contains(&s, 1e-12), "{family}: {s:?}");
                build_protocol(family, &bx.to_params(&s), 1e10, DEFAULT_K_MAX)
                    .unwrap_or_else(|e| panic!("{family}: {s:?}: {e}"));
            }
        }
    }

    #[test]
    fn coordinate_bounds_respect_simplex_and_ordering() {
        let bx = ParameterBox::for_family(ProtocolFamily::ThreeInt0);
        // p_z1, p_z2, mu_z1, mu_z2
        let point = [0.1, 0.2, 0.1, 0.4];
        let (lo, hi) = bx.coordinate_bounds(0, &point);
        assert_eq!(lo, 0.0);
        assert!((hi - 0.3).abs() < 1e-15);
        assert!((bx.coordinate_bounds(2, &point).1 - (0.4 - MU_GAP)).abs() < 1e-15);
        assert!((bx.coordinate_bounds(3, &point).0 - (0.1 + MU_GAP)).abs() < 1e-15);

        let bx = ParameterBox::for_family(ProtocolFamily::ThreeInt1);
        let mu = bx.index(Param::MuZ1).unwrap();
        let hi = bx.coordinate_bounds(mu, &bx.reference_start()).1;
        assert!((hi - (THREE_INT_1_SIGNAL_INTENSITY - MU_GAP)).abs() < 1e-15);
    }

    #[test]
    fn key_split_bounds() {
        let bx = ParameterBox::for_family(ProtocolFamily::FiveInt1);
        let point = bx.reference_start();
        let s = bx.index(Param::PSZ1).unwrap();
        let z1 = bx.index(Param::PZ1).unwrap();
        assert_eq!(bx.coordinate_bounds(s, &point), (0.0, 1.0));
        assert_eq!(bx.coordinate_bounds(z1, &point).0, 0.0);
        let params = bx.to_params(&point);
        assert_eq!(params.p_s_z1, Some(0.5 * point[z1]));
    }
}
