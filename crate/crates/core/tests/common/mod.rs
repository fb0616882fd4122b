//! Shared fixtures and brute-force oracles for the integration tests.
#![allow(dead_code)]

use decoykit::channel::{
    coherent_error_yield, coherent_yield, error_rate_k, simulate_observed, source_error_yield_sum, source_yield_sum,
    yield_k, ChannelParams,
};
use decoykit::decoy::PairBound;
use decoykit::decoy::DecoyAnalysis;
use decoykit::sources::{
    build_protocol, check_order, Basis, Param, PhotonDistribution, ProtocolFamily, ProtocolInstance, ProtocolParams,
    SourceLabel, DEFAULT_K_MAX,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use decoykit::AnalysisConfig;

/// Operating points printed for 3Int-0, 4Int-1 and 4Int-2, with the rate
/// each gives at 110 km.
pub fn table_iv() -> Vec<(ProtocolFamily, ProtocolParams, f64)> {
    use Param::*;
    vec![
        (
            ProtocolFamily::ThreeInt0,
            ProtocolParams::from_pairs(&[PZ2, PZ1, MuZ2, MuZ1], &[0.338, 0.142, 0.390, 0.116]),
            2.39e-6,
        ),
        (
            ProtocolFamily::FourInt1,
            ProtocolParams::from_pairs(
                &[PZ2, PZ1, PX1, MuZ2, MuZ1, MuX1, QX],
                &[0.597, 0.190, 0.112, 0.379, 0.078, 0.255, 0.223],
            ),
            2.99e-6,
        ),
        (
            ProtocolFamily::FourInt2,
            ProtocolParams::from_pairs(
                &[PZ2, PZ1, PX1, MuZ2, MuZ1, MuX2, MuX1, QX],
                &[0.260, 0.077, 0.205, 0.419, 0.200, 0.396, 0.073, 0.579],
            ),
            3.50e-6,
        ),
    ]
}

pub fn table_iv_params(family: ProtocolFamily) -> ProtocolParams {
    table_iv()
        .into_iter()
        .find(|(f, _, _)| *f == family)
        .map(|(_, p, _)| p)
        .expect("no printed operating point for this family")
}

/// A reasonable operating point for every family.
pub fn representative(family: ProtocolFamily) -> ProtocolParams {
    use Param::*;
    match family {
        ProtocolFamily::ThreeInt1 => {
            ProtocolParams::from_pairs(&[PZ1, PZ2, PX1, MuZ1, QX], &[0.23, 0.60, 0.11, 0.16, 0.19])
        }
        ProtocolFamily::FiveInt1 => ProtocolParams::from_pairs(
            &[PZ1, PZ2, PX1, PO, PSZ1, MuZ1, MuZ2, MuX1, MuX2, QX],
            &[0.08, 0.26, 0.2, 0.05, 0.04, 0.2, 0.42, 0.073, 0.4, 0.58],
        ),
        f => table_iv_params(f),
    }
}

pub fn build(family: ProtocolFamily, params: &ProtocolParams) -> ProtocolInstance {
    build_protocol(family, params, 1e10, DEFAULT_K_MAX).expect("fixture must be valid")
}

/// Vacuum yield of the channel model: exactly one of two detectors fires on dark counts.
pub fn true_vacuum_yield(ch: &ChannelParams) -> f64 {
    2.0 * ch.dark_count * (1.0 - ch.dark_count)
}

/// Fluctuation-free soundness of every bound at one (family, distance).
/// Returns a description of each violation.
pub fn soundness_violations(family: ProtocolFamily, params: &ProtocolParams, distance: f64) -> Vec<String> {
    let protocol = build(family, params);
    let ch = ChannelParams::default().at_distance(distance);
    let stats = simulate_observed(&protocol, &ch);
    let cfg = AnalysisConfig::fluctuation_free();
    let mut out = Vec::new();
    let analysis = match DecoyAnalysis::new(&protocol, &stats, &cfg) {
        Ok(a) => a,
        Err(e) => return vec![format!("{family} at {distance} km: analysis failed: {e}")],
    };
    let s0 = true_vacuum_yield(&ch);
    let slack = 1e-9;
    for basis in Basis::BOTH {
        let (lo, hi) = analysis.s0_interval(basis);
        if lo > s0 * (1.0 + slack) || hi < s0 * (1.0 - slack) {
            out.push(format!("{family} {distance} km {basis}: s0 interval [{lo:e}, {hi:e}] misses {s0:e}"));
        }
        let eta = ch.overall_transmittance(basis);
        let s1 = yield_k(1, ch.dark_count, eta, true);
        let e1 = error_rate_k(1, ch.dark_count, eta, ch.misalignment);
        let axis = analysis.axis(basis, s0).expect("axis bounds");
        if axis.s1_mean_lower > s1 * (1.0 + slack) {
            out.push(format!("{family} {distance} km {basis}: s1 lower {:e} > true {s1:e}", axis.s1_mean_lower));
        }
        if let Some(e) = axis.e1_upper {
            if e < e1 * (1.0 - slack) {
                out.push(format!("{family} {distance} km {basis}: e1 upper {e:e} < true {e1:e}"));
            }
        }
    }
    out
}

/// Minimum of `s_1` over `{0 <= s_k <= 1 : sum_k a_{k,j} s_k = S_j (j = weak, strong)}`
/// with `s_0` fixed, by enumerating every vertex: two basic variables, all
/// others at 0 or 1. `None` when the set is empty.
pub fn lp_min_s1(weak: &[f64], strong: &[f64], s_weak: f64, s_strong: f64, s0: f64) -> Option<f64> {
    let k_max = weak.len() - 1;
    let vars: Vec<usize> = (1..=k_max).collect();
    let rhs = [s_weak - weak[0] * s0, s_strong - strong[0] * s0];
    let tol = 1e-12;
    let mut best: Option<f64> = None;
    for i in 0..vars.len() {
        for j in (i + 1)..vars.len() {
            let (bi, bj) = (vars[i], vars[j]);
            let others: Vec<usize> = vars.iter().copied().filter(|&k| k != bi && k != bj).collect();
            for mask in 0u32..(1 << others.len()) {
                let mut y = vec![0.0; k_max + 1];
                for (t, &k) in others.iter().enumerate() {
                    y[k] = f64::from((mask >> t) & 1);
                }
                let r0 = rhs[0] - others.iter().map(|&k| weak[k] * y[k]).sum::<f64>();
                let r1 = rhs[1] - others.iter().map(|&k| strong[k] * y[k]).sum::<f64>();
                let det = weak[bi] * strong[bj] - weak[bj] * strong[bi];
                if det.abs() < 1e-300 {
                    continue;
                }
                y[bi] = (r0 * strong[bj] - r1 * weak[bj]) / det;
                y[bj] = (weak[bi] * r1 - strong[bi] * r0) / det;
                if y[bi] < -tol || y[bi] > 1.0 + tol || y[bj] < -tol || y[bj] > 1.0 + tol {
                    continue;
                }
                let s1 = y[1].max(0.0);
                best = Some(best.map_or(s1, |b: f64| b.min(s1)));
            }
        }
    }
    best
}

/// Normalized Poisson weights truncated at `k_max`.
pub fn truncated_poisson(mu: f64, k_max: usize) -> Vec<f64> {
    let mut a = Vec::with_capacity(k_max + 1);
    let mut term = 1.0;
    for k in 0..=k_max {
        if k > 0 {
            term *= mu / k as f64;
        }
        a.push(term);
    }
    let total: f64 = a.iter().sum();
    a.iter().map(|x| x / total).collect()
}

/// Largest gap between the analytic two-source bound and the vertex-enumeration
/// minimum over `count` random instances with `k_max <= 8`. Yields follow the
/// channel model so the data are always consistent.
pub fn lp_oracle_max_gap(seed: u64, count: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let k_max = rng.random_range(3..=8);
        let mu_w = rng.random_range(0.01..0.5);
        let mu_s = rng.random_range(mu_w + 0.05..1.0);
        let (aw, as_) = (truncated_poisson(mu_w, k_max), truncated_poisson(mu_s, k_max));
        let weak = PhotonDistribution::from_coeffs(aw.clone()).unwrap();
        let strong = PhotonDistribution::from_coeffs(as_.clone()).unwrap();
        assert!(check_order(&weak, &strong).unwrap());

        let pd = 10f64.powf(rng.random_range(-7.0..-3.0));
        let eta = 10f64.powf(rng.random_range(-4.0..-1.0));
        let y: Vec<f64> = (0..=k_max).map(|k| yield_k(k, pd, eta, true)).collect();
        let sw: f64 = aw.iter().zip(&y).map(|(a, v)| a * v).sum();
        let ss: f64 = as_.iter().zip(&y).map(|(a, v)| a * v).sum();

        let analytic = PairBound::new((SourceLabel::Z1, &weak), (SourceLabel::Z2, &strong), sw, ss)
            .unwrap()
            .at(y[0]);
        let lp = lp_min_s1(&aw, &as_, sw, ss, y[0]).expect("true yields are feasible");
        worst = worst.max((analytic - lp).abs());
    }
    worst
}

/// Largest gap between the coherent-state closed forms and truncated Poisson
/// sums over mu in {0.05, ..., 1.0} and L in {0, 10, ..., 200} km.
pub fn closed_form_max_gap() -> f64 {
    let base = ChannelParams::default();
    let mut worst: f64 = 0.0;
    for i in 1..=20 {
        let mu = 0.05 * i as f64;
        let dist = PhotonDistribution::poisson(mu, DEFAULT_K_MAX).unwrap();
        for l in (0..=200).step_by(10) {
            let ch = base.at_distance(l as f64);
            let eta = ch.overall_transmittance(Basis::Z);
            for same in [true, false] {
                let d = (coherent_yield(mu, ch.dark_count, eta, same)
                    - source_yield_sum(&dist, ch.dark_count, eta, same))
                .abs();
                worst = worst.max(d);
            }
            let d = (coherent_error_yield(mu, ch.dark_count, eta, ch.misalignment)
                - source_error_yield_sum(&dist, ch.dark_count, eta, ch.misalignment))
            .abs();
            worst = worst.max(d);
        }
    }
    worst
}

/// Success probabilities used for the coverage checks.
pub const COVERAGE_PROBS: [f64; 5] = [1e-3, 5e-3, 0.02, 0.1, 0.5];

/// Coverage of the exact-Chernoff interval for `n`-trial binomial counts.
pub struct Coverage {
    /// Fraction of seeded simulations whose interval missed the true mean,
    /// worst over [`COVERAGE_PROBS`].
    pub empirical_miss: f64,
    /// Exact miss probability from the binomial pmf, worst over [`COVERAGE_PROBS`].
    pub exact_miss: f64,
}

pub fn chernoff_coverage(n: u64, reps: usize, epsilon: f64, seed: u64) -> Coverage {
    use decoykit::stats::{yield_interval, IntervalStrategy};
    use rand_distr::Distribution;
    use statrs::distribution::Discrete;

    let misses = |k: u64, p: f64| {
        let iv = yield_interval(k as f64 / n as f64, n as f64, epsilon, IntervalStrategy::ChernoffExact).unwrap();
        p < iv.lower || p > iv.upper
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut empirical_miss, mut exact_miss) = (0.0f64, 0.0f64);
    for p in COVERAGE_PROBS {
        let sampler = rand_distr::Binomial::new(n, p).unwrap();
        let missed = (0..reps).filter(|_| misses(sampler.sample(&mut rng), p)).count();
        empirical_miss = empirical_miss.max(missed as f64 / reps as f64);

        let pmf = statrs::distribution::Binomial::new(p, n).unwrap();
        let exact: f64 = (0..=n).filter(|&k| misses(k, p)).map(|k| pmf.pmf(k)).sum();
        exact_miss = exact_miss.max(exact);
    }
    Coverage { empirical_miss, exact_miss }
}
