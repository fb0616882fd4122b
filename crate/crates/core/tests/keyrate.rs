mod common;

use decoykit::channel::{simulate_observed, ChannelParams};
use decoykit::decoy::n_k_photons;
use decoykit::keyrate::{binary_entropy, worst_case_rate, RateModel};
use decoykit::sources::{build_protocol, Basis, ProtocolFamily, SourceLabel, DEFAULT_K_MAX};
use decoykit::AnalysisConfig;

use common::{build, table_iv_params, true_vacuum_yield};

fn close(got: f64, want: f64, rel: f64) -> bool {
    (got - want).abs() <= rel * want.abs()
}

fn at_110(family: ProtocolFamily) -> decoykit::sources::ProtocolInstance {
    build(family, &table_iv_params(family))
}

fn channel_110() -> ChannelParams {
    ChannelParams::default().at_distance(110.0)
}

// Reference values below come from an independent floating-point
// implementation of the same bounds.

#[test]
fn vacuum_intervals_match_reference() {
    let p = at_110(ProtocolFamily::FourInt2);
    let stats = simulate_observed(&p, &channel_110());
    let model = RateModel::new(&p, &stats, &AnalysisConfig::default()).unwrap();
    let (zlo, zhi) = model.analysis().s0_interval(Basis::Z);
    let (xlo, xhi) = model.analysis().s0_interval(Basis::X);
    assert_eq!((zlo, xlo), (0.0, 0.0));
    assert!(close(zhi, 1.090_407_452_348_140_6e-5, 1e-9), "{zhi:e}");
    assert!(close(xhi, 5.878_956_414_208_5e-6, 1e-9), "{xhi:e}");
}

#[test]
fn rate_at_fixed_vacuum_yields_matches_reference() {
    let cfg = AnalysisConfig::default();
    let p = at_110(ProtocolFamily::FourInt2);
    let stats = simulate_observed(&p, &channel_110());
    let model = RateModel::new(&p, &stats, &cfg).unwrap();
    for (z, x, want) in [
        (3e-6, 3.5e-6, 3.587_566_169_958_348_5e-6),
        (1e-6, 5e-6, 4.231_780_885_615_035e-6),
    ] {
        let r = model.rate_at(z, x).unwrap().0;
        assert!(close(r, want, 1e-9), "({z}, {x}): {r:e}");
    }

    let p3 = at_110(ProtocolFamily::ThreeInt0);
    let stats3 = simulate_observed(&p3, &channel_110());
    let r = RateModel::new(&p3, &stats3, &cfg).unwrap().rate_at(3e-6, 3e-6).unwrap().0;
    assert!(close(r, 2.692_563_357_518_836e-6, 1e-9), "{r:e}");
}

#[test]
fn x_axis_bounds_match_reference() {
    let p = at_110(ProtocolFamily::FourInt2);
    let stats = simulate_observed(&p, &channel_110());
    let model = RateModel::new(&p, &stats, &AnalysisConfig::default()).unwrap();
    let b = model.analysis().axis(Basis::X, 3.5e-6).unwrap();
    assert!(close(b.s1_mean_lower, 2.628_503_030_272_845e-4, 1e-9));
    assert!(close(b.s1_of(SourceLabel::X1), 2.505_914_118_634_048_6e-4, 1e-9));
    assert!(close(b.e1_upper.unwrap(), 5.497_028_663_081_015e-2, 1e-9));
    assert!(close(b.phase_error_other, 5.516_158_538_939_159_4e-2, 1e-9));
}

#[test]
fn single_photon_key_pulses() {
    let p = at_110(ProtocolFamily::FourInt2);
    let n = n_k_photons(&p, SourceLabel::Z2, 1, Basis::Z).unwrap();
    assert!(close(n, 301_647_742.086_723_8, 1e-9), "{n}");
    assert!((binary_entropy(0.033).unwrap() - 0.209_220_477_869_152_7).abs() < 1e-14);
}

#[test]
fn fluctuation_free_rate_matches_reference_and_dominates() {
    let p = at_110(ProtocolFamily::FourInt2);
    let ch = channel_110();
    let stats = simulate_observed(&p, &ch);
    let s0 = true_vacuum_yield(&ch);
    let ff = RateModel::new(&p, &stats, &AnalysisConfig::fluctuation_free()).unwrap();
    let r = ff.rate_at(s0, s0).unwrap().0;
    assert!(close(r, 6.992_018_692_198_659e-6, 1e-9), "{r:e}");

    for family in [ProtocolFamily::ThreeInt0, ProtocolFamily::FourInt1, ProtocolFamily::FourInt2] {
        let p = at_110(family);
        let stats = simulate_observed(&p, &ch);
        let finite = worst_case_rate(&p, &stats, &AnalysisConfig::default(), false).unwrap().rate;
        let asym = worst_case_rate(&p, &stats, &AnalysisConfig::fluctuation_free(), false).unwrap().rate;
        assert!(asym > finite, "{family}: {asym:e} <= {finite:e}");
    }
}

#[test]
fn rate_grows_with_pulse_count() {
    let ch = channel_110();
    for family in [ProtocolFamily::FourInt1, ProtocolFamily::FourInt2] {
        let mut last = 0.0;
        for n in [1e9, 1e10, 1e11] {
            let p = build_protocol(family, &table_iv_params(family), n, DEFAULT_K_MAX).unwrap();
            let stats = simulate_observed(&p, &ch);
            let r = worst_case_rate(&p, &stats, &AnalysisConfig::default(), false).unwrap().rate;
            assert!(r >= last, "{family} at {n:e}: {r:e} < {last:e}");
            last = r;
        }
    }
}

#[test]
fn bounds_weaken_as_epsilon_shrinks() {
    let p = at_110(ProtocolFamily::FourInt2);
    let stats = simulate_observed(&p, &channel_110());
    let mut prev: Option<(f64, f64, f64)> = None;
    for eps in [1e-6, 1e-8, 1e-10, 1e-12] {
        let cfg = AnalysisConfig { epsilon: eps, ..Default::default() };
        let model = RateModel::new(&p, &stats, &cfg).unwrap();
        let b = model.analysis().axis(Basis::X, 2e-6).unwrap();
        let cur = (b.s1_mean_lower, b.e1_upper.unwrap(), b.phase_error_other);
        if let Some(p) = prev {
            assert!(cur.0 <= p.0 && cur.1 >= p.1 && cur.2 >= p.2, "eps {eps}");
        }
        prev = Some(cur);
    }
}

#[test]
fn finer_grid_changes_little() {
    let p = at_110(ProtocolFamily::FourInt2);
    let stats = simulate_observed(&p, &channel_110());
    let fine = worst_case_rate(&p, &stats, &AnalysisConfig::default(), false).unwrap().rate;
    let cfg = AnalysisConfig { grid_points: 100, ..Default::default() };
    let coarse = worst_case_rate(&p, &stats, &cfg, false).unwrap().rate;
    assert!(close(coarse, fine, 1e-3), "{coarse:e} vs {fine:e}");
}

#[test]
fn worst_case_is_below_every_scanned_point() {
    for family in ProtocolFamily::ALL {
        let p = build(family, &common::representative(family));
        let stats = simulate_observed(&p, &channel_110());
        let report = worst_case_rate(&p, &stats, &AnalysisConfig::default(), true).unwrap();
        let trace = report.scan_trace.as_ref().unwrap();
        assert!(!trace.is_empty());
        assert!(trace.iter().all(|pt| report.rate <= pt.rate), "{family}");
        let csv = report.trace_csv().unwrap();
        assert!(csv.starts_with("s0_x,s0_z,R\n"));
        assert_eq!(csv.lines().count(), trace.len() + 1);
    }
}

#[test]
fn symmetric_protocol_gives_symmetric_bounds() {
    let p = at_110(ProtocolFamily::ThreeInt0);
    let stats = simulate_observed(&p, &channel_110());
    let model = RateModel::new(&p, &stats, &AnalysisConfig::default()).unwrap();
    let (lo, hi) = model.analysis().s0_interval(Basis::Z);
    assert_eq!((lo, hi), model.analysis().s0_interval(Basis::X));
    let s0 = 0.5 * (lo + hi);
    let (z, x) = (
        model.analysis().axis(Basis::Z, s0).unwrap(),
        model.analysis().axis(Basis::X, s0).unwrap(),
    );
    assert!(close(x.s1_mean_lower, z.s1_mean_lower, 1e-12));
    assert!(close(x.e1_upper.unwrap(), z.e1_upper.unwrap(), 1e-12));
    assert!(close(x.phase_error_other, z.phase_error_other, 1e-12));

    let report = model.worst_case(false).unwrap();
    let rz = report.per_source.iter().find(|r| r.basis == Basis::Z).unwrap().rate;
    let rx = report.per_source.iter().find(|r| r.basis == Basis::X).unwrap().rate;
    assert!(close(rx, rz, 1e-12), "{rz:e} vs {rx:e}");
}

#[test]
fn collapsed_interval_reduces_to_a_point_evaluation() {
    let p = at_110(ProtocolFamily::FourInt1);
    let stats = simulate_observed(&p, &channel_110());
    let cfg = AnalysisConfig::fluctuation_free();
    let model = RateModel::new(&p, &stats, &cfg).unwrap();
    let (zlo, zhi) = model.analysis().s0_interval(Basis::Z);
    let (xlo, xhi) = model.analysis().s0_interval(Basis::X);
    assert_eq!((zlo, xlo), (zhi, xhi));
    let report = model.worst_case(true).unwrap();
    assert_eq!(report.rate, model.rate_at(zlo, xlo).unwrap().0);
    assert_eq!(report.scan_trace.unwrap().len(), 1);
}
