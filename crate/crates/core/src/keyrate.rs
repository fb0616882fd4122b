//! Secret-key rate and its worst case over the unknown vacuum yields.

use serde::{Deserialize, Serialize};

use crate::channel::ObservedStats;
use crate::config::AnalysisConfig;
use crate::decoy::{AxisBounds, BoundSet, DecoyAnalysis};
use crate::error::{Error, Result};
use crate::search::{golden_section_min, linspace};
use crate::sources::{Basis, ProtocolFamily, ProtocolInstance, SourceLabel};

/// Binary entropy in bits.
pub fn binary_entropy(x: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::InvalidParameter(format!("entropy argument {x} outside [0, 1]")));
    }
    if x == 0.0 || x == 1.0 {
        return Ok(0.0);
    }
    Ok(-x * x.log2() - (1.0 - x) * (1.0 - x).log2())
}

/// Contribution of one key-generating source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceRate {
    pub source: SourceLabel,
    pub basis: Basis,
    pub rate: f64,
}

/// One evaluated point of the worst-case scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub s0_x: f64,
    pub s0_z: f64,
    pub rate: f64,
}

/// Worst-case key rate and where it was attained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyRateReport {
    pub family: ProtocolFamily,
    /// Secret bits per pulse sent.
    pub rate: f64,
    pub argmin_s0_z: f64,
    pub argmin_s0_x: f64,
    pub per_source: Vec<SourceRate>,
    pub bounds: BoundSet,
    pub s0_interval_z: (f64, f64),
    pub s0_interval_x: (f64, f64),
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scan_trace: Option<Vec<ScanPoint>>,
}

impl KeyRateReport {
    /// The scan trace as `s0_x,s0_z,R` rows.
    pub fn trace_csv(&self) -> Option<String> {
        let trace = self.scan_trace.as_ref()?;
        let mut out = String::from("s0_x,s0_z,R\n");
        for p in trace {
            out.push_str(&format!("{:.16e},{:.16e},{:.16e}\n", p.s0_x, p.s0_z, p.rate));
        }
        Some(out)
    }
}

#[derive(Debug, Clone, Copy)]
struct KeyTerm {
    source: SourceLabel,
    basis: Basis,
    /// `fraction * p * q_basis`
    sift: f64,
    a1: f64,
    /// `f_e S H(E)`
    correction: f64,
}

/// Bounds at one vacuum yield plus the entropy factors they feed.
#[derive(Debug, Clone)]
struct AxisPoint {
    bounds: AxisBounds,
    /// `1 - H(phase error)` for keys in the other basis.
    privacy_other: f64,
    /// Single-photon yield bound of each key term's source (0 for terms of
    /// the other basis).
    term_s1: Vec<f64>,
}

/// Evaluates the key rate for any `(<s_0^Z>, <s_0^X>)`.
pub struct RateModel<'a> {
    analysis: DecoyAnalysis<'a>,
    terms: Vec<KeyTerm>,
}

impl<'a> RateModel<'a> {
    pub fn new(protocol: &'a ProtocolInstance, stats: &ObservedStats, config: &AnalysisConfig) -> Result<Self> {
        let analysis = DecoyAnalysis::new(protocol, stats, config)?;
        let mut terms = Vec::new();
        for share in &protocol.distill_plan {
            let Some(basis) = share.source.basis() else { continue };
            let src = protocol.try_source(share.source)?;
            if share.fraction <= 0.0 || src.prob <= 0.0 {
                continue;
            }
            let obs = stats.get(share.source, basis).ok_or_else(|| {
                Error::AnalysisInfeasible(format!("no observation for key source {} in {basis}", share.source))
            })?;
            let qber = obs.error_rate().clamp(0.0, 1.0);
            terms.push(KeyTerm {
                source: share.source,
                basis,
                sift: share.fraction * src.prob * protocol.q(basis),
                a1: src.dist.coeff(1),
                correction: config.error_correction_efficiency * obs.yield_ * binary_entropy(qber)?,
            });
        }
        Ok(RateModel { analysis, terms })
    }

    pub fn analysis(&self) -> &DecoyAnalysis<'a> {
        &self.analysis
    }

    fn axis_point(&self, basis: Basis, s0: f64) -> Result<AxisPoint> {
        let bounds = self.analysis.axis(basis, s0)?;
        let privacy_other = 1.0 - binary_entropy(bounds.phase_error_other)?;
        let term_s1 = self
            .terms
            .iter()
            .map(|t| if t.basis == basis { bounds.s1_of(t.source) } else { 0.0 })
            .collect();
        Ok(AxisPoint {
            bounds,
            privacy_other,
            term_s1,
        })
    }

    fn term_rate(&self, i: usize, z: &AxisPoint, x: &AxisPoint) -> f64 {
        let t = &self.terms[i];
        let (own, privacy) = match t.basis {
            Basis::Z => (z, x.privacy_other),
            Basis::X if self.analysis.config().rx2_literal => (x, x.privacy_other),
            Basis::X => (x, z.privacy_other),
        };
        (t.sift * (t.a1 * own.term_s1[i] * privacy - t.correction)).max(0.0)
    }

    fn per_source(&self, z: &AxisPoint, x: &AxisPoint) -> Vec<SourceRate> {
        self.terms
            .iter()
            .enumerate()
            .map(|(i, t)| SourceRate {
                source: t.source,
                basis: t.basis,
                rate: self.term_rate(i, z, x),
            })
            .collect()
    }

    fn combine(&self, z: &AxisPoint, x: &AxisPoint) -> f64 {
        (0..self.terms.len()).map(|i| self.term_rate(i, z, x)).sum()
    }

    /// Key rate and bounds at a fixed pair of vacuum yields.
    pub fn rate_at(&self, s0_z: f64, s0_x: f64) -> Result<(f64, BoundSet)> {
        let z = self.axis_point(Basis::Z, s0_z)?;
        let x = self.axis_point(Basis::X, s0_x)?;
        let r = self.combine(&z, &x);
        Ok((r, BoundSet { z: z.bounds, x: x.bounds }))
    }

    /// Minimizes the rate over the feasible vacuum yields.
    pub fn worst_case(&self, record_trace: bool) -> Result<KeyRateReport> {
        let cfg = self.analysis.config();
        let n = cfg.grid_points.max(2);
        let (zlo, zhi) = self.analysis.s0_interval(Basis::Z);
        let (xlo, xhi) = self.analysis.s0_interval(Basis::X);
        let mut trace = record_trace.then(Vec::new);

        let zs = if self.analysis.protocol().family.scans_both_bases() {
            linspace(zlo, zhi, n)
        } else {
            // The single-photon bounds are monotone in <s_0^Z>, so its
            // pessimal value sits at one end of the interval.
            if zhi > zlo { vec![zlo, zhi] } else { vec![zlo] }
        };
        let xs = linspace(xlo, xhi, n);
        let zp = zs.iter().map(|&s| self.axis_point(Basis::Z, s)).collect::<Result<Vec<_>>>()?;
        let xp = xs.iter().map(|&s| self.axis_point(Basis::X, s)).collect::<Result<Vec<_>>>()?;

        let (mut bi, mut bj, mut best) = (0, 0, f64::INFINITY);
        for (i, z) in zp.iter().enumerate() {
            for (j, x) in xp.iter().enumerate() {
                let r = self.combine(z, x);
                if let Some(t) = trace.as_mut() {
                    t.push(ScanPoint { s0_x: xs[j], s0_z: zs[i], rate: r });
                }
                if r < best {
                    (bi, bj, best) = (i, j, r);
                }
            }
        }

        let (mut zb, mut xb) = (zs[bi], xs[bj]);
        let mut z_point = zp[bi].clone();
        let mut x_point = xp[bj].clone();
        let neighbourhood = |v: &[f64], i: usize| (v[i.saturating_sub(1)], v[(i + 1).min(v.len() - 1)]);
        let x_tol = cfg.refine_tolerance * (xhi - xlo);
        let z_tol = cfg.refine_tolerance * (zhi - zlo);
        let (xa, xb_hi) = neighbourhood(&xs, bj);
        let (za, zb_hi) = neighbourhood(&zs, bi);
        let rounds = if zs.len() > 2 { 3 } else { 1 };
        for _ in 0..rounds {
            if xb_hi > xa {
                let (xm, rm) = golden_section_min(
                    |s| {
                        self.axis_point(Basis::X, s)
                            .map_or(f64::INFINITY, |p| self.combine(&z_point, &p))
                    },
                    xa,
                    xb_hi,
                    x_tol,
                    200,
                );
                if rm < best {
                    best = rm;
                    xb = xm;
                    x_point = self.axis_point(Basis::X, xm)?;
                }
            }
            if zs.len() > 2 && zb_hi > za {
                let (zm, rm) = golden_section_min(
                    |s| {
                        self.axis_point(Basis::Z, s)
                            .map_or(f64::INFINITY, |p| self.combine(&p, &x_point))
                    },
                    za,
                    zb_hi,
                    z_tol,
                    200,
                );
                if rm < best {
                    best = rm;
                    zb = zm;
                    z_point = self.axis_point(Basis::Z, zm)?;
                }
            }
        }

        let per_source = self.per_source(&z_point, &x_point);
        Ok(KeyRateReport {
            family: self.analysis.protocol().family,
            rate: per_source.iter().map(|r| r.rate).sum::<f64>().max(0.0),
            argmin_s0_z: zb,
            argmin_s0_x: xb,
            per_source,
            bounds: BoundSet {
                z: z_point.bounds,
                x: x_point.bounds,
            },
            s0_interval_z: (zlo, zhi),
            s0_interval_x: (xlo, xhi),
            scan_trace: trace,
        })
    }
}

/// Key rate at fixed vacuum yields.
pub fn rate_at_s0(
    protocol: &ProtocolInstance,
    stats: &ObservedStats,
    s0_z: f64,
    s0_x: f64,
    config: &AnalysisConfig,
) -> Result<(f64, BoundSet)> {
    RateModel::new(protocol, stats, config)?.rate_at(s0_z, s0_x)
}

/// Worst-case key rate over the feasible vacuum yields.
pub fn worst_case_rate(
    protocol: &ProtocolInstance,
    stats: &ObservedStats,
    config: &AnalysisConfig,
    record_trace: bool,
) -> Result<KeyRateReport> {
    RateModel::new(protocol, stats, config)?.worst_case(record_trace)
}
