//! Photon-number source models and validated protocol construction.
//!
//! Every source is described by its photon-number distribution `a_k`
//! (`rho = sum_k a_k |k><k|`), truncated at `k_max`. Phase-randomized
//! coherent states get the Poisson distribution; the vacuum source is the
//! point mass at `k = 0`, so all downstream formulas treat it uniformly.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default photon-number truncation.
pub const DEFAULT_K_MAX: usize = 20;

/// Largest probability mass a truncated distribution may drop.
pub const TAIL_TOLERANCE: f64 = 1e-12;

/// Intensity of the strong Z source in the 3Int-1 protocol.
pub const THREE_INT_1_SIGNAL_INTENSITY: f64 = 0.479;

/// Preparation or measurement basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Basis {
    Z,
    X,
}

impl Basis {
    pub const BOTH: [Basis; 2] = [Basis::Z, Basis::X];

    pub fn other(self) -> Basis {
        match self {
            Basis::Z => Basis::X,
            Basis::X => Basis::Z,
        }
    }
}

impl fmt::Display for Basis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Basis::Z => "Z",
            Basis::X => "X",
        })
    }
}

/// Identifies one of Alice's sources: the vacuum source `O` or source
/// 1/2 of a preparation basis. Source 1 is always the weaker of a pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SourceLabel {
    O,
    Z1,
    Z2,
    X1,
    X2,
}

impl SourceLabel {
    pub const ALL: [SourceLabel; 5] = [
        SourceLabel::O,
        SourceLabel::Z1,
        SourceLabel::Z2,
        SourceLabel::X1,
        SourceLabel::X2,
    ];

    /// Preparation basis, `None` for the vacuum source.
    pub fn basis(self) -> Option<Basis> {
        match self {
            SourceLabel::O => None,
            SourceLabel::Z1 | SourceLabel::Z2 => Some(Basis::Z),
            SourceLabel::X1 | SourceLabel::X2 => Some(Basis::X),
        }
    }

    pub fn weak(basis: Basis) -> SourceLabel {
        match basis {
            Basis::Z => SourceLabel::Z1,
            Basis::X => SourceLabel::X1,
        }
    }

    pub fn strong(basis: Basis) -> SourceLabel {
        match basis {
            Basis::Z => SourceLabel::Z2,
            Basis::X => SourceLabel::X2,
        }
    }
}

impl fmt::Display for SourceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Truncated photon-number distribution `{a_k}` of one source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhotonDistribution {
    coeffs: Vec<f64>,
    /// Mean photon number when the source is a phase-randomized coherent state.
    intensity: Option<f64>,
}

impl PhotonDistribution {
    /// Poisson distribution `a_k = e^{-mu} mu^k / k!` for `k <= k_max`.
    ///
    /// The truncated coefficients are not renormalized; construction fails
    /// if the dropped tail exceeds [`TAIL_TOLERANCE`].
    pub fn poisson(mu: f64, k_max: usize) -> Result<Self> {
        if !(mu >= 0.0) || !mu.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "mean photon number must be finite and >= 0, got {mu}"
            )));
        }
        if k_max < 2 {
            return Err(Error::InvalidParameter(format!(
                "k_max must be at least 2, got {k_max}"
            )));
        }
        let mut coeffs = Vec::with_capacity(k_max + 1);
        let mut term = (-mu).exp();
        coeffs.push(term);
        for k in 1..=k_max {
            term *= mu / k as f64;
            coeffs.push(term);
        }
        let dist = PhotonDistribution {
            coeffs,
            intensity: Some(mu),
        };
        dist.check_tail()?;
        Ok(dist)
    }

    /// The vacuum state `{1, 0, 0, ...}` with intensity 0.
    pub fn vacuum(k_max: usize) -> Self {
        let mut coeffs = vec![0.0; k_max.max(2) + 1];
        coeffs[0] = 1.0;
        PhotonDistribution {
            coeffs,
            intensity: Some(0.0),
        }
    }

    /// Explicit coefficient vector (no known intensity).
    pub fn from_coeffs(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() < 3 {
            return Err(Error::InvalidParameter(
                "a distribution needs coefficients up to at least k = 2".into(),
            ));
        }
        if let Some(bad) = coeffs.iter().find(|a| !(**a >= 0.0) || !a.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "photon-number coefficient {bad} is not a probability"
            )));
        }
        let dist = PhotonDistribution {
            coeffs,
            intensity: None,
        };
        dist.check_tail()?;
        Ok(dist)
    }

    fn check_tail(&self) -> Result<()> {
        let total: f64 = self.coeffs.iter().sum();
        if total > 1.0 + 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "photon-number coefficients sum to {total} > 1"
            )));
        }
        let tail = self.tail_mass();
        if tail >= TAIL_TOLERANCE {
            return Err(Error::InvalidParameter(format!(
                "truncation at k_max = {} drops probability {tail:e} (limit {TAIL_TOLERANCE:e})",
                self.k_max()
            )));
        }
        Ok(())
    }

    /// `a_k`, zero beyond the truncation.
    #[inline]
    pub fn coeff(&self, k: usize) -> f64 {
        self.coeffs.get(k).copied().unwrap_or(0.0)
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn k_max(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn intensity(&self) -> Option<f64> {
        self.intensity
    }

    /// Probability mass beyond `k_max` (never negative).
    pub fn tail_mass(&self) -> f64 {
        (1.0 - self.coeffs.iter().sum::<f64>()).max(0.0)
    }
}

/// Checks the source-ordering condition `lo ≺ hi`:
/// `a_{k,hi}/a_{k,lo} >= a_{1,hi}/a_{1,lo} >= a_{0,hi}/a_{0,lo}` for all `k >= 2`.
pub fn check_order(lo: &PhotonDistribution, hi: &PhotonDistribution) -> Result<bool> {
    if lo.k_max() != hi.k_max() {
        return Err(Error::InvalidParameter(format!(
            "distributions truncated differently (k_max {} vs {})",
            lo.k_max(),
            hi.k_max()
        )));
    }
    let (lo0, lo1) = (lo.coeff(0), lo.coeff(1));
    if lo0 <= 0.0 || lo1 <= 0.0 {
        return Err(Error::OrderingUndefined(
            "weaker source needs a_0 > 0 and a_1 > 0".into(),
        ));
    }
    // Relative slack so identical distributions compare equal after rounding.
    const SLACK: f64 = 1e-12;
    let r0 = hi.coeff(0) / lo0;
    let r1 = hi.coeff(1) / lo1;
    if r1 < r0 * (1.0 - SLACK) {
        return Ok(false);
    }
    for k in 2..=lo.k_max() {
        let (a_lo, a_hi) = (lo.coeff(k), hi.coeff(k));
        if a_lo == 0.0 {
            if a_hi > 0.0 {
                return Err(Error::OrderingUndefined(format!(
                    "a_{k} of the weaker source is zero while the stronger one is not"
                )));
            }
            continue;
        }
        if a_hi / a_lo < r1 * (1.0 - SLACK) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// One source of a protocol with its selection probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub label: SourceLabel,
    pub dist: PhotonDistribution,
    pub prob: f64,
}

/// The protocol families compared in this crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ProtocolFamily {
    /// Symmetric three-intensity protocol with a vacuum source.
    #[serde(rename = "3Int-0")]
    ThreeInt0,
    /// Biased three-intensity protocol, X source tied to Z1, fixed signal intensity.
    #[serde(rename = "3Int-1")]
    ThreeInt1,
    /// Vacuum plus two Z sources and one X source.
    #[serde(rename = "4Int-1")]
    FourInt1,
    /// Two sources per basis, no vacuum.
    #[serde(rename = "4Int-2")]
    FourInt2,
    /// Vacuum plus two sources per basis, with a key/test split of Z1.
    #[serde(rename = "5Int-1")]
    FiveInt1,
}

impl ProtocolFamily {
    pub const ALL: [ProtocolFamily; 5] = [
        ProtocolFamily::ThreeInt0,
        ProtocolFamily::ThreeInt1,
        ProtocolFamily::FourInt1,
        ProtocolFamily::FourInt2,
        ProtocolFamily::FiveInt1,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ProtocolFamily::ThreeInt0 => "3Int-0",
            ProtocolFamily::ThreeInt1 => "3Int-1",
            ProtocolFamily::FourInt1 => "4Int-1",
            ProtocolFamily::FourInt2 => "4Int-2",
            ProtocolFamily::FiveInt1 => "5Int-1",
        }
    }

    /// Free parameters, in the order the optimizer walks them.
    pub fn free_params(self) -> &'static [Param] {
        use Param::*;
        match self {
            ProtocolFamily::ThreeInt0 => &[PZ1, PZ2, MuZ1, MuZ2],
            ProtocolFamily::ThreeInt1 => &[PZ1, PZ2, PX1, MuZ1, QX],
            ProtocolFamily::FourInt1 => &[PZ1, PZ2, PX1, MuZ1, MuZ2, MuX1, QX],
            ProtocolFamily::FourInt2 => &[PZ1, PZ2, PX1, MuZ1, MuZ2, MuX1, MuX2, QX],
            ProtocolFamily::FiveInt1 => &[PZ1, PZ2, PX1, PO, PSZ1, MuZ1, MuZ2, MuX1, MuX2, QX],
        }
    }

    /// The probability that absorbs the simplex remainder.
    pub fn remainder_param(self) -> Param {
        match self {
            ProtocolFamily::ThreeInt0 | ProtocolFamily::ThreeInt1 | ProtocolFamily::FourInt1 => {
                Param::PO
            }
            ProtocolFamily::FourInt2 | ProtocolFamily::FiveInt1 => Param::PX2,
        }
    }

    /// Whether the worst case must be searched jointly over both vacuum yields.
    pub fn scans_both_bases(self) -> bool {
        !matches!(self, ProtocolFamily::ThreeInt1 | ProtocolFamily::FourInt1)
    }

    pub fn has_vacuum(self) -> bool {
        !matches!(self, ProtocolFamily::FourInt2)
    }
}

impl fmt::Display for ProtocolFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProtocolFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ProtocolFamily::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidParameter(format!("unknown protocol family '{s}'")))
    }
}

/// Named protocol parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Param {
    PO,
    PZ1,
    PZ2,
    PX1,
    PX2,
    /// Probability of drawing Z1 pulses for key distillation (5Int-1).
    PSZ1,
    MuZ1,
    MuZ2,
    MuX1,
    MuX2,
    QX,
}

impl Param {
    pub const ALL: [Param; 11] = [
        Param::PO,
        Param::PZ1,
        Param::PZ2,
        Param::PX1,
        Param::PX2,
        Param::PSZ1,
        Param::MuZ1,
        Param::MuZ2,
        Param::MuX1,
        Param::MuX2,
        Param::QX,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Param::PO => "p_o",
            Param::PZ1 => "p_z1",
            Param::PZ2 => "p_z2",
            Param::PX1 => "p_x1",
            Param::PX2 => "p_x2",
            Param::PSZ1 => "p_s_z1",
            Param::MuZ1 => "mu_z1",
            Param::MuZ2 => "mu_z2",
            Param::MuX1 => "mu_x1",
            Param::MuX2 => "mu_x2",
            Param::QX => "q_x",
        }
    }

    pub fn is_probability(self) -> bool {
        matches!(
            self,
            Param::PO | Param::PZ1 | Param::PZ2 | Param::PX1 | Param::PX2 | Param::PSZ1
        )
    }

    pub fn is_intensity(self) -> bool {
        matches!(self, Param::MuZ1 | Param::MuZ2 | Param::MuX1 | Param::MuX2)
    }
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Param {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Param::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown parameter '{s}'")))
    }
}

/// Flat parameter map. Unset entries are `None`; unknown names are rejected
/// when deserializing.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_o: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_z1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_z2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_x1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_x2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_s_z1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_z1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_z2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_x1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_x2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_x: Option<f64>,
}

impl ProtocolParams {
    fn slot(&self, p: Param) -> &Option<f64> {
        match p {
            Param::PO => &self.p_o,
            Param::PZ1 => &self.p_z1,
            Param::PZ2 => &self.p_z2,
            Param::PX1 => &self.p_x1,
            Param::PX2 => &self.p_x2,
            Param::PSZ1 => &self.p_s_z1,
            Param::MuZ1 => &self.mu_z1,
            Param::MuZ2 => &self.mu_z2,
            Param::MuX1 => &self.mu_x1,
            Param::MuX2 => &self.mu_x2,
            Param::QX => &self.q_x,
        }
    }

    fn slot_mut(&mut self, p: Param) -> &mut Option<f64> {
        match p {
            Param::PO => &mut self.p_o,
            Param::PZ1 => &mut self.p_z1,
            Param::PZ2 => &mut self.p_z2,
            Param::PX1 => &mut self.p_x1,
            Param::PX2 => &mut self.p_x2,
            Param::PSZ1 => &mut self.p_s_z1,
            Param::MuZ1 => &mut self.mu_z1,
            Param::MuZ2 => &mut self.mu_z2,
            Param::MuX1 => &mut self.mu_x1,
            Param::MuX2 => &mut self.mu_x2,
            Param::QX => &mut self.q_x,
        }
    }

    pub fn get(&self, p: Param) -> Option<f64> {
        *self.slot(p)
    }

    pub fn set(&mut self, p: Param, value: f64) {
        *self.slot_mut(p) = Some(value);
    }

    pub fn with(mut self, p: Param, value: f64) -> Self {
        self.set(p, value);
        self
    }

    /// Collects the named values; `values[i]` belongs to `names[i]`.
    pub fn from_pairs(names: &[Param], values: &[f64]) -> Self {
        let mut params = ProtocolParams::default();
        for (p, v) in names.iter().zip(values) {
            params.set(*p, *v);
        }
        params
    }

    /// Set entries in canonical order.
    pub fn iter(&self) -> impl Iterator<Item = (Param, f64)> + '_ {
        Param::ALL
            .into_iter()
            .filter_map(|p| self.get(p).map(|v| (p, v)))
    }

    /// Keeps only the given parameters.
    pub fn restricted_to(&self, names: &[Param]) -> Self {
        let mut out = ProtocolParams::default();
        for p in names {
            if let Some(v) = self.get(*p) {
                out.set(*p, v);
            }
        }
        out
    }
}

/// Share of a source's sifted bits used for key distillation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyShare {
    pub source: SourceLabel,
    pub fraction: f64,
}

/// A validated protocol: sources, basis choice, pulse budget and key plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolInstance {
    pub family: ProtocolFamily,
    pub sources: Vec<SourceSpec>,
    /// Bob's probability of measuring in X; `q_z = 1 - q_x`.
    pub q_x: f64,
    pub n_total: f64,
    pub distill_plan: Vec<KeyShare>,
}

impl ProtocolInstance {
    pub fn source(&self, label: SourceLabel) -> Option<&SourceSpec> {
        self.sources.iter().find(|s| s.label == label)
    }

    pub fn try_source(&self, label: SourceLabel) -> Result<&SourceSpec> {
        self.source(label).ok_or(Error::UnknownSource(label))
    }

    pub fn q(&self, basis: Basis) -> f64 {
        match basis {
            Basis::X => self.q_x,
            Basis::Z => 1.0 - self.q_x,
        }
    }

    pub fn key_fraction(&self, label: SourceLabel) -> f64 {
        self.distill_plan
            .iter()
            .find(|s| s.source == label)
            .map_or(0.0, |s| s.fraction)
    }

    pub fn k_max(&self) -> usize {
        self.sources.first().map_or(DEFAULT_K_MAX, |s| s.dist.k_max())
    }
}

/// Every parameter of a family, with ties and the remainder filled in.
fn resolve_params(family: ProtocolFamily, free: &ProtocolParams) -> ProtocolParams {
    use Param::*;
    let v = |p: Param| free.get(p).unwrap_or(f64::NAN);
    let mut all = free.restricted_to(family.free_params());
    match family {
        ProtocolFamily::ThreeInt0 => {
            all.set(PX1, v(PZ1));
            all.set(PX2, v(PZ2));
            all.set(MuX1, v(MuZ1));
            all.set(MuX2, v(MuZ2));
            all.set(QX, 0.5);
            all.set(PO, 1.0 - 2.0 * (v(PZ1) + v(PZ2)));
        }
        ProtocolFamily::ThreeInt1 => {
            all.set(MuZ2, THREE_INT_1_SIGNAL_INTENSITY);
            all.set(MuX1, v(MuZ1));
            all.set(PO, 1.0 - v(PZ1) - v(PZ2) - v(PX1));
        }
        ProtocolFamily::FourInt1 => {
            all.set(PO, 1.0 - v(PZ1) - v(PZ2) - v(PX1));
        }
        ProtocolFamily::FourInt2 => {
            all.set(PX2, 1.0 - v(PZ1) - v(PZ2) - v(PX1));
        }
        ProtocolFamily::FiveInt1 => {
            all.set(PX2, 1.0 - v(PZ1) - v(PZ2) - v(PX1) - v(PO));
        }
    }
    // Rounding can leave the remainder a hair below zero.
    let rem = family.remainder_param();
    if let Some(r) = all.get(rem) {
        if r < 0.0 && r > -1e-12 {
            all.set(rem, 0.0);
        }
    }
    all
}

fn tie_constraint(family: ProtocolFamily, p: Param) -> &'static str {
    if p == family.remainder_param() {
        return "normalization";
    }
    match family {
        ProtocolFamily::ThreeInt0 => "symmetric-bases (3Int-0 fixes q_z = q_x and Z_j = X_j)",
        ProtocolFamily::ThreeInt1 if p == Param::MuZ2 => "fixed-intensity (3Int-1 has mu_z2 = 0.479)",
        ProtocolFamily::ThreeInt1 => "tied-source (3Int-1 has X1 = Z1)",
        _ => "free-parameters",
    }
}

/// Builds and validates a protocol instance from a family's free parameters.
///
/// Parameters that the family fixes (ties, the simplex remainder) may also be
/// supplied, but only with the value the family implies.
pub fn build_protocol(
    family: ProtocolFamily,
    params: &ProtocolParams,
    n_total: f64,
    k_max: usize,
) -> Result<ProtocolInstance> {
    use Param::*;
    if !(n_total > 0.0) || !n_total.is_finite() {
        return Err(Error::validation(
            "pulse-count",
            format!("total pulse count must be positive, got {n_total}"),
        ));
    }
    let free = family.free_params();
    for p in free {
        match params.get(*p) {
            None => {
                return Err(Error::validation(
                    "free-parameters",
                    format!("{family} requires parameter {p}"),
                ))
            }
            Some(v) if !v.is_finite() => {
                return Err(Error::validation(
                    "free-parameters",
                    format!("parameter {p} = {v} is not finite"),
                ))
            }
            _ => {}
        }
    }
    let all = resolve_params(family, params);
    for (p, supplied) in params.iter() {
        if free.contains(&p) {
            continue;
        }
        match all.get(p) {
            Some(implied) if (implied - supplied).abs() <= 1e-12 => {}
            Some(implied) => {
                return Err(Error::validation(
                    tie_constraint(family, p),
                    format!("{p} = {supplied} but {family} implies {implied}"),
                ))
            }
            None => {
                return Err(Error::validation(
                    "free-parameters",
                    format!("{family} has no parameter {p}"),
                ))
            }
        }
    }

    let q_x = all.get(QX).unwrap_or(f64::NAN);
    if !(q_x > 0.0 && q_x < 1.0) {
        return Err(Error::validation(
            "basis-probability",
            format!("q_x must lie in (0, 1), got {q_x}"),
        ));
    }

    let labels: &[SourceLabel] = match family {
        ProtocolFamily::ThreeInt1 | ProtocolFamily::FourInt1 => {
            &[SourceLabel::O, SourceLabel::Z1, SourceLabel::Z2, SourceLabel::X1]
        }
        ProtocolFamily::FourInt2 => &[SourceLabel::Z1, SourceLabel::Z2, SourceLabel::X1, SourceLabel::X2],
        ProtocolFamily::ThreeInt0 | ProtocolFamily::FiveInt1 => &SourceLabel::ALL,
    };
    let prob_of = |l: SourceLabel| match l {
        SourceLabel::O => PO,
        SourceLabel::Z1 => PZ1,
        SourceLabel::Z2 => PZ2,
        SourceLabel::X1 => PX1,
        SourceLabel::X2 => PX2,
    };
    let mu_of = |l: SourceLabel| match l {
        SourceLabel::O => None,
        SourceLabel::Z1 => Some(MuZ1),
        SourceLabel::Z2 => Some(MuZ2),
        SourceLabel::X1 => Some(MuX1),
        SourceLabel::X2 => Some(MuX2),
    };

    let mut total = 0.0;
    for l in labels {
        let p = all.get(prob_of(*l)).unwrap_or(f64::NAN);
        if p < -1e-12 && prob_of(*l) == family.remainder_param() {
            return Err(Error::validation(
                "normalization",
                format!("source probabilities exceed 1 (remainder {p})"),
            ));
        }
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::validation(
                "probability-range",
                format!("p_{l} = {p} outside [0, 1]"),
            ));
        }
        total += p;
    }
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::validation(
            "normalization",
            format!("source probabilities sum to {total}, not 1"),
        ));
    }

    let mut sources = Vec::with_capacity(labels.len());
    for l in labels {
        let dist = match mu_of(*l) {
            None => PhotonDistribution::vacuum(k_max),
            Some(mp) => {
                let mu = all.get(mp).unwrap_or(f64::NAN);
                if !(mu > 0.0) {
                    return Err(Error::validation(
                        "intensity-range",
                        format!("{mp} must be positive, got {mu}"),
                    ));
                }
                PhotonDistribution::poisson(mu, k_max)?
            }
        };
        sources.push(SourceSpec {
            label: *l,
            prob: all.get(prob_of(*l)).unwrap_or(0.0),
            dist,
        });
    }

    for basis in Basis::BOTH {
        let (w, s) = (SourceLabel::weak(basis), SourceLabel::strong(basis));
        let (Some(weak), Some(strong)) = (
            sources.iter().find(|x| x.label == w),
            sources.iter().find(|x| x.label == s),
        ) else {
            continue;
        };
        let (mu_w, mu_s) = (
            weak.dist.intensity().unwrap_or(0.0),
            strong.dist.intensity().unwrap_or(0.0),
        );
        if mu_w >= mu_s {
            return Err(Error::validation(
                "intensity-ordering",
                format!("need mu_{w} < mu_{s}, got {mu_w} >= {mu_s}"),
            ));
        }
        if !check_order(&weak.dist, &strong.dist)? {
            return Err(Error::validation(
                "source-ordering",
                format!("{w} and {s} violate the ordering condition"),
            ));
        }
    }

    let distill_plan = match family {
        ProtocolFamily::ThreeInt1 | ProtocolFamily::FourInt1 => vec![
            KeyShare { source: SourceLabel::Z1, fraction: 1.0 },
            KeyShare { source: SourceLabel::Z2, fraction: 1.0 },
        ],
        ProtocolFamily::ThreeInt0 | ProtocolFamily::FourInt2 => vec![
            KeyShare { source: SourceLabel::Z2, fraction: 1.0 },
            KeyShare { source: SourceLabel::X2, fraction: 1.0 },
        ],
        ProtocolFamily::FiveInt1 => {
            let p_z1 = all.get(PZ1).unwrap_or(0.0);
            let p_s = all.get(PSZ1).unwrap_or(f64::NAN);
            if !(p_s >= 0.0 && p_s <= p_z1 + 1e-15) {
                return Err(Error::validation(
                    "key-split",
                    format!("need 0 <= p_s_z1 <= p_z1, got p_s_z1 = {p_s}, p_z1 = {p_z1}"),
                ));
            }
            let fraction = if p_z1 > 0.0 { (p_s / p_z1).min(1.0) } else { 0.0 };
            vec![
                KeyShare { source: SourceLabel::Z1, fraction },
                KeyShare { source: SourceLabel::Z2, fraction: 1.0 },
                KeyShare { source: SourceLabel::X2, fraction: 1.0 },
            ]
        }
    };

    Ok(ProtocolInstance {
        family,
        sources,
        q_x,
        n_total,
        distill_plan,
    })
}
