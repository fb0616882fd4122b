//! Run configuration, protocol spec files, output and exit codes.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use decoykit::channel::ChannelParams;
use decoykit::sources::{build_protocol, ProtocolFamily, ProtocolInstance, ProtocolParams, DEFAULT_K_MAX};
use decoykit::{AnalysisConfig, ErrorYieldBound};

use crate::GlobalOpts;

pub const DEFAULT_N_TOTAL: f64 = 1e10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

/// Contents of a `--config` file. Every field is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub channel: ChannelParams,
    pub analysis: AnalysisConfig,
    pub k_max: usize,
    pub format: Option<Format>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            channel: ChannelParams::default(),
            analysis: AnalysisConfig::default(),
            k_max: DEFAULT_K_MAX,
            format: None,
        }
    }
}

/// A protocol spec file: a family plus its free parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSpec {
    pub family: ProtocolFamily,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_total: Option<f64>,
    pub params: ProtocolParams,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
    Core(decoykit::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_infeasible() => 1,
            CliError::Core(_) | CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Io(m) => write!(f, "{m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<decoykit::Error> for CliError {
    fn from(e: decoykit::Error) -> Self {
        CliError::Core(e)
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))
}

/// Everything a command needs: merged configuration and CLI overrides.
#[derive(Debug, Clone)]
pub struct Context {
    pub channel: ChannelParams,
    pub analysis: AnalysisConfig,
    pub k_max: usize,
    pub format: Option<Format>,
    pub n_total: Option<f64>,
    distance: Option<f64>,
    out: Option<PathBuf>,
}

impl Context {
    pub fn load(opts: &GlobalOpts) -> Result<Self, CliError> {
        let mut cfg = match &opts.config {
            Some(path) => serde_json::from_str::<RunConfig>(&read(path)?)
                .map_err(|e| CliError::Usage(format!("bad config {}: {e}", path.display())))?,
            None => RunConfig::default(),
        };
        if let Some(eps) = opts.epsilon {
            cfg.analysis.epsilon = eps;
        }
        if let Some(g) = opts.grid {
            if g == 0 {
                return Err(CliError::Usage("--grid must be positive".into()));
            }
            cfg.analysis.grid_points = g;
        }
        if opts.fluct_free {
            cfg.analysis.fluctuation_free = true;
        }
        if opts.rx2_literal {
            cfg.analysis.rx2_literal = true;
        }
        if opts.eq18_literal {
            cfg.analysis.e1_error_yield = ErrorYieldBound::Observed;
        }
        if opts.conservative_e1 {
            cfg.analysis.e1_error_yield = ErrorYieldBound::UpperFluctuation;
        }
        if let Some(n) = opts.ntot {
            if !(n > 0.0) || !n.is_finite() {
                return Err(CliError::Usage(format!("--ntot must be positive, got {n}")));
            }
        }
        Ok(Context {
            channel: cfg.channel,
            analysis: cfg.analysis,
            k_max: cfg.k_max,
            format: opts.format.or(cfg.format),
            n_total: opts.ntot,
            distance: opts.distance,
            out: opts.out.clone(),
        })
    }

    /// Channel at `--distance` (or the configured distance when absent).
    pub fn channel(&self) -> Result<ChannelParams, CliError> {
        let ch = match self.distance {
            Some(d) => self.channel.at_distance(d),
            None => self.channel.clone(),
        };
        ch.validate()?;
        Ok(ch)
    }

    pub fn format_or(&self, default: Format) -> Format {
        self.format.unwrap_or(default)
    }

    pub fn n_total_or(&self, spec: Option<f64>) -> f64 {
        self.n_total.or(spec).unwrap_or(DEFAULT_N_TOTAL)
    }

    pub fn load_spec(&self, path: &Path) -> Result<(ProtocolSpec, ProtocolInstance), CliError> {
        let spec: ProtocolSpec = serde_json::from_str(&read(path)?)
            .map_err(|e| CliError::Usage(format!("bad protocol spec {}: {e}", path.display())))?;
        let protocol = build_protocol(spec.family, &spec.params, self.n_total_or(spec.n_total), self.k_max)?;
        Ok((spec, protocol))
    }

    pub fn emit(&self, text: &str) -> Result<(), CliError> {
        match &self.out {
            Some(path) => fs::write(path, text).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display()))),
            None => {
                print!("{text}");
                Ok(())
            }
        }
    }
}

pub fn parse_family(name: &str) -> Result<ProtocolFamily, CliError> {
    name.parse().map_err(|e: decoykit::Error| CliError::Usage(e.to_string()))
}

/// Full double precision for CSV cells.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    s.push('\n');
    Ok(s)
}
