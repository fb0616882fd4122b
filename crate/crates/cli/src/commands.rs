use std::path::Path;

use serde::Serialize;

use decoykit::channel::simulate_observed;
use decoykit::keyrate::RateModel;
use decoykit::optimizer::{evaluate_params, optimize as run_optimize, OptimizationResult, OptimizeOptions};
use decoykit::search::linspace;
use decoykit::sources::{Basis, Param, ProtocolFamily};

use crate::run::{num, parse_family, to_json, CliError, Context, Format};

pub fn simulate(ctx: &Context, spec_path: &Path) -> Result<String, CliError> {
    let (_, protocol) = ctx.load_spec(spec_path)?;
    let stats = simulate_observed(&protocol, &ctx.channel()?);
    match ctx.format_or(Format::Json) {
        Format::Json => to_json(&stats),
        Format::Csv => {
            let mut out = String::from("source,basis,yield,error_yield,trials\n");
            for ((source, basis), obs) in &stats.entries {
                out.push_str(&format!(
                    "{source},{basis},{},{},{}\n",
                    num(obs.yield_),
                    num(obs.error_yield),
                    num(obs.trials)
                ));
            }
            Ok(out)
        }
    }
}

pub fn rate(ctx: &Context, spec_path: &Path) -> Result<String, CliError> {
    let (spec, _) = ctx.load_spec(spec_path)?;
    let channel = ctx.channel()?;
    let report = evaluate_params(spec.family, &spec.params, &channel, ctx.n_total_or(spec.n_total), &ctx.analysis)?;
    match ctx.format_or(Format::Json) {
        Format::Json => to_json(&report),
        Format::Csv => Ok(format!(
            "family,distance_km,rate,argmin_s0_z,argmin_s0_x\n{},{},{},{},{}\n",
            spec.family,
            num(channel.distance_km),
            num(report.rate),
            num(report.argmin_s0_z),
            num(report.argmin_s0_x)
        )),
    }
}

fn options(ctx: &Context, restarts: usize, seed: u64) -> Result<OptimizeOptions, CliError> {
    if restarts == 0 {
        return Err(CliError::Usage("--restarts must be at least 1".into()));
    }
    Ok(OptimizeOptions {
        restarts,
        seed,
        k_max: ctx.k_max,
        analysis: ctx.analysis.clone(),
        ..Default::default()
    })
}

fn params_header(family: ProtocolFamily) -> String {
    family.free_params().iter().map(|p| p.name()).collect::<Vec<_>>().join(",")
}

fn params_row(family: ProtocolFamily, result: &OptimizationResult) -> String {
    family
        .free_params()
        .iter()
        .map(|p: &Param| num(result.best_params.get(*p).unwrap_or(f64::NAN)))
        .collect::<Vec<_>>()
        .join(",")
}

pub fn optimize(ctx: &Context, family: &str, restarts: usize, seed: u64) -> Result<String, CliError> {
    let family = parse_family(family)?;
    let channel = ctx.channel()?;
    let result = run_optimize(family, &channel, ctx.n_total_or(None), &options(ctx, restarts, seed)?)?;
    match ctx.format_or(Format::Json) {
        Format::Json => to_json(&result),
        Format::Csv => Ok(format!(
            "family,distance_km,rate,{}\n{family},{},{},{}\n",
            params_header(family),
            num(channel.distance_km),
            num(result.best_rate),
            params_row(family, &result)
        )),
    }
}

#[derive(Serialize)]
struct SweepRow {
    distance_km: f64,
    result: OptimizationResult,
}

pub fn sweep(
    ctx: &Context,
    family: &str,
    from_km: f64,
    to_km: f64,
    step_km: f64,
    restarts: usize,
    seed: u64,
) -> Result<String, CliError> {
    let family = parse_family(family)?;
    if !(step_km > 0.0) || !step_km.is_finite() {
        return Err(CliError::Usage(format!("--step must be positive, got {step_km}")));
    }
    if !(to_km >= from_km) {
        return Err(CliError::Usage(format!("--to ({to_km}) is below --from ({from_km})")));
    }
    let opts = options(ctx, restarts, seed)?;
    let n_total = ctx.n_total_or(None);
    let steps = ((to_km - from_km) / step_km + 1e-9).floor() as usize;
    let mut rows = Vec::with_capacity(steps + 1);
    for i in 0..=steps {
        let d = from_km + step_km * i as f64;
        let channel = ctx.channel.at_distance(d);
        channel.validate()?;
        rows.push(SweepRow {
            distance_km: d,
            result: run_optimize(family, &channel, n_total, &opts)?,
        });
    }
    match ctx.format_or(Format::Csv) {
        Format::Json => to_json(&rows),
        Format::Csv => {
            let mut out = format!("distance_km,rate,{}\n", params_header(family));
            for row in &rows {
                out.push_str(&format!(
                    "{},{},{}\n",
                    num(row.distance_km),
                    num(row.result.best_rate),
                    params_row(family, &row.result)
                ));
            }
            Ok(out)
        }
    }
}

#[derive(Serialize)]
struct ScanRow {
    s0_x: f64,
    rate: f64,
}

pub fn s0scan(ctx: &Context, spec_path: &Path, policy: &str) -> Result<String, CliError> {
    let (_, protocol) = ctx.load_spec(spec_path)?;
    let stats = simulate_observed(&protocol, &ctx.channel()?);
    let model = RateModel::new(&protocol, &stats, &ctx.analysis)?;
    let (zlo, zhi) = model.analysis().s0_interval(Basis::Z);
    let s0_z = match policy {
        "lower" => zlo,
        "upper" => zhi,
        v => v
            .parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .ok_or_else(|| CliError::Usage(format!("--s0-z must be lower, upper or a number, got '{v}'")))?,
    };
    let (xlo, xhi) = model.analysis().s0_interval(Basis::X);
    let rows = linspace(xlo, xhi, ctx.analysis.grid_points)
        .into_iter()
        .map(|s0_x| Ok(ScanRow { s0_x, rate: model.rate_at(s0_z, s0_x)?.0 }))
        .collect::<Result<Vec<_>, CliError>>()?;
    match ctx.format_or(Format::Csv) {
        Format::Json => to_json(&rows),
        Format::Csv => {
            let mut out = String::from("s0_x,R\n");
            for r in &rows {
                out.push_str(&format!("{},{}\n", num(r.s0_x), num(r.rate)));
            }
            Ok(out)
        }
    }
}
