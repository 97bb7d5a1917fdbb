use std::fmt;
use std::fs::{self, File};
use std::io::Write;
use std::path::Path;

use btlnmf::baselines::{aggregate, btl_mle, dispersion, mixture_btl_em_with, EmConfig};
use btlnmf::diagnostics::{finite_difference_check, stationarity_residual, FactorMatrix};
use btlnmf::io::{
    export_result, format_float, generate_synthetic, import_result, load_dataset, save_dataset, sparsity_report,
    write_factor_csvs, ExportFormat, Manifest,
};
use btlnmf::{fit as fit_once, multi_restart_fit, ComparisonTensor, Error, SolverConfig};
use log::{info, warn};
use serde_json::json;

use crate::manifest::{dataset_hash, RunManifest};
use crate::{AuditArgs, BtlArgs, DataArgs, DiagArgs, FitArgs, MixtureArgs, SynthArgs};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core { error: Error, context: Option<String> },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core { error, .. } if error.is_numerical() => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Core { error, context: None } => write!(f, "{error}"),
            CliError::Core { error, context: Some(c) } => write!(f, "{error} ({c})"),
        }
    }
}

impl From<Error> for CliError {
    fn from(error: Error) -> Self {
        CliError::Core { error, context: None }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e).into()
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e).into()
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e).into()
    }
}

type CliResult = Result<(), CliError>;

/// Tournament and player names for errors that carry indices.
fn context(error: &Error, data: &ComparisonTensor) -> Option<String> {
    let t = |i: usize| data.tournaments().get(i).cloned().unwrap_or_default();
    let p = |i: usize| data.players().get(i).cloned().unwrap_or_default();
    match error {
        Error::LogDomain { tournament, winner, loser, .. } => {
            Some(format!("tournament {}, {} vs {}", t(*tournament), p(*winner), p(*loser)))
        }
        Error::DegenerateW { tournament, .. } | Error::ZeroRowSum { tournament } => {
            Some(format!("tournament {}", t(*tournament)))
        }
        Error::DegenerateH { player, .. } => Some(format!("player {}", p(*player))),
        _ => None,
    }
}

fn named(error: Error, data: &ComparisonTensor) -> CliError {
    CliError::Core { context: context(&error, data), error }
}

fn load(input: &DataArgs) -> Result<ComparisonTensor, CliError> {
    let manifest = input.manifest.as_deref().map(Manifest::from_path).transpose()?;
    Ok(load_dataset(&input.data, manifest.as_ref())?)
}

fn hash(input: &DataArgs) -> Result<String, CliError> {
    Ok(dataset_hash(&input.data, input.manifest.as_deref())?)
}

/// Sizes the global rayon pool from `RANK_THREADS`, or one thread per
/// restart up to the hardware parallelism.
fn init_threads(restarts: usize) -> CliResult {
    let threads = match std::env::var("RANK_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => n,
            _ => return Err(CliError::Usage(format!("RANK_THREADS must be a positive integer, got {v:?}"))),
        },
        Err(_) => {
            let hw = std::thread::available_parallelism().map_or(1, |n| n.get());
            restarts.clamp(1, hw)
        }
    };
    // a second call in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}

pub fn fit(args: FitArgs) -> CliResult {
    if args.restarts == 0 {
        return Err(CliError::Usage("--restarts must be at least 1".into()));
    }
    let data = load(&args.input)?;
    let config = SolverConfig {
        rank: args.k,
        epsilon: args.eps,
        tolerance: args.tau,
        max_iterations: args.max_iter,
        normalization: args.norm.into(),
        seed: args.seed,
        strict_monotone: args.strict_monotone,
    };
    config.validate(data.num_tournaments(), data.num_players())?;
    init_threads(args.restarts)?;
    fs::create_dir_all(&args.out)?;

    let mut summary = csv::Writer::from_path(args.out.join("all_objectives.csv"))?;
    summary.write_record(["restart", "seed", "objective", "iterations", "converged"])?;
    let result = if args.restarts == 1 {
        let r = fit_once(&data, &config, None).map_err(|e| named(e, &data))?;
        summary.write_record([
            "0".to_string(),
            config.seed.to_string(),
            format_float(r.final_objective()),
            r.iterations.to_string(),
            r.converged.to_string(),
        ])?;
        r
    } else {
        let multi = multi_restart_fit(&data, &config, args.restarts).map_err(|e| named(e, &data))?;
        for s in &multi.restarts {
            summary.write_record([
                s.index.to_string(),
                s.seed.to_string(),
                format_float(s.objective),
                s.iterations.to_string(),
                s.converged.to_string(),
            ])?;
        }
        for (i, e) in &multi.failures {
            let c = context(e, &data).map(|c| format!(" ({c})")).unwrap_or_default();
            warn!("restart {i} failed: {e}{c}");
        }
        info!("best restart {} of {}", multi.best_index, args.restarts);
        multi.best
    };
    summary.flush()?;

    export_result(&result, &data, &config, args.out.join("result.json"), ExportFormat::Json)?;
    export_result(&result, &data, &config, &args.out, ExportFormat::CsvBundle)?;
    RunManifest::new("fit", json!({ "solver": config, "restarts": args.restarts }), hash(&args.input)?)
        .write(&args.out)?;

    if !result.converged {
        warn!("stopped after {} iterations without reaching tau = {:e}", result.iterations, config.tolerance);
    }
    println!("final objective      {}", format_float(result.final_objective()));
    println!("iterations           {}", result.iterations);
    println!("converged            {}", result.converged);
    println!("stationarity resid.  {:.3e}", result.stationarity_residual);
    Ok(())
}

/// Player rows, one column per component, then mixture weights and the
/// log-likelihood.
fn write_skill_table(
    path: &Path,
    players: &[String],
    components: &[Vec<f64>],
    weights: &[f64],
    log_likelihood: f64,
) -> CliResult {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["player".to_string()];
    header.extend((1..=components.len()).map(|c| format!("component_{c}")));
    w.write_record(&header)?;
    for (i, name) in players.iter().enumerate() {
        let mut row = vec![name.clone()];
        row.extend(components.iter().map(|c| format_float(c[i])));
        w.write_record(&row)?;
    }
    let mut row = vec!["mixture_weight".to_string()];
    row.extend(weights.iter().map(|&x| format_float(x)));
    w.write_record(&row)?;
    let mut row = vec!["log_likelihood".to_string(), format_float(log_likelihood)];
    row.resize(components.len() + 1, String::new());
    w.write_record(&row)?;
    w.flush()?;
    Ok(())
}

pub fn baseline_btl(args: BtlArgs) -> CliResult {
    let data = load(&args.input)?;
    let agg = aggregate(&data);
    let fit = btl_mle(&agg, args.tol, args.max_iter)?;
    if !fit.converged {
        warn!("BTL iteration stopped after {} iterations", fit.iterations);
    }
    let mut order: Vec<usize> = (0..agg.num_players()).collect();
    order.sort_by(|&a, &b| fit.skills[b].total_cmp(&fit.skills[a]));
    for &i in &order {
        println!("{:<28} {:.4e}", agg.players[i], fit.skills[i]);
    }
    println!("log-likelihood       {:.2}", fit.log_likelihood);
    if let Some(out) = &args.out {
        fs::create_dir_all(out)?;
        write_skill_table(
            &out.join("baseline.csv"),
            &agg.players,
            std::slice::from_ref(&fit.skills),
            &[1.0],
            fit.log_likelihood,
        )?;
        RunManifest::new(
            "baseline btl",
            json!({ "tolerance": args.tol, "max_iterations": args.max_iter }),
            hash(&args.input)?,
        )
        .write(out)?;
    }
    Ok(())
}

pub fn baseline_mixture(args: MixtureArgs) -> CliResult {
    let data = load(&args.input)?;
    let agg = aggregate(&data);
    let config = EmConfig {
        num_components: args.k,
        num_restarts: args.restarts,
        seed: args.seed,
        tolerance: args.tol,
        max_iterations: args.max_iter,
        ..EmConfig::default()
    };
    init_threads(args.restarts)?;
    let fit = mixture_btl_em_with(&agg, &config, Default::default())?;
    let report = dispersion(&fit, args.window);
    let best = &fit.best;
    for c in &best.degenerate {
        warn!("component {} of the best solution puts almost all mass on one player", c + 1);
    }
    for c in &best.collapsed {
        warn!("component {} of the best solution has collapsed to zero weight", c + 1);
    }
    println!("best log-likelihood  {:.2} (restart {})", best.log_likelihood, fit.best_index);
    println!("weights              {:?}", best.weights);
    println!(
        "dispersion           {} restarts within {} of best, max parameter distance {:.3e}",
        report.near_optimal, report.window, report.max_distance
    );
    println!("log-likelihood range [{:.2}, {:.2}]", report.min_log_likelihood, report.max_log_likelihood);
    if let Some(out) = &args.out {
        fs::create_dir_all(out)?;
        write_skill_table(
            &out.join("baseline.csv"),
            &agg.players,
            &best.components,
            &best.weights,
            best.log_likelihood,
        )?;
        let mut w = csv::Writer::from_path(out.join("all_log_likelihoods.csv"))?;
        w.write_record(["restart", "log_likelihood", "iterations", "converged", "collapsed", "degenerate"])?;
        for (i, r) in fit.runs.iter().enumerate() {
            w.write_record([
                i.to_string(),
                format_float(r.log_likelihood),
                r.iterations.to_string(),
                r.converged.to_string(),
                (!r.collapsed.is_empty()).to_string(),
                (!r.degenerate.is_empty()).to_string(),
            ])?;
        }
        w.flush()?;
        let mut f = File::create(out.join("dispersion.json"))?;
        serde_json::to_writer_pretty(&mut f, &report)?;
        f.write_all(b"\n")?;
        RunManifest::new(
            "baseline mixture",
            json!({
                "components": args.k,
                "restarts": args.restarts,
                "seed": args.seed,
                "tolerance": args.tol,
                "max_iterations": args.max_iter,
                "inner_iterations": config.inner_iterations,
            }),
            hash(&args.input)?,
        )
        .write(out)?;
    }
    Ok(())
}

pub fn audit(args: AuditArgs) -> CliResult {
    let data = load(&args.input)?;
    let r = sparsity_report(&data);
    println!(
        "Total entries {} x {} x {} = {}",
        data.num_tournaments(),
        data.num_players(),
        data.num_players(),
        r.total_entries
    );
    println!("{:<24}{:>10}{:>12}", "", "Number", "Percentage");
    for (label, s) in r.rows() {
        println!("{label:<24}{:>10}{:>11.2}%", s.count, s.percent);
    }
    if let Some(path) = &args.csv {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["class", "count", "percent"])?;
        for (label, s) in r.rows() {
            w.write_record([label.to_string(), s.count.to_string(), format_float(s.percent)])?;
        }
        w.write_record(["total".to_string(), r.total_entries.to_string(), "100".to_string()])?;
        w.flush()?;
    }
    Ok(())
}

pub fn synth(args: SynthArgs) -> CliResult {
    let (data, truth) = generate_synthetic(args.m, args.n, args.k, args.games, args.seed)?;
    fs::create_dir_all(&args.out)?;
    let csv_path = args.out.join("data.csv");
    save_dataset(&data, &csv_path)?;
    let manifest_path = args.out.join("data.manifest.json");
    let mut f = File::create(&manifest_path)?;
    serde_json::to_writer_pretty(&mut f, &Manifest::of(&data))?;
    f.write_all(b"\n")?;
    write_factor_csvs(&args.out.join("truth"), &truth, data.tournaments(), data.players())?;
    RunManifest::new(
        "synth",
        json!({ "m": args.m, "n": args.n, "k": args.k, "games": args.games, "seed": args.seed }),
        dataset_hash(&csv_path, Some(&manifest_path))?,
    )
    .write(&args.out)?;
    println!(
        "wrote {} games over {} tournaments and {} players to {}",
        data.total_games(),
        args.m,
        args.n,
        csv_path.display()
    );
    Ok(())
}

pub fn diag(args: DiagArgs) -> CliResult {
    let data = load(&args.input)?;
    let doc = import_result(&args.result)?;
    if doc.players != data.players() || doc.tournaments != data.tournaments() {
        return Err(CliError::Usage(
            "result labels do not match the dataset; pass the same --manifest used for the fit".into(),
        ));
    }
    let factors = doc.factors()?;
    let eps = doc.config.epsilon;
    let report = stationarity_residual(&data, &factors, eps, args.threshold).map_err(|e| named(e, &data))?;
    let fd = finite_difference_check(&data, &factors, eps, args.step)?;
    println!("objective            {}", format_float(report.objective));
    println!("stationarity resid.  {:.3e}", report.residual);
    println!("  interior max |g|   {:.3e}", report.interior_max_abs_grad);
    println!("  boundary max -g    {:.3e}", report.boundary_max_neg_grad);
    if let Some(c) = report.worst_coordinate {
        let what = match c.matrix {
            FactorMatrix::W => format!("W[{}, factor_{}]", data.tournaments()[c.row], c.col + 1),
            FactorMatrix::H => format!("H[factor_{}, {}]", c.row + 1, data.players()[c.col]),
        };
        println!("  worst coordinate   {what}");
    }
    println!("finite-diff. error   {fd:.3e} (step {:e})", args.step);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Usage("x".into()).exit_code(), 1);
        assert_eq!(CliError::from(Error::Parse { line: 2, message: "x".into() }).exit_code(), 1);
        assert_eq!(CliError::from(Error::DegenerateH { factor: 0, player: 1 }).exit_code(), 2);
        assert_eq!(CliError::from(Error::Disconnected { components: vec![] }).exit_code(), 2);
    }

    #[test]
    fn errors_are_named() {
        let data =
            ComparisonTensor::new(Array3::zeros((1, 2, 2)), vec!["Open".into()], vec!["Ann".into(), "Bo".into()])
                .unwrap();
        let e = named(Error::DegenerateH { factor: 0, player: 1 }, &data);
        assert!(e.to_string().ends_with("(player Bo)"), "{e}");
        let e = named(Error::DegenerateW { tournament: 0, factor: 1 }, &data);
        assert!(e.to_string().ends_with("(tournament Open)"), "{e}");
    }
}
