//! Subcommand implementations. Shared conventions: inputs are single JSON
//! files, outputs land in `--out` next to one `manifest.json`, planners are
//! evaluated at sim seed = the row's seed so every planner sees the same
//! demand realization, and CSV aggregates use the population standard
//! deviation.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use log::{info, warn};
use serde::de::DeserializeOwned;
use serde::Serialize;

use emobsim_core::domain::{read_plan_file, PlanError};
use emobsim_core::metrics::{build_report, CoverageIndex, Report, RewardConfig};
use emobsim_core::rng::{derive_job_rng, mix, POLICY_STREAM};
use emobsim_core::scenario::{
    generate_scenario, DemandTables, Scenario, ScenarioConfig, ScenarioError,
};
use emobsim_core::sim::{run_episode, SimOptions};
use emobsim_search::baselines::{
    initial_snapshot, plan_fixed, run_baseline, BaselineConfig, PlannerKind,
};
use emobsim_search::policy::{
    generate_plan, load_checkpoint, CheckpointError, EvalContext, PolicyParams, RolloutMode,
};
use emobsim_trainer::train::{
    default_lambda_grid, grid_search_lambda, train as run_training, LambdaEval, TrainConfig,
    TrainError, EVAL_SALT,
};
use emobsim_trainer::{run_jobs, worker_count};

use crate::manifest::{sha256_file, sha256_hex, write_manifest, RunManifest};
use crate::CliError;

// ---------------------------------------------------------------- helpers

fn read_json<T: DeserializeOwned>(path: &Path, what: &str) -> Result<T, CliError> {
    let bytes = fs::read(path)
        .map_err(|e| CliError::Validation(format!("{what} {}: {e}", path.display())))?;
    serde_json::from_slice(&bytes)
        .map_err(|e| CliError::Validation(format!("{what} {}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let body = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Runtime(format!("serialize {}: {e}", path.display())))?;
    fs::write(path, body + "\n")
        .map_err(|e| CliError::Runtime(format!("write {}: {e}", path.display())))
}

fn ensure_out_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path)
        .map_err(|e| CliError::Runtime(format!("create {}: {e}", path.display())))
}

fn write_text(path: &Path, body: &str) -> Result<(), CliError> {
    fs::write(path, body).map_err(|e| CliError::Runtime(format!("write {}: {e}", path.display())))
}

fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Validation(format!(
            "{what} {} not found",
            path.display()
        )))
    }
}

fn parse_seeds(list: &str) -> Result<Vec<u64>, CliError> {
    let mut seeds = Vec::new();
    for tok in list.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let seed = tok
            .parse()
            .map_err(|_| CliError::Validation(format!("bad seed {tok:?}")))?;
        seeds.push(seed);
    }
    if seeds.is_empty() {
        return Err(CliError::Validation("no seeds given".into()));
    }
    Ok(seeds)
}

/// Accepts plain floats and ratios like `9/1` or `1/9`.
fn parse_weight(tok: &str) -> Result<f64, CliError> {
    let t = tok.trim();
    let bad = || CliError::Validation(format!("bad weight {tok:?}"));
    let v = if let Some((num, den)) = t.split_once('/') {
        let n: f64 = num.trim().parse().map_err(|_| bad())?;
        let d: f64 = den.trim().parse().map_err(|_| bad())?;
        if d == 0.0 {
            return Err(bad());
        }
        n / d
    } else {
        t.parse().map_err(|_| bad())?
    };
    if !v.is_finite() || v < 0.0 {
        return Err(bad());
    }
    Ok(v)
}

/// Comma-separated churn fractions like `0,0.1,0.2`.
fn parse_action_scale(tok: &str) -> Result<Vec<f64>, CliError> {
    let mut scale = Vec::new();
    for part in tok.split(',') {
        let v: f64 = part
            .trim()
            .parse()
            .map_err(|_| CliError::Validation(format!("bad action scale {tok:?}")))?;
        if !v.is_finite() || !(0.0..=1.0).contains(&v) {
            return Err(CliError::Validation(format!(
                "action scale level {v} outside [0, 1]"
            )));
        }
        scale.push(v);
    }
    if scale.len() < 2 {
        return Err(CliError::Validation(format!(
            "action scale {tok:?} needs at least two levels"
        )));
    }
    Ok(scale)
}

fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn scenario_error(e: ScenarioError) -> CliError {
    match e {
        ScenarioError::Io(io) => CliError::Runtime(format!("scenario io: {io}")),
        other => CliError::Validation(other.to_string()),
    }
}

fn plan_error(e: PlanError) -> CliError {
    match e {
        PlanError::Io(io) => CliError::Runtime(format!("plan io: {io}")),
        other => CliError::Validation(other.to_string()),
    }
}

fn checkpoint_error(e: CheckpointError) -> CliError {
    match e {
        CheckpointError::Io(io) => CliError::Runtime(format!("checkpoint io: {io}")),
        other => CliError::Validation(other.to_string()),
    }
}

fn train_error(e: TrainError) -> CliError {
    match e {
        TrainError::Partition(p) => CliError::Validation(p.to_string()),
        TrainError::Checkpoint(c) => checkpoint_error(c),
        TrainError::Io(io) => CliError::Runtime(format!("train io: {io}")),
    }
}

/// Loads a config file or falls back to defaults, returning the effective
/// config together with the bytes that define it (for the manifest hash).
fn load_config<T: DeserializeOwned + Serialize + Default>(
    path: Option<&PathBuf>,
    what: &str,
) -> Result<(T, Vec<u8>), CliError> {
    match path {
        Some(p) => {
            let bytes = fs::read(p)
                .map_err(|e| CliError::Validation(format!("{what} {}: {e}", p.display())))?;
            let cfg = serde_json::from_slice(&bytes)
                .map_err(|e| CliError::Validation(format!("{what} {}: {e}", p.display())))?;
            Ok((cfg, bytes))
        }
        None => {
            let cfg = T::default();
            let bytes = serde_json::to_vec(&cfg).expect("default config serializes");
            Ok((cfg, bytes))
        }
    }
}

// ----------------------------------------------------------- gen-scenario

#[derive(Args)]
pub struct GenScenarioArgs {
    /// Scenario config JSON; missing fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

pub fn gen_scenario(args: &GenScenarioArgs) -> Result<(), CliError> {
    let (config, config_bytes) =
        load_config::<ScenarioConfig>(args.config.as_ref(), "scenario config")?;
    let sc = generate_scenario(&config, args.seed).map_err(scenario_error)?;
    ensure_out_dir(&args.out)?;
    let scenario_path = args.out.join("scenario.json");
    write_json(&scenario_path, &sc)?;
    write_json(&args.out.join("scenario_config.json"), &config)?;
    let manifest = RunManifest::new(
        sha256_hex(&config_bytes),
        sha256_file(&scenario_path)?,
        vec![args.seed],
    );
    write_manifest(&args.out, &manifest)?;
    info!(
        "scenario: {} stations, {} POIs, {} days -> {}",
        sc.stations.len(),
        sc.pois.len(),
        sc.episode_days,
        scenario_path.display()
    );
    Ok(())
}

// --------------------------------------------------------------- simulate

#[derive(Args)]
pub struct SimulateArgs {
    /// Scenario JSON produced by gen-scenario.
    #[arg(long)]
    scenario: PathBuf,
    /// Plan file; omitted simulates the fixed deployment.
    #[arg(long)]
    plan: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Objective trade-off weight.
    #[arg(long, default_value_t = 1.0)]
    w: f64,
    /// Run the conservation audit after every step.
    #[arg(long)]
    check_invariants: bool,
    #[arg(long)]
    out: PathBuf,
}

pub fn simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let sc: Scenario = read_json(&args.scenario, "scenario")?;
    let tables = DemandTables::new(&sc);
    let plan = match &args.plan {
        Some(p) => {
            require_file(p, "plan")?;
            read_plan_file(p).map_err(plan_error)?
        }
        None => plan_fixed(&initial_snapshot(sc.stations.len()), sc.episode_days),
    };
    let opts = SimOptions {
        check_invariants: args.check_invariants,
        ..SimOptions::default()
    };
    let record = run_episode(&sc, &tables, &plan, args.seed, opts).map_err(plan_error)?;
    let coverage = CoverageIndex::for_scenario(&sc);
    let report = build_report(&coverage, &plan, &record, sc.stations.len(), args.w);
    ensure_out_dir(&args.out)?;
    write_json(&args.out.join("report.json"), &report)?;
    let manifest = RunManifest::new(String::new(), sha256_file(&args.scenario)?, vec![args.seed]);
    write_manifest(&args.out, &manifest)?;
    info!(
        "episode: GMV {:.2}, NV {:.2}, SC {:.4}, objective {:.4}",
        report.episode.gmv, report.episode.nv, report.episode.sc, report.episode.objective
    );
    Ok(())
}

// ------------------------------------------------------------------ train

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Training config JSON; missing fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the total plan-evaluation budget.
    #[arg(long)]
    plan_budget: Option<usize>,
    /// Overrides the worker count (EMOBSIM_THREADS still caps it).
    #[arg(long)]
    workers: Option<usize>,
    /// Overrides the objective weight w; accepts ratios like 9/1.
    #[arg(long)]
    w: Option<String>,
    /// Pins the self-sustaining penalty scale.
    #[arg(long)]
    lambda: Option<f64>,
    /// Grid-searches the penalty scale on a short budget before the main run.
    #[arg(long)]
    grid_lambda: bool,
    /// Overrides the action scale, comma separated (e.g. 0,0.1,0.2).
    #[arg(long)]
    action_scale: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

fn write_lambda_grid(path: &Path, best: f64, evals: &[LambdaEval]) -> Result<(), CliError> {
    let mut out = String::from("lambda,mean_objective,infeasible_days,selected\n");
    for e in evals {
        out.push_str(&format!(
            "{},{},{},{}\n",
            e.lambda,
            e.mean_objective,
            e.infeasible_days,
            e.lambda == best
        ));
    }
    write_text(path, &out)
}

pub fn train(args: &TrainArgs) -> Result<(), CliError> {
    let sc: Scenario = read_json(&args.scenario, "scenario")?;
    let (mut cfg, config_bytes) = load_config::<TrainConfig>(args.config.as_ref(), "train config")?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(budget) = args.plan_budget {
        cfg.plan_budget = budget;
    }
    if let Some(workers) = args.workers {
        cfg.workers = workers;
    }
    if let Some(w) = &args.w {
        cfg.reward_w = parse_weight(w)?;
    }
    if let Some(lambda) = args.lambda {
        cfg.reward_lambda = Some(lambda);
    }
    if let Some(scale) = &args.action_scale {
        cfg.action_scale = parse_action_scale(scale)?;
    }

    ensure_out_dir(&args.out)?;
    if args.grid_lambda {
        if cfg.reward_lambda.is_some() {
            warn!("penalty scale pinned; skipping the lambda grid search");
        } else {
            let grid = default_lambda_grid(&sc, &cfg).map_err(train_error)?;
            let (best, evals) = grid_search_lambda(&sc, &cfg, &grid).map_err(train_error)?;
            write_lambda_grid(&args.out.join("lambda_grid.csv"), best, &evals)?;
            cfg.reward_lambda = Some(best);
            info!("lambda grid selected {best}");
        }
    }
    write_json(&args.out.join("train_config.json"), &cfg)?;
    let result = run_training(&sc, &cfg, Some(&args.out)).map_err(train_error)?;
    let manifest = RunManifest::new(
        sha256_hex(&config_bytes),
        sha256_file(&args.scenario)?,
        vec![cfg.seed],
    );
    write_manifest(&args.out, &manifest)?;
    info!(
        "training done: {} updates, best mean objective {:.4}",
        result.updates, result.best_objective
    );
    Ok(())
}

// --------------------------------------------------------------- evaluate

#[derive(Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Comma-separated evaluation seeds.
    #[arg(long, default_value = "1,2,3,4,5")]
    seeds: String,
    #[arg(long, default_value_t = 1.0)]
    w: f64,
    #[arg(long)]
    out: PathBuf,
}

/// One greedy episode at sim seed = `seed`, matching how baselines are run,
/// so per-seed rows are comparable across planners.
fn greedy_report(
    sc: &Scenario,
    params: &PolicyParams,
    ctx: &EvalContext,
    seed: u64,
    w: f64,
) -> Report {
    let initial = initial_snapshot(sc.stations.len());
    let reward = RewardConfig {
        w,
        ..RewardConfig::default()
    };
    let mut rng = derive_job_rng(seed, POLICY_STREAM, 0);
    let gp = generate_plan(
        params,
        ctx,
        sc,
        &initial,
        seed,
        &mut rng,
        RolloutMode::Greedy,
        &reward,
        SimOptions::default(),
    );
    build_report(&ctx.coverage, &gp.plan, &gp.record, sc.stations.len(), w)
}

pub fn evaluate(args: &EvaluateArgs) -> Result<(), CliError> {
    let sc: Scenario = read_json(&args.scenario, "scenario")?;
    require_file(&args.checkpoint, "checkpoint")?;
    let params = load_checkpoint(&args.checkpoint).map_err(checkpoint_error)?;
    let ctx = EvalContext::build(&sc, &params).map_err(|e| CliError::Validation(e.to_string()))?;
    let seeds = parse_seeds(&args.seeds)?;
    ensure_out_dir(&args.out)?;
    let mut csv = String::from("seed,sc,nv,gmv,objective,infeasible_days\n");
    for &seed in &seeds {
        let report = greedy_report(&sc, &params, &ctx, seed, args.w);
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            seed,
            report.episode.sc,
            report.episode.nv,
            report.episode.gmv,
            report.episode.objective,
            report.infeasible_days()
        ));
    }
    write_text(&args.out.join("eval.csv"), &csv)?;
    let manifest = RunManifest::new(String::new(), sha256_file(&args.scenario)?, seeds);
    write_manifest(&args.out, &manifest)?;
    Ok(())
}

// ---------------------------------------------------------------- compare

#[derive(Args)]
pub struct CompareArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Comma-separated planners from fd, rev, cov, oo, io, mans.
    #[arg(long, default_value = "fd,rev,cov,oo,io,mans")]
    planners: String,
    #[arg(long, default_value = "1,2,3,4,5")]
    seeds: String,
    #[arg(long, default_value_t = 1.0)]
    w: f64,
    /// Trained checkpoint backing the mans planner.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Worker threads for the planner-by-seed grid.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy)]
struct CellMetrics {
    sc: f64,
    nv: f64,
    gmv: f64,
    objective: f64,
}

fn planner_kind(tok: &str) -> Option<PlannerKind> {
    match tok {
        "fd" => Some(PlannerKind::Fixed),
        "rev" => Some(PlannerKind::Revenue),
        "cov" => Some(PlannerKind::Coverage),
        "oo" => Some(PlannerKind::OneTime),
        "io" => Some(PlannerKind::Incremental),
        _ => None,
    }
}

pub fn compare(args: &CompareArgs) -> Result<(), CliError> {
    let sc: Scenario = read_json(&args.scenario, "scenario")?;
    let seeds = parse_seeds(&args.seeds)?;
    let mut planners = Vec::new();
    for tok in args.planners.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        if tok != "mans" && planner_kind(tok).is_none() {
            return Err(CliError::Validation(format!("unknown planner {tok:?}")));
        }
        if !planners.iter().any(|p| p == tok) {
            planners.push(tok.to_string());
        }
    }
    if planners.is_empty() {
        return Err(CliError::Validation("no planners given".into()));
    }

    // A missing checkpoint skips the neural planner with a notice instead of
    // failing the whole comparison; a corrupt one is still an error.
    let mans_params = if planners.iter().any(|p| p == "mans") {
        match &args.checkpoint {
            None => {
                warn!("no --checkpoint given; mans planner skipped");
                None
            }
            Some(path) if !path.exists() => {
                warn!("checkpoint {} not found; mans planner skipped", path.display());
                None
            }
            Some(path) => Some(load_checkpoint(path).map_err(checkpoint_error)?),
        }
    } else {
        None
    };
    if mans_params.is_none() {
        planners.retain(|p| p != "mans");
    }
    if planners.is_empty() {
        return Err(CliError::Validation(
            "nothing to compare after skipping mans".into(),
        ));
    }
    let mans_ctx = match &mans_params {
        Some(p) => {
            Some(EvalContext::build(&sc, p).map_err(|e| CliError::Validation(e.to_string()))?)
        }
        None => None,
    };

    let tables = DemandTables::new(&sc);
    let coverage = CoverageIndex::for_scenario(&sc);
    let n = sc.stations.len();
    let cells: Vec<(usize, u64)> = planners
        .iter()
        .enumerate()
        .flat_map(|(pi, _)| seeds.iter().map(move |&s| (pi, s)))
        .collect();
    let results = run_jobs(cells.len(), worker_count(args.workers), |j| {
        let (pi, seed) = cells[j];
        let report = match planners[pi].as_str() {
            "mans" => {
                let params = mans_params.as_ref().expect("mans cells imply a checkpoint");
                let ctx = mans_ctx.as_ref().expect("mans cells imply a context");
                greedy_report(&sc, params, ctx, seed, args.w)
            }
            tok => {
                let kind = planner_kind(tok).expect("tokens were validated");
                let (plan, record) =
                    run_baseline(&sc, &tables, kind, &BaselineConfig::default(), seed);
                build_report(&coverage, &plan, &record, n, args.w)
            }
        };
        CellMetrics {
            sc: report.episode.sc,
            nv: report.episode.nv,
            gmv: report.episode.gmv,
            objective: report.episode.objective,
        }
    });

    ensure_out_dir(&args.out)?;
    let mut rows = String::from("planner,seed,sc,nv,gmv,objective\n");
    for (j, &(pi, seed)) in cells.iter().enumerate() {
        let m = results[j];
        rows.push_str(&format!(
            "{},{},{},{},{},{}\n",
            planners[pi], seed, m.sc, m.nv, m.gmv, m.objective
        ));
    }
    write_text(&args.out.join("rows.csv"), &rows)?;

    // Deltas are relative to the fixed deployment when it is in the set,
    // otherwise to the first planner listed.
    let per_planner: Vec<Vec<CellMetrics>> = planners
        .iter()
        .enumerate()
        .map(|(pi, _)| {
            cells
                .iter()
                .zip(&results)
                .filter(|((ci, _), _)| *ci == pi)
                .map(|(_, &m)| m)
                .collect()
        })
        .collect();
    let ref_idx = planners.iter().position(|p| p == "fd").unwrap_or(0);
    let stats: Vec<[(f64, f64); 4]> = per_planner
        .iter()
        .map(|ms| {
            let col = |f: fn(&CellMetrics) -> f64| mean_std(&ms.iter().map(f).collect::<Vec<_>>());
            [
                col(|m| m.sc),
                col(|m| m.nv),
                col(|m| m.gmv),
                col(|m| m.objective),
            ]
        })
        .collect();
    let delta = |x: f64, r: f64| {
        if r.abs() < 1e-12 {
            return 0.0;
        }
        let d = (x - r) / r;
        // Normalizes -0 from identical values over a negative reference.
        if d == 0.0 {
            0.0
        } else {
            d
        }
    };
    let mut csv = String::from(
        "planner,sc_mean,sc_std,nv_mean,nv_std,gmv_mean,gmv_std,objective_mean,objective_std,d_sc,d_nv,d_gmv,d_objective\n",
    );
    for (pi, planner) in planners.iter().enumerate() {
        let s = &stats[pi];
        let r = &stats[ref_idx];
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            planner,
            s[0].0,
            s[0].1,
            s[1].0,
            s[1].1,
            s[2].0,
            s[2].1,
            s[3].0,
            s[3].1,
            delta(s[0].0, r[0].0),
            delta(s[1].0, r[1].0),
            delta(s[2].0, r[2].0),
            delta(s[3].0, r[3].0),
        ));
    }
    write_text(&args.out.join("comparison.csv"), &csv)?;
    let manifest = RunManifest::new(String::new(), sha256_file(&args.scenario)?, seeds);
    write_manifest(&args.out, &manifest)?;
    for (pi, planner) in planners.iter().enumerate() {
        info!(
            "{}: objective {:.4} (SC {:.4}, NV {:.2})",
            planner, stats[pi][3].0, stats[pi][0].0, stats[pi][1].0
        );
    }
    Ok(())
}

// ------------------------------------------------------------------ sweep

#[derive(Args)]
pub struct SweepArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Swept parameter: w or action-scale.
    #[arg(long)]
    parameter: String,
    /// Swept values. For w, occurrences may also be comma-separated lists of
    /// weights (ratios like 9/1 work); for action-scale each occurrence is
    /// one whole scale like 0,0.1,0.2.
    #[arg(long = "values", action = clap::ArgAction::Append, required = true)]
    values: Vec<String>,
    #[arg(long, default_value = "1,2,3")]
    seeds: String,
    /// Training config JSON applied to every cell.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

enum SweptParam {
    W,
    ActionScale,
}

pub fn sweep(args: &SweepArgs) -> Result<(), CliError> {
    let sc: Scenario = read_json(&args.scenario, "scenario")?;
    let seeds = parse_seeds(&args.seeds)?;
    let (base, config_bytes) = load_config::<TrainConfig>(args.config.as_ref(), "train config")?;
    let param = match args.parameter.as_str() {
        "w" => SweptParam::W,
        "action-scale" => SweptParam::ActionScale,
        other => {
            return Err(CliError::Validation(format!(
                "unknown sweep parameter {other:?} (expected w or action-scale)"
            )))
        }
    };
    let tokens: Vec<String> = match param {
        SweptParam::W => args
            .values
            .iter()
            .flat_map(|v| v.split(','))
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(str::to_string)
            .collect(),
        SweptParam::ActionScale => args.values.clone(),
    };
    if tokens.is_empty() {
        return Err(CliError::Validation("no sweep values given".into()));
    }
    // Validate every cell before spending any training time.
    for tok in &tokens {
        match param {
            SweptParam::W => {
                parse_weight(tok)?;
            }
            SweptParam::ActionScale => {
                parse_action_scale(tok)?;
            }
        }
    }

    ensure_out_dir(&args.out)?;
    write_json(&args.out.join("sweep_config.json"), &base)?;
    let mut csv = String::from("value,seed,sc,nv\n");
    for tok in &tokens {
        for &seed in &seeds {
            let mut cfg = base.clone();
            cfg.seed = seed;
            match param {
                SweptParam::W => cfg.reward_w = parse_weight(tok)?,
                SweptParam::ActionScale => cfg.action_scale = parse_action_scale(tok)?,
            }
            let result = run_training(&sc, &cfg, None).map_err(train_error)?;
            let ctx = EvalContext::build(&sc, &result.params)
                .map_err(|e| CliError::Validation(e.to_string()))?;
            let initial = initial_snapshot(sc.stations.len());
            let episodes = cfg.eval_episodes.max(1);
            let (mut sc_sum, mut nv_sum) = (0.0, 0.0);
            for e in 0..episodes {
                let sim_seed = mix(mix(seed, EVAL_SALT), e as u64);
                let mut rng = derive_job_rng(seed, POLICY_STREAM, EVAL_SALT ^ e as u64);
                let gp = generate_plan(
                    &result.params,
                    &ctx,
                    &sc,
                    &initial,
                    sim_seed,
                    &mut rng,
                    RolloutMode::Greedy,
                    &result.reward,
                    SimOptions::default(),
                );
                let report = build_report(
                    &ctx.coverage,
                    &gp.plan,
                    &gp.record,
                    sc.stations.len(),
                    result.reward.w,
                );
                sc_sum += report.episode.sc;
                nv_sum += report.episode.nv;
            }
            let e = episodes as f64;
            csv.push_str(&format!(
                "{},{},{},{}\n",
                csv_field(tok),
                seed,
                sc_sum / e,
                nv_sum / e
            ));
            info!("sweep cell value={tok} seed={seed} done");
        }
    }
    write_text(&args.out.join("sweep.csv"), &csv)?;
    let manifest = RunManifest::new(sha256_hex(&config_bytes), sha256_file(&args.scenario)?, seeds);
    write_manifest(&args.out, &manifest)?;
    Ok(())
}

// ----------------------------------------------------------- report-daily

#[derive(Args)]
pub struct ReportDailyArgs {
    /// report.json written by simulate, evaluate or train.
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

pub fn report_daily(args: &ReportDailyArgs) -> Result<(), CliError> {
    let report: Report = read_json(&args.report, "report")?;
    ensure_out_dir(&args.out)?;
    let mut csv = String::from("day,sc,nv,gmv,cost,budget_violated\n");
    for d in &report.per_day {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            d.day, d.sc, d.nv, d.gmv, d.cost, d.budget_violated
        ));
    }
    write_text(&args.out.join("daily.csv"), &csv)?;
    let manifest = RunManifest::new(String::new(), String::new(), Vec::new());
    write_manifest(&args.out, &manifest)?;
    Ok(())
}
