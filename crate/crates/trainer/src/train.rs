//! The end-to-end training pipeline: fixed-deployment warm-up episodes feed
//! the demand predictor and the frozen feature statistics, then rollout
//! collection and surrogate updates alternate until the plan budget is
//! spent. Every random stream is derived from the master seed and a global
//! job id, so the worker count never changes a result.

use crate::pool::{run_jobs, worker_count};
use crate::ppo::{ppo_update, sequences_from, PpoConfig, Sequence};
use emobsim_core::metrics::{build_report, CoverageIndex, RewardConfig};
use emobsim_core::rng::{derive_job_rng, mix, POLICY_STREAM};
use emobsim_core::sim::SimOptions;
use emobsim_core::{run_episode, DemandTables, Scenario};
use emobsim_search::baselines::{ground_truth_daily_demand, initial_snapshot, plan_fixed};
use emobsim_search::features::{obs_dim, FeatureStats, Featurizer};
use emobsim_search::gcn::{
    train_gcn, CandidateGraph, DayHistory, Predictor, PredictorKind, GRAPH_K_FALLBACK,
    GRAPH_RADIUS_KM,
};
use emobsim_search::nn::{Adam, NetShape, PolicyNet};
use emobsim_search::policy::{
    checkpoint_bytes, generate_plan, region_scope_metrics, CheckpointError, EvalContext,
    PolicyParams, RolloutMode, DEFAULT_ALPHA, DEFAULT_EPSILON,
};
use emobsim_search::regions::{partition_regions, PartitionError};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

/// Salt mixed into evaluation episode seeds so they never collide with
/// training rollout seeds.
pub const EVAL_SALT: u64 = 0xE7A1;

/// Offset into the master seed's warm-up substream; episode e runs under
/// mix(seed, 0xFD + e), matching the fixed-deployment estimate helper.
const WARMUP_SALT: u64 = 0xFD;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("train io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictorChoice {
    Gcn,
    MovingAverage,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    /// Total plan evaluations across the whole run.
    pub plan_budget: usize,
    /// Rollouts collected per update (K).
    pub rollouts_per_update: usize,
    pub workers: usize,
    pub lr: f64,
    pub ppo: PpoConfig,
    /// Objective trade-off weight w.
    pub reward_w: f64,
    /// Self-sustaining penalty scale; None derives 1 / mean |region NV|
    /// from the warm-up episodes.
    pub reward_lambda: Option<f64>,
    pub action_scale: Vec<f64>,
    pub epsilon: f64,
    pub predictor: PredictorChoice,
    /// Fixed-deployment episodes feeding predictor training and feature
    /// statistics.
    pub warmup_episodes: usize,
    pub gcn_epochs: usize,
    /// Updates between periodic checkpoints; 0 disables them.
    pub checkpoint_every: usize,
    /// Greedy evaluation episodes per lambda candidate in the grid search.
    pub eval_episodes: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            plan_budget: 2000,
            rollouts_per_update: 8,
            workers: 1,
            lr: 3e-4,
            ppo: PpoConfig::default(),
            reward_w: 1.0,
            reward_lambda: None,
            action_scale: emobsim_search::policy::default_action_scale(),
            epsilon: DEFAULT_EPSILON,
            predictor: PredictorChoice::Gcn,
            warmup_episodes: 3,
            gcn_epochs: 500,
            checkpoint_every: 10,
            eval_episodes: 5,
        }
    }
}

/// One learning-curve row, written after every update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub plans_evaluated: usize,
    pub mean_objective: f64,
    pub mean_sc: f64,
    pub mean_nv: f64,
    pub infeasible_day_rate: f64,
}

pub fn write_curve(path: &Path, curve: &[CurvePoint]) -> std::io::Result<()> {
    let mut out = String::from("plans_evaluated,mean_objective,mean_sc,mean_nv,infeasible_day_rate\n");
    for p in curve {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            p.plans_evaluated, p.mean_objective, p.mean_sc, p.mean_nv, p.infeasible_day_rate
        ));
    }
    std::fs::write(path, out)
}

pub struct TrainResult {
    /// Parameters after the last update.
    pub params: PolicyParams,
    /// Parameters of the best-mean-objective collection phase.
    pub best: PolicyParams,
    pub best_objective: f64,
    pub curve: Vec<CurvePoint>,
    /// The reward configuration actually used (lambda resolved).
    pub reward: RewardConfig,
    pub updates: usize,
}

/// Interruption safety: checkpoints land under a temporary name and are
/// renamed into place, so a partially written file never shadows a valid
/// one.
fn save_atomic(path: &Path, params: &PolicyParams) -> Result<(), TrainError> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, checkpoint_bytes(params))?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

struct Warmup {
    predictor: Predictor,
    stats: FeatureStats,
    default_lambda: f64,
    graph: CandidateGraph,
    featurizer: Featurizer,
    tables: DemandTables,
    coverage: CoverageIndex,
}

/// Fixed-deployment warm-up: runs FD episodes, trains the demand predictor
/// on their day histories, freezes feature statistics over the observed
/// rows, and estimates the default self-sustaining penalty scale.
fn warmup(sc: &Scenario, cfg: &TrainConfig, partition: &emobsim_search::regions::RegionPartition) -> Warmup {
    let n = sc.n_stations();
    let tables = DemandTables::new(sc);
    let coverage = CoverageIndex::for_scenario(sc);
    let graph = CandidateGraph::build(&sc.stations, GRAPH_RADIUS_KM, GRAPH_K_FALLBACK);
    let initial = initial_snapshot(n);
    let fd_plan = plan_fixed(&initial, sc.episode_days);
    let active = initial.mask(n);

    let episodes: Vec<_> = (0..cfg.warmup_episodes.max(1))
        .map(|e| {
            let seed = mix(cfg.seed, WARMUP_SALT + e as u64);
            run_episode(sc, &tables, &fd_plan, seed, SimOptions::default())
                .expect("fixed plan is always valid")
        })
        .collect();

    let mut history = Vec::new();
    let mut nv_abs_sum = 0.0;
    let mut nv_terms = 0usize;
    for record in &episodes {
        for tallies in &record.days {
            history.push(DayHistory::from_tallies(tallies, &initial, n));
            for region in &partition.regions {
                let scope = region_scope_metrics(region, &coverage, tallies, &active, &sc.stations);
                nv_abs_sum += scope.nv.units().abs();
                nv_terms += 1;
            }
        }
    }
    let mean_abs_nv = nv_abs_sum / nv_terms.max(1) as f64;
    let default_lambda = if mean_abs_nv > 1e-9 {
        1.0 / mean_abs_nv
    } else {
        1.0
    };

    let prior = ground_truth_daily_demand(sc, &tables);
    let kind = match cfg.predictor {
        PredictorChoice::Gcn => PredictorKind::Gcn(train_gcn(
            &graph,
            &sc.stations,
            &history,
            cfg.gcn_epochs,
            cfg.seed,
        )),
        PredictorChoice::MovingAverage => PredictorKind::MovingAverage,
    };
    let predictor = Predictor { kind, prior };

    // Re-walk the warm-up days with the trained predictor to collect the
    // rows the frozen normalization will describe.
    let featurizer = Featurizer::new(&sc.stations, &tables, &sc.constants, sc.city_km);
    let mut rows = Vec::new();
    for record in &episodes {
        let mut ep_history: Vec<DayHistory> = Vec::new();
        let mut prev = None;
        for tallies in &record.days {
            let preds = predictor.predict(&graph, &sc.stations, &ep_history);
            rows.extend(featurizer.raw_rows(&sc.stations, &active, prev, &preds));
            ep_history.push(DayHistory::from_tallies(tallies, &initial, n));
            prev = Some(tallies);
        }
    }
    let stats = FeatureStats::from_rows(&rows);

    Warmup {
        predictor,
        stats,
        default_lambda,
        graph,
        featurizer,
        tables,
        coverage,
    }
}

struct RolloutOutcome {
    objective: f64,
    sc: f64,
    nv: f64,
    infeasible_days: usize,
    days: usize,
    seqs: Vec<Sequence>,
}

/// Trains a policy on the scenario under the plan budget. When `out_dir`
/// is given it receives ckpt_init.json immediately, periodic ckpt_<plans>
/// files, ckpt_final.json, ckpt_best.json and curve.csv.
pub fn train(
    sc: &Scenario,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainResult, TrainError> {
    let n = sc.n_stations();
    let partition = partition_regions(&sc.stations, sc.region_size, cfg.seed)?;
    let w = warmup(sc, cfg, &partition);

    let shape = NetShape::new(obs_dim(sc.region_size), cfg.action_scale.len());
    let mut featurizer = w.featurizer;
    featurizer.stats = w.stats.clone();
    let mut params = PolicyParams {
        net: PolicyNet::new(shape, cfg.seed),
        stats: w.stats,
        predictor: w.predictor,
        partition_seed: cfg.seed,
        action_scale: cfg.action_scale.clone(),
        epsilon: cfg.epsilon,
        alpha: DEFAULT_ALPHA,
    };
    let ctx = EvalContext {
        tables: w.tables,
        coverage: w.coverage,
        partition,
        graph: w.graph,
        featurizer,
    };
    let reward = RewardConfig {
        w: cfg.reward_w,
        lambda: cfg.reward_lambda.unwrap_or(w.default_lambda),
        gamma: cfg.ppo.gamma,
    };
    let initial = initial_snapshot(n);

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        save_atomic(&dir.join("ckpt_init.json"), &params)?;
    }

    let workers = worker_count(cfg.workers);
    let mut opt = Adam::new(params.net.params.len(), cfg.lr);
    let mut curve = Vec::new();
    let mut best = params.clone();
    let mut best_objective = f64::NEG_INFINITY;
    let mut evaluated = 0usize;
    let mut updates = 0usize;

    while evaluated < cfg.plan_budget {
        let k = cfg.rollouts_per_update.max(1).min(cfg.plan_budget - evaluated);
        let base = evaluated as u64;
        let outs: Vec<RolloutOutcome> = run_jobs(k, workers, |j| {
            let job = base + j as u64;
            let sim_seed = mix(cfg.seed, job);
            let mut policy_rng = derive_job_rng(cfg.seed, POLICY_STREAM, job);
            let gp = generate_plan(
                &params,
                &ctx,
                sc,
                &initial,
                sim_seed,
                &mut policy_rng,
                RolloutMode::Sample,
                &reward,
                SimOptions::default(),
            );
            let report = build_report(&ctx.coverage, &gp.plan, &gp.record, n, cfg.reward_w);
            RolloutOutcome {
                objective: report.episode.objective,
                sc: report.episode.sc,
                nv: report.episode.nv,
                infeasible_days: report.infeasible_days(),
                days: gp.record.days.len(),
                seqs: sequences_from(gp.steps, ctx.partition.n_regions()),
            }
        });
        evaluated += k;

        let kf = k as f64;
        let point = CurvePoint {
            plans_evaluated: evaluated,
            mean_objective: outs.iter().map(|o| o.objective).sum::<f64>() / kf,
            mean_sc: outs.iter().map(|o| o.sc).sum::<f64>() / kf,
            mean_nv: outs.iter().map(|o| o.nv).sum::<f64>() / kf,
            infeasible_day_rate: outs
                .iter()
                .map(|o| o.infeasible_days as f64 / o.days.max(1) as f64)
                .sum::<f64>()
                / kf,
        };
        if point.mean_objective > best_objective {
            best_objective = point.mean_objective;
            best = params.clone();
        }
        curve.push(point);

        let seqs: Vec<Sequence> = outs.into_iter().flat_map(|o| o.seqs).collect();
        ppo_update(&mut params.net, &mut opt, &seqs, &cfg.ppo);
        updates += 1;

        if let Some(dir) = out_dir {
            if cfg.checkpoint_every > 0 && updates % cfg.checkpoint_every == 0 {
                save_atomic(&dir.join(format!("ckpt_{evaluated}.json")), &params)?;
            }
        }
    }

    if let Some(dir) = out_dir {
        save_atomic(&dir.join("ckpt_final.json"), &params)?;
        save_atomic(&dir.join("ckpt_best.json"), &best)?;
        write_curve(&dir.join("curve.csv"), &curve)?;
    }

    Ok(TrainResult {
        params,
        best,
        best_objective,
        curve,
        reward,
        updates,
    })
}

/// Greedy-mode evaluation of a trained policy: mean episode objective and
/// total infeasible days over `episodes` fresh simulations.
pub fn evaluate_policy(
    sc: &Scenario,
    params: &PolicyParams,
    ctx: &EvalContext,
    reward: &RewardConfig,
    seed: u64,
    episodes: usize,
) -> (f64, usize) {
    let n = sc.n_stations();
    let initial = initial_snapshot(n);
    let mut objective_sum = 0.0;
    let mut infeasible = 0usize;
    for e in 0..episodes.max(1) {
        let sim_seed = mix(mix(seed, EVAL_SALT), e as u64);
        let mut rng = derive_job_rng(seed, POLICY_STREAM, EVAL_SALT ^ e as u64);
        let gp = generate_plan(
            params,
            ctx,
            sc,
            &initial,
            sim_seed,
            &mut rng,
            RolloutMode::Greedy,
            reward,
            SimOptions::default(),
        );
        let report = build_report(&ctx.coverage, &gp.plan, &gp.record, n, reward.w);
        objective_sum += report.episode.objective;
        infeasible += report.infeasible_days();
    }
    (objective_sum / episodes.max(1) as f64, infeasible)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LambdaEval {
    pub lambda: f64,
    pub mean_objective: f64,
    pub infeasible_days: usize,
}

/// Candidates with zero infeasible evaluation days beat all others; within
/// a tier the higher mean objective wins; exact ties go to the smaller
/// lambda.
pub fn select_lambda(evals: &[LambdaEval]) -> f64 {
    assert!(!evals.is_empty());
    let mut best = evals[0];
    for &e in &evals[1..] {
        let tier = |x: &LambdaEval| usize::from(x.infeasible_days > 0);
        let better = (tier(&e), -e.mean_objective, e.lambda)
            < (tier(&best), -best.mean_objective, best.lambda);
        if better {
            best = e;
        }
    }
    best.lambda
}

/// Grid search over the penalty scale: each candidate gets a short training
/// run at 20% of the plan budget, then a greedy evaluation. Returns the
/// winner along with every candidate's evaluation.
pub fn grid_search_lambda(
    sc: &Scenario,
    cfg: &TrainConfig,
    candidates: &[f64],
) -> Result<(f64, Vec<LambdaEval>), TrainError> {
    assert!(!candidates.is_empty(), "need at least one lambda candidate");
    if candidates.len() == 1 {
        return Ok((candidates[0], Vec::new()));
    }
    let mut evals = Vec::with_capacity(candidates.len());
    for &lambda in candidates {
        let sub = TrainConfig {
            reward_lambda: Some(lambda),
            plan_budget: (cfg.plan_budget / 5).max(cfg.rollouts_per_update),
            checkpoint_every: 0,
            ..cfg.clone()
        };
        let result = train(sc, &sub, None)?;
        let ctx = EvalContext::build(sc, &result.params)?;
        let (mean_objective, infeasible_days) = evaluate_policy(
            sc,
            &result.params,
            &ctx,
            &result.reward,
            cfg.seed,
            cfg.eval_episodes,
        );
        evals.push(LambdaEval {
            lambda,
            mean_objective,
            infeasible_days,
        });
    }
    Ok((select_lambda(&evals), evals))
}

/// The default lambda grid: the warm-up derived scale bracketed by halving
/// and doubling.
pub fn default_lambda_grid(sc: &Scenario, cfg: &TrainConfig) -> Result<Vec<f64>, TrainError> {
    let partition = partition_regions(&sc.stations, sc.region_size, cfg.seed)?;
    let w = warmup(sc, cfg, &partition);
    Ok(vec![
        0.5 * w.default_lambda,
        w.default_lambda,
        2.0 * w.default_lambda,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use emobsim_core::scenario::{generate_scenario, ScenarioConfig};
    use emobsim_search::nn::LstmState;
    use emobsim_search::policy::high_level_step;

    fn toy_scenario() -> Scenario {
        let cfg = ScenarioConfig {
            n_stations: 20,
            region_size: 10,
            n_pois: 30,
            target_daily_demand: 200.0,
            horizon_days: 3,
            ..ScenarioConfig::default()
        };
        generate_scenario(&cfg, 55).unwrap()
    }

    fn fast_cfg() -> TrainConfig {
        TrainConfig {
            seed: 7,
            plan_budget: 16,
            rollouts_per_update: 8,
            warmup_episodes: 1,
            gcn_epochs: 0,
            predictor: PredictorChoice::MovingAverage,
            checkpoint_every: 1,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn budget_zero_writes_only_the_initial_checkpoint() {
        let sc = toy_scenario();
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig {
            plan_budget: 0,
            ..fast_cfg()
        };
        let result = train(&sc, &cfg, Some(dir.path())).unwrap();
        assert!(result.curve.is_empty());
        assert_eq!(result.updates, 0);
        let init = std::fs::read(dir.path().join("ckpt_init.json")).unwrap();
        let fin = std::fs::read(dir.path().join("ckpt_final.json")).unwrap();
        let best = std::fs::read(dir.path().join("ckpt_best.json")).unwrap();
        assert_eq!(init, fin);
        assert_eq!(init, best);
        assert!(!dir.path().join("ckpt_8.json").exists());
    }

    #[test]
    fn worker_count_never_changes_the_run() {
        let sc = toy_scenario();
        let one = train(&sc, &TrainConfig { workers: 1, ..fast_cfg() }, None).unwrap();
        let four = train(&sc, &TrainConfig { workers: 4, ..fast_cfg() }, None).unwrap();
        assert_eq!(one.curve, four.curve);
        assert_eq!(checkpoint_bytes(&one.params), checkpoint_bytes(&four.params));
        assert_eq!(one.reward.lambda, four.reward.lambda);
    }

    #[test]
    fn curve_walks_the_budget_in_update_sized_strides() {
        let sc = toy_scenario();
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig {
            plan_budget: 20,
            checkpoint_every: 2,
            ..fast_cfg()
        };
        let result = train(&sc, &cfg, Some(dir.path())).unwrap();
        let plans: Vec<usize> = result.curve.iter().map(|p| p.plans_evaluated).collect();
        assert_eq!(plans, vec![8, 16, 20]);
        assert_eq!(result.updates, 3);
        // Periodic checkpoints at updates 2 (16 plans); final files always.
        assert!(dir.path().join("ckpt_16.json").exists());
        assert!(dir.path().join("ckpt_final.json").exists());
        assert!(dir.path().join("ckpt_best.json").exists());
        let csv = std::fs::read_to_string(dir.path().join("curve.csv")).unwrap();
        assert!(csv.starts_with(
            "plans_evaluated,mean_objective,mean_sc,mean_nv,infeasible_day_rate\n"
        ));
        assert_eq!(csv.lines().count(), 4);
    }

    #[test]
    fn lambda_defaults_to_the_warmup_scale_unless_pinned() {
        let sc = toy_scenario();
        let derived = train(
            &sc,
            &TrainConfig {
                plan_budget: 0,
                reward_lambda: None,
                ..fast_cfg()
            },
            None,
        )
        .unwrap();
        assert!(derived.reward.lambda.is_finite() && derived.reward.lambda > 0.0);

        let pinned = train(
            &sc,
            &TrainConfig {
                plan_budget: 0,
                reward_lambda: Some(0.25),
                ..fast_cfg()
            },
            None,
        )
        .unwrap();
        assert_eq!(pinned.reward.lambda, 0.25);
    }

    #[test]
    fn single_lambda_candidate_is_returned_unchanged() {
        let sc = toy_scenario();
        let (lambda, evals) = grid_search_lambda(&sc, &fast_cfg(), &[0.125]).unwrap();
        assert_eq!(lambda, 0.125);
        assert!(evals.is_empty());
    }

    #[test]
    fn lambda_selection_prefers_feasibility_then_objective_then_smallness() {
        // Zero-infeasible tier wins even at lower objective.
        let picked = select_lambda(&[
            LambdaEval { lambda: 0.0, mean_objective: 2.0, infeasible_days: 3 },
            LambdaEval { lambda: 1.0, mean_objective: 1.0, infeasible_days: 0 },
        ]);
        assert_eq!(picked, 1.0);
        // Within a tier the objective decides.
        let picked = select_lambda(&[
            LambdaEval { lambda: 0.5, mean_objective: 1.0, infeasible_days: 0 },
            LambdaEval { lambda: 1.0, mean_objective: 1.5, infeasible_days: 0 },
        ]);
        assert_eq!(picked, 1.0);
        // Exact ties go to the smaller lambda.
        let picked = select_lambda(&[
            LambdaEval { lambda: 2.0, mean_objective: 1.0, infeasible_days: 0 },
            LambdaEval { lambda: 0.5, mean_objective: 1.0, infeasible_days: 0 },
        ]);
        assert_eq!(picked, 0.5);
    }

    #[test]
    fn hard_wired_reward_teaches_the_zero_prior() {
        // Rewards are overwritten after each rollout: +1 whenever a region
        // picked levels (0, 0), else 0. The trained policy must favor the
        // zero prior decisively.
        let sc = toy_scenario();
        let cfg = fast_cfg();
        let partition = partition_regions(&sc.stations, sc.region_size, cfg.seed).unwrap();
        let w = warmup(&sc, &cfg, &partition);
        let shape = NetShape::new(obs_dim(sc.region_size), cfg.action_scale.len());
        let mut featurizer = w.featurizer;
        featurizer.stats = w.stats.clone();
        let mut params = PolicyParams {
            net: PolicyNet::new(shape, cfg.seed),
            stats: w.stats,
            predictor: w.predictor,
            partition_seed: cfg.seed,
            action_scale: cfg.action_scale.clone(),
            epsilon: cfg.epsilon,
            alpha: DEFAULT_ALPHA,
        };
        let ctx = EvalContext {
            tables: w.tables,
            coverage: w.coverage,
            partition,
            graph: w.graph,
            featurizer,
        };
        let reward = RewardConfig::default();
        let initial = initial_snapshot(sc.n_stations());
        let mut opt = Adam::new(params.net.params.len(), 0.01);
        let ppo_cfg = PpoConfig {
            entropy_coef: 0.0,
            ..PpoConfig::default()
        };

        for update in 0..80 {
            let mut all_seqs = Vec::new();
            for j in 0..4u64 {
                let job = update as u64 * 4 + j;
                let mut rng = derive_job_rng(cfg.seed, POLICY_STREAM, job);
                let mut gp = generate_plan(
                    &params,
                    &ctx,
                    &sc,
                    &initial,
                    mix(cfg.seed, job),
                    &mut rng,
                    RolloutMode::Sample,
                    &reward,
                    SimOptions::default(),
                );
                for step in gp.steps.iter_mut() {
                    step.reward = f64::from(step.add_level == 0 && step.remove_level == 0);
                }
                all_seqs.extend(sequences_from(gp.steps, ctx.partition.n_regions()));
            }
            ppo_update(&mut params.net, &mut opt, &all_seqs, &ppo_cfg);
        }

        // Probe the trained heads on a fresh rollout's first observation.
        let preds: Vec<(f64, f64)> = params.predictor.prior.iter().map(|&p| (p, p)).collect();
        let active = initial.mask(sc.n_stations());
        let rows = ctx.featurizer.raw_rows(&sc.stations, &active, None, &preds);
        let obs = ctx.featurizer.observations(&ctx.partition, &rows);
        let mut joint = 0.0;
        for r in 0..ctx.partition.n_regions() {
            let (add, rem, _, _) = high_level_step(
                &params.net,
                &obs[r],
                &LstmState::zeros(params.net.shape.hidden),
            );
            joint += add.probs[0] * rem.probs[0];
        }
        joint /= ctx.partition.n_regions() as f64;
        assert!(joint >= 0.9, "mean joint probability of (0,0) = {joint}");
    }
}
