//! Whole-system acceptance checks, one test per shipped guarantee. The
//! harness verdict line per test is the acceptance record; each test prints
//! the numbers it measured. A global gate serializes the suite so runtime
//! bounds and the wall-clock comparison are not distorted by siblings.

use std::sync::{Mutex, MutexGuard};
use std::time::Instant;

use emobsim_core::domain::{snapshot_cost, Plan, Snapshot, StationId};
use emobsim_core::geom::Point;
use emobsim_core::metrics::{build_report, CoverageIndex, Report, RewardConfig};
use emobsim_core::money::Money;
use emobsim_core::rng::{derive_job_rng, derive_rng, POLICY_STREAM};
use emobsim_core::scenario::{
    generate_scenario, Bump, Constants, DemandTables, Scenario, ScenarioConfig,
};
use emobsim_core::sim::{run_episode, SimOptions};
use emobsim_search::baselines::{
    initial_snapshot, plan_one_time, run_baseline, BaselineConfig, PlannerKind,
};
use emobsim_search::features::obs_dim;
use emobsim_search::nn::{sample_categorical, softmax, Adam, NetShape, PolicyNet};
use emobsim_search::policy::{
    generate_plan, low_level_select, DeploymentPrior, EvalContext, PolicyParams, RolloutMode,
};
use emobsim_search::regions::partition_regions;
use emobsim_trainer::ppo::{
    advantages_and_returns, ppo_update, surrogate_grad, surrogate_loss, PpoConfig, Sequence,
};
use emobsim_trainer::train::{
    default_lambda_grid, evaluate_policy, grid_search_lambda, train, PredictorChoice, TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

static GATE: Mutex<()> = Mutex::new(());

/// One failed test must not poison the gate for the rest of the suite.
fn gate() -> MutexGuard<'static, ()> {
    GATE.lock().unwrap_or_else(|e| e.into_inner())
}

fn small_config(
    n: usize,
    m: usize,
    pois: usize,
    days: usize,
    demand: f64,
    city: f64,
) -> ScenarioConfig {
    ScenarioConfig {
        n_stations: n,
        region_size: m,
        n_pois: pois,
        horizon_days: days,
        city_km: city,
        target_daily_demand: demand,
        ..ScenarioConfig::default()
    }
}

/// Random deployment: each station independently active with probability 0.7,
/// resampled per day, so opens and closes churn heavily.
fn random_plan(rng: &mut ChaCha8Rng, n: usize, days: usize) -> Plan {
    let mut snap = |rng: &mut ChaCha8Rng| -> Snapshot {
        (0..n as u32).filter(|_| rng.gen::<f64>() < 0.7).collect()
    };
    Plan {
        initial: snap(rng),
        days: (0..days).map(|_| snap(rng)).collect(),
    }
}

/// One greedy episode under the shared evaluation convention: the simulated
/// demand seed is the row seed itself and the policy stream is job 0.
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

#[test]
fn c01_daily_money_tallies_sum_to_episode_totals_exactly() {
    let _g = gate();
    let cfg = small_config(40, 8, 60, 6, 800.0, 10.0);
    let sc = generate_scenario(&cfg, 21).unwrap();
    let tables = DemandTables::new(&sc);
    let coverage = CoverageIndex::for_scenario(&sc);
    let mut rng = ChaCha8Rng::seed_from_u64(77);

    for ep in 0..20u64 {
        let plan = random_plan(&mut rng, 40, 6);
        let record = run_episode(&sc, &tables, &plan, 9000 + ep, SimOptions::default()).unwrap();

        let day_gmv: i64 = record.days.iter().map(|d| d.gmv.milli()).sum();
        let day_cost: i64 = record.days.iter().map(|d| d.cost.milli()).sum();
        let day_sat: u64 = record.days.iter().map(|d| d.satisfied).sum();
        let day_dem: u64 = record.days.iter().map(|d| d.total_demand).sum();
        assert_eq!(day_gmv, record.gmv.milli(), "episode {ep}: GMV sum drifts");
        assert_eq!(day_cost, record.cost.milli(), "episode {ep}: cost sum drifts");
        assert_eq!(day_sat, record.satisfied, "episode {ep}: satisfied sum drifts");
        assert_eq!(day_dem, record.total_demand, "episode {ep}: demand sum drifts");

        for t in &record.days {
            let billed = snapshot_cost(&sc.stations, plan.snapshot(t.day));
            assert_eq!(t.cost.milli(), billed.milli(), "episode {ep} day {} billing", t.day);
            let by_origin: i64 = t.gmv_by_origin.iter().map(|m| m.milli()).sum();
            assert_eq!(by_origin, t.gmv.milli(), "episode {ep} day {} origin split", t.day);
        }

        let report = build_report(&coverage, &plan, &record, 40, 1.0);
        for (d, t) in report.per_day.iter().zip(&record.days) {
            assert_eq!(d.nv, (t.gmv - t.cost).units(), "day {} NV identity", t.day);
        }
        let episode_nv = (record.gmv - record.cost).units();
        assert_eq!(report.episode.nv, episode_nv, "episode NV identity");
    }
    println!("20 random episodes: all integer money identities exact");
}

#[test]
fn c02_conservation_invariants_hold_on_random_episodes() {
    let _g = gate();
    let started = Instant::now();
    let shapes = [
        (12usize, 3usize),
        (12, 4),
        (16, 4),
        (20, 5),
        (24, 6),
        (24, 8),
        (32, 8),
        (36, 6),
        (36, 9),
        (40, 10),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    for ep in 0..100u64 {
        let (n, m) = shapes[rng.gen_range(0..shapes.len())];
        let cfg = ScenarioConfig {
            n_stations: n,
            region_size: m,
            n_pois: rng.gen_range(20..=60),
            horizon_days: rng.gen_range(3..=5),
            city_km: rng.gen_range(8.0..12.0),
            target_daily_demand: rng.gen_range(200.0..800.0),
            docks_min: 4,
            docks_max: rng.gen_range(6..=12),
            ..ScenarioConfig::default()
        };
        let sc = generate_scenario(&cfg, 1000 + ep).unwrap();
        let tables = DemandTables::new(&sc);
        let plan = random_plan(&mut rng, n, sc.episode_days);
        let opts = SimOptions {
            check_invariants: true,
            ..SimOptions::default()
        };
        // The driver audits fleet counts, dock occupancy and range bounds at
        // every step and panics on the first violation.
        run_episode(&sc, &tables, &plan, 5000 + ep, opts).unwrap();
    }
    println!(
        "100 random episodes audited at every step in {:.1?}",
        started.elapsed()
    );
}

#[test]
fn c03_identical_inputs_reproduce_reports_and_training_curves() {
    let _g = gate();
    let started = Instant::now();

    let cfg = small_config(20, 10, 30, 3, 200.0, 8.0);
    let sc = generate_scenario(&cfg, 11).unwrap();
    let tables = DemandTables::new(&sc);
    let coverage = CoverageIndex::for_scenario(&sc);
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let plan = random_plan(&mut rng, 20, 3);

    let run = || {
        let record = run_episode(&sc, &tables, &plan, 314, SimOptions::default()).unwrap();
        let report = build_report(&coverage, &plan, &record, 20, 1.0);
        (record, serde_json::to_string(&report).unwrap())
    };
    let (rec_a, json_a) = run();
    let (rec_b, json_b) = run();
    assert_eq!(rec_a.gmv, rec_b.gmv);
    assert_eq!(rec_a.cost, rec_b.cost);
    assert_eq!(rec_a.satisfied, rec_b.satisfied);
    assert_eq!(rec_a.rejects, rec_b.rejects);
    assert_eq!(json_a, json_b, "same (scenario, plan, seed) must reproduce the report bit for bit");

    let tcfg = |workers: usize| TrainConfig {
        seed: 3,
        plan_budget: 48,
        rollouts_per_update: 8,
        workers,
        predictor: PredictorChoice::MovingAverage,
        warmup_episodes: 1,
        gcn_epochs: 0,
        eval_episodes: 2,
        reward_lambda: Some(0.0),
        checkpoint_every: 0,
        ..TrainConfig::default()
    };
    let one = train(&sc, &tcfg(1), None).unwrap();
    let four = train(&sc, &tcfg(4), None).unwrap();
    assert_eq!(
        one.curve, four.curve,
        "learning curves must not depend on the worker count"
    );
    assert_eq!(
        one.params.net.params, four.params.net.params,
        "final parameters must not depend on the worker count"
    );
    assert_eq!(one.best_objective, four.best_objective);
    println!(
        "reports bit-identical; 1-worker and 4-worker curves identical over {} updates ({:.1?})",
        one.curve.len(),
        started.elapsed()
    );
}

/// Exhaustive oracle: the extreme sum over all size-k subsets of `scores`.
fn extreme_subset_sum(scores: &[f64], k: usize, maximize: bool) -> f64 {
    let n = scores.len();
    assert!(n <= 16);
    let mut best = if maximize { f64::NEG_INFINITY } else { f64::INFINITY };
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != k {
            continue;
        }
        let s: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| scores[i]).sum();
        best = if maximize { best.max(s) } else { best.min(s) };
    }
    if best.is_finite() {
        best
    } else {
        0.0
    }
}

#[test]
fn c04_greedy_level_selection_matches_exhaustive_enumeration() {
    let _g = gate();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut pick_rng = derive_rng(404, POLICY_STREAM);

    for case in 0..200 {
        let m = rng.gen_range(2..=10usize);
        let mut scale: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..1.0)).collect();
        scale.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let prior = DeploymentPrior {
            add_level: rng.gen_range(0..3),
            remove_level: rng.gen_range(0..3),
        };
        let active: Vec<bool> = (0..m).map(|_| rng.gen::<bool>()).collect();
        let mut ranking: Vec<(StationId, f64)> = (0..m as u32)
            .map(|id| (id, rng.gen_range(0.0..1.0)))
            .collect();
        ranking.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        let score_of = |id: StationId| ranking.iter().find(|r| r.0 == id).unwrap().1;

        let (open, close) = low_level_select(&ranking, &prior, &scale, 0.0, &mut pick_rng, &active);

        let inactive_scores: Vec<f64> = ranking
            .iter()
            .filter(|&&(id, _)| !active[id as usize])
            .map(|r| r.1)
            .collect();
        let active_scores: Vec<f64> = ranking
            .iter()
            .filter(|&&(id, _)| active[id as usize])
            .map(|r| r.1)
            .collect();
        let k_open =
            ((scale[prior.add_level] * m as f64).round() as usize).min(inactive_scores.len());
        let k_close =
            ((scale[prior.remove_level] * m as f64).round() as usize).min(active_scores.len());

        assert_eq!(open.len(), k_open, "case {case}: open count");
        assert_eq!(close.len(), k_close, "case {case}: close count");
        for &id in &open {
            assert!(!active[id as usize], "case {case}: opened an active station");
        }
        for &id in &close {
            assert!(active[id as usize], "case {case}: closed an inactive station");
        }

        let open_sum: f64 = open.iter().map(|&id| score_of(id)).sum();
        let close_sum: f64 = close.iter().map(|&id| score_of(id)).sum();
        let best_open = extreme_subset_sum(&inactive_scores, k_open, true);
        let worst_close = extreme_subset_sum(&active_scores, k_close, false);
        assert!(
            (open_sum - best_open).abs() <= 1e-9,
            "case {case}: open sum {open_sum} vs exhaustive best {best_open}"
        );
        assert!(
            (close_sum - worst_close).abs() <= 1e-9,
            "case {case}: close sum {close_sum} vs exhaustive worst {worst_close}"
        );
    }
    println!("200 random instances: greedy selection agreed with enumeration on every one");
}

#[test]
fn c05_one_time_planner_stays_within_greedy_bound_of_optimum() {
    let _g = gate();
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut worst_ratio = f64::INFINITY;

    for case in 0..20 {
        let n = rng.gen_range(6..=12usize);
        let stations: Vec<emobsim_core::Station> = (0..n)
            .map(|id| emobsim_core::Station {
                id: id as u32,
                loc: Point::new(rng.gen_range(0.0..8.0), rng.gen_range(0.0..8.0)),
                docks: 8,
                daily_cost: Money::from_units(rng.gen_range(0.5..3.0)),
            })
            .collect();
        let pois: Vec<emobsim_core::Poi> = (0..30)
            .map(|_| emobsim_core::Poi {
                loc: Point::new(rng.gen_range(0.0..8.0), rng.gen_range(0.0..8.0)),
            })
            .collect();
        let coverage = CoverageIndex::new(&stations, &pois, 1.0);
        let budget = Money::from_units(rng.gen_range(2.0..8.0));
        let demand_est = vec![0.0; n];

        let snap = plan_one_time(&stations, &coverage, &demand_est, budget);
        let greedy_covered = coverage.covered_count(&snap.mask(n));

        let mut optimum = 0usize;
        for mask in 0u32..(1 << n) {
            let cost: Money = (0..n)
                .filter(|i| mask >> i & 1 == 1)
                .map(|i| stations[i].daily_cost)
                .sum();
            if cost > budget {
                continue;
            }
            let active: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
            optimum = optimum.max(coverage.covered_count(&active));
        }

        if optimum == 0 {
            assert_eq!(greedy_covered, 0, "case {case}: covered without an optimum");
            continue;
        }
        let ratio = greedy_covered as f64 / optimum as f64;
        worst_ratio = worst_ratio.min(ratio);
        assert!(
            ratio >= 0.632,
            "case {case}: greedy covered {greedy_covered} of optimum {optimum} (ratio {ratio:.3})"
        );
    }
    println!("20 brute-forced instances: worst greedy/optimum ratio {worst_ratio:.3}");
}

#[test]
fn c06_policy_gradient_matches_central_finite_differences() {
    let _g = gate();
    let started = Instant::now();
    // Two-candidate region observation, small hidden sizes so the full
    // parameter sweep stays cheap.
    let shape = NetShape {
        input: obs_dim(2),
        hidden: 8,
        head_hidden: 6,
        levels: 3,
    };
    let cfg = PpoConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    const H: f64 = 1e-5;
    let mut max_rel = 0.0f64;

    for draw in 0..50u64 {
        let net = PolicyNet::new(shape, 600 + draw);
        let mut seqs = Vec::new();
        for _ in 0..2 {
            let obs: Vec<Vec<f64>> = (0..3)
                .map(|_| (0..shape.input).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let caches = net.forward_sequence(&obs);
            let mut seq = Sequence {
                obs,
                add: Vec::new(),
                rem: Vec::new(),
                logp_old: Vec::new(),
                value_old: Vec::new(),
                rewards: Vec::new(),
            };
            for c in &caches {
                let pa = softmax(&c.add_logits);
                let pr = softmax(&c.rem_logits);
                let a = sample_categorical(&pa, &mut rng);
                let r = sample_categorical(&pr, &mut rng);
                seq.add.push(a);
                seq.rem.push(r);
                // Jitter keeps the ratios spread but far inside the clip
                // band, so the loss is smooth within the probe radius.
                seq.logp_old.push(pa[a].ln() + pr[r].ln() + rng.gen_range(-0.05..0.05));
                seq.value_old.push(c.value + rng.gen_range(-0.3..0.3));
                seq.rewards.push(rng.gen_range(-1.0..1.0));
            }
            seqs.push(seq);
        }

        let (advs, rets) = advantages_and_returns(&seqs, &cfg);
        let grad = surrogate_grad(&net, &seqs, &advs, &rets, &cfg);
        let mut probe = net.clone();
        for i in 0..grad.len() {
            let orig = probe.params[i];
            probe.params[i] = orig + H;
            let up = surrogate_loss(&probe, &seqs, &advs, &rets, &cfg);
            probe.params[i] = orig - H;
            let down = surrogate_loss(&probe, &seqs, &advs, &rets, &cfg);
            probe.params[i] = orig;
            let fd = (up - down) / (2.0 * H);
            let err = (grad[i] - fd).abs();
            let denom = grad[i].abs().max(fd.abs());
            if denom > 1e-6 {
                max_rel = max_rel.max(err / denom);
            }
            assert!(
                err <= 1e-4 * denom.max(1e-4),
                "draw {draw} param {i}: analytic {} vs central difference {fd}",
                grad[i]
            );
        }
    }
    println!(
        "50 draws x {} parameters: max relative gradient error {max_rel:.2e} ({:.1?})",
        shape.n_params(),
        started.elapsed()
    );
}

#[test]
fn c07_bandit_reward_concentrates_the_policy_within_budget() {
    let _g = gate();
    let started = Instant::now();
    let shape = NetShape::new(4, 3);
    let cfg = PpoConfig {
        entropy_coef: 0.0,
        ..PpoConfig::default()
    };
    let obs = vec![1.0, 0.5, -0.5, 0.25];
    let mut used = Vec::new();

    for seed in 1..=5u64 {
        let mut net = PolicyNet::new(shape, seed);
        let mut opt = Adam::new(net.params.len(), 0.01);
        let mut rng = derive_rng(700 + seed, POLICY_STREAM);
        let mut reached = None;

        for update in 1..=500 {
            let caches = net.forward_sequence(std::slice::from_ref(&obs));
            let pa = softmax(&caches[0].add_logits);
            let pr = softmax(&caches[0].rem_logits);
            let seqs: Vec<Sequence> = (0..8)
                .map(|_| {
                    let a = sample_categorical(&pa, &mut rng);
                    let r = sample_categorical(&pr, &mut rng);
                    Sequence {
                        obs: vec![obs.clone()],
                        add: vec![a],
                        rem: vec![r],
                        logp_old: vec![pa[a].ln() + pr[r].ln()],
                        value_old: vec![caches[0].value],
                        rewards: vec![f64::from(a == 2 && r == 0)],
                    }
                })
                .collect();
            ppo_update(&mut net, &mut opt, &seqs, &cfg);

            let caches = net.forward_sequence(std::slice::from_ref(&obs));
            let pa = softmax(&caches[0].add_logits);
            let pr = softmax(&caches[0].rem_logits);
            if pa[2] >= 0.9 && pr[0] >= 0.9 {
                reached = Some(update);
                break;
            }
        }
        let update = reached.unwrap_or_else(|| {
            panic!("seed {seed}: favored level below 0.9 after 500 updates")
        });
        used.push(update);
    }
    println!(
        "5/5 seeds concentrated on the rewarded levels; updates used {used:?} ({:.1?})",
        started.elapsed()
    );
}

#[test]
fn c08_trained_planner_beats_every_baseline_on_the_reference_scenario() {
    let _g = gate();
    let started = Instant::now();
    let cfg = ScenarioConfig {
        constants: Constants {
            cost_scale: 2.0,
            ..Constants::default()
        },
        ..ScenarioConfig::default()
    };
    let sc = generate_scenario(&cfg, 42).unwrap();
    let tables = DemandTables::new(&sc);
    let coverage = CoverageIndex::for_scenario(&sc);
    let n = sc.stations.len();
    let seeds: Vec<u64> = (1..=5).collect();

    let baseline = |kind: PlannerKind| -> Vec<f64> {
        seeds
            .iter()
            .map(|&seed| {
                let (plan, record) =
                    run_baseline(&sc, &tables, kind, &BaselineConfig::default(), seed);
                build_report(&coverage, &plan, &record, n, 1.0).episode.objective
            })
            .collect()
    };
    let fd = baseline(PlannerKind::Fixed);
    let rev = baseline(PlannerKind::Revenue);
    let cov = baseline(PlannerKind::Coverage);
    let oo = baseline(PlannerKind::OneTime);
    let io = baseline(PlannerKind::Incremental);

    let tcfg = TrainConfig {
        seed: 1,
        plan_budget: 2000,
        rollouts_per_update: 8,
        action_scale: vec![0.0, 0.2, 0.4],
        predictor: PredictorChoice::Gcn,
        warmup_episodes: 3,
        gcn_epochs: 500,
        eval_episodes: 5,
        reward_lambda: Some(0.0),
        checkpoint_every: 0,
        ..TrainConfig::default()
    };
    let result = train(&sc, &tcfg, None).unwrap();
    let ctx = EvalContext::build(&sc, &result.best).unwrap();
    let mans: Vec<f64> = seeds
        .iter()
        .map(|&seed| greedy_report(&sc, &result.best, &ctx, seed, 1.0).episode.objective)
        .collect();

    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (m_fd, m_rev, m_cov) = (mean(&fd), mean(&rev), mean(&cov));
    let (m_oo, m_io, m_mans) = (mean(&oo), mean(&io), mean(&mans));
    println!(
        "mean objective: trained {m_mans:.4} | io {m_io:.4} | oo {m_oo:.4} | rev {m_rev:.4} | cov {m_cov:.4} | fd {m_fd:.4} ({:.1?})",
        started.elapsed()
    );

    assert!(m_mans > m_io, "trained {m_mans:.4} must beat io {m_io:.4}");
    assert!(m_io >= m_oo, "io {m_io:.4} must not trail oo {m_oo:.4}");
    assert!(
        m_oo > m_rev.max(m_cov),
        "oo {m_oo:.4} must beat rev {m_rev:.4} and cov {m_cov:.4}"
    );
    assert!(
        m_rev.max(m_cov) > m_fd,
        "best greedy {:.4} must beat fd {m_fd:.4}",
        m_rev.max(m_cov)
    );
    for (name, other) in [("fd", &fd), ("rev", &rev), ("cov", &cov)] {
        let wins = seeds
            .iter()
            .enumerate()
            .filter(|&(i, _)| mans[i] > other[i])
            .count();
        assert!(
            wins >= 4,
            "trained planner beat {name} on only {wins}/5 seeds ({mans:?} vs {other:?})"
        );
    }
}

/// Returns a uniformly random point in the disc of radius `r` around `c`,
/// clamped into the city square. Clamping can only move a point toward the
/// disc center, so the radius bound survives it.
fn disc(rng: &mut ChaCha8Rng, c: Point, r: f64, city: f64) -> Point {
    let t = rng.gen::<f64>() * std::f64::consts::TAU;
    let d = r * rng.gen::<f64>().sqrt();
    Point::new(
        (c.x + d * t.cos()).clamp(0.05, city - 0.05),
        (c.y + d * t.sin()).clamp(0.05, city - 0.05),
    )
}

/// Replaces the demand field with one bump per cluster center and rescales it
/// so the expected weekday total over the station pool hits `target`.
fn refit_demand(sc: &mut Scenario, centers: &[Point], sigma: f64, target: f64) {
    sc.intensity_spec.bumps = centers
        .iter()
        .map(|&c| Bump {
            center: c,
            weight: 1.0,
            sigma_km: sigma,
        })
        .collect();
    sc.od_spec.work_hubs = centers.to_vec();
    sc.od_spec.home_hubs = centers.to_vec();
    let raw: f64 = sc
        .stations
        .iter()
        .map(|s| sc.intensity_spec.field(s.loc))
        .sum();
    sc.intensity_spec.scale = target / raw;
}

/// Mean daily revenue per station under full deployment, the yardstick the
/// constructed scenarios price their stations from.
fn probe_daily_gmv(sc: &Scenario, probe_seed: u64) -> Vec<f64> {
    let tables = DemandTables::new(sc);
    let n = sc.stations.len();
    let full = Plan::constant((0..n as u32).collect(), sc.episode_days);
    let record = run_episode(sc, &tables, &full, probe_seed, SimOptions::default()).unwrap();
    let days = record.days.len() as f64;
    let mut g = vec![0.0; n];
    for day in &record.days {
        for (s, m) in day.gmv_by_origin.iter().enumerate() {
            g[s] += m.units();
        }
    }
    for x in &mut g {
        *x /= days;
    }
    g
}

const TENSION_TRAIN_SEED: u64 = 5;

/// Four regions of six stations each: four profitable stations clustered on
/// the demand bump, plus two remote loss-making stations that alone cover
/// part of the region's POIs. Profitable stations are priced at half their
/// measured revenue, so the profit margin is indifferent to how many of them
/// are open; the remote pair is priced so that dropping the cheaper one pays
/// off only under a strong profit weight and dropping both only under a very
/// strong one. Sweeping the weight therefore has to trade net revenue
/// against coverage through those two stations alone.
fn tension_scenario() -> (Scenario, Vec<[usize; 6]>) {
    let city = 12.0;
    let cfg = ScenarioConfig {
        n_stations: 24,
        region_size: 6,
        n_pois: 100,
        horizon_days: 14,
        city_km: city,
        target_daily_demand: 900.0,
        docks_min: 10,
        docks_max: 10,
        ..ScenarioConfig::default()
    };
    let mut sc = generate_scenario(&cfg, 7).unwrap();

    let centers = [
        Point::new(2.5, 2.5),
        Point::new(9.5, 2.5),
        Point::new(2.5, 9.5),
        Point::new(9.5, 9.5),
    ];
    let offsets = [(-0.25, -0.25), (0.25, -0.25), (-0.25, 0.25), (0.25, 0.25)];
    let mut groups = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(90210);
    let mut pois = Vec::new();

    for (k, &c) in centers.iter().enumerate() {
        let sx = (c.x - city / 2.0).signum();
        let sy = (c.y - city / 2.0).signum();
        let base = 6 * k;
        for (j, &(dx, dy)) in offsets.iter().enumerate() {
            sc.stations[base + j].loc = Point::new(c.x + dx, c.y + dy);
        }
        // Remote pair on the two outward diagonals, 2.6 km from the cluster:
        // far enough that their POIs are theirs alone, close enough to stay
        // in the same balanced partition cell.
        let a = Point::new(c.x + 1.84 * sx, c.y + 1.84 * sy);
        let b = Point::new(c.x + 1.84 * sx, c.y - 1.84 * sy);
        sc.stations[base + 4].loc = a;
        sc.stations[base + 5].loc = b;
        for st in &mut sc.stations[base..base + 6] {
            st.docks = 10;
        }

        for _ in 0..15 {
            pois.push(emobsim_core::Poi {
                loc: disc(&mut rng, c, 0.6, city),
            });
        }
        for _ in 0..6 {
            pois.push(emobsim_core::Poi {
                loc: disc(&mut rng, a, 0.8, city),
            });
        }
        for _ in 0..4 {
            pois.push(emobsim_core::Poi {
                loc: disc(&mut rng, b, 0.8, city),
            });
        }
        groups.push([base, base + 1, base + 2, base + 3, base + 4, base + 5]);
    }
    sc.pois = pois;
    refit_demand(&mut sc, &centers, 0.9, 900.0);

    let gmv = probe_daily_gmv(&sc, 4242);
    let coverage = CoverageIndex::for_scenario(&sc);
    for group in &groups {
        let universe: std::collections::HashSet<u32> = group
            .iter()
            .flat_map(|&s| coverage.station_pois[s].iter().copied())
            .collect();
        let share = |s: usize| coverage.station_pois[s].len() as f64 / universe.len() as f64;
        let g0: f64 = group[..4].iter().map(|&s| gmv[s]).sum();
        for &s in &group[..4] {
            sc.stations[s].daily_cost = Money::from_units(0.5 * gmv[s]);
        }
        // Price the remote pair off the closing trade: dropping a station
        // with exclusive POI share v forfeits 0.5 v of coverage once and
        // gains cost/G0 of margin once, so cost = 0.5 v G0 / w_break puts
        // the break-even at w_break.
        let (a, b) = (group[4], group[5]);
        sc.stations[a].daily_cost = Money::from_units(0.5 * share(a) * g0 / 3.0);
        sc.stations[b].daily_cost = Money::from_units(1.5 * share(b) * g0);
    }
    (sc, groups)
}

#[test]
fn c09_profit_weight_sweep_trades_revenue_for_coverage_monotonically() {
    let _g = gate();
    let started = Instant::now();
    let (sc, groups) = tension_scenario();

    // Construction sanity: the partition must recover the four groups, the
    // remote pair must own its POIs exclusively and run at a loss.
    let partition = partition_regions(&sc.stations, 6, TENSION_TRAIN_SEED).unwrap();
    for group in &groups {
        let hit = partition
            .regions
            .iter()
            .any(|r| r.members.iter().map(|&m| m as usize).eq(group.iter().copied()));
        assert!(hit, "partition did not recover group {group:?}");
    }
    let coverage = CoverageIndex::for_scenario(&sc);
    let gmv = probe_daily_gmv(&sc, 4242);
    for group in &groups {
        for &s in &group[4..] {
            assert!(
                !coverage.station_pois[s].is_empty(),
                "remote station {s} covers nothing"
            );
            for &p in &coverage.station_pois[s] {
                assert_eq!(
                    coverage.coverers[p as usize],
                    vec![s as u32],
                    "POI {p} is not exclusive to station {s}"
                );
            }
            assert!(
                gmv[s] < sc.stations[s].daily_cost.units(),
                "remote station {s} is not loss-making: revenue {:.1} vs cost {:.1}",
                gmv[s],
                sc.stations[s].daily_cost.units()
            );
        }
    }

    let weights = [9.0, 1.0, 1.0 / 9.0];
    let mut sc_means = Vec::new();
    let mut nv_means = Vec::new();
    for &w in &weights {
        let tcfg = TrainConfig {
            seed: TENSION_TRAIN_SEED,
            plan_budget: 1600,
            rollouts_per_update: 8,
            action_scale: vec![0.0, 1.0 / 6.0, 2.0 / 6.0],
            predictor: PredictorChoice::MovingAverage,
            warmup_episodes: 2,
            gcn_epochs: 0,
            eval_episodes: 5,
            reward_w: w,
            reward_lambda: Some(0.0),
            checkpoint_every: 0,
            ..TrainConfig::default()
        };
        let result = train(&sc, &tcfg, None).unwrap();
        let ctx = EvalContext::build(&sc, &result.best).unwrap();
        let (mut sc_sum, mut nv_sum) = (0.0, 0.0);
        for seed in 1..=5 {
            let report = greedy_report(&sc, &result.best, &ctx, seed, w);
            sc_sum += report.episode.sc;
            nv_sum += report.episode.nv;
        }
        sc_means.push(sc_sum / 5.0);
        nv_means.push(nv_sum / 5.0);
    }
    println!(
        "w = 9, 1, 1/9: SC {:?}, NV {:?} ({:.1?})",
        sc_means
            .iter()
            .map(|x| format!("{x:.4}"))
            .collect::<Vec<_>>(),
        nv_means
            .iter()
            .map(|x| format!("{x:.0}"))
            .collect::<Vec<_>>(),
        started.elapsed()
    );

    // SC must rise and NV must fall as the profit weight drops, with at most
    // one inversion of at most 1% relative size across both sequences.
    let mut inversions = Vec::new();
    for pair in sc_means.windows(2) {
        if pair[1] < pair[0] {
            inversions.push((pair[0] - pair[1]) / pair[0].abs().max(1e-12));
        }
    }
    for pair in nv_means.windows(2) {
        if pair[1] > pair[0] {
            inversions.push((pair[1] - pair[0]) / pair[0].abs().max(1e-12));
        }
    }
    assert!(
        inversions.len() <= 1,
        "{} inversions (SC {sc_means:?}, NV {nv_means:?})",
        inversions.len()
    );
    if let Some(&size) = inversions.first() {
        assert!(
            size <= 0.01,
            "inversion of {size:.4} relative exceeds 1% (SC {sc_means:?}, NV {nv_means:?})"
        );
    }
}

const LURE_TRAIN_SEED: u64 = 9;

/// Two regions of four: one all-profitable cluster, one cluster whose fourth
/// member is a remote station that alone covers half its region's POIs but
/// costs more than the whole city earns in a day. Any day it is open, the
/// deployment cannot pay for itself.
fn lure_scenario() -> (Scenario, usize) {
    let city = 12.0;
    let cfg = ScenarioConfig {
        n_stations: 8,
        region_size: 4,
        n_pois: 40,
        horizon_days: 14,
        city_km: city,
        target_daily_demand: 500.0,
        docks_min: 10,
        docks_max: 10,
        ..ScenarioConfig::default()
    };
    let mut sc = generate_scenario(&cfg, 13).unwrap();

    let c_a = Point::new(3.0, 3.0);
    let c_b = Point::new(9.0, 9.0);
    let offsets = [(-0.2, -0.2), (0.2, -0.2), (0.0, 0.2), (0.2, 0.2)];
    for (j, &(dx, dy)) in offsets.iter().take(3).enumerate() {
        sc.stations[j].loc = Point::new(c_a.x + dx, c_a.y + dy);
    }
    let lure = 3;
    let lure_loc = Point::new(0.6, 0.6);
    sc.stations[lure].loc = lure_loc;
    for (j, &(dx, dy)) in offsets.iter().enumerate() {
        sc.stations[4 + j].loc = Point::new(c_b.x + dx, c_b.y + dy);
    }
    for st in &mut sc.stations {
        st.docks = 10;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(31337);
    let mut pois = Vec::new();
    for _ in 0..10 {
        pois.push(emobsim_core::Poi {
            loc: disc(&mut rng, c_a, 0.55, city),
        });
    }
    for _ in 0..10 {
        pois.push(emobsim_core::Poi {
            loc: disc(&mut rng, lure_loc, 0.75, city),
        });
    }
    for _ in 0..20 {
        pois.push(emobsim_core::Poi {
            loc: disc(&mut rng, c_b, 0.55, city),
        });
    }
    sc.pois = pois;
    refit_demand(&mut sc, &[c_a, c_b], 0.9, 500.0);

    let gmv = probe_daily_gmv(&sc, 777);
    let city_daily: f64 = gmv.iter().sum();
    for s in 0..8 {
        if s != lure {
            sc.stations[s].daily_cost = Money::from_units(0.5 * gmv[s]);
        }
    }
    sc.stations[lure].daily_cost = Money::from_units(1.5 * city_daily);
    (sc, lure)
}

#[test]
fn c10_penalty_grid_search_keeps_deployments_self_sustaining() {
    let _g = gate();
    let started = Instant::now();
    let (sc, lure) = lure_scenario();

    let coverage = CoverageIndex::for_scenario(&sc);
    assert!(
        coverage.station_pois[lure].len() >= 8,
        "lure must anchor a large exclusive POI share"
    );
    for &p in &coverage.station_pois[lure] {
        assert_eq!(coverage.coverers[p as usize], vec![lure as u32]);
    }

    let base = TrainConfig {
        seed: LURE_TRAIN_SEED,
        plan_budget: 800,
        rollouts_per_update: 8,
        action_scale: vec![0.0, 0.25, 0.5],
        predictor: PredictorChoice::MovingAverage,
        warmup_episodes: 2,
        gcn_epochs: 0,
        eval_episodes: 5,
        reward_w: 1.0 / 9.0,
        reward_lambda: None,
        checkpoint_every: 0,
        ..TrainConfig::default()
    };
    let rate_of = |result: &emobsim_trainer::TrainResult| -> f64 {
        let ctx = EvalContext::build(&sc, &result.best).unwrap();
        let (_, infeasible) = evaluate_policy(
            &sc,
            &result.best,
            &ctx,
            &result.reward,
            LURE_TRAIN_SEED,
            base.eval_episodes,
        );
        infeasible as f64 / (base.eval_episodes * sc.episode_days) as f64
    };

    let unpenalized = train(
        &sc,
        &TrainConfig {
            reward_lambda: Some(0.0),
            ..base.clone()
        },
        None,
    )
    .unwrap();
    let rate_free = rate_of(&unpenalized);

    let grid = default_lambda_grid(&sc, &base).unwrap();
    let (lambda, evals) = grid_search_lambda(&sc, &base, &grid).unwrap();
    let tuned = train(
        &sc,
        &TrainConfig {
            reward_lambda: Some(lambda),
            ..base.clone()
        },
        None,
    )
    .unwrap();
    let rate_tuned = rate_of(&tuned);

    println!(
        "infeasible-day rate: penalty off {rate_free:.3}, grid-selected lambda {lambda:.6} -> {rate_tuned:.3} (grid {evals:?}, {:.1?})",
        started.elapsed()
    );
    assert!(
        rate_free > 0.20,
        "without the penalty the lure should break the budget on >20% of days (got {rate_free:.3})"
    );
    assert!(
        rate_tuned < 0.05,
        "grid-selected lambda {lambda:.6} left {rate_tuned:.3} of days infeasible"
    );
}

#[test]
fn c11_four_workers_halve_the_wall_clock_of_equal_cost_evaluations() {
    let _g = gate();
    let cfg = small_config(40, 8, 80, 7, 1500.0, 10.0);
    let sc = generate_scenario(&cfg, 51).unwrap();
    let tables = DemandTables::new(&sc);
    let plan = Plan::constant((0..40u32).collect(), sc.episode_days);
    let job = |j: usize| {
        run_episode(&sc, &tables, &plan, 7000 + j as u64, SimOptions::default())
            .unwrap()
            .gmv
            .milli()
    };

    // Warm both paths before timing so one-time allocation stays out of it.
    emobsim_trainer::run_jobs(4, 1, &job);
    emobsim_trainer::run_jobs(4, 4, &job);

    let t = Instant::now();
    let serial = emobsim_trainer::run_jobs(100, 1, &job);
    let wall_1 = t.elapsed();
    let t = Instant::now();
    let pooled = emobsim_trainer::run_jobs(100, 4, &job);
    let wall_4 = t.elapsed();
    assert_eq!(serial, pooled, "result must not depend on the worker count");

    let ratio = wall_4.as_secs_f64() / wall_1.as_secs_f64();
    let cores = std::thread::available_parallelism().map_or(0, |c| c.get());
    println!(
        "100 evaluations: W=1 {wall_1:.2?}, W=4 {wall_4:.2?}, ratio {ratio:.3}, host parallelism {cores}"
    );
    assert!(
        ratio <= 0.5,
        "W=4 must at least halve the W=1 wall-clock; measured ratio {ratio:.3} on a host with {cores} core(s)"
    );
}
