//! Comparison planners.
//!
//! Five reproducible strategies: keep the initial deployment (FD), churn the
//! worst stations for promising ones by net revenue (REV) or by coverage and
//! demand (COV), build one cost-benefit set and hold it (OO), or rebuild that
//! set every day from realized history under a self-sustaining budget (IO).

use emobsim_core::domain::{Snapshot, Station, StationId};
use emobsim_core::metrics::CoverageIndex;
use emobsim_core::money::Money;
use emobsim_core::rng::{derive_rng, mix, POLICY_STREAM};
use emobsim_core::scenario::{day_type, poisson, DemandTables, Scenario};
use emobsim_core::sim::{DayTallies, EpisodeDriver, EpisodeRecord, SimOptions};
use emobsim_core::{run_episode, Plan};
use rand_chacha::ChaCha8Rng;
use std::collections::VecDeque;

/// The starting deployment every planner inherits: every other candidate by
/// id. Half the pool, spread over the city, optimized for nothing.
pub fn initial_snapshot(n_stations: usize) -> Snapshot {
    Snapshot::new((0..n_stations as StationId).step_by(2).collect())
}

/// FD: the initial snapshot held for the whole horizon.
pub fn plan_fixed(s0: &Snapshot, horizon: usize) -> Plan {
    Plan::constant(s0.clone(), horizon)
}

/// Per-station rolling means over a trailing window of already-simulated
/// days. No entry ever includes the day being planned.
pub struct HistoryStats {
    window: usize,
    n: usize,
    rows: VecDeque<StatRow>,
}

struct StatRow {
    net_revenue: Vec<f64>,
    satisfied: Vec<f64>,
    pickups: Vec<f64>,
    demand: Vec<f64>,
    gmv: Money,
}

impl HistoryStats {
    pub fn new(n_stations: usize, window: usize) -> Self {
        assert!(window >= 1, "window must cover at least one day");
        HistoryStats {
            window,
            n: n_stations,
            rows: VecDeque::new(),
        }
    }

    pub fn push_day(&mut self, stations: &[Station], snap: &Snapshot, t: &DayTallies) {
        let mut row = StatRow {
            net_revenue: vec![0.0; self.n],
            satisfied: vec![0.0; self.n],
            pickups: vec![0.0; self.n],
            demand: vec![0.0; self.n],
            gmv: t.gmv,
        };
        for s in 0..self.n {
            let cost = if snap.contains(s as StationId) {
                stations[s].daily_cost
            } else {
                Money::ZERO
            };
            row.net_revenue[s] = (t.gmv_by_origin[s] - cost).units();
            row.satisfied[s] = f64::from(t.satisfied_by_origin[s]);
            row.pickups[s] = f64::from(t.pickups[s]);
            row.demand[s] = f64::from(t.demand_by_origin[s]);
        }
        self.rows.push_back(row);
        if self.rows.len() > self.window {
            self.rows.pop_front();
        }
    }

    pub fn days_seen(&self) -> usize {
        self.rows.len()
    }

    fn mean_of(&self, field: impl Fn(&StatRow) -> &[f64], s: usize) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().map(|r| field(r)[s]).sum::<f64>() / self.rows.len() as f64
    }

    pub fn mean_net_revenue(&self, s: usize) -> f64 {
        self.mean_of(|r| &r.net_revenue, s)
    }

    pub fn mean_satisfied(&self, s: usize) -> f64 {
        self.mean_of(|r| &r.satisfied, s)
    }

    pub fn mean_pickups(&self, s: usize) -> f64 {
        self.mean_of(|r| &r.pickups, s)
    }

    pub fn mean_demand(&self, s: usize) -> f64 {
        self.mean_of(|r| &r.demand, s)
    }

    pub fn mean_demand_vec(&self) -> Vec<f64> {
        (0..self.n).map(|s| self.mean_demand(s)).collect()
    }

    /// GMV of the most recently pushed day.
    pub fn last_gmv(&self) -> Option<Money> {
        self.rows.back().map(|r| r.gmv)
    }
}

/// Daily churn count distribution: Poisson with a hard cap.
#[derive(Debug, Clone, Copy)]
pub struct ChurnDist {
    pub mean: f64,
    pub max: usize,
}

impl ChurnDist {
    /// Default churn for a pool: mean 3% of the pool, capped at 10%.
    pub fn for_pool(n_stations: usize) -> Self {
        ChurnDist {
            mean: 0.03 * n_stations as f64,
            max: (0.10 * n_stations as f64).floor() as usize,
        }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        (poisson(rng, self.mean) as usize).min(self.max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GreedyKind {
    Revenue,
    Coverage,
}

/// One churn step: swap the n lowest-scoring active stations for the n
/// highest-scoring inactive ones, n drawn from `churn`.
pub fn plan_greedy(
    kind: GreedyKind,
    stations: &[Station],
    coverage: &CoverageIndex,
    prev: &Snapshot,
    stats: &HistoryStats,
    churn: &ChurnDist,
    rng: &mut ChaCha8Rng,
) -> Snapshot {
    assert!(stats.days_seen() >= 1, "greedy churn needs history");
    let n = stations.len();
    let active = prev.mask(n);
    let inactive_count = n - prev.len();
    let swaps = churn.sample(rng).min(prev.len()).min(inactive_count);
    if swaps == 0 {
        return prev.clone();
    }

    let score: Vec<f64> = match kind {
        GreedyKind::Revenue => (0..n).map(|s| stats.mean_net_revenue(s)).collect(),
        GreedyKind::Coverage => {
            let total_satisfied: f64 = (0..n).map(|s| stats.mean_satisfied(s)).sum();
            let base = coverage.covered_count(&active);
            (0..n)
                .map(|s| {
                    let mut flipped = active.clone();
                    flipped[s] = !flipped[s];
                    let delta = if active[s] {
                        base - coverage.covered_count(&flipped)
                    } else {
                        coverage.covered_count(&flipped) - base
                    };
                    let cov_ratio = if coverage.n_pois == 0 {
                        0.0
                    } else {
                        delta as f64 / coverage.n_pois as f64
                    };
                    let share = if total_satisfied > 0.0 {
                        stats.mean_satisfied(s) / total_satisfied
                    } else {
                        0.0
                    };
                    0.5 * (cov_ratio + share)
                })
                .collect()
        }
    };

    let mut opens: Vec<StationId> = (0..n as StationId).filter(|&s| !active[s as usize]).collect();
    opens.sort_by(|&a, &b| {
        score[b as usize]
            .partial_cmp(&score[a as usize])
            .unwrap()
            .then(a.cmp(&b))
    });
    opens.truncate(swaps);

    let mut closes: Vec<StationId> = prev.ids().to_vec();
    closes.sort_by(|&a, &b| {
        score[a as usize]
            .partial_cmp(&score[b as usize])
            .unwrap()
            .then(a.cmp(&b))
    });
    closes.truncate(swaps);

    let mut next: Vec<StationId> = prev
        .ids()
        .iter()
        .copied()
        .filter(|s| !closes.contains(s))
        .collect();
    next.extend_from_slice(&opens);
    Snapshot::new(next)
}

/// OO's set builder: cost-benefit greedy over half coverage gain plus half
/// capped demand capture, spending at most `budget` of daily cost. The best
/// affordable singleton guards against the known greedy failure mode on
/// budget-constrained coverage.
pub fn plan_one_time(
    stations: &[Station],
    coverage: &CoverageIndex,
    demand_est: &[f64],
    budget: Money,
) -> Snapshot {
    let n = stations.len();
    assert_eq!(demand_est.len(), n);
    let demand_total: f64 = demand_est.iter().sum();
    let capture: Vec<f64> = stations
        .iter()
        .map(|st| demand_est[st.id as usize].min(2.0 * f64::from(st.docks)))
        .collect();
    let demand_gain = |s: usize| {
        if demand_total > 0.0 {
            0.5 * capture[s] / demand_total
        } else {
            0.0
        }
    };
    let cov_unit = |newly: usize| {
        if coverage.n_pois == 0 {
            0.0
        } else {
            0.5 * newly as f64 / coverage.n_pois as f64
        }
    };

    let mut chosen = vec![false; n];
    let mut covered = vec![false; coverage.n_pois];
    let mut spent = Money::ZERO;
    let mut greedy_value = 0.0;
    loop {
        // Best (gain / cost) among affordable candidates, gains compared by
        // cross-multiplication so zero-cost stations order cleanly.
        let mut best: Option<(usize, f64, f64)> = None;
        for s in 0..n {
            if chosen[s] || spent + stations[s].daily_cost > budget {
                continue;
            }
            let newly = coverage.station_pois[s]
                .iter()
                .filter(|&&p| !covered[p as usize])
                .count();
            let gain = cov_unit(newly) + demand_gain(s);
            if gain <= 0.0 {
                continue;
            }
            let cost = stations[s].daily_cost.units();
            let better = match best {
                None => true,
                Some((_, bg, bc)) => gain * bc > bg * cost,
            };
            if better {
                best = Some((s, gain, cost));
            }
        }
        let Some((s, g, _)) = best else { break };
        chosen[s] = true;
        spent += stations[s].daily_cost;
        greedy_value += g;
        for &p in &coverage.station_pois[s] {
            covered[p as usize] = true;
        }
    }

    let mut best_single: Option<(usize, f64)> = None;
    for s in 0..n {
        if stations[s].daily_cost > budget {
            continue;
        }
        let value = cov_unit(coverage.station_pois[s].len()) + demand_gain(s);
        if best_single.map_or(true, |(_, v)| value > v) {
            best_single = Some((s, value));
        }
    }

    let any_chosen = chosen.iter().any(|&c| c);
    match best_single {
        None => {
            log::warn!(
                "budget {} below the cheapest candidate; deploying nothing",
                budget
            );
            Snapshot::new(Vec::new())
        }
        Some((s, v)) if v > greedy_value => Snapshot::new(vec![s as StationId]),
        _ if !any_chosen => {
            // Affordable candidates exist but none has positive gain.
            Snapshot::new(Vec::new())
        }
        _ => Snapshot::new(
            (0..n as StationId)
                .filter(|&s| chosen[s as usize])
                .collect(),
        ),
    }
}

/// IO's daily step: the same set builder fed with window-mean observed demand.
pub fn plan_incremental_day(
    stations: &[Station],
    coverage: &CoverageIndex,
    stats: &HistoryStats,
    budget: Money,
) -> Snapshot {
    plan_one_time(stations, coverage, &stats.mean_demand_vec(), budget)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlannerKind {
    Fixed,
    Revenue,
    Coverage,
    OneTime,
    Incremental,
}

impl PlannerKind {
    pub fn name(self) -> &'static str {
        match self {
            PlannerKind::Fixed => "fd",
            PlannerKind::Revenue => "rev",
            PlannerKind::Coverage => "cov",
            PlannerKind::OneTime => "oo",
            PlannerKind::Incremental => "io",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BaselineConfig {
    /// Trailing days of history feeding the churn and IO planners.
    pub window: usize,
    pub churn_mean_frac: f64,
    pub churn_max_frac: f64,
    /// Daily-cost budget for OO (and IO's first day); None estimates it from
    /// a fixed-deployment warm-up episode.
    pub oo_budget: Option<Money>,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            window: 7,
            churn_mean_frac: 0.03,
            churn_max_frac: 0.10,
            oo_budget: None,
        }
    }
}

/// Expected demand events per day at each candidate, averaged over the
/// horizon's weekday/weekend mix.
pub fn ground_truth_daily_demand(sc: &Scenario, tables: &DemandTables) -> Vec<f64> {
    let days = sc.episode_days.max(1);
    (0..sc.stations.len())
        .map(|s| {
            (1..=days)
                .map(|d| tables.daily_rate(s, day_type(d)))
                .sum::<f64>()
                / days as f64
        })
        .collect()
}

/// Mean daily GMV of the fixed deployment on a warm-up seed decorrelated from
/// the evaluation seed, so budget estimation never peeks at the realization
/// it will be judged on.
pub fn fd_daily_gmv_estimate(sc: &Scenario, tables: &DemandTables, seed: u64) -> Money {
    let warmup_seed = mix(seed, 0xFD);
    let plan = plan_fixed(&initial_snapshot(sc.stations.len()), sc.episode_days);
    let record = run_episode(sc, tables, &plan, warmup_seed, SimOptions::default())
        .expect("fixed plan is always valid");
    Money::from_milli(record.gmv.milli() / sc.episode_days.max(1) as i64)
}

/// Runs one baseline end to end and returns the plan it produced together
/// with the episode it was produced against.
pub fn run_baseline(
    sc: &Scenario,
    tables: &DemandTables,
    kind: PlannerKind,
    cfg: &BaselineConfig,
    seed: u64,
) -> (Plan, EpisodeRecord) {
    let n = sc.stations.len();
    let initial = initial_snapshot(n);
    let mut driver = EpisodeDriver::new(sc, tables, initial.clone(), seed, SimOptions::default());

    match kind {
        PlannerKind::Fixed => {
            while !driver.is_done() {
                driver.step(initial.clone());
            }
        }
        PlannerKind::Revenue | PlannerKind::Coverage => {
            let gk = if kind == PlannerKind::Revenue {
                GreedyKind::Revenue
            } else {
                GreedyKind::Coverage
            };
            let coverage = CoverageIndex::for_scenario(sc);
            let churn = ChurnDist {
                mean: cfg.churn_mean_frac * n as f64,
                max: (cfg.churn_max_frac * n as f64).floor() as usize,
            };
            let mut rng = derive_rng(seed, POLICY_STREAM);
            let mut stats = HistoryStats::new(n, cfg.window);
            let mut snap = initial;
            while !driver.is_done() {
                if stats.days_seen() > 0 {
                    snap = plan_greedy(gk, &sc.stations, &coverage, &snap, &stats, &churn, &mut rng);
                }
                let t = driver.step(snap.clone());
                stats.push_day(&sc.stations, &snap, t);
            }
        }
        PlannerKind::OneTime => {
            let coverage = CoverageIndex::for_scenario(sc);
            let budget = cfg
                .oo_budget
                .unwrap_or_else(|| fd_daily_gmv_estimate(sc, tables, seed));
            let est = ground_truth_daily_demand(sc, tables);
            let snap = plan_one_time(&sc.stations, &coverage, &est, budget);
            while !driver.is_done() {
                driver.step(snap.clone());
            }
        }
        PlannerKind::Incremental => {
            let coverage = CoverageIndex::for_scenario(sc);
            let budget0 = cfg
                .oo_budget
                .unwrap_or_else(|| fd_daily_gmv_estimate(sc, tables, seed));
            let est = ground_truth_daily_demand(sc, tables);
            let mut stats = HistoryStats::new(n, cfg.window);
            let mut snap = plan_one_time(&sc.stations, &coverage, &est, budget0);
            while !driver.is_done() {
                if stats.days_seen() > 0 {
                    let budget = stats.last_gmv().unwrap();
                    snap = plan_incremental_day(&sc.stations, &coverage, &stats, budget);
                }
                let t = driver.step(snap.clone());
                stats.push_day(&sc.stations, &snap, t);
            }
        }
    }
    driver.finish()
}
