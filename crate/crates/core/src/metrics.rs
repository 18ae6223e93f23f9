//! Objective quantities: GMV, NV, PM, SC, the episode objective, budget
//! feasibility flags, and the per-agent reward.

use crate::domain::{Plan, Poi, Station, StationId};
use crate::money::Money;
use crate::sim::EpisodeRecord;
use crate::scenario::Scenario;
use serde::{Deserialize, Serialize};

/// Which stations cover which POIs, precomputed for one pool.
pub struct CoverageIndex {
    pub n_pois: usize,
    /// Station ids within the radius of each POI.
    pub coverers: Vec<Vec<StationId>>,
    /// POI indices within the radius of each station.
    pub station_pois: Vec<Vec<u32>>,
}

impl CoverageIndex {
    pub fn new(stations: &[Station], pois: &[Poi], radius_km: f64) -> Self {
        let mut coverers = vec![Vec::new(); pois.len()];
        let mut station_pois = vec![Vec::new(); stations.len()];
        for (pi, poi) in pois.iter().enumerate() {
            for st in stations {
                if st.loc.distance(poi.loc) <= radius_km {
                    coverers[pi].push(st.id);
                    station_pois[st.id as usize].push(pi as u32);
                }
            }
        }
        CoverageIndex {
            n_pois: pois.len(),
            coverers,
            station_pois,
        }
    }

    pub fn for_scenario(sc: &Scenario) -> Self {
        CoverageIndex::new(&sc.stations, &sc.pois, sc.constants.coverage_radius_km)
    }

    pub fn covered_count(&self, active: &[bool]) -> usize {
        self.coverers
            .iter()
            .filter(|cs| cs.iter().any(|&s| active[s as usize]))
            .count()
    }

    /// Fraction of POIs within the radius of an active station. An empty POI
    /// universe counts as fully covered.
    pub fn coverage(&self, active: &[bool]) -> f64 {
        if self.n_pois == 0 {
            1.0
        } else {
            self.covered_count(active) as f64 / self.n_pois as f64
        }
    }
}

/// Satisfied-demand rate with the degenerate no-demand day defined as 1.
/// Clamped from above: trips finishing after midnight are credited to the
/// day they end, which can nudge a quiet day's count past its own demand.
pub fn satisfied_rate(satisfied: u64, total: u64) -> f64 {
    if total == 0 {
        1.0
    } else {
        (satisfied as f64 / total as f64).min(1.0)
    }
}

pub fn service_coverage(satisfied: u64, total: u64, poi_coverage: f64) -> f64 {
    0.5 * satisfied_rate(satisfied, total) + 0.5 * poi_coverage
}

/// PM = NV/GMV, with GMV = 0 defined as 0 (idle) or -1 (pure loss), and the
/// result clamped into [-1, 1].
pub fn profit_margin(gmv: Money, cost: Money) -> f64 {
    if gmv > Money::ZERO {
        ((gmv - cost).units() / gmv.units()).clamp(-1.0, 1.0)
    } else if cost > Money::ZERO {
        -1.0
    } else {
        0.0
    }
}

pub fn objective(mean_sc: f64, episode_pm: f64, w: f64) -> f64 {
    mean_sc + w * episode_pm
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RewardConfig {
    pub w: f64,
    pub lambda: f64,
    pub gamma: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            w: 1.0,
            lambda: 0.0,
            gamma: 0.99,
        }
    }
}

/// SC/PM/NV of one day restricted to some station scope (a region, or the
/// whole city).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScopeMetrics {
    pub sc: f64,
    pub pm: f64,
    pub nv: Money,
}

impl ScopeMetrics {
    pub fn zero() -> Self {
        ScopeMetrics {
            sc: 0.0,
            pm: 0.0,
            nv: Money::ZERO,
        }
    }

    pub fn compute(
        satisfied: u64,
        total: u64,
        poi_coverage: f64,
        gmv: Money,
        cost: Money,
    ) -> Self {
        ScopeMetrics {
            sc: service_coverage(satisfied, total, poi_coverage),
            pm: profit_margin(gmv, cost),
            nv: gmv - cost,
        }
    }
}

/// Per-day improvement reward with the negative-net-revenue penalty:
/// r = (SC_t - SC_{t-1}) + w (PM_t - PM_{t-1}) + lambda * min(NV_t, 0).
pub fn agent_reward(prev: &ScopeMetrics, cur: &ScopeMetrics, cfg: &RewardConfig) -> f64 {
    let penalty = cfg.lambda * cur.nv.units().min(0.0);
    (cur.sc - prev.sc) + cfg.w * (cur.pm - prev.pm) + penalty
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DayReport {
    pub day: usize,
    pub gmv: f64,
    pub cost: f64,
    pub nv: f64,
    pub sc: f64,
    pub demand_satisfied_rate: f64,
    pub poi_coverage: f64,
    pub budget_violated: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeAggregates {
    #[serde(rename = "GMV")]
    pub gmv: f64,
    #[serde(rename = "NV")]
    pub nv: f64,
    #[serde(rename = "SC")]
    pub sc: f64,
    #[serde(rename = "PM")]
    pub pm: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub per_day: Vec<DayReport>,
    pub episode: EpisodeAggregates,
}

impl Report {
    pub fn infeasible_days(&self) -> usize {
        self.per_day.iter().filter(|d| d.budget_violated).count()
    }
}

/// Folds raw episode tallies into the reported metrics. Money stays exact
/// until the final float rendering; NV identities hold in integer units.
pub fn build_report(
    coverage: &CoverageIndex,
    plan: &Plan,
    record: &EpisodeRecord,
    pool_size: usize,
    w: f64,
) -> Report {
    let mut per_day = Vec::with_capacity(record.days.len());
    let mut sc_sum = 0.0;
    for tallies in &record.days {
        let mask = plan.days[tallies.day - 1].mask(pool_size);
        let poi_cov = coverage.coverage(&mask);
        let rate = satisfied_rate(tallies.satisfied, tallies.total_demand);
        let sc = service_coverage(tallies.satisfied, tallies.total_demand, poi_cov);
        sc_sum += sc;
        let nv = tallies.gmv - tallies.cost;
        per_day.push(DayReport {
            day: tallies.day,
            gmv: tallies.gmv.units(),
            cost: tallies.cost.units(),
            nv: nv.units(),
            sc,
            demand_satisfied_rate: rate,
            poi_coverage: poi_cov,
            budget_violated: tallies.cost > tallies.gmv,
        });
    }
    let mean_sc = if record.days.is_empty() {
        0.0
    } else {
        sc_sum / record.days.len() as f64
    };
    let pm = profit_margin(record.gmv, record.cost);
    Report {
        per_day,
        episode: EpisodeAggregates {
            gmv: record.gmv.units(),
            nv: (record.gmv - record.cost).units(),
            sc: mean_sc,
            pm,
            objective: objective(mean_sc, pm, w),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Snapshot, Plan};
    use crate::geom::Point;
    use crate::scenario::{generate_scenario, ScenarioConfig};
    use crate::sim::{run_episode, SimOptions};
    use crate::scenario::DemandTables;

    fn station(id: u32, x: f64, y: f64) -> Station {
        Station {
            id,
            loc: Point::new(x, y),
            docks: 10,
            daily_cost: Money::from_units(1.0),
        }
    }

    #[test]
    fn profit_margin_cases() {
        assert_eq!(
            profit_margin(Money::from_units(100.0), Money::from_units(40.0)),
            0.6
        );
        assert_eq!(profit_margin(Money::ZERO, Money::ZERO), 0.0);
        assert_eq!(profit_margin(Money::ZERO, Money::from_units(5.0)), -1.0);
        // GMV 10, cost 100: raw margin -9 clamps to -1.
        assert_eq!(
            profit_margin(Money::from_units(10.0), Money::from_units(100.0)),
            -1.0
        );
    }

    #[test]
    fn service_coverage_arithmetic() {
        // 10 of 20 demands, 3 of 4 POIs: 0.5*0.5 + 0.5*0.75 = 0.625.
        assert_eq!(service_coverage(10, 20, 0.75), 0.625);
        assert_eq!(service_coverage(0, 5, 0.0), 0.0);
        assert_eq!(service_coverage(0, 0, 1.0), 1.0);
    }

    #[test]
    fn coverage_counts_within_radius() {
        let stations = vec![station(0, 0.0, 0.0), station(1, 5.0, 0.0)];
        let pois = vec![
            Poi { loc: Point::new(0.5, 0.0) },
            Poi { loc: Point::new(1.5, 0.0) },
            Poi { loc: Point::new(5.0, 0.9) },
        ];
        let idx = CoverageIndex::new(&stations, &pois, 1.0);
        assert_eq!(idx.covered_count(&[true, false]), 1);
        assert_eq!(idx.covered_count(&[true, true]), 2);
        assert_eq!(idx.coverage(&[false, false]), 0.0);
    }

    #[test]
    fn coverage_is_monotone_in_active_set() {
        let cfg = ScenarioConfig {
            n_stations: 30,
            region_size: 10,
            n_pois: 50,
            ..ScenarioConfig::default()
        };
        let sc = generate_scenario(&cfg, 17).unwrap();
        let idx = CoverageIndex::for_scenario(&sc);
        let mut rng = crate::rng::derive_rng(17, 0);
        use rand::Rng;
        for _ in 0..200 {
            let mut mask = vec![false; 30];
            for m in &mut mask {
                *m = rng.gen::<f64>() < 0.4;
            }
            let base = idx.coverage(&mask);
            let add = rng.gen_range(0..30);
            let mut bigger = mask.clone();
            bigger[add] = true;
            assert!(idx.coverage(&bigger) >= base);
        }
    }

    #[test]
    fn objective_examples() {
        assert_eq!(objective(0.5, 0.7, 0.0), 0.5);
        assert!((objective(0.6, 0.3, 1.0) - 0.9).abs() < 1e-12);
    }

    #[test]
    fn mean_sc_is_permutation_invariant() {
        let days = [0.2, 0.9, 0.4, 0.7];
        let mean: f64 = days.iter().sum::<f64>() / 4.0;
        let mut shuffled = days;
        shuffled.reverse();
        let mean2: f64 = shuffled.iter().sum::<f64>() / 4.0;
        assert_eq!(mean, mean2);
    }

    #[test]
    fn reward_examples() {
        let cfg = RewardConfig {
            w: 1.0,
            lambda: 0.0,
            gamma: 0.99,
        };
        // Identical consecutive days, nonnegative NV: zero reward.
        let m = ScopeMetrics {
            sc: 0.5,
            pm: 0.2,
            nv: Money::from_units(3.0),
        };
        assert_eq!(agent_reward(&m, &m, &cfg), 0.0);

        let prev = ScopeMetrics {
            sc: 0.4,
            pm: 0.2,
            nv: Money::ZERO,
        };
        let cur = ScopeMetrics {
            sc: 0.5,
            pm: 0.3,
            nv: Money::from_units(5.0),
        };
        assert!((agent_reward(&prev, &cur, &cfg) - 0.2).abs() < 1e-12);

        let pen_cfg = RewardConfig {
            w: 1.0,
            lambda: 0.02,
            gamma: 0.99,
        };
        let loss = ScopeMetrics {
            sc: 0.5,
            pm: 0.2,
            nv: Money::from_units(-10.0),
        };
        let same = ScopeMetrics {
            sc: 0.5,
            pm: 0.2,
            nv: Money::from_units(-10.0),
        };
        assert!((agent_reward(&loss, &same, &pen_cfg) + 0.2).abs() < 1e-12);
    }

    #[test]
    fn report_identities_on_simulated_episode() {
        let cfg = ScenarioConfig {
            n_stations: 30,
            region_size: 10,
            n_pois: 40,
            target_daily_demand: 600.0,
            horizon_days: 4,
            ..ScenarioConfig::default()
        };
        let sc = generate_scenario(&cfg, 23).unwrap();
        let tables = DemandTables::new(&sc);
        let coverage = CoverageIndex::for_scenario(&sc);
        let plan = Plan::constant(Snapshot::new((0..20).collect()), 4);
        let record = run_episode(&sc, &tables, &plan, 2, SimOptions::default()).unwrap();
        let report = build_report(&coverage, &plan, &record, 30, 1.0);

        assert_eq!(report.per_day.len(), 4);
        let exact_nv = (record.gmv - record.cost).units();
        assert_eq!(report.episode.nv, exact_nv);
        for d in &report.per_day {
            let day = &record.days[d.day - 1];
            assert_eq!(d.nv, (day.gmv - day.cost).units());
            assert!(d.sc >= 0.0 && d.sc <= 1.0);
            assert_eq!(d.budget_violated, day.cost > day.gmv);
        }
    }

    #[test]
    fn report_json_schema_keys() {
        let report = Report {
            per_day: vec![DayReport {
                day: 1,
                gmv: 1.0,
                cost: 0.5,
                nv: 0.5,
                sc: 0.8,
                demand_satisfied_rate: 0.9,
                poi_coverage: 0.7,
                budget_violated: false,
            }],
            episode: EpisodeAggregates {
                gmv: 1.0,
                nv: 0.5,
                sc: 0.8,
                pm: 0.5,
                objective: 1.3,
            },
        };
        let json = serde_json::to_value(&report).unwrap();
        let day = &json["per_day"][0];
        for key in [
            "day",
            "gmv",
            "cost",
            "nv",
            "sc",
            "demand_satisfied_rate",
            "poi_coverage",
            "budget_violated",
        ] {
            assert!(day.get(key).is_some(), "missing per_day key {key}");
        }
        for key in ["GMV", "NV", "SC", "PM", "objective"] {
            assert!(json["episode"].get(key).is_some(), "missing episode key {key}");
        }
    }
}
