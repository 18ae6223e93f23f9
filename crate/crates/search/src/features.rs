//! Observation construction for the region agents.
//!
//! Each agent sees its own region's candidates as a fixed-shape block of
//! local features plus a pooled summary of every region, all z-scored with
//! statistics frozen before training.

use crate::regions::RegionPartition;
use emobsim_core::scenario::Constants;
use emobsim_core::sim::DayTallies;
use emobsim_core::{DemandTables, Station, STEPS_PER_DAY};
use serde::{Deserialize, Serialize};

/// Per-candidate features, in slot order: active flag, docks, daily cost,
/// mean parked vehicles per step of the previous day, mean remaining range
/// of parked vehicles, predicted next-day pick-ups and returns, expected
/// order value at the origin, and the normalized location.
pub const LOCAL_FEATURES: usize = 10;

/// Mean and max over the regional means of every local feature.
pub const GLOBAL_FEATURES: usize = 2 * LOCAL_FEATURES;

/// Observation length for a region of `m` candidates.
pub fn obs_dim(m: usize) -> usize {
    m * LOCAL_FEATURES + GLOBAL_FEATURES
}

/// Feature moments frozen at training start; applied as z-scores ever after.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureStats {
    /// Identity normalization, for tests and cold paths.
    pub fn identity() -> Self {
        FeatureStats {
            mean: vec![0.0; LOCAL_FEATURES],
            std: vec![1.0; LOCAL_FEATURES],
        }
    }

    /// Moments of a concatenated row-major sample, one row per candidate.
    pub fn from_rows(rows: &[f64]) -> Self {
        assert!(!rows.is_empty() && rows.len() % LOCAL_FEATURES == 0);
        let count = (rows.len() / LOCAL_FEATURES) as f64;
        let mut mean = vec![0.0; LOCAL_FEATURES];
        let mut std = vec![0.0; LOCAL_FEATURES];
        for row in rows.chunks(LOCAL_FEATURES) {
            for (f, v) in row.iter().enumerate() {
                mean[f] += v;
            }
        }
        for m in &mut mean {
            *m /= count;
        }
        for row in rows.chunks(LOCAL_FEATURES) {
            for (f, v) in row.iter().enumerate() {
                std[f] += (v - mean[f]).powi(2);
            }
        }
        for s in &mut std {
            *s = (*s / count).sqrt().max(1e-8);
        }
        FeatureStats { mean, std }
    }

    pub fn normalize(&self, rows: &mut [f64]) {
        for row in rows.chunks_mut(LOCAL_FEATURES) {
            for (f, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[f]) / self.std[f];
            }
        }
    }
}

/// Scenario-derived constants plus the frozen normalization; everything the
/// observation builder needs besides the day's state.
#[derive(Debug, Clone)]
pub struct Featurizer {
    order_value: Vec<f64>,
    city_km: f64,
    pub stats: FeatureStats,
}

impl Featurizer {
    pub fn new(stations: &[Station], tables: &DemandTables, constants: &Constants, city_km: f64) -> Self {
        let order_value = (0..stations.len())
            .map(|s| tables.mean_order_value(s, constants))
            .collect();
        Featurizer {
            order_value,
            city_km,
            stats: FeatureStats::identity(),
        }
    }

    /// Raw (un-normalized) candidate rows for the day about to be planned.
    /// `active` is yesterday's deployment; `prev` its tallies, absent on the
    /// first day; `preds` the predicted next-day pick-ups and returns.
    pub fn raw_rows(
        &self,
        stations: &[Station],
        active: &[bool],
        prev: Option<&DayTallies>,
        preds: &[(f64, f64)],
    ) -> Vec<f64> {
        let n = stations.len();
        assert_eq!(preds.len(), n);
        let mut rows = vec![0.0; n * LOCAL_FEATURES];
        for (s, st) in stations.iter().enumerate() {
            let row = &mut rows[s * LOCAL_FEATURES..(s + 1) * LOCAL_FEATURES];
            row[0] = if active[s] { 1.0 } else { 0.0 };
            row[1] = f64::from(st.docks);
            row[2] = st.daily_cost.units();
            if let Some(t) = prev {
                row[3] = t.docked_steps[s] as f64 / STEPS_PER_DAY as f64;
                row[4] = if t.docked_steps[s] > 0 {
                    t.range_sum[s] / t.docked_steps[s] as f64
                } else {
                    0.0
                };
            }
            row[5] = preds[s].0;
            row[6] = preds[s].1;
            row[7] = self.order_value[s];
            row[8] = st.loc.x / self.city_km;
            row[9] = st.loc.y / self.city_km;
        }
        rows
    }

    /// One observation per region: the members' z-scored rows followed by the
    /// shared global block (mean and max over regional feature means).
    pub fn observations(&self, partition: &RegionPartition, raw_rows: &[f64]) -> Vec<Vec<f64>> {
        let mut rows = raw_rows.to_vec();
        self.stats.normalize(&mut rows);

        let k = partition.n_regions();
        let mut region_means = vec![0.0; k * LOCAL_FEATURES];
        for (r, region) in partition.regions.iter().enumerate() {
            for &id in &region.members {
                let row = &rows[id as usize * LOCAL_FEATURES..(id as usize + 1) * LOCAL_FEATURES];
                for (f, v) in row.iter().enumerate() {
                    region_means[r * LOCAL_FEATURES + f] += v;
                }
            }
            for f in 0..LOCAL_FEATURES {
                region_means[r * LOCAL_FEATURES + f] /= region.members.len() as f64;
            }
        }
        let mut global = vec![0.0; GLOBAL_FEATURES];
        for f in 0..LOCAL_FEATURES {
            let col = (0..k).map(|r| region_means[r * LOCAL_FEATURES + f]);
            global[f] = col.clone().sum::<f64>() / k as f64;
            global[LOCAL_FEATURES + f] = col.fold(f64::NEG_INFINITY, f64::max);
        }

        partition
            .regions
            .iter()
            .map(|region| {
                let mut obs = Vec::with_capacity(obs_dim(partition.m));
                for &id in &region.members {
                    obs.extend_from_slice(
                        &rows[id as usize * LOCAL_FEATURES..(id as usize + 1) * LOCAL_FEATURES],
                    );
                }
                obs.extend_from_slice(&global);
                debug_assert!(obs.iter().all(|v| v.is_finite()));
                obs
            })
            .collect()
    }
}
