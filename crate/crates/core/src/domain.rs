//! Domain model: stations, POIs, deployment snapshots and multi-day plans.

use crate::geom::Point;
use crate::money::Money;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

pub type StationId = u32;

/// One candidate station site. `docks` bounds both parked vehicles and the
/// initial allocation; `daily_cost` is charged for every day the station is
/// active, with no extra open/close charge.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Station {
    pub id: StationId,
    pub loc: Point,
    pub docks: u32,
    pub daily_cost: Money,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Poi {
    pub loc: Point,
}

/// One user's intent to travel, sampled from the demand field. Origin and
/// destination always differ; `step` is the step-of-day in [0, 144).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemandEvent {
    pub day: u32,
    pub step: u32,
    pub origin: StationId,
    pub dest: StationId,
}

/// An accepted, priced rental. Steps are global (day and step-of-day folded
/// into one counter); price covers the full step span of the trip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Order {
    pub origin: StationId,
    pub dest: StationId,
    pub vehicle: u32,
    pub depart_step: u32,
    pub arrive_step: u32,
    pub trip_km: f64,
    pub price: Money,
}

/// The set of stations active on one day. Ids are kept sorted and unique.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Snapshot {
    ids: Vec<StationId>,
}

impl Snapshot {
    pub fn new(mut ids: Vec<StationId>) -> Self {
        ids.sort_unstable();
        ids.dedup();
        Snapshot { ids }
    }

    pub fn ids(&self) -> &[StationId] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: StationId) -> bool {
        self.ids.binary_search(&id).is_ok()
    }

    /// Membership mask over the candidate pool, indexed by station id.
    pub fn mask(&self, pool_size: usize) -> Vec<bool> {
        let mut m = vec![false; pool_size];
        for &id in &self.ids {
            m[id as usize] = true;
        }
        m
    }
}

impl FromIterator<StationId> for Snapshot {
    fn from_iter<I: IntoIterator<Item = StationId>>(iter: I) -> Self {
        Snapshot::new(iter.into_iter().collect())
    }
}

/// Stations opened and closed when moving from `prev` to `next`.
pub fn snapshot_diff(prev: &Snapshot, next: &Snapshot) -> (Vec<StationId>, Vec<StationId>) {
    let opened = next
        .ids()
        .iter()
        .copied()
        .filter(|&id| !prev.contains(id))
        .collect();
    let closed = prev
        .ids()
        .iter()
        .copied()
        .filter(|&id| !next.contains(id))
        .collect();
    (opened, closed)
}

/// Total daily operating cost of a snapshot over the given station pool.
pub fn snapshot_cost(stations: &[Station], snap: &Snapshot) -> Money {
    snap.ids()
        .iter()
        .map(|&id| stations[id as usize].daily_cost)
        .sum()
}

/// A deployment plan: the starting snapshot plus one snapshot per operating
/// day. Day t (1-based) runs under `days[t - 1]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub initial: Snapshot,
    pub days: Vec<Snapshot>,
}

impl Plan {
    /// A plan that keeps one snapshot active for all `horizon` days.
    pub fn constant(snap: Snapshot, horizon: usize) -> Self {
        Plan {
            initial: snap.clone(),
            days: vec![snap; horizon],
        }
    }

    pub fn horizon(&self) -> usize {
        self.days.len()
    }

    /// Snapshot in force on 1-based day `t`; day 0 is the initial snapshot.
    pub fn snapshot(&self, day: usize) -> &Snapshot {
        if day == 0 {
            &self.initial
        } else {
            &self.days[day - 1]
        }
    }

    /// Operating cost summed over all operating days (the initial snapshot is
    /// the day-0 starting state and is not billed).
    pub fn cost(&self, stations: &[Station]) -> Money {
        self.days.iter().map(|d| snapshot_cost(stations, d)).sum()
    }
}

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("plan references unknown station id {0}")]
    UnknownStation(StationId),
    #[error("plan has {got} operating days, scenario horizon is {want}")]
    HorizonMismatch { got: usize, want: usize },
    #[error("plan day indices must be 0..=horizon without gaps, problem at entry {0}")]
    BadDayIndex(usize),
    #[error("plan io: {0}")]
    Io(#[from] std::io::Error),
    #[error("plan parse: {0}")]
    Parse(#[from] serde_json::Error),
}

/// Checks station ids against a pool of `pool_size` candidates and, when
/// `horizon` is given, the day count.
pub fn validate_plan(plan: &Plan, pool_size: usize, horizon: Option<usize>) -> Result<(), PlanError> {
    if let Some(want) = horizon {
        if plan.days.len() != want {
            return Err(PlanError::HorizonMismatch {
                got: plan.days.len(),
                want,
            });
        }
    }
    for snap in std::iter::once(&plan.initial).chain(plan.days.iter()) {
        for &id in snap.ids() {
            if id as usize >= pool_size {
                return Err(PlanError::UnknownStation(id));
            }
        }
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct PlanRow {
    day: usize,
    active: Vec<StationId>,
}

/// Serializes a plan as a JSON array of `{day, active}` rows, day 0 first.
pub fn write_plan<W: Write>(w: W, plan: &Plan) -> Result<(), PlanError> {
    let mut rows = Vec::with_capacity(plan.days.len() + 1);
    rows.push(PlanRow {
        day: 0,
        active: plan.initial.ids().to_vec(),
    });
    for (i, snap) in plan.days.iter().enumerate() {
        rows.push(PlanRow {
            day: i + 1,
            active: snap.ids().to_vec(),
        });
    }
    serde_json::to_writer_pretty(w, &rows)?;
    Ok(())
}

/// Parses a plan written by [`write_plan`]. Rows may arrive in any order but
/// must cover exactly days 0..=horizon.
pub fn read_plan<R: Read>(r: R) -> Result<Plan, PlanError> {
    let mut rows: Vec<PlanRow> = serde_json::from_reader(r)?;
    rows.sort_by_key(|r| r.day);
    for (i, row) in rows.iter().enumerate() {
        if row.day != i {
            return Err(PlanError::BadDayIndex(i));
        }
    }
    if rows.is_empty() {
        return Err(PlanError::BadDayIndex(0));
    }
    let initial = Snapshot::new(rows[0].active.clone());
    let days = rows[1..]
        .iter()
        .map(|r| Snapshot::new(r.active.clone()))
        .collect();
    Ok(Plan { initial, days })
}

pub fn read_plan_file(path: &Path) -> Result<Plan, PlanError> {
    read_plan(std::fs::File::open(path)?)
}

pub fn write_plan_file(path: &Path, plan: &Plan) -> Result<(), PlanError> {
    write_plan(std::fs::File::create(path)?, plan)
}
