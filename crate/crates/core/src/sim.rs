//! Step-level system simulator.
//!
//! An episode walks a deployment plan day by day: the snapshot is applied at
//! 0am (allocations, relocations), then 144 ten-minute steps run the order
//! lifecycle (accept, drive, return or reposition or queue, charge).
//!
//! Demand draws come from a dedicated random stream and touch every candidate
//! station whether deployed or not, so the demand realization for a given
//! seed is identical across plans. Operational draws (initial stocking) use a
//! second stream.

use crate::domain::{
    snapshot_cost, validate_plan, DemandEvent, Order, Plan, PlanError, Snapshot, StationId,
};
use crate::money::Money;
use crate::rng::{derive_job_rng, SIM_STREAM};
use crate::scenario::{sample_demand_into, DemandTables, Scenario, STEPS_PER_DAY};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, VecDeque};

const DEMAND_SUBSTREAM: u64 = 0;
const OPS_SUBSTREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VehicleState {
    Docked(StationId),
    InTransit,
    Queued(StationId),
    Retired,
}

#[derive(Debug, Clone)]
pub struct Vehicle {
    pub range_km: f64,
    pub state: VehicleState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectReason {
    OriginInactive,
    DestInactive,
    NoVehicle,
    InsufficientRange,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectCounts {
    pub origin_inactive: u64,
    pub dest_inactive: u64,
    pub no_vehicle: u64,
    pub insufficient_range: u64,
}

impl RejectCounts {
    fn bump(&mut self, reason: RejectReason) {
        match reason {
            RejectReason::OriginInactive => self.origin_inactive += 1,
            RejectReason::DestInactive => self.dest_inactive += 1,
            RejectReason::NoVehicle => self.no_vehicle += 1,
            RejectReason::InsufficientRange => self.insufficient_range += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.origin_inactive + self.dest_inactive + self.no_vehicle + self.insufficient_range
    }

    fn add(&mut self, other: &RejectCounts) {
        self.origin_inactive += other.origin_inactive;
        self.dest_inactive += other.dest_inactive;
        self.no_vehicle += other.no_vehicle;
        self.insufficient_range += other.insufficient_range;
    }
}

/// Raw per-day tallies. Money and counts are credited when the trip ends
/// (dock, reposition, or queue entry), so late-evening acceptances can land
/// on the next day; anything still in flight when the episode ends is
/// credited to the final day.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DayTallies {
    pub day: usize,
    pub gmv: Money,
    pub cost: Money,
    pub satisfied: u64,
    pub total_demand: u64,
    pub rejects: RejectCounts,
    pub demand_by_origin: Vec<u32>,
    pub satisfied_by_origin: Vec<u32>,
    pub gmv_by_origin: Vec<Money>,
    /// Acceptances departing each station this day.
    pub pickups: Vec<u32>,
    /// Trips ending at each station (order destination) this day.
    pub returns: Vec<u32>,
    /// Sum over steps of the docked-vehicle count, per station.
    pub docked_steps: Vec<u64>,
    /// Sum over steps of docked vehicles' remaining range, per station.
    pub range_sum: Vec<f64>,
    /// Demand events per (station, step-of-day), when recording is on.
    pub step_demand: Option<Vec<u16>>,
}

impl DayTallies {
    fn new(day: usize, n: usize, record_steps: bool) -> Self {
        DayTallies {
            day,
            gmv: Money::ZERO,
            cost: Money::ZERO,
            satisfied: 0,
            total_demand: 0,
            rejects: RejectCounts::default(),
            demand_by_origin: vec![0; n],
            satisfied_by_origin: vec![0; n],
            gmv_by_origin: vec![Money::ZERO; n],
            pickups: vec![0; n],
            returns: vec![0; n],
            docked_steps: vec![0; n],
            range_sum: vec![0.0; n],
            step_demand: record_steps.then(|| vec![0; n * STEPS_PER_DAY]),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub days: Vec<DayTallies>,
    pub gmv: Money,
    pub cost: Money,
    pub satisfied: u64,
    pub total_demand: u64,
    pub accepted: u64,
    pub rejects: RejectCounts,
    pub retired_vehicles: u64,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SimOptions {
    /// Run the full conservation audit after every step.
    pub check_invariants: bool,
    /// Record per-step origin demand counts (needed for intensity fitting).
    pub record_step_demand: bool,
}

pub struct SimState<'a> {
    sc: &'a Scenario,
    tables: &'a DemandTables,
    opts: SimOptions,
    pub day: usize,
    global_step: u32,
    active: Vec<bool>,
    docked: Vec<Vec<u32>>,
    queues: Vec<VecDeque<u32>>,
    vehicles: Vec<Vehicle>,
    in_transit: usize,
    retired: u64,
    arrivals: BTreeMap<u32, Vec<Order>>,
    accepted_total: u64,
    accepted_value: Money,
    tallies: DayTallies,
    event_buf: Vec<DemandEvent>,
}

impl<'a> SimState<'a> {
    pub fn new(sc: &'a Scenario, tables: &'a DemandTables, opts: SimOptions) -> Self {
        let n = sc.stations.len();
        SimState {
            sc,
            tables,
            opts,
            day: 0,
            global_step: 0,
            active: vec![false; n],
            docked: vec![Vec::new(); n],
            queues: vec![VecDeque::new(); n],
            vehicles: Vec::new(),
            in_transit: 0,
            retired: 0,
            arrivals: BTreeMap::new(),
            accepted_total: 0,
            accepted_value: Money::ZERO,
            tallies: DayTallies::new(0, n, opts.record_step_demand),
        event_buf: Vec::new(),
        }
    }

    pub fn is_active(&self, id: StationId) -> bool {
        self.active[id as usize]
    }

    pub fn docked_at(&self, id: StationId) -> &[u32] {
        &self.docked[id as usize]
    }

    pub fn queued_at(&self, id: StationId) -> usize {
        self.queues[id as usize].len()
    }

    pub fn vehicle(&self, vid: u32) -> &Vehicle {
        &self.vehicles[vid as usize]
    }

    pub fn live_fleet(&self) -> usize {
        self.vehicles.len() - self.retired as usize
    }

    fn free_docks(&self, s: usize) -> u32 {
        self.sc.stations[s].docks - self.docked[s].len() as u32
    }

    fn dock_vehicle(&mut self, vid: u32, s: usize) {
        debug_assert!(self.free_docks(s) > 0);
        self.docked[s].push(vid);
        self.vehicles[vid as usize].state = VehicleState::Docked(s as u32);
    }

    /// Nearest active station to `from` with a free dock, optionally within a
    /// radius; ties broken by id.
    fn nearest_with_space(&self, from: usize, radius_km: Option<f64>) -> Option<usize> {
        let row = &self.tables.dist_km[from * self.tables.n..(from + 1) * self.tables.n];
        let mut best: Option<(f64, usize)> = None;
        for s in 0..self.tables.n {
            if !self.active[s] || self.free_docks(s) == 0 {
                continue;
            }
            let d = row[s];
            if let Some(r) = radius_km {
                if d > r {
                    continue;
                }
            }
            if best.map_or(true, |(bd, _)| d < bd) {
                best = Some((d, s));
            }
        }
        best.map(|(_, s)| s)
    }

    /// Applies the day's snapshot at 0am: mark the active set, stock newly
    /// opened stations, then relocate vehicles stranded at inactive stations
    /// (nearest active station with space, no radius; retire if none).
    pub fn apply_snapshot(&mut self, snap: &Snapshot, rng: &mut ChaCha8Rng) {
        let n = self.tables.n;
        let next = snap.mask(n);
        let mut opened = Vec::new();
        for s in 0..n {
            if next[s] && !self.active[s] {
                opened.push(s);
            }
        }
        self.active = next;

        let (lo, hi) = self.sc.constants.alloc_frac;
        for &s in &opened {
            let u: f64 = rng.gen_range(lo..=hi);
            let count = (u * self.sc.stations[s].docks as f64).floor() as usize;
            for _ in 0..count {
                let vid = self.vehicles.len() as u32;
                self.vehicles.push(Vehicle {
                    range_km: self.sc.constants.full_range_km,
                    state: VehicleState::Docked(s as u32),
                });
                self.docked[s].push(vid);
            }
        }

        for s in 0..n {
            if self.active[s] {
                continue;
            }
            let stranded: Vec<u32> = self
                .docked[s]
                .drain(..)
                .chain(std::mem::take(&mut self.queues[s]))
                .collect();
            for vid in stranded {
                match self.nearest_with_space(s, None) {
                    Some(target) => self.dock_vehicle(vid, target),
                    None => {
                        log::debug!(
                            "vehicle {vid} stranded at station {s} with no open dock anywhere; retired"
                        );
                        self.vehicles[vid as usize].state = VehicleState::Retired;
                        self.retired += 1;
                    }
                }
            }
        }
    }

    /// Order admission. Requires both endpoints active and a docked vehicle
    /// at the origin with enough range; picks the largest sufficient range,
    /// ties to the lowest vehicle id. The dock frees immediately.
    pub fn try_accept(&mut self, ev: &DemandEvent) -> Result<Order, RejectReason> {
        let o = ev.origin as usize;
        let d = ev.dest as usize;
        self.tallies.total_demand += 1;
        self.tallies.demand_by_origin[o] += 1;
        if let Some(steps) = self.tallies.step_demand.as_mut() {
            steps[o * STEPS_PER_DAY + ev.step as usize] += 1;
        }

        let outcome = (|| {
            if !self.active[o] {
                return Err(RejectReason::OriginInactive);
            }
            if !self.active[d] {
                return Err(RejectReason::DestInactive);
            }
            if self.docked[o].is_empty() {
                return Err(RejectReason::NoVehicle);
            }
            let trip_km = self.tables.trip_km[o * self.tables.n + d];
            let mut best: Option<(f64, u32, usize)> = None;
            for (pos, &vid) in self.docked[o].iter().enumerate() {
                let range = self.vehicles[vid as usize].range_km;
                if range < trip_km {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((br, bvid, _)) => range > br || (range == br && vid < bvid),
                };
                if better {
                    best = Some((range, vid, pos));
                }
            }
            let (_, vid, pos) = best.ok_or(RejectReason::InsufficientRange)?;
            self.docked[o].remove(pos);
            self.vehicles[vid as usize].state = VehicleState::InTransit;
            self.in_transit += 1;
            let steps = self.tables.trip_steps[o * self.tables.n + d];
            let order = Order {
                origin: ev.origin,
                dest: ev.dest,
                vehicle: vid,
                depart_step: self.global_step,
                arrive_step: self.global_step + steps,
                trip_km,
                price: self.sc.constants.order_price(steps),
            };
            self.arrivals.entry(order.arrive_step).or_default().push(order);
            self.accepted_total += 1;
            self.accepted_value += order.price;
            self.tallies.pickups[o] += 1;
            Ok(order)
        })();

        if let Err(reason) = outcome {
            self.tallies.rejects.bump(reason);
        }
        outcome
    }

    /// Trip end: the order is satisfied now, whatever happens to the vehicle
    /// (dock at the destination, reposition within the radius, or queue).
    pub fn complete_arrival(&mut self, order: Order) {
        let vid = order.vehicle as usize;
        self.vehicles[vid].range_km = (self.vehicles[vid].range_km - order.trip_km).max(0.0);
        self.in_transit -= 1;

        self.tallies.gmv += order.price;
        self.tallies.satisfied += 1;
        self.tallies.gmv_by_origin[order.origin as usize] += order.price;
        self.tallies.satisfied_by_origin[order.origin as usize] += 1;
        self.tallies.returns[order.dest as usize] += 1;

        let d = order.dest as usize;
        if !self.try_place(order.vehicle, d) {
            self.queues[d].push_back(order.vehicle);
            self.vehicles[vid].state = VehicleState::Queued(order.dest);
        }
    }

    /// Docks `vid` at `s` if possible, else repositions it to the nearest
    /// active station with space within the radius, provided the vehicle can
    /// reach it. Returns false when neither works.
    fn try_place(&mut self, vid: u32, s: usize) -> bool {
        if self.active[s] && self.free_docks(s) > 0 {
            self.dock_vehicle(vid, s);
            return true;
        }
        if let Some(target) = self.nearest_with_space(s, Some(self.sc.constants.reposition_radius_km))
        {
            let leg = self
                .sc
                .constants
                .trip_km(self.tables.dist_km[s * self.tables.n + target]);
            let range = self.vehicles[vid as usize].range_km;
            if range >= leg {
                self.vehicles[vid as usize].range_km = (range - leg).max(0.0);
                self.dock_vehicle(vid, target);
                return true;
            }
        }
        false
    }

    /// One retry pass per step, FIFO within each station's queue.
    fn retry_queues(&mut self) {
        for s in 0..self.tables.n {
            if self.queues[s].is_empty() {
                continue;
            }
            let mut queue = std::mem::take(&mut self.queues[s]);
            let mut remaining = VecDeque::new();
            while let Some(vid) = queue.pop_front() {
                if !self.try_place(vid, s) {
                    remaining.push_back(vid);
                }
            }
            self.queues[s] = remaining;
        }
    }

    /// Charging tick plus per-station occupancy statistics. Fast rate below
    /// the cutoff fraction, half rate at or above, capped at full range.
    pub fn tick_charging(&mut self) {
        let full = self.sc.constants.full_range_km;
        let cutoff = self.sc.constants.charge_fast_frac * full;
        let fast = self.sc.constants.charge_rate_fast();
        for v in &mut self.vehicles {
            if let VehicleState::Docked(s) = v.state {
                if v.range_km < full {
                    let rate = if v.range_km < cutoff { fast } else { fast / 2.0 };
                    v.range_km = (v.range_km + rate).min(full);
                }
                self.tallies.docked_steps[s as usize] += 1;
                self.tallies.range_sum[s as usize] += v.range_km;
            }
        }
    }

    fn process_due_arrivals(&mut self) {
        if let Some(orders) = self.arrivals.remove(&self.global_step) {
            for order in orders {
                self.complete_arrival(order);
            }
        }
    }

    /// Credits everything still in flight to the current day. Only used at
    /// episode end so that episode GMV equals the sum of accepted prices.
    fn flush_arrivals(&mut self) {
        let pending = std::mem::take(&mut self.arrivals);
        for (_, orders) in pending {
            for order in orders {
                self.complete_arrival(order);
            }
        }
    }

    /// Full conservation audit; panics on violation (a violation is a bug in
    /// the simulator, not an input error).
    pub fn check_invariants(&self) {
        let n = self.tables.n;
        let full = self.sc.constants.full_range_km;
        let mut docked_count = 0usize;
        for s in 0..n {
            assert!(
                self.docked[s].len() as u32 <= self.sc.stations[s].docks,
                "station {s} over capacity"
            );
            assert!(
                self.active[s] || self.docked[s].is_empty(),
                "inactive station {s} holds docked vehicles"
            );
            for &vid in &self.docked[s] {
                assert_eq!(
                    self.vehicles[vid as usize].state,
                    VehicleState::Docked(s as u32),
                    "dock list and vehicle state disagree"
                );
            }
            for &vid in &self.queues[s] {
                assert_eq!(
                    self.vehicles[vid as usize].state,
                    VehicleState::Queued(s as u32),
                    "queue list and vehicle state disagree"
                );
            }
            docked_count += self.docked[s].len();
        }
        let queued_count: usize = self.queues.iter().map(|q| q.len()).sum();
        let mut by_state = (0usize, 0usize, 0usize, 0usize);
        for v in &self.vehicles {
            assert!(
                v.range_km >= 0.0 && v.range_km <= full + 1e-9,
                "range {} outside [0, {full}]",
                v.range_km
            );
            match v.state {
                VehicleState::Docked(_) => by_state.0 += 1,
                VehicleState::InTransit => by_state.1 += 1,
                VehicleState::Queued(_) => by_state.2 += 1,
                VehicleState::Retired => by_state.3 += 1,
            }
        }
        assert_eq!(by_state.0, docked_count, "docked count mismatch");
        assert_eq!(by_state.1, self.in_transit, "transit count mismatch");
        assert_eq!(by_state.2, queued_count, "queued count mismatch");
        assert_eq!(by_state.3 as u64, self.retired, "retired count mismatch");
        assert_eq!(
            docked_count + self.in_transit + queued_count,
            self.live_fleet(),
            "fleet conservation violated"
        );
    }

    /// Runs one operating day under `snap`. `last_day` additionally drains
    /// in-flight orders after the final step.
    pub fn run_day(
        &mut self,
        day: usize,
        snap: &Snapshot,
        demand_rng: &mut ChaCha8Rng,
        ops_rng: &mut ChaCha8Rng,
        last_day: bool,
    ) -> DayTallies {
        self.day = day;
        self.tallies = DayTallies::new(day, self.tables.n, self.opts.record_step_demand);
        self.apply_snapshot(snap, ops_rng);
        let mut events = std::mem::take(&mut self.event_buf);
        for step in 0..STEPS_PER_DAY {
            sample_demand_into(self.tables, day, step, demand_rng, &mut events);
            for i in 0..events.len() {
                let ev = events[i];
                let _ = self.try_accept(&ev);
            }
            self.retry_queues();
            self.process_due_arrivals();
            self.tick_charging();
            if self.opts.check_invariants {
                self.check_invariants();
            }
            self.global_step += 1;
        }
        self.event_buf = events;
        if last_day {
            self.flush_arrivals();
        }
        self.tallies.cost = snapshot_cost(&self.sc.stations, snap);
        let n = self.tables.n;
        std::mem::replace(
            &mut self.tallies,
            DayTallies::new(day, n, self.opts.record_step_demand),
        )
    }
}

/// Day-at-a-time episode runner for planners that decide each snapshot from
/// the history simulated so far. Stream handling matches [`run_episode`]
/// exactly, so rerunning the assembled plan reproduces the same record.
pub struct EpisodeDriver<'a> {
    state: SimState<'a>,
    demand_rng: ChaCha8Rng,
    ops_rng: ChaCha8Rng,
    horizon: usize,
    initial: Snapshot,
    snaps: Vec<Snapshot>,
    days: Vec<DayTallies>,
}

impl<'a> EpisodeDriver<'a> {
    pub fn new(
        sc: &'a Scenario,
        tables: &'a DemandTables,
        initial: Snapshot,
        sim_seed: u64,
        opts: SimOptions,
    ) -> Self {
        let demand_rng = derive_job_rng(sim_seed, SIM_STREAM, DEMAND_SUBSTREAM);
        let mut ops_rng = derive_job_rng(sim_seed, SIM_STREAM, OPS_SUBSTREAM);
        let mut state = SimState::new(sc, tables, opts);
        state.apply_snapshot(&initial, &mut ops_rng);
        if opts.check_invariants {
            state.check_invariants();
        }
        EpisodeDriver {
            state,
            demand_rng,
            ops_rng,
            horizon: sc.episode_days,
            initial,
            snaps: Vec::with_capacity(sc.episode_days),
            days: Vec::with_capacity(sc.episode_days),
        }
    }

    pub fn day(&self) -> usize {
        self.days.len()
    }

    pub fn is_done(&self) -> bool {
        self.days.len() == self.horizon
    }

    pub fn state(&self) -> &SimState<'a> {
        &self.state
    }

    pub fn last_day(&self) -> Option<&DayTallies> {
        self.days.last()
    }

    /// Runs the next operating day under `snap`.
    pub fn step(&mut self, snap: Snapshot) -> &DayTallies {
        assert!(!self.is_done(), "episode horizon exhausted");
        let day = self.days.len() + 1;
        let tallies = self.state.run_day(
            day,
            &snap,
            &mut self.demand_rng,
            &mut self.ops_rng,
            day == self.horizon,
        );
        self.snaps.push(snap);
        self.days.push(tallies);
        self.days.last().unwrap()
    }

    /// Folds the walked days into the plan that produced them plus the
    /// episode record.
    pub fn finish(self) -> (Plan, EpisodeRecord) {
        assert!(self.is_done(), "episode not fully walked");
        let plan = Plan {
            initial: self.initial,
            days: self.snaps,
        };
        let mut record = EpisodeRecord {
            gmv: Money::ZERO,
            cost: Money::ZERO,
            satisfied: 0,
            total_demand: 0,
            accepted: self.state.accepted_total,
            rejects: RejectCounts::default(),
            retired_vehicles: self.state.retired,
            days: self.days,
        };
        for d in &record.days {
            record.gmv += d.gmv;
            record.cost += d.cost;
            record.satisfied += d.satisfied;
            record.total_demand += d.total_demand;
            record.rejects.add(&d.rejects);
        }
        debug_assert_eq!(record.gmv, self.state.accepted_value);
        debug_assert_eq!(record.satisfied, record.accepted);
        (plan, record)
    }
}

/// Simulates a full episode. The initial snapshot is applied as a cold start
/// (day 0, not billed), then each operating day runs under its plan entry.
pub fn run_episode(
    sc: &Scenario,
    tables: &DemandTables,
    plan: &Plan,
    sim_seed: u64,
    opts: SimOptions,
) -> Result<EpisodeRecord, PlanError> {
    validate_plan(plan, sc.stations.len(), Some(sc.episode_days))?;
    let mut driver = EpisodeDriver::new(sc, tables, plan.initial.clone(), sim_seed, opts);
    for snap in &plan.days {
        driver.step(snap.clone());
    }
    let (_, record) = driver.finish();
    Ok(record)
}
