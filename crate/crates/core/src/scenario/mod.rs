//! Synthetic city generation and demand sampling.
//!
//! A scenario freezes everything an episode needs: the candidate pool with
//! dock counts and daily costs, POIs, a ground-truth spatio-temporal demand
//! field, and the OD kernel. All of it is deterministic in (config, seed) and
//! serializes to a single JSON document.

pub mod gp;

use crate::domain::{DemandEvent, Poi, Station};
use crate::geom::Point;
use crate::money::Money;
use crate::rng::{derive_rng, GEN_STREAM};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Ten-minute steps in one operating day.
pub const STEPS_PER_DAY: usize = 144;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DayType {
    Weekday,
    Weekend,
}

/// 1-based day index. Day 1 is a Monday; days 6 and 7 of each week rest.
pub fn day_type(day: usize) -> DayType {
    match day % 7 {
        6 | 0 => DayType::Weekend,
        _ => DayType::Weekday,
    }
}

/// Pricing, vehicle and charging constants shared by every episode.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Constants {
    /// Rental price per minute; an order pays for its full step span.
    pub per_minute_rate: Money,
    pub speed_kmh: f64,
    pub detour_factor: f64,
    /// Scales property price x docks into a station's daily cost.
    pub cost_scale: f64,
    pub full_range_km: f64,
    /// Fraction of full range below which the fast charging rate applies.
    pub charge_fast_frac: f64,
    /// Steps to charge from empty to the fast/slow cutoff.
    pub charge_steps_to_cutoff: f64,
    pub reposition_radius_km: f64,
    pub coverage_radius_km: f64,
    /// New stations are stocked with floor(u * docks) vehicles, u in this range.
    pub alloc_frac: (f64, f64),
}

impl Default for Constants {
    fn default() -> Self {
        Constants {
            per_minute_rate: Money::from_milli(500),
            speed_kmh: 30.0,
            detour_factor: 1.3,
            cost_scale: 9.0,
            full_range_km: 200.0,
            charge_fast_frac: 0.8,
            charge_steps_to_cutoff: 16.0,
            reposition_radius_km: 3.0,
            coverage_radius_km: 1.0,
            alloc_frac: (0.5, 0.7),
        }
    }
}

impl Constants {
    /// Fast charging rate in km of range per step (half above the cutoff).
    pub fn charge_rate_fast(&self) -> f64 {
        self.charge_fast_frac * self.full_range_km / self.charge_steps_to_cutoff
    }

    pub fn trip_km(&self, euclid_km: f64) -> f64 {
        self.detour_factor * euclid_km
    }

    pub fn trip_steps(&self, trip_km: f64) -> u32 {
        let minutes = trip_km / self.speed_kmh * 60.0;
        (minutes / 10.0).ceil().max(1.0) as u32
    }

    pub fn order_price(&self, steps: u32) -> Money {
        self.per_minute_rate * (10 * steps as i64)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n_stations: usize,
    /// Region size M; the pool must split evenly into regions of this size.
    pub region_size: usize,
    pub n_pois: usize,
    pub horizon_days: usize,
    pub city_km: f64,
    /// Expected weekday demand events over the whole pool per day.
    pub target_daily_demand: f64,
    pub weekend_factor: f64,
    pub docks_min: u32,
    pub docks_max: u32,
    pub n_station_clusters: usize,
    pub n_demand_bumps: usize,
    pub constants: Constants,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            n_stations: 200,
            region_size: 20,
            n_pois: 400,
            horizon_days: 14,
            city_km: 16.0,
            target_daily_demand: 3000.0,
            weekend_factor: 0.7,
            docks_min: 8,
            docks_max: 16,
            n_station_clusters: 12,
            n_demand_bumps: 8,
            constants: Constants::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("pool size {pool} is not divisible by region size {m}; regenerate with a compatible pool")]
    IndivisiblePool { pool: usize, m: usize },
    #[error("demand field is zero over the whole pool")]
    DegenerateField,
    #[error("scenario io: {0}")]
    Io(#[from] std::io::Error),
    #[error("scenario parse: {0}")]
    Parse(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Bump {
    pub center: Point,
    pub weight: f64,
    pub sigma_km: f64,
}

/// Ground-truth origin intensity: a spatial Gaussian mixture scaled to the
/// target daily volume, spread over the day by a time-of-day profile.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IntensitySpec {
    pub bumps: Vec<Bump>,
    /// Global factor making station daily rates sum to the configured target.
    pub scale: f64,
    pub weekday_profile: Vec<f64>,
    pub weekend_profile: Vec<f64>,
    pub weekend_factor: f64,
}

impl IntensitySpec {
    /// Raw (unscaled) spatial field.
    pub fn field(&self, p: Point) -> f64 {
        self.bumps
            .iter()
            .map(|b| {
                let d = p.distance(b.center);
                b.weight * (-d * d / (2.0 * b.sigma_km * b.sigma_km)).exp()
            })
            .sum()
    }

    /// Expected demand events per day originating at `p`.
    pub fn daily_rate(&self, p: Point, day: DayType) -> f64 {
        let base = self.scale * self.field(p);
        match day {
            DayType::Weekday => base,
            DayType::Weekend => base * self.weekend_factor,
        }
    }

    /// Expected demand events in one step at `p`.
    pub fn step_rate(&self, p: Point, step: usize, day: DayType) -> f64 {
        let profile = match day {
            DayType::Weekday => &self.weekday_profile,
            DayType::Weekend => &self.weekend_profile,
        };
        self.daily_rate(p, day) * profile[step]
    }
}

/// Destination attraction: distance decay toward hotspot hubs whose pull
/// switches between work hubs (morning) and home hubs (evening).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OdSpec {
    pub decay_km: f64,
    pub work_hubs: Vec<Point>,
    pub home_hubs: Vec<Point>,
    pub attraction_sigma_km: f64,
    pub attraction_gain: f64,
    /// Half-open step ranges of the two commute windows.
    pub morning_steps: (usize, usize),
    pub evening_steps: (usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OdClass {
    Neutral = 0,
    Morning = 1,
    Evening = 2,
}

impl OdSpec {
    pub fn class_of_step(&self, step: usize) -> OdClass {
        if step >= self.morning_steps.0 && step < self.morning_steps.1 {
            OdClass::Morning
        } else if step >= self.evening_steps.0 && step < self.evening_steps.1 {
            OdClass::Evening
        } else {
            OdClass::Neutral
        }
    }

    fn hubness(&self, p: Point, hubs: &[Point]) -> f64 {
        hubs.iter()
            .map(|h| {
                let d = p.distance(*h);
                (-d * d / (2.0 * self.attraction_sigma_km * self.attraction_sigma_km)).exp()
            })
            .fold(0.0, f64::max)
    }

    pub fn attraction(&self, p: Point, class: OdClass) -> f64 {
        match class {
            OdClass::Neutral => 1.0,
            OdClass::Morning => 1.0 + self.attraction_gain * self.hubness(p, &self.work_hubs),
            OdClass::Evening => 1.0 + self.attraction_gain * self.hubness(p, &self.home_hubs),
        }
    }
}

/// Property price surface on a square node grid, bilinearly interpolated.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PriceGrid {
    pub nodes_per_side: usize,
    pub cell_km: f64,
    pub values: Vec<f64>,
}

impl PriceGrid {
    pub fn price_at(&self, p: Point) -> f64 {
        let n = self.nodes_per_side;
        let gx = (p.x / self.cell_km).clamp(0.0, (n - 1) as f64);
        let gy = (p.y / self.cell_km).clamp(0.0, (n - 1) as f64);
        let x0 = (gx as usize).min(n - 2);
        let y0 = (gy as usize).min(n - 2);
        let fx = gx - x0 as f64;
        let fy = gy - y0 as f64;
        let v = |x: usize, y: usize| self.values[y * n + x];
        v(x0, y0) * (1.0 - fx) * (1.0 - fy)
            + v(x0 + 1, y0) * fx * (1.0 - fy)
            + v(x0, y0 + 1) * (1.0 - fx) * fy
            + v(x0 + 1, y0 + 1) * fx * fy
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub constants: Constants,
    pub stations: Vec<Station>,
    pub pois: Vec<Poi>,
    pub price_grid: PriceGrid,
    pub intensity_spec: IntensitySpec,
    pub od_spec: OdSpec,
    pub seed: u64,
    pub episode_days: usize,
    pub region_size: usize,
    pub city_km: f64,
}

impl Scenario {
    pub fn n_stations(&self) -> usize {
        self.stations.len()
    }

    pub fn n_regions(&self) -> usize {
        self.stations.len() / self.region_size
    }

    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("scenario serializes")
    }

    pub fn write_file(&self, path: &std::path::Path) -> Result<(), ScenarioError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn read_file(path: &std::path::Path) -> Result<Scenario, ScenarioError> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

fn gaussian_pair(rng: &mut ChaCha8Rng) -> (f64, f64) {
    // Box-Muller; two uniforms per pair keeps the draw count predictable.
    let u1: f64 = rng.gen::<f64>().max(1e-12);
    let u2: f64 = rng.gen();
    let r = (-2.0 * u1.ln()).sqrt();
    let t = 2.0 * std::f64::consts::PI * u2;
    (r * t.cos(), r * t.sin())
}

fn clamp_to_city(p: Point, city: f64) -> Point {
    Point::new(p.x.clamp(0.02 * city, 0.98 * city), p.y.clamp(0.02 * city, 0.98 * city))
}

fn jittered(rng: &mut ChaCha8Rng, center: Point, sigma: f64, city: f64) -> Point {
    let (dx, dy) = gaussian_pair(rng);
    clamp_to_city(Point::new(center.x + sigma * dx, center.y + sigma * dy), city)
}

fn time_profile(peaks: &[(f64, f64, f64)], base: f64) -> Vec<f64> {
    let mut p: Vec<f64> = (0..STEPS_PER_DAY)
        .map(|k| {
            let k = k as f64;
            base + peaks
                .iter()
                .map(|&(mu, sigma, w)| w * (-(k - mu) * (k - mu) / (2.0 * sigma * sigma)).exp())
                .sum::<f64>()
        })
        .collect();
    let sum: f64 = p.iter().sum();
    for v in &mut p {
        *v /= sum;
    }
    p
}

pub fn generate_scenario(config: &ScenarioConfig, seed: u64) -> Result<Scenario, ScenarioError> {
    if config.region_size == 0 || config.n_stations % config.region_size != 0 {
        return Err(ScenarioError::IndivisiblePool {
            pool: config.n_stations,
            m: config.region_size,
        });
    }
    let mut rng = derive_rng(seed, GEN_STREAM);
    let city = config.city_km;
    let center = Point::new(city / 2.0, city / 2.0);

    // Station clusters, denser toward the center.
    let clusters: Vec<Point> = (0..config.n_station_clusters)
        .map(|_| jittered(&mut rng, center, 0.22 * city, city))
        .collect();

    let stations: Vec<Station> = (0..config.n_stations)
        .map(|id| {
            let loc = if rng.gen::<f64>() < 0.7 {
                let c = clusters[rng.gen_range(0..clusters.len())];
                jittered(&mut rng, c, 1.2, city)
            } else {
                Point::new(rng.gen::<f64>() * city, rng.gen::<f64>() * city)
            };
            let docks = rng.gen_range(config.docks_min..=config.docks_max);
            Station {
                id: id as u32,
                loc,
                docks,
                daily_cost: Money::ZERO, // priced below once the grid exists
            }
        })
        .collect();

    // Demand bumps; most sit on station clusters so demand and supply align.
    let bumps: Vec<Bump> = (0..config.n_demand_bumps)
        .map(|_| {
            let c = if rng.gen::<f64>() < 0.6 {
                let base = clusters[rng.gen_range(0..clusters.len())];
                jittered(&mut rng, base, 0.8, city)
            } else {
                Point::new(rng.gen::<f64>() * city, rng.gen::<f64>() * city)
            };
            Bump {
                center: c,
                weight: rng.gen_range(0.5..1.5),
                sigma_km: rng.gen_range(1.0..2.5),
            }
        })
        .collect();

    let mut intensity = IntensitySpec {
        bumps,
        scale: 1.0,
        weekday_profile: time_profile(&[(48.0, 9.0, 1.0), (108.0, 9.0, 1.0)], 0.3),
        weekend_profile: time_profile(&[(78.0, 15.0, 1.0)], 0.35),
        weekend_factor: config.weekend_factor,
    };
    let raw_total: f64 = stations.iter().map(|s| intensity.field(s.loc)).sum();
    if raw_total <= 0.0 {
        return Err(ScenarioError::DegenerateField);
    }
    intensity.scale = config.target_daily_demand / raw_total;

    // Property prices: one broad central bump plus a few local ones.
    let price_bumps: Vec<(Point, f64, f64)> = (0..3)
        .map(|_| {
            let c = clusters[rng.gen_range(0..clusters.len())];
            (
                jittered(&mut rng, c, 1.0, city),
                rng.gen_range(0.2..0.5),
                rng.gen_range(1.5..3.0),
            )
        })
        .collect();
    let nodes = 65;
    let cell = city / (nodes - 1) as f64;
    let price_value = |p: Point| -> f64 {
        let d = p.distance(center);
        let central = (-d * d / (2.0 * (0.25 * city) * (0.25 * city))).exp();
        0.6 + central
            + price_bumps
                .iter()
                .map(|&(c, a, s)| {
                    let d = p.distance(c);
                    a * (-d * d / (2.0 * s * s)).exp()
                })
                .sum::<f64>()
    };
    let values: Vec<f64> = (0..nodes * nodes)
        .map(|i| {
            let x = (i % nodes) as f64 * cell;
            let y = (i / nodes) as f64 * cell;
            price_value(Point::new(x, y))
        })
        .collect();
    let price_grid = PriceGrid {
        nodes_per_side: nodes,
        cell_km: cell,
        values,
    };

    let mut stations = stations;
    for s in &mut stations {
        let price = price_grid.price_at(s.loc);
        s.daily_cost = Money::from_units(config.constants.cost_scale * price * s.docks as f64);
    }

    // Hub split: bumps nearer the center pull morning traffic, the rest pull
    // evening traffic.
    let mut by_centrality: Vec<(f64, Point)> = intensity
        .bumps
        .iter()
        .map(|b| (b.center.distance(center), b.center))
        .collect();
    by_centrality.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let half = (by_centrality.len() / 2).max(1);
    let work_hubs: Vec<Point> = by_centrality[..half].iter().map(|&(_, p)| p).collect();
    let home_hubs: Vec<Point> = if by_centrality.len() > half {
        by_centrality[half..].iter().map(|&(_, p)| p).collect()
    } else {
        work_hubs.clone()
    };

    let od_spec = OdSpec {
        decay_km: 3.0,
        work_hubs,
        home_hubs,
        attraction_sigma_km: 2.5,
        attraction_gain: 1.5,
        morning_steps: (36, 66),
        evening_steps: (96, 126),
    };

    let pois: Vec<Poi> = (0..config.n_pois)
        .map(|_| {
            let loc = if rng.gen::<f64>() < 0.6 {
                let b = &intensity.bumps[rng.gen_range(0..intensity.bumps.len())];
                jittered(&mut rng, b.center, 1.0, city)
            } else {
                Point::new(rng.gen::<f64>() * city, rng.gen::<f64>() * city)
            };
            Poi { loc }
        })
        .collect();

    Ok(Scenario {
        constants: config.constants.clone(),
        stations,
        pois,
        price_grid,
        intensity_spec: intensity,
        od_spec,
        seed,
        episode_days: config.horizon_days,
        region_size: config.region_size,
        city_km: city,
    })
}

/// Flattened per-step rates and OD sampling tables, built once per worker.
/// Everything here is derived from the scenario; nothing is serialized.
pub struct DemandTables {
    pub n: usize,
    /// Per-step origin rates, station-major: `[s * 144 + k]`.
    lambda_weekday: Vec<f64>,
    lambda_weekend: Vec<f64>,
    /// Row CDFs per OD class, `[class][o * n + d]`.
    od_cdf: [Vec<f64>; 3],
    class_of_step: [OdClass; STEPS_PER_DAY],
    /// Station pairwise distances, row-major.
    pub dist_km: Vec<f64>,
    pub trip_km: Vec<f64>,
    pub trip_steps: Vec<u32>,
}

impl DemandTables {
    pub fn new(sc: &Scenario) -> Self {
        let n = sc.stations.len();
        let mut lambda_weekday = vec![0.0; n * STEPS_PER_DAY];
        let mut lambda_weekend = vec![0.0; n * STEPS_PER_DAY];
        for (s, st) in sc.stations.iter().enumerate() {
            for k in 0..STEPS_PER_DAY {
                lambda_weekday[s * STEPS_PER_DAY + k] =
                    sc.intensity_spec.step_rate(st.loc, k, DayType::Weekday);
                lambda_weekend[s * STEPS_PER_DAY + k] =
                    sc.intensity_spec.step_rate(st.loc, k, DayType::Weekend);
            }
        }

        let mut dist_km = vec![0.0; n * n];
        let mut trip_km = vec![0.0; n * n];
        let mut trip_steps = vec![0u32; n * n];
        for o in 0..n {
            for d in 0..n {
                let dd = sc.stations[o].loc.distance(sc.stations[d].loc);
                dist_km[o * n + d] = dd;
                let t = sc.constants.trip_km(dd);
                trip_km[o * n + d] = t;
                trip_steps[o * n + d] = sc.constants.trip_steps(t);
            }
        }

        let build_class = |class: OdClass| -> Vec<f64> {
            let mut cdf = vec![0.0; n * n];
            for o in 0..n {
                let row = &mut cdf[o * n..(o + 1) * n];
                let mut total = 0.0;
                for d in 0..n {
                    let w = (-dist_km[o * n + d] / sc.od_spec.decay_km).exp()
                        * sc.od_spec.attraction(sc.stations[d].loc, class);
                    total += w;
                    row[d] = total;
                }
                for v in row.iter_mut() {
                    *v /= total;
                }
            }
            cdf
        };
        let od_cdf = [
            build_class(OdClass::Neutral),
            build_class(OdClass::Morning),
            build_class(OdClass::Evening),
        ];
        let mut class_of_step = [OdClass::Neutral; STEPS_PER_DAY];
        for (k, c) in class_of_step.iter_mut().enumerate() {
            *c = sc.od_spec.class_of_step(k);
        }

        DemandTables {
            n,
            lambda_weekday,
            lambda_weekend,
            od_cdf,
            class_of_step,
            dist_km,
            trip_km,
            trip_steps,
        }
    }

    pub fn step_rate(&self, station: usize, step: usize, day: DayType) -> f64 {
        match day {
            DayType::Weekday => self.lambda_weekday[station * STEPS_PER_DAY + step],
            DayType::Weekend => self.lambda_weekend[station * STEPS_PER_DAY + step],
        }
    }

    /// Daily origin rate for one station.
    pub fn daily_rate(&self, station: usize, day: DayType) -> f64 {
        let table = match day {
            DayType::Weekday => &self.lambda_weekday,
            DayType::Weekend => &self.lambda_weekend,
        };
        table[station * STEPS_PER_DAY..(station + 1) * STEPS_PER_DAY]
            .iter()
            .sum()
    }

    /// Expected price of an order leaving `origin`, averaged over the
    /// neutral OD row.
    pub fn mean_order_value(&self, origin: usize, constants: &Constants) -> f64 {
        let row = &self.od_cdf[OdClass::Neutral as usize][origin * self.n..(origin + 1) * self.n];
        let mut prev = 0.0;
        let mut value = 0.0;
        for d in 0..self.n {
            let p = row[d] - prev;
            prev = row[d];
            value += p * constants
                .order_price(self.trip_steps[origin * self.n + d])
                .units();
        }
        value
    }

    /// Probability that a draw from `origin`'s OD row lands back on itself.
    pub fn self_mass(&self, origin: usize, step: usize) -> f64 {
        let row = &self.od_cdf[self.class_of_step[step] as usize]
            [origin * self.n..(origin + 1) * self.n];
        let prev = if origin == 0 { 0.0 } else { row[origin - 1] };
        row[origin] - prev
    }

    fn sample_dest(&self, origin: usize, step: usize, rng: &mut ChaCha8Rng) -> usize {
        let row = &self.od_cdf[self.class_of_step[step] as usize]
            [origin * self.n..(origin + 1) * self.n];
        let u: f64 = rng.gen();
        row.partition_point(|&c| c < u).min(self.n - 1)
    }
}

/// Knuth's product-of-uniforms Poisson sampler; rates here stay small.
pub fn poisson(rng: &mut ChaCha8Rng, lambda: f64) -> u32 {
    if lambda <= 0.0 {
        return 0;
    }
    let limit = (-lambda).exp();
    let mut k = 0u32;
    let mut p = 1.0;
    loop {
        p *= rng.gen::<f64>();
        if p <= limit {
            return k;
        }
        k += 1;
    }
}

/// Samples one step of demand over the whole pool, independent of which
/// stations are deployed. A destination draw equal to the origin is redrawn
/// once and the event is dropped if it repeats.
pub fn sample_demand_into(
    tables: &DemandTables,
    day: usize,
    step: usize,
    rng: &mut ChaCha8Rng,
    out: &mut Vec<DemandEvent>,
) {
    out.clear();
    let dt = day_type(day);
    let lambda = match dt {
        DayType::Weekday => &tables.lambda_weekday,
        DayType::Weekend => &tables.lambda_weekend,
    };
    for origin in 0..tables.n {
        let rate = lambda[origin * STEPS_PER_DAY + step];
        let count = poisson(rng, rate);
        for _ in 0..count {
            let mut dest = tables.sample_dest(origin, step, rng);
            if dest == origin {
                dest = tables.sample_dest(origin, step, rng);
                if dest == origin {
                    continue;
                }
            }
            out.push(DemandEvent {
                day: day as u32,
                step: step as u32,
                origin: origin as u32,
                dest: dest as u32,
            });
        }
    }
}

pub fn sample_demand(
    tables: &DemandTables,
    day: usize,
    step: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<DemandEvent> {
    let mut out = Vec::new();
    sample_demand_into(tables, day, step, rng, &mut out);
    out
}
