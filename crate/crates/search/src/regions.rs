//! Balanced spatial partitioning of the candidate pool.
//!
//! Every region holds exactly `m` candidates so the shared-weights agents see
//! observations of one fixed shape. Plain k-means gives the geometry; a
//! greedy capacity-constrained pass restores exact balance.

use emobsim_core::geom::Point;
use emobsim_core::rng::{derive_rng, POLICY_STREAM};
use emobsim_core::{Station, StationId};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PartitionError {
    #[error("pool of {n} stations does not split into regions of {m}; regenerate the scenario with a divisible pool")]
    Indivisible { n: usize, m: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Region {
    pub id: usize,
    /// Member station ids, ascending.
    pub members: Vec<StationId>,
    pub center: Point,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegionPartition {
    pub regions: Vec<Region>,
    /// Station id -> region index.
    pub region_of: Vec<u32>,
    pub m: usize,
}

impl RegionPartition {
    pub fn n_regions(&self) -> usize {
        self.regions.len()
    }
}

pub fn partition_regions(
    stations: &[Station],
    m: usize,
    seed: u64,
) -> Result<RegionPartition, PartitionError> {
    let n = stations.len();
    if m == 0 || n == 0 || n % m != 0 {
        return Err(PartitionError::Indivisible { n, m });
    }
    let k = n / m;
    let pts: Vec<Point> = stations.iter().map(|s| s.loc).collect();

    let mut rng = derive_rng(seed, POLICY_STREAM);
    let mut centers = kmeans_pp_init(&pts, k, &mut rng);
    let mut assign = vec![0usize; n];
    for _ in 0..50 {
        let mut changed = false;
        for (i, p) in pts.iter().enumerate() {
            let best = nearest(p, &centers).0;
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        recompute_centers(&pts, &assign, &mut centers);
        if !changed {
            break;
        }
    }

    // Balance: assign points greedily, largest margin (gap between the best
    // and second-best center with spare capacity) first, so the points that
    // would lose the most by waiting are placed early.
    let mut capacity = vec![m; k];
    let mut region_of = vec![u32::MAX; n];
    for _ in 0..n {
        let mut pick: Option<(f64, usize, usize)> = None;
        for (i, p) in pts.iter().enumerate() {
            if region_of[i] != u32::MAX {
                continue;
            }
            let (best, d1, d2) = nearest_open(p, &centers, &capacity);
            let margin = d2 - d1;
            let better = match pick {
                None => true,
                Some((pm, _, _)) => margin > pm,
            };
            if better {
                pick = Some((margin, i, best));
            }
        }
        let (_, i, c) = pick.expect("unassigned point exists");
        region_of[i] = c as u32;
        capacity[c] -= 1;
    }

    let mut regions: Vec<Region> = (0..k)
        .map(|id| Region {
            id,
            members: Vec::with_capacity(m),
            center: Point { x: 0.0, y: 0.0 },
        })
        .collect();
    for (i, &r) in region_of.iter().enumerate() {
        regions[r as usize].members.push(i as StationId);
    }
    for reg in &mut regions {
        reg.members.sort_unstable();
        let inv = 1.0 / reg.members.len() as f64;
        reg.center = reg.members.iter().fold(Point { x: 0.0, y: 0.0 }, |a, &s| {
            let p = pts[s as usize];
            Point {
                x: a.x + p.x * inv,
                y: a.y + p.y * inv,
            }
        });
    }
    Ok(RegionPartition {
        regions,
        region_of,
        m,
    })
}

fn kmeans_pp_init(pts: &[Point], k: usize, rng: &mut impl Rng) -> Vec<Point> {
    let mut centers = vec![pts[rng.gen_range(0..pts.len())]];
    let mut d2: Vec<f64> = pts.iter().map(|p| dist2(*p, centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            rng.gen_range(0..pts.len())
        } else {
            let mut u = rng.gen::<f64>() * total;
            let mut idx = pts.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    idx = i;
                    break;
                }
                u -= w;
            }
            idx
        };
        centers.push(pts[next]);
        for (i, p) in pts.iter().enumerate() {
            d2[i] = d2[i].min(dist2(*p, pts[next]));
        }
    }
    centers
}

fn dist2(a: Point, b: Point) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    dx * dx + dy * dy
}

fn nearest(p: &Point, centers: &[Point]) -> (usize, f64) {
    let mut best = (0usize, f64::INFINITY);
    for (c, ctr) in centers.iter().enumerate() {
        let d = dist2(*p, *ctr);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Nearest and second-nearest centers that still have capacity.
fn nearest_open(p: &Point, centers: &[Point], capacity: &[usize]) -> (usize, f64, f64) {
    let mut d1 = f64::INFINITY;
    let mut d2 = f64::INFINITY;
    let mut best = usize::MAX;
    for (c, ctr) in centers.iter().enumerate() {
        if capacity[c] == 0 {
            continue;
        }
        let d = dist2(*p, *ctr);
        if d < d1 {
            d2 = d1;
            d1 = d;
            best = c;
        } else if d < d2 {
            d2 = d;
        }
    }
    (best, d1, d2)
}

fn recompute_centers(pts: &[Point], assign: &[usize], centers: &mut [Point]) {
    let k = centers.len();
    let mut sums = vec![(0.0f64, 0.0f64, 0usize); k];
    for (i, &a) in assign.iter().enumerate() {
        sums[a].0 += pts[i].x;
        sums[a].1 += pts[i].y;
        sums[a].2 += 1;
    }
    for (c, (sx, sy, cnt)) in sums.into_iter().enumerate() {
        if cnt > 0 {
            centers[c] = Point {
                x: sx / cnt as f64,
                y: sy / cnt as f64,
            };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use emobsim_core::money::Money;
    use emobsim_core::scenario::{generate_scenario, ScenarioConfig};

    fn station(id: StationId, x: f64, y: f64) -> Station {
        Station {
            id,
            loc: Point { x, y },
            docks: 8,
            daily_cost: Money::from_units(1.0),
        }
    }

    #[test]
    fn partitions_pool_into_balanced_regions() {
        let sc = generate_scenario(&ScenarioConfig::default(), 1).unwrap();
        let part = partition_regions(&sc.stations, 20, 1).unwrap();
        assert_eq!(part.n_regions(), 10);
        let mut seen = vec![false; 200];
        for reg in &part.regions {
            assert_eq!(reg.members.len(), 20);
            for &s in &reg.members {
                assert!(!seen[s as usize], "station {s} in two regions");
                seen[s as usize] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn separated_blobs_become_their_own_regions() {
        let mut stations = Vec::new();
        for i in 0..20u32 {
            stations.push(station(i, f64::from(i % 5) * 0.3, f64::from(i / 5) * 0.3));
        }
        for i in 20..40u32 {
            let j = i - 20;
            stations.push(station(
                i,
                30.0 + f64::from(j % 5) * 0.3,
                30.0 + f64::from(j / 5) * 0.3,
            ));
        }
        let part = partition_regions(&stations, 20, 3).unwrap();
        assert_eq!(part.n_regions(), 2);
        for reg in &part.regions {
            let first_blob = reg.members[0] < 20;
            assert!(reg
                .members
                .iter()
                .all(|&s| (s < 20) == first_blob));
        }
    }

    #[test]
    fn members_sit_closer_to_their_own_center() {
        let sc = generate_scenario(&ScenarioConfig::default(), 2).unwrap();
        let part = partition_regions(&sc.stations, 20, 2).unwrap();
        for reg in &part.regions {
            let mean_to = |c: Point| {
                reg.members
                    .iter()
                    .map(|&s| sc.stations[s as usize].loc.distance(c))
                    .sum::<f64>()
                    / reg.members.len() as f64
            };
            let own = mean_to(reg.center);
            for other in &part.regions {
                if other.id != reg.id {
                    assert!(
                        own <= mean_to(other.center) + 1e-9,
                        "region {} leans toward region {}",
                        reg.id,
                        other.id
                    );
                }
            }
        }
    }

    #[test]
    fn same_seed_reproduces_the_partition() {
        let sc = generate_scenario(&ScenarioConfig::default(), 4).unwrap();
        let a = partition_regions(&sc.stations, 20, 9).unwrap();
        let b = partition_regions(&sc.stations, 20, 9).unwrap();
        assert_eq!(
            serde_json::to_vec(&a.regions).unwrap(),
            serde_json::to_vec(&b.regions).unwrap()
        );
        assert_eq!(a.region_of, b.region_of);
    }

    #[test]
    fn indivisible_pool_is_rejected() {
        let stations: Vec<Station> = (0..10).map(|i| station(i, f64::from(i), 0.0)).collect();
        assert!(partition_regions(&stations, 3, 0).is_err());
    }
}
