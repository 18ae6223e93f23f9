//! The hierarchical deployment controller.
//!
//! One shared-weights recurrent agent per region emits a categorical
//! deployment prior each day (how many stations to add and remove, as
//! fractions of the region size). A low-level scorer ranks the region's
//! candidates by POI coverage and predicted demand, and an epsilon-greedy
//! pass turns prior plus ranking into concrete open and close sets. The
//! per-day snapshots are executed against the simulator as they are made,
//! so observations always reflect the live system.

use crate::features::{FeatureStats, Featurizer};
use crate::gcn::{
    CandidateGraph, DayHistory, GcnModel, Predictor, PredictorKind, GRAPH_K_FALLBACK,
    GRAPH_RADIUS_KM,
};
use crate::nn::{entropy, l2_norm, log_softmax, sample_categorical, softmax, LstmState, NetShape, PolicyNet};
use crate::regions::{partition_regions, PartitionError, Region, RegionPartition};
use emobsim_core::metrics::{agent_reward, CoverageIndex, RewardConfig, ScopeMetrics};
use emobsim_core::sim::{DayTallies, EpisodeDriver, EpisodeRecord, SimOptions};
use emobsim_core::{DemandTables, Money, Plan, Scenario, Snapshot, Station, StationId};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::path::Path;
use thiserror::Error;

/// The four supported action scales; levels are fractions of the region
/// size. The default is the middle ground of the four.
pub const ACTION_SCALES: [[f64; 3]; 4] = [
    [0.0, 0.05, 0.1],
    [0.0, 0.1, 0.2],
    [0.0, 0.15, 0.3],
    [0.0, 0.2, 0.4],
];

pub fn default_action_scale() -> Vec<f64> {
    ACTION_SCALES[1].to_vec()
}

pub const DEFAULT_EPSILON: f64 = 0.1;
pub const DEFAULT_ALPHA: f64 = 0.5;

/// Sampled level indices into the action scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeploymentPrior {
    pub add_level: usize,
    pub remove_level: usize,
}

/// A categorical distribution over action-scale levels.
#[derive(Debug, Clone)]
pub struct LevelDist {
    pub probs: Vec<f64>,
    pub log_probs: Vec<f64>,
}

impl LevelDist {
    pub fn from_logits(logits: &[f64]) -> Self {
        LevelDist {
            probs: softmax(logits),
            log_probs: log_softmax(logits),
        }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        sample_categorical(&self.probs, rng)
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    pub fn entropy(&self) -> f64 {
        entropy(&self.probs)
    }
}

/// Everything the trained policy is: network weights, frozen feature
/// normalization, the frozen demand predictor, and the selection knobs.
#[derive(Debug, Clone)]
pub struct PolicyParams {
    pub net: PolicyNet,
    pub stats: FeatureStats,
    pub predictor: Predictor,
    pub partition_seed: u64,
    pub action_scale: Vec<f64>,
    pub epsilon: f64,
    pub alpha: f64,
}

impl PolicyParams {
    /// A fresh, untrained policy for a scenario of region size `m`.
    pub fn init(m: usize, predictor: Predictor, partition_seed: u64, net_seed: u64) -> Self {
        let scale = default_action_scale();
        let shape = NetShape::new(crate::features::obs_dim(m), scale.len());
        PolicyParams {
            net: PolicyNet::new(shape, net_seed),
            stats: FeatureStats::identity(),
            predictor,
            partition_seed,
            action_scale: scale,
            epsilon: DEFAULT_EPSILON,
            alpha: DEFAULT_ALPHA,
        }
    }
}

/// One forward step of the shared high-level network: the two level
/// distributions, the state-value, and the advanced recurrent state.
/// Sampling is left to the caller's random stream.
pub fn high_level_step(
    net: &PolicyNet,
    obs: &[f64],
    hidden: &LstmState,
) -> (LevelDist, LevelDist, f64, LstmState) {
    let cache = net.step(obs, hidden);
    let finite = cache
        .add_logits
        .iter()
        .chain(cache.rem_logits.iter())
        .all(|z| z.is_finite())
        && cache.value.is_finite();
    if !finite {
        panic!(
            "non-finite policy output: add {:?}, remove {:?}, value {}; params l2 {}, min {:?}, max {:?}",
            cache.add_logits,
            cache.rem_logits,
            cache.value,
            l2_norm(&net.params),
            net.params.iter().cloned().fold(f64::INFINITY, f64::min),
            net.params.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        );
    }
    let state = net.state_after(&cache);
    (
        LevelDist::from_logits(&cache.add_logits),
        LevelDist::from_logits(&cache.rem_logits),
        cache.value,
        state,
    )
}

/// Ranks a region's candidates: half the score is the candidate's share of
/// the region's reachable POIs, half its share of the region's predicted
/// pick-up demand. Descending, ties toward the lower id.
pub fn score_candidates(
    region: &Region,
    coverage: &CoverageIndex,
    preds: &[(f64, f64)],
    alpha: f64,
) -> Vec<(StationId, f64)> {
    let universe: HashSet<u32> = region
        .members
        .iter()
        .flat_map(|&id| coverage.station_pois[id as usize].iter().copied())
        .collect();
    let total_pred: f64 = region.members.iter().map(|&id| preds[id as usize].0).sum();

    let mut scored: Vec<(StationId, f64)> = region
        .members
        .iter()
        .map(|&id| {
            let cov = if universe.is_empty() {
                0.0
            } else {
                coverage.station_pois[id as usize].len() as f64 / universe.len() as f64
            };
            let dem = if total_pred > 0.0 {
                preds[id as usize].0 / total_pred
            } else {
                0.0
            };
            (id, alpha * cov + (1.0 - alpha) * dem)
        })
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    scored
}

/// Turns a prior into concrete open and close sets. Opens walk the ranking
/// from the top over inactive candidates, closes from the bottom over active
/// ones; each pick is greedy with probability 1 - epsilon and uniform over
/// the remaining candidates otherwise. Counts are fractions of the region
/// size, clipped to what is available.
pub fn low_level_select(
    ranking: &[(StationId, f64)],
    prior: &DeploymentPrior,
    scale: &[f64],
    epsilon: f64,
    rng: &mut ChaCha8Rng,
    active: &[bool],
) -> (Vec<StationId>, Vec<StationId>) {
    let m = ranking.len() as f64;
    let n_add = (scale[prior.add_level] * m).round() as usize;
    let n_rem = (scale[prior.remove_level] * m).round() as usize;

    let mut inactive_ranked: Vec<StationId> = ranking
        .iter()
        .map(|&(id, _)| id)
        .filter(|&id| !active[id as usize])
        .collect();
    let mut active_ranked: Vec<StationId> = ranking
        .iter()
        .map(|&(id, _)| id)
        .filter(|&id| active[id as usize])
        .collect();

    let mut open = Vec::with_capacity(n_add.min(inactive_ranked.len()));
    for _ in 0..n_add.min(inactive_ranked.len()) {
        let pick = if rng.gen::<f64>() < epsilon {
            rng.gen_range(0..inactive_ranked.len())
        } else {
            0
        };
        open.push(inactive_ranked.remove(pick));
    }
    let mut close = Vec::with_capacity(n_rem.min(active_ranked.len()));
    for _ in 0..n_rem.min(active_ranked.len()) {
        let pick = if rng.gen::<f64>() < epsilon {
            rng.gen_range(0..active_ranked.len())
        } else {
            active_ranked.len() - 1
        };
        close.push(active_ranked.remove(pick));
    }
    (open, close)
}

/// Day metrics restricted to one region: demand whose origin lies in the
/// region, cost and POI coverage of its active members. The POI universe is
/// what the region could ever cover; a region with no reachable POIs counts
/// as fully covered.
pub fn region_scope_metrics(
    region: &Region,
    coverage: &CoverageIndex,
    tallies: &DayTallies,
    active: &[bool],
    stations: &[Station],
) -> ScopeMetrics {
    let mut satisfied = 0u64;
    let mut total = 0u64;
    let mut gmv = Money::ZERO;
    let mut cost = Money::ZERO;
    let mut universe: HashSet<u32> = HashSet::new();
    let mut covered: HashSet<u32> = HashSet::new();
    for &id in &region.members {
        let s = id as usize;
        satisfied += u64::from(tallies.satisfied_by_origin[s]);
        total += u64::from(tallies.demand_by_origin[s]);
        gmv += tallies.gmv_by_origin[s];
        universe.extend(coverage.station_pois[s].iter().copied());
        if active[s] {
            cost += stations[s].daily_cost;
            covered.extend(coverage.station_pois[s].iter().copied());
        }
    }
    let poi_cov = if universe.is_empty() {
        1.0
    } else {
        covered.len() as f64 / universe.len() as f64
    };
    ScopeMetrics::compute(satisfied, total, poi_cov, gmv, cost)
}

/// How levels are drawn during plan generation: sampled from the heads with
/// epsilon-greedy selection (training), or argmax with epsilon 0 (greedy
/// evaluation).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RolloutMode {
    Sample,
    Greedy,
}

/// One region-day of the trajectory, everything PPO needs.
#[derive(Debug, Clone)]
pub struct RegionStep {
    pub day: usize,
    pub region: usize,
    pub obs: Vec<f64>,
    pub add_level: usize,
    pub remove_level: usize,
    /// Joint log-probability of the sampled level pair.
    pub log_prob: f64,
    pub value: f64,
    pub reward: f64,
}

/// A generated plan with its simulated outcome and trajectory.
#[derive(Debug, Clone)]
pub struct GeneratedPlan {
    pub plan: Plan,
    pub record: EpisodeRecord,
    /// Day-major, region-minor: `steps[(day - 1) * n_regions + region]`.
    pub steps: Vec<RegionStep>,
}

impl GeneratedPlan {
    /// The trajectory regrouped as one day-ordered sequence per region.
    pub fn region_sequences(&self, n_regions: usize) -> Vec<Vec<&RegionStep>> {
        let mut seqs = vec![Vec::with_capacity(self.steps.len() / n_regions); n_regions];
        for step in &self.steps {
            seqs[step.region].push(step);
        }
        seqs
    }
}

/// Scenario-derived context shared by every rollout: demand tables, POI
/// index, partition, candidate graph, and the frozen featurizer.
pub struct EvalContext {
    pub tables: DemandTables,
    pub coverage: CoverageIndex,
    pub partition: RegionPartition,
    pub graph: CandidateGraph,
    pub featurizer: Featurizer,
}

impl EvalContext {
    pub fn build(sc: &Scenario, params: &PolicyParams) -> Result<Self, PartitionError> {
        let tables = DemandTables::new(sc);
        let coverage = CoverageIndex::for_scenario(sc);
        let partition = partition_regions(&sc.stations, sc.region_size, params.partition_seed)?;
        let graph = CandidateGraph::build(&sc.stations, GRAPH_RADIUS_KM, GRAPH_K_FALLBACK);
        let mut featurizer = Featurizer::new(&sc.stations, &tables, &sc.constants, sc.city_km);
        featurizer.stats = params.stats.clone();
        Ok(EvalContext {
            tables,
            coverage,
            partition,
            graph,
            featurizer,
        })
    }
}

/// Rolls the policy through one episode, interleaved with the simulator:
/// each day's observation comes from the live state, each region's agent
/// steps the shared network, and the joint snapshot is executed before the
/// next day is planned. Returns the assembled plan (which replays
/// bit-identically through the simulator), the episode record, and the
/// trajectory.
#[allow(clippy::too_many_arguments)]
pub fn generate_plan(
    params: &PolicyParams,
    ctx: &EvalContext,
    sc: &Scenario,
    initial: &Snapshot,
    sim_seed: u64,
    policy_rng: &mut ChaCha8Rng,
    mode: RolloutMode,
    reward: &RewardConfig,
    opts: SimOptions,
) -> GeneratedPlan {
    let n = sc.n_stations();
    let n_regions = ctx.partition.n_regions();
    let mut driver = EpisodeDriver::new(sc, &ctx.tables, initial.clone(), sim_seed, opts);
    let mut hidden = vec![LstmState::zeros(params.net.shape.hidden); n_regions];
    let mut history: Vec<DayHistory> = Vec::new();
    let mut prev_scope = vec![ScopeMetrics::zero(); n_regions];
    let mut prev_tallies: Option<DayTallies> = None;
    let mut active = initial.mask(n);
    let mut steps = Vec::with_capacity(sc.episode_days * n_regions);

    while !driver.is_done() {
        let day = driver.day() + 1;
        let preds = params.predictor.predict(&ctx.graph, &sc.stations, &history);
        let rows = ctx
            .featurizer
            .raw_rows(&sc.stations, &active, prev_tallies.as_ref(), &preds);
        let mut obs = ctx.featurizer.observations(&ctx.partition, &rows);

        let mut next_active = active.clone();
        let day_base = steps.len();
        for (r, region) in ctx.partition.regions.iter().enumerate() {
            let (add_dist, rem_dist, value, state) = high_level_step(&params.net, &obs[r], &hidden[r]);
            hidden[r] = state;
            let (add_level, remove_level) = match mode {
                RolloutMode::Sample => (add_dist.sample(policy_rng), rem_dist.sample(policy_rng)),
                RolloutMode::Greedy => (add_dist.argmax(), rem_dist.argmax()),
            };
            let log_prob = add_dist.log_probs[add_level] + rem_dist.log_probs[remove_level];
            let prior = DeploymentPrior {
                add_level,
                remove_level,
            };
            let ranking = score_candidates(region, &ctx.coverage, &preds, params.alpha);
            let epsilon = match mode {
                RolloutMode::Sample => params.epsilon,
                RolloutMode::Greedy => 0.0,
            };
            let (open, close) = low_level_select(
                &ranking,
                &prior,
                &params.action_scale,
                epsilon,
                policy_rng,
                &active,
            );
            for id in open {
                next_active[id as usize] = true;
            }
            for id in close {
                next_active[id as usize] = false;
            }
            steps.push(RegionStep {
                day,
                region: r,
                obs: std::mem::take(&mut obs[r]),
                add_level,
                remove_level,
                log_prob,
                value,
                reward: 0.0,
            });
        }

        let snap: Snapshot = next_active
            .iter()
            .enumerate()
            .filter_map(|(id, &a)| a.then_some(id as StationId))
            .collect();
        let tallies = driver.step(snap.clone()).clone();
        for (r, region) in ctx.partition.regions.iter().enumerate() {
            let scope =
                region_scope_metrics(region, &ctx.coverage, &tallies, &next_active, &sc.stations);
            steps[day_base + r].reward = agent_reward(&prev_scope[r], &scope, reward);
            prev_scope[r] = scope;
        }
        history.push(DayHistory::from_tallies(&tallies, &snap, n));
        prev_tallies = Some(tallies);
        active = next_active;
    }

    let (plan, record) = driver.finish();
    GeneratedPlan {
        plan,
        record,
        steps,
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
}

fn to_bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn from_bits(v: &[u64]) -> Vec<f64> {
    v.iter().map(|&b| f64::from_bits(b)).collect()
}

#[derive(Serialize, Deserialize)]
struct GcnBits {
    w1_self: Vec<u64>,
    w1_neigh: Vec<u64>,
    b1: Vec<u64>,
    w2_self: Vec<u64>,
    w2_neigh: Vec<u64>,
    b2: Vec<u64>,
    feat_mean: Vec<u64>,
    feat_std: Vec<u64>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind")]
enum PredictorBits {
    Gcn { model: GcnBits },
    MovingAverage,
}

/// Checkpoint wire format. Every floating-point value travels as its IEEE
/// bit pattern, so save, load and save again is byte-identical; JSON float
/// text would not guarantee that.
#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    shape: NetShape,
    params: Vec<u64>,
    stats_mean: Vec<u64>,
    stats_std: Vec<u64>,
    predictor: PredictorBits,
    prior: Vec<u64>,
    partition_seed: u64,
    action_scale: Vec<u64>,
    epsilon: u64,
    alpha: u64,
}

pub fn checkpoint_bytes(params: &PolicyParams) -> Vec<u8> {
    let predictor = match &params.predictor.kind {
        PredictorKind::Gcn(m) => PredictorBits::Gcn {
            model: GcnBits {
                w1_self: to_bits(&m.w1_self),
                w1_neigh: to_bits(&m.w1_neigh),
                b1: to_bits(&m.b1),
                w2_self: to_bits(&m.w2_self),
                w2_neigh: to_bits(&m.w2_neigh),
                b2: to_bits(&m.b2),
                feat_mean: to_bits(&m.feat_mean),
                feat_std: to_bits(&m.feat_std),
            },
        },
        PredictorKind::MovingAverage => PredictorBits::MovingAverage,
    };
    let ckpt = Checkpoint {
        version: CHECKPOINT_VERSION,
        shape: params.net.shape,
        params: to_bits(&params.net.params),
        stats_mean: to_bits(&params.stats.mean),
        stats_std: to_bits(&params.stats.std),
        predictor,
        prior: to_bits(&params.predictor.prior),
        partition_seed: params.partition_seed,
        action_scale: to_bits(&params.action_scale),
        epsilon: params.epsilon.to_bits(),
        alpha: params.alpha.to_bits(),
    };
    serde_json::to_vec(&ckpt).expect("checkpoint serializes")
}

pub fn params_from_bytes(bytes: &[u8]) -> Result<PolicyParams, CheckpointError> {
    let ckpt: Checkpoint = serde_json::from_slice(bytes)?;
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version(ckpt.version));
    }
    let kind = match ckpt.predictor {
        PredictorBits::Gcn { model } => PredictorKind::Gcn(GcnModel {
            w1_self: from_bits(&model.w1_self),
            w1_neigh: from_bits(&model.w1_neigh),
            b1: from_bits(&model.b1),
            w2_self: from_bits(&model.w2_self),
            w2_neigh: from_bits(&model.w2_neigh),
            b2: from_bits(&model.b2),
            feat_mean: from_bits(&model.feat_mean),
            feat_std: from_bits(&model.feat_std),
        }),
        PredictorBits::MovingAverage => PredictorKind::MovingAverage,
    };
    Ok(PolicyParams {
        net: PolicyNet {
            shape: ckpt.shape,
            params: from_bits(&ckpt.params),
        },
        stats: FeatureStats {
            mean: from_bits(&ckpt.stats_mean),
            std: from_bits(&ckpt.stats_std),
        },
        predictor: Predictor {
            kind,
            prior: from_bits(&ckpt.prior),
        },
        partition_seed: ckpt.partition_seed,
        action_scale: from_bits(&ckpt.action_scale),
        epsilon: f64::from_bits(ckpt.epsilon),
        alpha: f64::from_bits(ckpt.alpha),
    })
}

pub fn save_checkpoint(path: &Path, params: &PolicyParams) -> Result<(), CheckpointError> {
    std::fs::write(path, checkpoint_bytes(params))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<PolicyParams, CheckpointError> {
    params_from_bytes(&std::fs::read(path)?)
}
