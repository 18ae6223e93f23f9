//! Deployment planners: the five comparison baselines and the hierarchical
//! multi-agent neural policy with its demand predictor.

pub mod baselines;
pub mod features;
pub mod gcn;
pub mod nn;
pub mod policy;
pub mod regions;

pub use baselines::{
    initial_snapshot, plan_fixed, plan_greedy, plan_incremental_day, plan_one_time,
    BaselineConfig, ChurnDist, GreedyKind, HistoryStats, PlannerKind,
};
pub use policy::{
    generate_plan, load_checkpoint, save_checkpoint, EvalContext, GeneratedPlan, PolicyParams,
    RegionStep, RolloutMode,
};
pub use regions::{partition_regions, Region, RegionPartition};
