//! Policy optimization: a deterministic in-process worker pool for parallel
//! plan evaluation, generalized advantage estimation, the clipped-surrogate
//! update, and the end-to-end training loop with reward-penalty search.

pub mod gae;
pub mod pool;
pub mod ppo;
pub mod train;

pub use gae::{discounted_returns, gae_advantages, normalize_advantages};
pub use pool::{run_jobs, worker_count};
pub use ppo::{ppo_update, PpoConfig, Sequence, UpdateStats};
pub use train::{grid_search_lambda, train, CurvePoint, TrainConfig, TrainResult};
