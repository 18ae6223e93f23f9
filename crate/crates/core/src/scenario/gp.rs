//! Demand-model fitting from simulated history.
//!
//! A Gaussian-process regressor over (location, time-of-day) smooths observed
//! per-station per-step demand counts into a rate surface, mirroring how the
//! deployed system would learn demand from order logs rather than read the
//! generating field. Spatial kernel: RBF, length-scale 1.5 km. Temporal
//! kernel: periodic over the 24 h cycle, length-scale 2 h. Observation noise
//! 0.1. Targets are daily-equivalent rates (per-step rate x 144) so the noise
//! floor is small relative to signal.

use crate::domain::Station;
use crate::geom::Point;
use crate::scenario::STEPS_PER_DAY;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

const SPACE_LENGTH_KM: f64 = 1.5;
const TIME_LENGTH_H: f64 = 2.0;
const NOISE_VAR: f64 = 0.1;
const MAX_INDUCING: usize = 512;
const TIME_BUCKETS: usize = 16;
const STEPS_PER_BUCKET: usize = STEPS_PER_DAY / TIME_BUCKETS;

#[derive(Debug, Error)]
pub enum GpError {
    #[error("need at least 2 days of history, got {0}")]
    NotEnoughHistory(usize),
    #[error("kernel matrix not positive definite even after jitter")]
    Singular,
}

pub struct DemandEstimator {
    points: Vec<(Point, f64)>,
    alpha: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    ybar: f64,
    sigma_f2: f64,
}

fn kernel(sigma_f2: f64, a: (Point, f64), b: (Point, f64)) -> f64 {
    let d = a.0.distance(b.0);
    let space = (-d * d / (2.0 * SPACE_LENGTH_KM * SPACE_LENGTH_KM)).exp();
    let dh = a.1 - b.1;
    let s = (std::f64::consts::PI * dh / 24.0).sin();
    let time = (-2.0 * s * s / (TIME_LENGTH_H * TIME_LENGTH_H)).exp();
    sigma_f2 * space * time
}

fn bucket_hour(bucket: usize) -> f64 {
    (bucket as f64 + 0.5) * 24.0 / TIME_BUCKETS as f64
}

fn step_hour(step: usize) -> f64 {
    (step as f64 + 0.5) * 24.0 / STEPS_PER_DAY as f64
}

/// Fits the regressor on per-step origin counts, one `Vec` per day laid out
/// station-major (`[s * 144 + k]`). Counts are averaged over days, bucketed
/// into 90-minute slots, and subsampled to at most 512 inducing points by a
/// fixed stride.
pub fn fit_demand_model(
    stations: &[Station],
    days: &[Vec<u16>],
) -> Result<DemandEstimator, GpError> {
    if days.len() < 2 {
        return Err(GpError::NotEnoughHistory(days.len()));
    }
    let n = stations.len();
    let mut targets = Vec::with_capacity(n * TIME_BUCKETS);
    for (s, st) in stations.iter().enumerate() {
        for b in 0..TIME_BUCKETS {
            let mut sum = 0u64;
            for day in days {
                for k in b * STEPS_PER_BUCKET..(b + 1) * STEPS_PER_BUCKET {
                    sum += day[s * STEPS_PER_DAY + k] as u64;
                }
            }
            let per_step = sum as f64 / (days.len() * STEPS_PER_BUCKET) as f64;
            targets.push(((st.loc, bucket_hour(b)), per_step * STEPS_PER_DAY as f64));
        }
    }

    let stride = targets.len().div_ceil(MAX_INDUCING);
    let inducing: Vec<((Point, f64), f64)> =
        targets.into_iter().step_by(stride.max(1)).collect();
    let m = inducing.len();

    let ybar = inducing.iter().map(|&(_, y)| y).sum::<f64>() / m as f64;
    let sigma_f2 = inducing
        .iter()
        .map(|&(_, y)| (y - ybar) * (y - ybar))
        .sum::<f64>()
        / m as f64;

    let points: Vec<(Point, f64)> = inducing.iter().map(|&(p, _)| p).collect();
    let resid = DVector::from_iterator(m, inducing.iter().map(|&(_, y)| y - ybar));

    let mut jitter = 0.0;
    let chol = loop {
        let k = DMatrix::from_fn(m, m, |i, j| {
            kernel(sigma_f2, points[i], points[j])
                + if i == j { NOISE_VAR + jitter } else { 0.0 }
        });
        match Cholesky::new(k) {
            Some(c) => break c,
            None if jitter == 0.0 => {
                jitter = 1e-6;
                log::warn!("kernel matrix not positive definite; adding jitter {jitter}");
            }
            None if jitter < 1e-2 => {
                jitter *= 10.0;
                log::warn!("kernel matrix still degenerate; jitter now {jitter}");
            }
            None => return Err(GpError::Singular),
        }
    };
    let alpha = chol.solve(&resid);

    Ok(DemandEstimator {
        points,
        alpha,
        chol,
        ybar,
        sigma_f2,
    })
}

impl DemandEstimator {
    fn cross(&self, q: (Point, f64)) -> DVector<f64> {
        DVector::from_iterator(
            self.points.len(),
            self.points.iter().map(|&p| kernel(self.sigma_f2, q, p)),
        )
    }

    /// Posterior mean per-step rate (clamped nonnegative) and latent variance
    /// at a location and step-of-day.
    pub fn predict(&self, loc: Point, step: usize) -> (f64, f64) {
        let q = (loc, step_hour(step));
        let ks = self.cross(q);
        let mean_daily = self.ybar + ks.dot(&self.alpha);
        let var = (self.sigma_f2 - ks.dot(&self.chol.solve(&ks))).max(0.0);
        ((mean_daily / STEPS_PER_DAY as f64).max(0.0), var)
    }

    /// Expected demand events per day at a location, integrated over the
    /// time buckets.
    pub fn predict_daily(&self, loc: Point) -> f64 {
        let mut total = 0.0;
        for b in 0..TIME_BUCKETS {
            let ks = self.cross((loc, bucket_hour(b)));
            let mean_daily = (self.ybar + ks.dot(&self.alpha)).max(0.0);
            total += mean_daily / TIME_BUCKETS as f64;
        }
        total
    }
}
