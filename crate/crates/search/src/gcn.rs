//! Next-day station demand prediction.
//!
//! A two-layer graph convolution over the candidate graph regresses each
//! station's next-day pick-up and return counts from its own and its
//! neighbors' recent history. A moving-average predictor hides behind the
//! same interface, and with no history at all both fall back to the
//! scenario's prior intensity.

use emobsim_core::rng::{derive_rng, GEN_STREAM};
use emobsim_core::{Snapshot, Station};
use emobsim_core::sim::DayTallies;
use rand::Rng;
use serde::{Deserialize, Serialize};

const HIST_DAYS: usize = 3;
const N_FEATURES: usize = HIST_DAYS * 3 + 1;
const HIDDEN: usize = 16;
const OUT: usize = 2;

/// Default candidate-graph construction: edges within this radius, isolated
/// nodes wired to this many nearest neighbors instead.
pub const GRAPH_RADIUS_KM: f64 = 2.0;
pub const GRAPH_K_FALLBACK: usize = 4;

/// One already-simulated day as the predictor sees it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DayHistory {
    pub pickups: Vec<f64>,
    pub returns: Vec<f64>,
    pub active: Vec<f64>,
}

impl DayHistory {
    pub fn from_tallies(t: &DayTallies, snap: &Snapshot, n: usize) -> Self {
        let mask = snap.mask(n);
        DayHistory {
            pickups: t.pickups.iter().map(|&c| f64::from(c)).collect(),
            returns: t.returns.iter().map(|&c| f64::from(c)).collect(),
            active: mask.iter().map(|&a| if a { 1.0 } else { 0.0 }).collect(),
        }
    }
}

/// Symmetrically normalized adjacency with self loops, dense row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateGraph {
    pub n: usize,
    a_hat: Vec<f64>,
    /// Neighbor count before self loops, kept for the isolation tests.
    pub degree: Vec<usize>,
}

impl CandidateGraph {
    /// Edges join stations within `radius_km`; a station left with no
    /// neighbors is wired to its `k_fallback` nearest instead.
    pub fn build(stations: &[Station], radius_km: f64, k_fallback: usize) -> Self {
        let n = stations.len();
        let mut adj = vec![false; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                if stations[i].loc.distance(stations[j].loc) <= radius_km {
                    adj[i * n + j] = true;
                    adj[j * n + i] = true;
                }
            }
        }
        for i in 0..n {
            if (0..n).any(|j| adj[i * n + j]) {
                continue;
            }
            let mut near: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            near.sort_by(|&a, &b| {
                stations[i]
                    .loc
                    .distance(stations[a].loc)
                    .partial_cmp(&stations[i].loc.distance(stations[b].loc))
                    .unwrap()
                    .then(a.cmp(&b))
            });
            for &j in near.iter().take(k_fallback) {
                adj[i * n + j] = true;
                adj[j * n + i] = true;
            }
        }

        let degree: Vec<usize> = (0..n)
            .map(|i| (0..n).filter(|&j| adj[i * n + j]).count())
            .collect();
        // D^{-1/2} (A + I) D^{-1/2} with D counting the self loop.
        let dinv: Vec<f64> = degree.iter().map(|&d| 1.0 / ((d + 1) as f64).sqrt()).collect();
        let mut a_hat = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let a = if i == j {
                    1.0
                } else if adj[i * n + j] {
                    1.0
                } else {
                    0.0
                };
                a_hat[i * n + j] = a * dinv[i] * dinv[j];
            }
        }
        CandidateGraph { n, a_hat, degree }
    }

    /// out = A_hat * x, where x is n rows by `cols`.
    fn propagate(&self, x: &[f64], cols: usize, out: &mut [f64]) {
        let n = self.n;
        out.fill(0.0);
        for i in 0..n {
            for j in 0..n {
                let a = self.a_hat[i * n + j];
                if a == 0.0 {
                    continue;
                }
                for c in 0..cols {
                    out[i * cols + c] += a * x[j * cols + c];
                }
            }
        }
    }
}

/// Each layer mixes a node's own row with the propagated neighborhood under
/// separate weights; targets are per-node magnitudes, and folding the self
/// signal into the averaged one would erase exactly what must be predicted.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GcnModel {
    pub w1_self: Vec<f64>,
    pub w1_neigh: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2_self: Vec<f64>,
    pub w2_neigh: Vec<f64>,
    pub b2: Vec<f64>,
    pub feat_mean: Vec<f64>,
    pub feat_std: Vec<f64>,
}

impl GcnModel {
    fn init(seed: u64) -> Self {
        let mut rng = derive_rng(seed, GEN_STREAM);
        let mut draw = |fan_in: usize, len: usize| -> Vec<f64> {
            let bound = (1.0 / fan_in as f64).sqrt();
            (0..len).map(|_| rng.gen_range(-bound..bound)).collect()
        };
        GcnModel {
            w1_self: draw(N_FEATURES, N_FEATURES * HIDDEN),
            w1_neigh: draw(N_FEATURES, N_FEATURES * HIDDEN),
            b1: vec![0.0; HIDDEN],
            w2_self: draw(HIDDEN, HIDDEN * OUT),
            w2_neigh: draw(HIDDEN, HIDDEN * OUT),
            b2: vec![0.0; OUT],
            feat_mean: vec![0.0; N_FEATURES],
            feat_std: vec![1.0; N_FEATURES],
        }
    }

    /// Node feature matrix for the three trailing days ending the window.
    fn features(stations: &[Station], window: &[&DayHistory]) -> Vec<f64> {
        assert_eq!(window.len(), HIST_DAYS);
        let n = stations.len();
        let mut x = vec![0.0; n * N_FEATURES];
        for s in 0..n {
            for (d, h) in window.iter().enumerate() {
                x[s * N_FEATURES + d * 3] = h.pickups[s];
                x[s * N_FEATURES + d * 3 + 1] = h.returns[s];
                x[s * N_FEATURES + d * 3 + 2] = h.active[s];
            }
            x[s * N_FEATURES + HIST_DAYS * 3] = f64::from(stations[s].docks);
        }
        x
    }

    fn normalize(&self, x: &mut [f64]) {
        for row in x.chunks_mut(N_FEATURES) {
            for (f, v) in row.iter_mut().enumerate() {
                *v = (*v - self.feat_mean[f]) / self.feat_std[f];
            }
        }
    }

    fn forward(
        &self,
        graph: &CandidateGraph,
        x_norm: &[f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = graph.n;
        let mut xp = vec![0.0; n * N_FEATURES];
        graph.propagate(x_norm, N_FEATURES, &mut xp);
        let mut h = vec![0.0; n * HIDDEN];
        for i in 0..n {
            for k in 0..HIDDEN {
                let mut acc = self.b1[k];
                for f in 0..N_FEATURES {
                    acc += x_norm[i * N_FEATURES + f] * self.w1_self[f * HIDDEN + k]
                        + xp[i * N_FEATURES + f] * self.w1_neigh[f * HIDDEN + k];
                }
                h[i * HIDDEN + k] = acc.max(0.0);
            }
        }
        let mut hp = vec![0.0; n * HIDDEN];
        graph.propagate(&h, HIDDEN, &mut hp);
        let mut y = vec![0.0; n * OUT];
        for i in 0..n {
            for o in 0..OUT {
                let mut acc = self.b2[o];
                for k in 0..HIDDEN {
                    acc += h[i * HIDDEN + k] * self.w2_self[k * OUT + o]
                        + hp[i * HIDDEN + k] * self.w2_neigh[k * OUT + o];
                }
                y[i * OUT + o] = acc;
            }
        }
        (xp, h, hp, y)
    }

    pub fn predict(
        &self,
        graph: &CandidateGraph,
        stations: &[Station],
        window: &[&DayHistory],
    ) -> Vec<(f64, f64)> {
        let mut x = Self::features(stations, window);
        self.normalize(&mut x);
        let (_, _, _, y) = self.forward(graph, &x);
        (0..graph.n)
            .map(|s| (y[s * OUT].max(0.0), y[s * OUT + 1].max(0.0)))
            .collect()
    }
}

/// Pads a short history by repeating its oldest day.
fn trailing_window(history: &[DayHistory]) -> Vec<&DayHistory> {
    assert!(!history.is_empty());
    let mut w = Vec::with_capacity(HIST_DAYS);
    for k in (0..HIST_DAYS).rev() {
        let idx = history.len().saturating_sub(k + 1);
        w.push(&history[idx]);
    }
    w
}

/// Squared-error training over all (3-day window -> next day) pairs in the
/// rollout history. Full-batch Adam, deterministic for a given seed.
pub fn train_gcn(
    graph: &CandidateGraph,
    stations: &[Station],
    history: &[DayHistory],
    epochs: usize,
    seed: u64,
) -> GcnModel {
    let n = graph.n;
    let mut model = GcnModel::init(seed);

    // Everything before day t predicts day t; windows shorter than three
    // days repeat their oldest entry.
    let mut samples = Vec::new();
    for t in 1..history.len() {
        let window = trailing_window(&history[..t]);
        let mut x = GcnModel::features(stations, &window);
        let target: Vec<f64> = (0..n)
            .flat_map(|s| [history[t].pickups[s], history[t].returns[s]])
            .collect();
        samples.push((std::mem::take(&mut x), target));
    }
    if samples.is_empty() {
        return model;
    }

    // Freeze feature statistics from the training set.
    let count = (samples.len() * n) as f64;
    for f in 0..N_FEATURES {
        let mean = samples
            .iter()
            .flat_map(|(x, _)| x.chunks(N_FEATURES).map(move |r| r[f]))
            .sum::<f64>()
            / count;
        let var = samples
            .iter()
            .flat_map(|(x, _)| x.chunks(N_FEATURES).map(move |r| (r[f] - mean).powi(2)))
            .sum::<f64>()
            / count;
        model.feat_mean[f] = mean;
        model.feat_std[f] = var.sqrt().max(1e-8);
    }
    for (x, _) in &mut samples {
        model.normalize(x);
    }

    let dim = 2 * model.w1_self.len() + model.b1.len() + 2 * model.w2_self.len() + model.b2.len();
    let mut adam_m = vec![0.0; dim];
    let mut adam_v = vec![0.0; dim];
    let (beta1, beta2, eps) = (0.9, 0.999, 1e-8);

    for epoch in 1..=epochs {
        // Step decay settles the late oscillation around the optimum.
        let lr = if epoch * 5 <= epochs * 4 { 1e-2 } else { 1e-3 };
        let mut g_w1s = vec![0.0; model.w1_self.len()];
        let mut g_w1n = vec![0.0; model.w1_neigh.len()];
        let mut g_b1 = vec![0.0; model.b1.len()];
        let mut g_w2s = vec![0.0; model.w2_self.len()];
        let mut g_w2n = vec![0.0; model.w2_neigh.len()];
        let mut g_b2 = vec![0.0; model.b2.len()];
        let scale = 1.0 / (samples.len() * n) as f64;

        for (x, target) in &samples {
            let (xp, h, hp, y) = model.forward(graph, x);
            // dL/dy with L = mean squared error over nodes and outputs.
            let dy: Vec<f64> = y
                .iter()
                .zip(target)
                .map(|(p, t)| 2.0 * (p - t) * scale)
                .collect();
            let mut d_h = vec![0.0; n * HIDDEN];
            let mut d_hp = vec![0.0; n * HIDDEN];
            for i in 0..n {
                for o in 0..OUT {
                    let g = dy[i * OUT + o];
                    g_b2[o] += g;
                    for k in 0..HIDDEN {
                        g_w2s[k * OUT + o] += h[i * HIDDEN + k] * g;
                        g_w2n[k * OUT + o] += hp[i * HIDDEN + k] * g;
                        d_h[i * HIDDEN + k] += model.w2_self[k * OUT + o] * g;
                        d_hp[i * HIDDEN + k] += model.w2_neigh[k * OUT + o] * g;
                    }
                }
            }
            // A_hat is symmetric, so the propagated path's grad wrt h is
            // A_hat * d_hp; fold it into the direct path's.
            let mut d_h_prop = vec![0.0; n * HIDDEN];
            graph.propagate(&d_hp, HIDDEN, &mut d_h_prop);
            for (a, b) in d_h.iter_mut().zip(&d_h_prop) {
                *a += b;
            }
            for i in 0..n {
                for k in 0..HIDDEN {
                    if h[i * HIDDEN + k] <= 0.0 {
                        continue;
                    }
                    let g = d_h[i * HIDDEN + k];
                    g_b1[k] += g;
                    for f in 0..N_FEATURES {
                        g_w1s[f * HIDDEN + k] += x[i * N_FEATURES + f] * g;
                        g_w1n[f * HIDDEN + k] += xp[i * N_FEATURES + f] * g;
                    }
                }
            }
        }

        let grads: Vec<f64> = g_w1s
            .iter()
            .chain(&g_w1n)
            .chain(&g_b1)
            .chain(&g_w2s)
            .chain(&g_w2n)
            .chain(&g_b2)
            .copied()
            .collect();
        let t = epoch as f64;
        let mut upd = vec![0.0; dim];
        for (i, g) in grads.iter().enumerate() {
            adam_m[i] = beta1 * adam_m[i] + (1.0 - beta1) * g;
            adam_v[i] = beta2 * adam_v[i] + (1.0 - beta2) * g * g;
            let mh = adam_m[i] / (1.0 - beta1.powf(t));
            let vh = adam_v[i] / (1.0 - beta2.powf(t));
            upd[i] = lr * mh / (vh.sqrt() + eps);
        }
        let mut it = upd.into_iter();
        for w in model
            .w1_self
            .iter_mut()
            .chain(model.w1_neigh.iter_mut())
            .chain(model.b1.iter_mut())
            .chain(model.w2_self.iter_mut())
            .chain(model.w2_neigh.iter_mut())
            .chain(model.b2.iter_mut())
        {
            *w -= it.next().unwrap();
        }
    }
    model
}

/// The interface the policy consumes: expected next-day pick-ups and returns
/// per candidate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum PredictorKind {
    Gcn(GcnModel),
    /// Mean of the last three observed days.
    MovingAverage,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Predictor {
    pub kind: PredictorKind,
    /// Expected daily pick-ups by the scenario's generating field; the cold
    /// start answer.
    pub prior: Vec<f64>,
}

impl Predictor {
    pub fn predict(
        &self,
        graph: &CandidateGraph,
        stations: &[Station],
        history: &[DayHistory],
    ) -> Vec<(f64, f64)> {
        if history.is_empty() {
            return self.prior.iter().map(|&p| (p, p)).collect();
        }
        match &self.kind {
            PredictorKind::Gcn(model) => {
                model.predict(graph, stations, &trailing_window(history))
            }
            PredictorKind::MovingAverage => {
                let w = trailing_window(history);
                (0..stations.len())
                    .map(|s| {
                        let p = w.iter().map(|d| d.pickups[s]).sum::<f64>() / w.len() as f64;
                        let r = w.iter().map(|d| d.returns[s]).sum::<f64>() / w.len() as f64;
                        (p, r)
                    })
                    .collect()
            }
        }
    }
}
