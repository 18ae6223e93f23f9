//! The shared policy network: a single-layer LSTM over the per-day region
//! observations, two categorical heads over the action-scale levels, and a
//! scalar value head. Gradients come from hand-rolled backpropagation
//! through time; the architecture is small and fixed, so closed-form layer
//! gradients beat a general autodiff here.

use emobsim_core::rng::{derive_rng, POLICY_STREAM};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShape {
    pub input: usize,
    pub hidden: usize,
    pub head_hidden: usize,
    pub levels: usize,
}

impl NetShape {
    pub fn new(input: usize, levels: usize) -> Self {
        NetShape {
            input,
            hidden: 64,
            head_hidden: 32,
            levels,
        }
    }

    /// Parameter block lengths, in flat storage order: LSTM (wx, wh, b),
    /// then the add, remove and value heads (w1, b1, w2, b2 each).
    fn block_sizes(&self) -> [usize; 15] {
        let (d, h, hh, l) = (self.input, self.hidden, self.head_hidden, self.levels);
        [
            d * 4 * h,
            h * 4 * h,
            4 * h,
            h * hh,
            hh,
            hh * l,
            l,
            h * hh,
            hh,
            hh * l,
            l,
            h * hh,
            hh,
            hh,
            1,
        ]
    }

    pub fn n_params(&self) -> usize {
        self.block_sizes().iter().sum()
    }

    /// Flat offsets of the add and remove heads' output biases. Pinning a
    /// large bias there turns the head into a delta distribution.
    pub fn head_bias_offsets(&self) -> (usize, usize) {
        let s = self.block_sizes();
        let add = s[..6].iter().sum();
        let rem = s[..10].iter().sum();
        (add, rem)
    }
}

struct Head<'a> {
    w1: &'a [f64],
    b1: &'a [f64],
    w2: &'a [f64],
    b2: &'a [f64],
}

struct Views<'a> {
    wx: &'a [f64],
    wh: &'a [f64],
    b: &'a [f64],
    add: Head<'a>,
    rem: Head<'a>,
    val: Head<'a>,
}

struct HeadMut<'a> {
    w1: &'a mut [f64],
    b1: &'a mut [f64],
    w2: &'a mut [f64],
    b2: &'a mut [f64],
}

struct ViewsMut<'a> {
    wx: &'a mut [f64],
    wh: &'a mut [f64],
    b: &'a mut [f64],
    add: HeadMut<'a>,
    rem: HeadMut<'a>,
    val: HeadMut<'a>,
}

fn split<'a>(shape: &NetShape, params: &'a [f64]) -> Views<'a> {
    assert_eq!(params.len(), shape.n_params());
    let mut rest = params;
    let mut take = |len: usize| {
        let (head, tail) = rest.split_at(len);
        rest = tail;
        head
    };
    let s = shape.block_sizes();
    Views {
        wx: take(s[0]),
        wh: take(s[1]),
        b: take(s[2]),
        add: Head {
            w1: take(s[3]),
            b1: take(s[4]),
            w2: take(s[5]),
            b2: take(s[6]),
        },
        rem: Head {
            w1: take(s[7]),
            b1: take(s[8]),
            w2: take(s[9]),
            b2: take(s[10]),
        },
        val: Head {
            w1: take(s[11]),
            b1: take(s[12]),
            w2: take(s[13]),
            b2: take(s[14]),
        },
    }
}

fn split_mut<'a>(shape: &NetShape, params: &'a mut [f64]) -> ViewsMut<'a> {
    assert_eq!(params.len(), shape.n_params());
    let mut rest = params;
    let mut take = |len: usize| {
        let slot = std::mem::take(&mut rest);
        let (head, tail) = slot.split_at_mut(len);
        rest = tail;
        head
    };
    let s = shape.block_sizes();
    ViewsMut {
        wx: take(s[0]),
        wh: take(s[1]),
        b: take(s[2]),
        add: HeadMut {
            w1: take(s[3]),
            b1: take(s[4]),
            w2: take(s[5]),
            b2: take(s[6]),
        },
        rem: HeadMut {
            w1: take(s[7]),
            b1: take(s[8]),
            w2: take(s[9]),
            b2: take(s[10]),
        },
        val: HeadMut {
            w1: take(s[11]),
            b1: take(s[12]),
            w2: take(s[13]),
            b2: take(s[14]),
        },
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    pub shape: NetShape,
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        LstmState {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

/// Everything one forward step leaves behind: enough to run the step
/// backward without recomputation. Gate vectors are post-activation.
pub struct StepCache {
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    gi: Vec<f64>,
    gf: Vec<f64>,
    gg: Vec<f64>,
    go: Vec<f64>,
    tanh_c: Vec<f64>,
    pub h: Vec<f64>,
    pub c: Vec<f64>,
    add_a1: Vec<f64>,
    rem_a1: Vec<f64>,
    val_a1: Vec<f64>,
    pub add_logits: Vec<f64>,
    pub rem_logits: Vec<f64>,
    pub value: f64,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn head_forward(head: &Head, h: &[f64], out_dim: usize) -> (Vec<f64>, Vec<f64>) {
    let hh = head.b1.len();
    let mut a1 = head.b1.to_vec();
    for (j, &hj) in h.iter().enumerate() {
        if hj == 0.0 {
            continue;
        }
        for k in 0..hh {
            a1[k] += hj * head.w1[j * hh + k];
        }
    }
    for a in &mut a1 {
        *a = a.tanh();
    }
    let mut out = head.b2.to_vec();
    debug_assert_eq!(out.len(), out_dim);
    for (k, &ak) in a1.iter().enumerate() {
        for o in 0..out_dim {
            out[o] += ak * head.w2[k * out_dim + o];
        }
    }
    (a1, out)
}

impl PolicyNet {
    /// Seeded uniform init scaled by fan-in; the forget gate starts biased
    /// open so early gradients reach across days.
    pub fn new(shape: NetShape, seed: u64) -> Self {
        let mut rng = derive_rng(seed, POLICY_STREAM);
        let mut params = vec![0.0; shape.n_params()];
        {
            let v = split_mut(&shape, &mut params);
            let mut fill = |w: &mut [f64], fan_in: usize| {
                let bound = (1.0 / fan_in as f64).sqrt();
                for x in w.iter_mut() {
                    *x = rng.gen_range(-bound..bound);
                }
            };
            fill(v.wx, shape.input);
            fill(v.wh, shape.hidden);
            fill(v.add.w1, shape.hidden);
            fill(v.add.w2, shape.head_hidden);
            fill(v.rem.w1, shape.hidden);
            fill(v.rem.w2, shape.head_hidden);
            fill(v.val.w1, shape.hidden);
            fill(v.val.w2, shape.head_hidden);
            for b in v.b[shape.hidden..2 * shape.hidden].iter_mut() {
                *b = 1.0;
            }
        }
        PolicyNet { shape, params }
    }

    pub fn step(&self, x: &[f64], st: &LstmState) -> StepCache {
        let s = &self.shape;
        assert_eq!(x.len(), s.input);
        let v = split(s, &self.params);
        let h4 = 4 * s.hidden;

        let mut z = v.b.to_vec();
        for (j, &xj) in x.iter().enumerate() {
            if xj == 0.0 {
                continue;
            }
            for k in 0..h4 {
                z[k] += xj * v.wx[j * h4 + k];
            }
        }
        for (j, &hj) in st.h.iter().enumerate() {
            if hj == 0.0 {
                continue;
            }
            for k in 0..h4 {
                z[k] += hj * v.wh[j * h4 + k];
            }
        }

        let hs = s.hidden;
        let gi: Vec<f64> = z[..hs].iter().map(|&a| sigmoid(a)).collect();
        let gf: Vec<f64> = z[hs..2 * hs].iter().map(|&a| sigmoid(a)).collect();
        let gg: Vec<f64> = z[2 * hs..3 * hs].iter().map(|&a| a.tanh()).collect();
        let go: Vec<f64> = z[3 * hs..].iter().map(|&a| sigmoid(a)).collect();
        let c: Vec<f64> = (0..hs).map(|k| gf[k] * st.c[k] + gi[k] * gg[k]).collect();
        let tanh_c: Vec<f64> = c.iter().map(|&a| a.tanh()).collect();
        let h: Vec<f64> = (0..hs).map(|k| go[k] * tanh_c[k]).collect();

        let (add_a1, add_logits) = head_forward(&v.add, &h, s.levels);
        let (rem_a1, rem_logits) = head_forward(&v.rem, &h, s.levels);
        let (val_a1, val_out) = head_forward(&v.val, &h, 1);

        StepCache {
            h_prev: st.h.clone(),
            c_prev: st.c.clone(),
            gi,
            gf,
            gg,
            go,
            tanh_c,
            h,
            c,
            add_a1,
            rem_a1,
            val_a1,
            add_logits,
            rem_logits,
            value: val_out[0],
        }
    }

    pub fn state_after(&self, cache: &StepCache) -> LstmState {
        LstmState {
            h: cache.h.clone(),
            c: cache.c.clone(),
        }
    }

    /// Runs a whole per-region episode from a zero state, keeping caches.
    pub fn forward_sequence(&self, xs: &[Vec<f64>]) -> Vec<StepCache> {
        let mut st = LstmState::zeros(self.shape.hidden);
        let mut caches = Vec::with_capacity(xs.len());
        for x in xs {
            let cache = self.step(x, &st);
            st = self.state_after(&cache);
            caches.push(cache);
        }
        caches
    }

    /// Backpropagation through time. `d_add`, `d_rem` and `d_value` carry
    /// the loss gradient at each step's logits and value output; parameter
    /// gradients accumulate into `grads` (same layout as `params`).
    pub fn backward_sequence(
        &self,
        xs: &[Vec<f64>],
        caches: &[StepCache],
        d_add: &[Vec<f64>],
        d_rem: &[Vec<f64>],
        d_value: &[f64],
        grads: &mut [f64],
    ) {
        let s = &self.shape;
        let hs = s.hidden;
        let h4 = 4 * hs;
        let t_len = caches.len();
        assert!(xs.len() == t_len && d_add.len() == t_len && d_value.len() == t_len);
        let v = split(s, &self.params);
        let mut g = split_mut(s, grads);

        let head_backward = |head: &Head,
                             g_head: &mut HeadMut,
                             a1: &[f64],
                             h: &[f64],
                             d_out: &[f64],
                             dh: &mut [f64]| {
            let hh = head.b1.len();
            let out_dim = d_out.len();
            let mut dz1 = vec![0.0; hh];
            for k in 0..hh {
                let mut da = 0.0;
                for (o, &gout) in d_out.iter().enumerate() {
                    g_head.w2[k * out_dim + o] += a1[k] * gout;
                    da += head.w2[k * out_dim + o] * gout;
                }
                dz1[k] = da * (1.0 - a1[k] * a1[k]);
            }
            for (o, &gout) in d_out.iter().enumerate() {
                g_head.b2[o] += gout;
            }
            for k in 0..hh {
                g_head.b1[k] += dz1[k];
            }
            for (j, &hj) in h.iter().enumerate() {
                let mut acc = 0.0;
                for k in 0..hh {
                    g_head.w1[j * hh + k] += hj * dz1[k];
                    acc += head.w1[j * hh + k] * dz1[k];
                }
                dh[j] += acc;
            }
        };

        let mut dh_next = vec![0.0; hs];
        let mut dc_next = vec![0.0; hs];
        for t in (0..t_len).rev() {
            let cache = &caches[t];
            let mut dh = dh_next.clone();
            head_backward(&v.add, &mut g.add, &cache.add_a1, &cache.h, &d_add[t], &mut dh);
            head_backward(&v.rem, &mut g.rem, &cache.rem_a1, &cache.h, &d_rem[t], &mut dh);
            head_backward(&v.val, &mut g.val, &cache.val_a1, &cache.h, &[d_value[t]], &mut dh);

            let mut dz = vec![0.0; h4];
            for k in 0..hs {
                let d_o = dh[k] * cache.tanh_c[k];
                let dc = dh[k] * cache.go[k] * (1.0 - cache.tanh_c[k] * cache.tanh_c[k])
                    + dc_next[k];
                let d_i = dc * cache.gg[k];
                let d_f = dc * cache.c_prev[k];
                let d_g = dc * cache.gi[k];
                dz[k] = d_i * cache.gi[k] * (1.0 - cache.gi[k]);
                dz[hs + k] = d_f * cache.gf[k] * (1.0 - cache.gf[k]);
                dz[2 * hs + k] = d_g * (1.0 - cache.gg[k] * cache.gg[k]);
                dz[3 * hs + k] = d_o * cache.go[k] * (1.0 - cache.go[k]);
                dc_next[k] = dc * cache.gf[k];
            }
            for (k, &dzk) in dz.iter().enumerate() {
                g.b[k] += dzk;
            }
            for (j, &xj) in xs[t].iter().enumerate() {
                if xj == 0.0 {
                    continue;
                }
                for k in 0..h4 {
                    g.wx[j * h4 + k] += xj * dz[k];
                }
            }
            for k in 0..hs {
                dh_next[k] = 0.0;
            }
            for (j, &hj) in cache.h_prev.iter().enumerate() {
                if hj != 0.0 {
                    for k in 0..h4 {
                        g.wh[j * h4 + k] += hj * dz[k];
                    }
                }
                let mut acc = 0.0;
                for k in 0..h4 {
                    acc += v.wh[j * h4 + k] * dz[k];
                }
                dh_next[j] = acc;
            }
        }
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let lse = logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|&z| z - lse).collect()
}

pub fn entropy(probs: &[f64]) -> f64 {
    probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum()
}

pub fn sample_categorical(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Scales `grads` down to `max_norm` when they exceed it; returns the norm
/// measured before clipping.
pub fn clip_grad_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = l2_norm(grads);
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            *g *= scale;
        }
    }
    norm
}

/// Plain Adam over a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(dim: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }

    /// One descent step: `params -= lr * mhat / (sqrt(vhat) + eps)`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert!(params.len() == self.m.len() && grads.len() == self.m.len());
        self.t += 1;
        let t = self.t as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}
