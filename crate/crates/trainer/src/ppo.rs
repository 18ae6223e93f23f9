//! Clipped-surrogate policy optimization over batches of per-region
//! trajectory sequences. The loss is the standard composite: negative
//! clipped surrogate, plus a weighted value regression, minus a weighted
//! entropy bonus, averaged over every step in the batch.

use crate::gae::{discounted_returns, gae_advantages, normalize_advantages};
use emobsim_search::nn::{clip_grad_norm, entropy, log_softmax, Adam, PolicyNet};
use emobsim_search::policy::RegionStep;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub clip: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub epochs: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub grad_clip: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            clip: 0.2,
            value_coef: 0.5,
            entropy_coef: 0.01,
            epochs: 4,
            gamma: 0.99,
            gae_lambda: 0.95,
            grad_clip: 0.5,
        }
    }
}

/// One region's day-ordered trajectory, the unit the recurrent network is
/// unrolled over.
#[derive(Debug, Clone)]
pub struct Sequence {
    pub obs: Vec<Vec<f64>>,
    pub add: Vec<usize>,
    pub rem: Vec<usize>,
    pub logp_old: Vec<f64>,
    pub value_old: Vec<f64>,
    pub rewards: Vec<f64>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Regroups one rollout's day-major steps into per-region sequences.
pub fn sequences_from(steps: Vec<RegionStep>, n_regions: usize) -> Vec<Sequence> {
    let t_len = steps.len() / n_regions.max(1);
    let mut seqs = vec![
        Sequence {
            obs: Vec::with_capacity(t_len),
            add: Vec::with_capacity(t_len),
            rem: Vec::with_capacity(t_len),
            logp_old: Vec::with_capacity(t_len),
            value_old: Vec::with_capacity(t_len),
            rewards: Vec::with_capacity(t_len),
        };
        n_regions
    ];
    for step in steps {
        let seq = &mut seqs[step.region];
        seq.obs.push(step.obs);
        seq.add.push(step.add_level);
        seq.rem.push(step.remove_level);
        seq.logp_old.push(step.log_prob);
        seq.value_old.push(step.value);
        seq.rewards.push(step.reward);
    }
    seqs
}

#[derive(Debug, Clone, Copy, Default)]
pub struct UpdateStats {
    /// First-epoch mean of the negative clipped surrogate.
    pub policy_loss: f64,
    /// First-epoch mean squared value error, unweighted.
    pub value_loss: f64,
    /// First-epoch mean summed head entropy.
    pub entropy: f64,
    /// Pre-clip gradient norm of the first epoch.
    pub grad_norm: f64,
    /// Largest |probability ratio - 1| seen in the first epoch. Zero-change
    /// parameters must make this vanish.
    pub max_ratio_dev: f64,
    pub skipped: bool,
}

struct EpochPass {
    loss: f64,
    policy_loss: f64,
    value_loss: f64,
    entropy: f64,
    max_ratio_dev: f64,
}

/// One pass over the batch: the composite loss, and the parameter gradient
/// accumulated into `grads` when given. Advantages and returns are fixed
/// inputs; only the network varies between epochs.
fn epoch_pass(
    net: &PolicyNet,
    seqs: &[Sequence],
    advs: &[Vec<f64>],
    rets: &[Vec<f64>],
    cfg: &PpoConfig,
    mut grads: Option<&mut [f64]>,
) -> EpochPass {
    let total: f64 = seqs.iter().map(Sequence::len).sum::<usize>() as f64;
    let mut out = EpochPass {
        loss: 0.0,
        policy_loss: 0.0,
        value_loss: 0.0,
        entropy: 0.0,
        max_ratio_dev: 0.0,
    };

    for (si, seq) in seqs.iter().enumerate() {
        let caches = net.forward_sequence(&seq.obs);
        let mut d_add = Vec::with_capacity(seq.len());
        let mut d_rem = Vec::with_capacity(seq.len());
        let mut d_value = Vec::with_capacity(seq.len());

        for t in 0..seq.len() {
            let lsm_add = log_softmax(&caches[t].add_logits);
            let lsm_rem = log_softmax(&caches[t].rem_logits);
            let p_add: Vec<f64> = lsm_add.iter().map(|l| l.exp()).collect();
            let p_rem: Vec<f64> = lsm_rem.iter().map(|l| l.exp()).collect();

            let logp_new = lsm_add[seq.add[t]] + lsm_rem[seq.rem[t]];
            let ratio = (logp_new - seq.logp_old[t]).exp();
            let a = advs[si][t];
            let surr1 = ratio * a;
            let surr2 = ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip) * a;
            let policy = -surr1.min(surr2);

            let verr = caches[t].value - rets[si][t];
            let h_add = entropy(&p_add);
            let h_rem = entropy(&p_rem);

            out.policy_loss += policy / total;
            out.value_loss += verr * verr / total;
            out.entropy += (h_add + h_rem) / total;
            out.loss += (policy + cfg.value_coef * verr * verr
                - cfg.entropy_coef * (h_add + h_rem))
                / total;
            out.max_ratio_dev = out.max_ratio_dev.max((ratio - 1.0).abs());

            if grads.is_some() {
                // The clipped branch is constant in theta, so its gradient
                // is zero; otherwise d loss / d logp = -A * ratio.
                let g_lp = if surr1 <= surr2 { -a * ratio } else { 0.0 } / total;
                let g_ent = cfg.entropy_coef / total;
                let mut da = vec![0.0; p_add.len()];
                let mut dr = vec![0.0; p_rem.len()];
                for j in 0..p_add.len() {
                    let one = f64::from(j == seq.add[t]);
                    da[j] = g_lp * (one - p_add[j]) + g_ent * p_add[j] * (lsm_add[j] + h_add);
                }
                for j in 0..p_rem.len() {
                    let one = f64::from(j == seq.rem[t]);
                    dr[j] = g_lp * (one - p_rem[j]) + g_ent * p_rem[j] * (lsm_rem[j] + h_rem);
                }
                d_add.push(da);
                d_rem.push(dr);
                d_value.push(2.0 * cfg.value_coef * verr / total);
            }
        }

        if let Some(g) = grads.as_deref_mut() {
            net.backward_sequence(&seq.obs, &caches, &d_add, &d_rem, &d_value, g);
        }
    }
    out
}

/// The composite loss alone, for finite-difference verification.
pub fn surrogate_loss(
    net: &PolicyNet,
    seqs: &[Sequence],
    advs: &[Vec<f64>],
    rets: &[Vec<f64>],
    cfg: &PpoConfig,
) -> f64 {
    epoch_pass(net, seqs, advs, rets, cfg, None).loss
}

/// The analytic gradient of `surrogate_loss` in flat parameter layout.
pub fn surrogate_grad(
    net: &PolicyNet,
    seqs: &[Sequence],
    advs: &[Vec<f64>],
    rets: &[Vec<f64>],
    cfg: &PpoConfig,
) -> Vec<f64> {
    let mut grads = vec![0.0; net.params.len()];
    epoch_pass(net, seqs, advs, rets, cfg, Some(&mut grads));
    grads
}

/// Advantage and return targets for a batch, normalized batch-wide.
pub fn advantages_and_returns(
    seqs: &[Sequence],
    cfg: &PpoConfig,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut advs: Vec<Vec<f64>> = seqs
        .iter()
        .map(|s| gae_advantages(&s.rewards, &s.value_old, cfg.gamma, cfg.gae_lambda))
        .collect();
    let rets: Vec<Vec<f64>> = seqs
        .iter()
        .map(|s| discounted_returns(&s.rewards, cfg.gamma))
        .collect();
    let mut flat: Vec<f64> = advs.iter().flatten().copied().collect();
    normalize_advantages(&mut flat);
    let mut k = 0;
    for seq in advs.iter_mut() {
        for a in seq.iter_mut() {
            *a = flat[k];
            k += 1;
        }
    }
    (advs, rets)
}

/// Several epochs of clipped-surrogate descent over one collected batch.
/// A non-finite loss at any epoch rolls the parameters and optimizer back
/// to their pre-update state and reports the incident.
pub fn ppo_update(
    net: &mut PolicyNet,
    opt: &mut Adam,
    seqs: &[Sequence],
    cfg: &PpoConfig,
) -> UpdateStats {
    let mut stats = UpdateStats::default();
    if seqs.iter().all(Sequence::is_empty) {
        return stats;
    }
    let (advs, rets) = advantages_and_returns(seqs, cfg);
    let params_before = net.params.clone();
    let opt_before = opt.clone();

    for epoch in 0..cfg.epochs {
        let mut grads = vec![0.0; net.params.len()];
        let pass = epoch_pass(net, seqs, &advs, &rets, cfg, Some(&mut grads));
        if !pass.loss.is_finite() {
            log::warn!("non-finite loss at epoch {epoch}; update skipped");
            net.params = params_before;
            *opt = opt_before;
            stats.skipped = true;
            return stats;
        }
        let norm = clip_grad_norm(&mut grads, cfg.grad_clip);
        if epoch == 0 {
            stats.policy_loss = pass.policy_loss;
            stats.value_loss = pass.value_loss;
            stats.entropy = pass.entropy;
            stats.grad_norm = norm;
            stats.max_ratio_dev = pass.max_ratio_dev;
        }
        opt.step(&mut net.params, &grads);
    }
    stats
}
