use super::nn::Mlp;
use crate::dynamics::{Action, ActionSpace};
use crate::{Error, Result};
use rand::Rng;

/// Probability floor below which an importance ratio is refused.
pub const MIN_OLD_PROB: f64 = 1e-12;

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Action distribution of `actor` at features `s`.
pub fn policy_forward(actor: &Mlp, s: &[f64]) -> Vec<f64> {
    softmax(&actor.forward(s))
}

/// Discounted rewards-to-go bootstrapped with `bootstrap` after the last
/// step, and advantages against `values`.
pub fn compute_returns_advantages(rewards: &[f64], values: &[f64], bootstrap: f64, gamma: f64) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(rewards.len(), values.len());
    let mut returns = vec![0.0; rewards.len()];
    let mut acc = bootstrap;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        returns[t] = acc;
    }
    let adv = returns.iter().zip(values).map(|(r, v)| r - v).collect();
    (returns, adv)
}

pub fn robust_advantage(advantage: f64, q_worst: f64, kappa_wst: f64) -> f64 {
    advantage + kappa_wst * q_worst
}

/// `min(ratio * adv, clip(ratio) * adv)` and whether the unclipped branch is active.
pub fn clipped_surrogate(ratio: f64, adv: f64, clip: f64) -> (f64, bool) {
    let unclipped = ratio * adv;
    let clipped = ratio.clamp(1.0 - clip, 1.0 + clip) * adv;
    if unclipped <= clipped {
        (unclipped, true)
    } else {
        (clipped, false)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActorSample {
    pub features: Vec<f64>,
    pub action: usize,
    /// Probability of `action` under the behavior parameters.
    pub p_old: f64,
    /// Robust advantage.
    pub advantage: f64,
}

fn check_old_probs(batch: &[ActorSample]) -> Result<()> {
    match batch.iter().position(|s| !(s.p_old >= MIN_OLD_PROB)) {
        Some(index) => Err(Error::DegenerateBatch {
            index,
            prob: batch[index].p_old,
        }),
        None => Ok(()),
    }
}

/// Clipped surrogate objective, to be maximized.
pub fn rcs_loss(actor: &Mlp, batch: &[ActorSample], clip: f64) -> Result<f64> {
    check_old_probs(batch)?;
    if batch.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = batch
        .iter()
        .map(|s| {
            let p = policy_forward(actor, &s.features);
            clipped_surrogate(p[s.action] / s.p_old, s.advantage, clip).0
        })
        .sum();
    Ok(total / batch.len() as f64)
}

/// As [`rcs_loss`], accumulating the objective's gradient into `grad`.
pub fn rcs_loss_grad(actor: &Mlp, batch: &[ActorSample], clip: f64, grad: &mut [f64]) -> Result<f64> {
    check_old_probs(batch)?;
    if batch.is_empty() {
        return Ok(0.0);
    }
    let n = batch.len() as f64;
    let mut total = 0.0;
    for s in batch {
        let cache = actor.forward_cached(&s.features);
        let p = softmax(cache.output());
        let ratio = p[s.action] / s.p_old;
        let (value, active) = clipped_surrogate(ratio, s.advantage, clip);
        total += value;
        if active && s.advantage != 0.0 {
            let scale = s.advantage * ratio / n;
            let g: Vec<f64> = p
                .iter()
                .enumerate()
                .map(|(k, pk)| scale * (f64::from(u8::from(k == s.action)) - pk))
                .collect();
            actor.backward(&cache, &g, grad);
        }
    }
    Ok(total / n)
}

pub fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| a * (a.ln() - b.ln()))
        .sum()
}

/// `V(s) - min_a Q(s, a)`, floored at zero.
pub fn importance_weight(value: f64, q_worst: &[f64]) -> f64 {
    let min_q = q_worst.iter().copied().fold(f64::INFINITY, f64::min);
    (value - min_q).max(0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegSample {
    pub features: Vec<f64>,
    pub weight: f64,
    /// Perturbed copies of `features` the inner maximum ranges over.
    pub candidates: Vec<Vec<f64>>,
}

fn worst_candidate(actor: &Mlp, s: &RegSample) -> Option<(usize, f64)> {
    let p = policy_forward(actor, &s.features);
    s.candidates
        .iter()
        .map(|c| kl(&p, &policy_forward(actor, c)))
        .enumerate()
        .fold(None, |best, (i, d)| match best {
            Some((_, b)) if b >= d => best,
            _ => Some((i, d)),
        })
}

/// Importance-weighted worst-case policy divergence, to be minimized.
pub fn reg_loss(actor: &Mlp, batch: &[RegSample]) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    let total: f64 = batch
        .iter()
        .filter(|s| s.weight > 0.0)
        .filter_map(|s| worst_candidate(actor, s).map(|(_, d)| s.weight * d))
        .sum();
    total / batch.len() as f64
}

/// As [`reg_loss`], accumulating its gradient into `grad`.
pub fn reg_loss_grad(actor: &Mlp, batch: &[RegSample], grad: &mut [f64]) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    let n = batch.len() as f64;
    let mut total = 0.0;
    for s in batch.iter().filter(|s| s.weight > 0.0) {
        let Some((k, d)) = worst_candidate(actor, s) else { continue };
        total += s.weight * d;
        let c0 = actor.forward_cached(&s.features);
        let c1 = actor.forward_cached(&s.candidates[k]);
        let p = softmax(c0.output());
        let q = softmax(c1.output());
        let w = s.weight / n;
        let gp: Vec<f64> = p
            .iter()
            .zip(&q)
            .map(|(pj, qj)| if *pj > 0.0 { w * pj * (pj.ln() - qj.ln() - d) } else { 0.0 })
            .collect();
        let gq: Vec<f64> = p.iter().zip(&q).map(|(pj, qj)| w * (qj - pj)).collect();
        actor.backward(&c0, &gp, grad);
        actor.backward(&c1, &gq, grad);
    }
    total / n
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueSample {
    pub state: Vec<f64>,
    pub target: f64,
}

pub fn value_loss(critic: &Mlp, batch: &[ValueSample]) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    let total: f64 = batch
        .iter()
        .map(|s| (critic.forward(&s.state)[0] - s.target).powi(2))
        .sum();
    total / batch.len() as f64
}

pub fn value_loss_grad(critic: &Mlp, batch: &[ValueSample], grad: &mut [f64]) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    let n = batch.len() as f64;
    let mut total = 0.0;
    for s in batch {
        let cache = critic.forward_cached(&s.state);
        let r = cache.output()[0] - s.target;
        total += r * r;
        critic.backward(&cache, &[2.0 * r / n], grad);
    }
    total / n
}

#[derive(Debug, Clone, PartialEq)]
pub struct QSample {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    /// `None` for terminal transitions.
    pub next: Option<Vec<f64>>,
}

/// `r + gamma * min_a' Q_target(s', a')`, or `r` at a terminal transition.
pub fn worst_q_target(target: &Mlp, s: &QSample, gamma: f64) -> f64 {
    match &s.next {
        None => s.reward,
        Some(next) => {
            let min_q = target.forward(next).into_iter().fold(f64::INFINITY, f64::min);
            s.reward + gamma * min_q
        }
    }
}

/// Squared error against targets `y`, one per sample.
pub fn worst_q_loss(net: &Mlp, batch: &[QSample], targets: &[f64]) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    let total: f64 = batch
        .iter()
        .zip(targets)
        .map(|(s, y)| (net.forward(&s.state)[s.action] - y).powi(2))
        .sum();
    total / batch.len() as f64
}

pub fn worst_q_loss_grad(net: &Mlp, batch: &[QSample], targets: &[f64], grad: &mut [f64]) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    let n = batch.len() as f64;
    let mut total = 0.0;
    for (s, y) in batch.iter().zip(targets) {
        let cache = net.forward_cached(&s.state);
        let r = cache.output()[s.action] - y;
        total += r * r;
        let mut g = vec![0.0; net.output_dim()];
        g[s.action] = 2.0 * r / n;
        net.backward(&cache, &g, grad);
    }
    total / n
}

fn restricted(dist: &[f64], safe: &[Action], space: &ActionSpace) -> Result<Vec<(Action, f64)>> {
    if safe.is_empty() {
        return Err(Error::EmptySafeSet);
    }
    Ok(safe
        .iter()
        .map(|a| (*a, space.index(*a).map_or(0.0, |i| dist[i])))
        .collect())
}

/// Epsilon-greedy draw from `dist` restricted to `safe`.
pub fn select_action<R: Rng + ?Sized>(
    dist: &[f64],
    safe: &[Action],
    space: &ActionSpace,
    eps_explore: f64,
    rng: &mut R,
) -> Result<Action> {
    let options = restricted(dist, safe, space)?;
    if options.len() == 1 {
        return Ok(options[0].0);
    }
    let mass: f64 = options.iter().map(|(_, p)| p).sum();
    if rng.random_bool(eps_explore.clamp(0.0, 1.0)) || !(mass > 0.0) {
        return Ok(options[rng.random_range(0..options.len())].0);
    }
    let mut x = rng.random_range(0.0..mass);
    for (a, p) in &options {
        if x < *p {
            return Ok(*a);
        }
        x -= p;
    }
    Ok(options[options.len() - 1].0)
}

/// Most probable action of `safe`; ties go to the earliest.
pub fn greedy_action(dist: &[f64], safe: &[Action], space: &ActionSpace) -> Result<Action> {
    let options = restricted(dist, safe, space)?;
    Ok(options
        .iter()
        .fold(options[0], |best, o| if o.1 > best.1 { *o } else { best })
        .0)
}
