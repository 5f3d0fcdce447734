//! Multi-agent PPO for O-RU activation: one on/off policy per O-RU and a
//! centralized critic over the joint observation.

mod checkpoint;
mod env;
mod nn;

pub use env::{EnvStep, Environment, NetworkEnv, NetworkEnvConfig};
pub use nn::{Adam, AdamConfig, Mlp, Tape};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, numeric, Result};
use crate::net_model::LargeScaleFading;
use crate::scalar::Scalar;

/// Action index of the "off" logit; index 1 is "on".
pub const OFF: usize = 0;
pub const ON: usize = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MappoConfig {
    pub gamma: f64,
    pub clip_eps: f64,
    /// Entropy bonus weight.
    pub c1: f64,
    /// Value loss weight.
    pub c2: f64,
    pub lr_policy: f64,
    pub lr_critic: f64,
    pub epochs: usize,
    /// Episode length `T`.
    pub horizon: usize,
    pub policy_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub standardize_advantages: bool,
    pub adv_eps: f64,
    pub adam: AdamConfig,
}

impl Default for MappoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            clip_eps: 0.2,
            c1: 0.01,
            c2: 0.5,
            lr_policy: 1e-4,
            lr_critic: 1e-4,
            epochs: 4,
            horizon: 10,
            policy_hidden: vec![64, 64],
            critic_hidden: vec![128, 128],
            standardize_advantages: true,
            adv_eps: 1e-8,
            adam: AdamConfig::default(),
        }
    }
}

impl MappoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(invalid("gamma must lie in (0, 1]"));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(invalid("clip range must lie in (0, 1)"));
        }
        if self.lr_policy < 0.0 || self.lr_critic < 0.0 || self.c1 < 0.0 || self.c2 < 0.0 {
            return Err(invalid("learning rates and loss weights must be non-negative"));
        }
        if self.horizon == 0 {
            return Err(invalid("episode length must be positive"));
        }
        Ok(())
    }
}

/// Per-feature affine map applied to an agent observation before the
/// networks see it.
#[derive(Debug, Clone, PartialEq)]
pub struct InputNorm<T: Scalar> {
    pub shift: Vec<T>,
    pub scale: Vec<T>,
}

impl<T: Scalar> InputNorm<T> {
    pub fn identity(dim: usize) -> Self {
        Self { shift: vec![T::zero(); dim], scale: vec![T::one(); dim] }
    }

    /// Standardizes each user's `ln β` feature across O-RUs.
    pub fn from_fading(fading: &LargeScaleFading<T>) -> Self {
        let (k_n, l_n) = (fading.num_users(), fading.num_orus());
        let mut n = Self::identity(2 * k_n + 1);
        for k in 0..k_n {
            let logs: Vec<f64> = (0..l_n).map(|l| fading.get(k, l).to64().ln()).collect();
            let mean = logs.iter().sum::<f64>() / l_n as f64;
            let var = logs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / l_n as f64;
            let sd = var.sqrt();
            n.shift[2 * k] = T::of(mean);
            n.scale[2 * k] = T::of(if sd > 1e-12 { 1.0 / sd } else { 1.0 });
        }
        n
    }

    pub fn apply(&self, x: &[T]) -> Vec<T> {
        x.iter()
            .zip(self.shift.iter().zip(&self.scale))
            .map(|(&v, (&s, &c))| (v - s) * c)
            .collect()
    }
}

/// Local observation of every agent:
/// `[ln β_{1,l}, tanh(λ_1 υ_1), …, ln β_{K,l}, tanh(λ_K υ_K), z_l_prev]`.
/// `upsilon` is the violation already normalized by the minimum rate.
pub fn build_observations<T: Scalar>(
    fading: &LargeScaleFading<T>,
    upsilon: &[T],
    lambda: &[T],
    z_prev: &[bool],
) -> Result<Vec<Vec<T>>> {
    let (k_n, l_n) = (fading.num_users(), fading.num_orus());
    if upsilon.len() != k_n || lambda.len() != k_n || z_prev.len() != l_n {
        return Err(invalid("observation inputs do not match the fading dimensions"));
    }
    if upsilon.iter().any(|&u| !(u >= T::zero())) {
        return Err(invalid("violations must be non-negative"));
    }
    let pressure: Vec<T> = lambda.iter().zip(upsilon).map(|(&a, &u)| (a * u).tanh()).collect();
    (0..l_n)
        .map(|l| {
            let mut o = Vec::with_capacity(2 * k_n + 1);
            for k in 0..k_n {
                let b = fading.get(k, l);
                if !(b > T::zero()) {
                    return Err(invalid(format!("β[{k}][{l}] must be positive to take its log")));
                }
                o.push(b.ln());
                o.push(pressure[k]);
            }
            o.push(if z_prev[l] { T::one() } else { T::zero() });
            Ok(o)
        })
        .collect()
}

/// Normalized violation `max(0, R_min − r) / R_min`, zero where no minimum is set.
pub fn normalized_violations<T: Scalar>(rates_mbps: &[T], r_min_mbps: &[T]) -> Vec<T> {
    rates_mbps
        .iter()
        .zip(r_min_mbps)
        .map(|(&r, &m)| {
            if m > T::zero() {
                ((m - r) / m).max(T::zero()).min(T::one())
            } else {
                T::zero()
            }
        })
        .collect()
}

/// `R = −(1/L)Σ z_l − (1/K)Σ λ_k υ_k − (1/L)Σ |z_l − z_l_prev|`.
pub fn compute_reward<T: Scalar>(z: &[bool], z_prev: &[bool], upsilon: &[T], lambda: &[T]) -> T {
    let l_n = T::of(z.len() as f64);
    let k_n = T::of(upsilon.len().max(1) as f64);
    let active = T::of(z.iter().filter(|&&a| a).count() as f64);
    let switches = T::of(z.iter().zip(z_prev).filter(|(a, b)| a != b).count() as f64);
    let penalty = upsilon.iter().zip(lambda).fold(T::zero(), |acc, (&u, &a)| acc + a * u);
    -(active / l_n) - penalty / k_n - switches / l_n
}

/// Finite-horizon advantages `Â_t = Σ_i γⁱ δ_{t+i}` with
/// `δ_t = R_t + γV(o_{t+1}) − V(o_t)`, and returns `Ĝ_t = Σ_i γⁱ R_{t+i}`.
/// `values` holds `T + 1` entries, the last being the terminal observation.
pub fn compute_advantages<T: Scalar>(rewards: &[T], values: &[T], gamma: T) -> Result<(Vec<T>, Vec<T>)> {
    let n = rewards.len();
    if values.len() != n + 1 {
        return Err(invalid(format!("need {} values for {n} rewards", n + 1)));
    }
    let mut adv = vec![T::zero(); n];
    let mut ret = vec![T::zero(); n];
    let (mut a, mut g) = (T::zero(), T::zero());
    for t in (0..n).rev() {
        let delta = rewards[t] + gamma * values[t + 1] - values[t];
        a = delta + gamma * a;
        g = rewards[t] + gamma * g;
        adv[t] = a;
        ret[t] = g;
    }
    Ok((adv, ret))
}

/// Zero mean, unit variance.
pub fn standardize<T: Scalar>(x: &[T], eps: f64) -> Vec<T> {
    if x.is_empty() {
        return Vec::new();
    }
    let n = T::of(x.len() as f64);
    let mean = x.iter().fold(T::zero(), |a, &v| a + v) / n;
    let var = x.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) / n;
    let sd = var.sqrt() + T::of(eps);
    x.iter().map(|&v| (v - mean) / sd).collect()
}

/// Natural-log softmax of a logit vector.
pub fn log_softmax<T: Scalar>(z: &[T]) -> Vec<T> {
    let m = z.iter().fold(z[0], |a, &b| a.max(b));
    let s = z.iter().fold(T::zero(), |a, &v| a + (v - m).exp());
    let lse = m + s.ln();
    z.iter().map(|&v| v - lse).collect()
}

/// `true` (on) only when the on-logit strictly exceeds the off-logit.
pub fn greedy_action<T: Scalar>(logits: &[T]) -> bool {
    logits[ON] > logits[OFF]
}

#[derive(Debug, Clone)]
pub struct Trajectory<T: Scalar> {
    /// `T + 1` joint observations, per agent.
    pub observations: Vec<Vec<Vec<T>>>,
    pub actions: Vec<Vec<bool>>,
    pub rewards: Vec<T>,
    /// Log-probability of the taken action under the collecting policy.
    pub old_log_probs: Vec<Vec<T>>,
}

impl<T: Scalar> Trajectory<T> {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Training batch built from one trajectory.
#[derive(Debug, Clone)]
pub struct Batch<T: Scalar> {
    pub observations: Vec<Vec<Vec<T>>>,
    pub actions: Vec<Vec<bool>>,
    pub old_log_probs: Vec<Vec<T>>,
    pub advantages: Vec<T>,
    pub returns: Vec<T>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PpoLosses<T> {
    pub clip: T,
    pub entropy: T,
    pub value: T,
    /// `−L_CLIP − c₁ L_ENT + c₂ L_V`.
    pub total: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub iteration: u64,
    pub mean_reward: f64,
    pub active_fraction: f64,
    pub violation_sum: f64,
    /// Set when a non-finite loss stopped the update.
    pub aborted: bool,
}

/// Policies, critic and optimizer state.
#[derive(Debug, Clone)]
pub struct Mappo<T: Scalar> {
    num_users: usize,
    num_agents: usize,
    pub cfg: MappoConfig,
    pub norm: InputNorm<T>,
    pub policies: Vec<Mlp<T>>,
    pub critic: Mlp<T>,
    pub policy_opt: Vec<Adam<T>>,
    pub critic_opt: Adam<T>,
    pub iterations: u64,
}

impl<T: Scalar> Mappo<T> {
    pub fn new<R: Rng + ?Sized>(
        num_users: usize,
        num_agents: usize,
        cfg: MappoConfig,
        norm: InputNorm<T>,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        if num_users == 0 || num_agents == 0 {
            return Err(invalid("need at least one user and one agent"));
        }
        let obs_dim = 2 * num_users + 1;
        if norm.shift.len() != obs_dim || norm.scale.len() != obs_dim {
            return Err(invalid("input normalization width must be 2K+1"));
        }
        let mut p_sizes = vec![obs_dim];
        p_sizes.extend(&cfg.policy_hidden);
        p_sizes.push(2);
        let mut c_sizes = vec![obs_dim * num_agents];
        c_sizes.extend(&cfg.critic_hidden);
        c_sizes.push(1);
        let policies = (0..num_agents)
            .map(|_| Mlp::new(&p_sizes, 0.01, rng))
            .collect::<Result<Vec<_>>>()?;
        let critic = Mlp::new(&c_sizes, 1.0, rng)?;
        let policy_opt = policies.iter().map(|p| Adam::new(p.num_params())).collect();
        let critic_opt = Adam::new(critic.num_params());
        Ok(Self { num_users, num_agents, cfg, norm, policies, critic, policy_opt, critic_opt, iterations: 0 })
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_agents(&self) -> usize {
        self.num_agents
    }

    pub fn obs_dim(&self) -> usize {
        2 * self.num_users + 1
    }

    pub fn logits(&self, agent: usize, obs: &[T]) -> Vec<T> {
        self.policies[agent].forward(&self.norm.apply(obs))
    }

    pub fn value(&self, joint: &[Vec<T>]) -> T {
        self.critic.forward(&self.critic_input(joint))[0]
    }

    fn critic_input(&self, joint: &[Vec<T>]) -> Vec<T> {
        joint.iter().flat_map(|o| self.norm.apply(o)).collect()
    }

    fn check_joint(&self, joint: &[Vec<T>]) -> Result<()> {
        if joint.len() != self.num_agents || joint.iter().any(|o| o.len() != self.obs_dim()) {
            return Err(invalid(format!(
                "expected {} observations of width {}",
                self.num_agents,
                self.obs_dim()
            )));
        }
        Ok(())
    }

    /// Argmax activation per agent, ties toward off.
    pub fn infer_activations(&self, joint: &[Vec<T>]) -> Result<Vec<bool>> {
        self.check_joint(joint)?;
        Ok(joint.iter().enumerate().map(|(l, o)| greedy_action(&self.logits(l, o))).collect())
    }

    /// Samples one joint action, returning it with per-agent log-probabilities.
    pub fn sample_actions<R: Rng + ?Sized>(&self, joint: &[Vec<T>], rng: &mut R) -> Result<(Vec<bool>, Vec<T>)> {
        self.check_joint(joint)?;
        let mut acts = Vec::with_capacity(self.num_agents);
        let mut logps = Vec::with_capacity(self.num_agents);
        for (l, o) in joint.iter().enumerate() {
            let lp = log_softmax(&self.logits(l, o));
            let p_on = lp[ON].exp().to64();
            let on = rng.random::<f64>() < p_on;
            acts.push(on);
            logps.push(lp[if on { ON } else { OFF }]);
        }
        Ok((acts, logps))
    }

    /// Rolls out one episode of `cfg.horizon` steps.
    pub fn collect<E, R>(&self, env: &mut E, rng: &mut R) -> Result<Trajectory<T>>
    where
        E: Environment<T> + ?Sized,
        R: Rng,
    {
        let mut obs = env.reset(rng)?;
        let mut traj = Trajectory {
            observations: vec![obs.clone()],
            actions: Vec::new(),
            rewards: Vec::new(),
            old_log_probs: Vec::new(),
        };
        for _ in 0..self.cfg.horizon {
            let (z, lp) = self.sample_actions(&obs, rng)?;
            let step = env.step(&z)?;
            if !step.reward.is_finite() {
                return Err(numeric("environment returned a non-finite reward"));
            }
            obs = step.observations;
            traj.observations.push(obs.clone());
            traj.actions.push(z);
            traj.rewards.push(step.reward);
            traj.old_log_probs.push(lp);
        }
        Ok(traj)
    }

    /// Advantages and returns under the current critic, before standardization.
    pub fn advantages(&self, traj: &Trajectory<T>) -> Result<(Vec<T>, Vec<T>)> {
        let values: Vec<T> = traj.observations.iter().map(|j| self.value(j)).collect();
        compute_advantages(&traj.rewards, &values, T::of(self.cfg.gamma))
    }

    pub fn batch(&self, traj: &Trajectory<T>) -> Result<Batch<T>> {
        let (adv, ret) = self.advantages(traj)?;
        let advantages = if self.cfg.standardize_advantages { standardize(&adv, self.cfg.adv_eps) } else { adv };
        let n = traj.len();
        Ok(Batch {
            observations: traj.observations[..n].to_vec(),
            actions: traj.actions.clone(),
            old_log_probs: traj.old_log_probs.clone(),
            advantages,
            returns: ret,
        })
    }

    /// Loss terms of agent `agent` on `batch`, without gradients.
    pub fn ppo_losses(&self, agent: usize, batch: &Batch<T>) -> Result<PpoLosses<T>> {
        let (clip, entropy, _) = self.policy_terms(agent, batch, false)?;
        let (value, _) = self.value_terms(batch, false);
        Ok(self.combine(clip, entropy, value))
    }

    fn combine(&self, clip: T, entropy: T, value: T) -> PpoLosses<T> {
        let total = -clip - T::of(self.cfg.c1) * entropy + T::of(self.cfg.c2) * value;
        PpoLosses { clip, entropy, value, total }
    }

    /// Gradient of `L_l` with respect to agent `agent`'s policy parameters.
    pub fn policy_gradient(&self, agent: usize, batch: &Batch<T>) -> Result<(PpoLosses<T>, Vec<T>)> {
        let (clip, entropy, grad) = self.policy_terms(agent, batch, true)?;
        let (value, _) = self.value_terms(batch, false);
        Ok((self.combine(clip, entropy, value), grad.unwrap()))
    }

    /// Gradient of `c₂ L_V` with respect to the critic parameters.
    pub fn critic_gradient(&self, batch: &Batch<T>) -> (T, Vec<T>) {
        let (value, grad) = self.value_terms(batch, true);
        (value, grad.unwrap())
    }

    fn policy_terms(&self, agent: usize, batch: &Batch<T>, with_grad: bool) -> Result<(T, T, Option<Vec<T>>)> {
        let net = &self.policies[agent];
        let n = batch.actions.len();
        if n == 0 {
            return Err(invalid("empty batch"));
        }
        let inv_n = T::one() / T::of(n as f64);
        let eps = T::of(self.cfg.clip_eps);
        let c1 = T::of(self.cfg.c1);
        let mut grad = with_grad.then(|| vec![T::zero(); net.num_params()]);
        let (mut clip_sum, mut ent_sum) = (T::zero(), T::zero());
        for t in 0..n {
            let tape = net.forward_tape(&self.norm.apply(&batch.observations[t][agent]));
            let lp = log_softmax(tape.output());
            let p: Vec<T> = lp.iter().map(|v| v.exp()).collect();
            let a = if batch.actions[t][agent] { ON } else { OFF };
            let old = batch.old_log_probs[t][agent];
            if !old.is_finite() {
                return Err(numeric(format!("old log-probability at step {t} of agent {agent} is not finite")));
            }
            let rho = (lp[a] - old).exp();
            let adv = batch.advantages[t];
            let unclipped = rho * adv;
            let clipped = rho.max(T::one() - eps).min(T::one() + eps) * adv;
            let use_unclipped = unclipped <= clipped;
            clip_sum += if use_unclipped { unclipped } else { clipped };
            let h = -(p[0] * lp[0] + p[1] * lp[1]);
            ent_sum += h;
            if let Some(g) = grad.as_mut() {
                let d: Vec<T> = (0..2)
                    .map(|j| {
                        let ind = if j == a { T::one() } else { T::zero() };
                        let d_clip = if use_unclipped { adv * rho * (ind - p[j]) } else { T::zero() };
                        let d_ent = -p[j] * (lp[j] + h);
                        -(d_clip + c1 * d_ent) * inv_n
                    })
                    .collect();
                net.backward(&tape, &d, g);
            }
        }
        Ok((clip_sum * inv_n, ent_sum * inv_n, grad))
    }

    fn value_terms(&self, batch: &Batch<T>, with_grad: bool) -> (T, Option<Vec<T>>) {
        let n = batch.returns.len();
        let inv_n = T::one() / T::of(n.max(1) as f64);
        let c2 = T::of(self.cfg.c2);
        let mut grad = with_grad.then(|| vec![T::zero(); self.critic.num_params()]);
        let mut sum = T::zero();
        for t in 0..n {
            let tape = self.critic.forward_tape(&self.critic_input(&batch.observations[t]));
            let e = tape.output()[0] - batch.returns[t];
            sum += e * e;
            if let Some(g) = grad.as_mut() {
                self.critic.backward(&tape, &[T::of(2.0) * e * inv_n * c2], g);
            }
        }
        (sum * inv_n, grad)
    }

    /// Applies `cfg.epochs` full-batch updates to every policy and the critic.
    /// Returns `false`, leaving parameters untouched, if any loss turns
    /// non-finite.
    pub fn update(&mut self, batch: &Batch<T>) -> Result<bool> {
        let snapshot = (self.policies.clone(), self.critic.clone(), self.policy_opt.clone(), self.critic_opt.clone());
        for _ in 0..self.cfg.epochs {
            for l in 0..self.num_agents {
                let (losses, g) = self.policy_gradient(l, batch)?;
                if !losses.total.is_finite() || g.iter().any(|v| !v.is_finite()) {
                    (self.policies, self.critic, self.policy_opt, self.critic_opt) = snapshot;
                    return Ok(false);
                }
                let lr = self.cfg.lr_policy;
                let adam = self.cfg.adam;
                self.policy_opt[l].step(self.policies[l].params_mut(), &g, lr, &adam);
            }
            let (v, g) = self.critic_gradient(batch);
            if !v.is_finite() || g.iter().any(|x| !x.is_finite()) {
                (self.policies, self.critic, self.policy_opt, self.critic_opt) = snapshot;
                return Ok(false);
            }
            let (lr, adam) = (self.cfg.lr_critic, self.cfg.adam);
            self.critic_opt.step(self.critic.params_mut(), &g, lr, &adam);
        }
        Ok(true)
    }

    /// One collect-estimate-update iteration.
    pub fn train_iteration<E, R>(&mut self, env: &mut E, rng: &mut R) -> Result<EpisodeStats>
    where
        E: Environment<T> + ?Sized,
        R: Rng,
    {
        let traj = self.collect(env, rng)?;
        let batch = self.batch(&traj)?;
        let applied = self.update(&batch)?;
        self.iterations += 1;
        let n = traj.len() as f64;
        let active: usize = traj.actions.iter().map(|z| z.iter().filter(|&&a| a).count()).sum();
        let stats = EpisodeStats {
            iteration: self.iterations,
            mean_reward: traj.rewards.iter().map(|r| r.to64()).sum::<f64>() / n,
            active_fraction: active as f64 / (n * self.num_agents as f64),
            violation_sum: env.last_violation_sum(),
            aborted: !applied,
        };
        tracing::info!(
            target: "mappo",
            iteration = stats.iteration,
            mean_reward = stats.mean_reward,
            active_fraction = stats.active_fraction,
            violation_sum = stats.violation_sum,
            aborted = stats.aborted,
            "training iteration"
        );
        Ok(stats)
    }
}
