use std::collections::HashMap;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{build_observations, compute_reward, normalized_violations};
use crate::error::{invalid, Result};
use crate::net_model::{associate_users, ChannelSet, LargeScaleFading};
use crate::precoder::{solve, PrecoderConfig, UtilitySpec};
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct EnvStep<T> {
    pub reward: T,
    pub observations: Vec<Vec<T>>,
}

/// Episodic environment stepped by a joint on/off action.
pub trait Environment<T: Scalar> {
    fn num_agents(&self) -> usize;
    fn reset(&mut self, rng: &mut dyn RngCore) -> Result<Vec<Vec<T>>>;
    fn step(&mut self, z: &[bool]) -> Result<EnvStep<T>>;
    /// Sum of rate shortfalls (Mbps) after the latest step.
    fn last_violation_sum(&self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkEnvConfig {
    pub l_max: usize,
    /// Penalty coefficients are drawn log-uniformly from this range at
    /// every reset when `randomize_lambda` is set.
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub randomize_lambda: bool,
    /// Start each episode from a random activation instead of all-on.
    pub random_start: bool,
    pub precoder: PrecoderConfig,
}

impl Default for NetworkEnvConfig {
    fn default() -> Self {
        Self {
            l_max: 3,
            lambda_min: 1.0,
            lambda_max: 100.0,
            randomize_lambda: true,
            random_start: true,
            precoder: PrecoderConfig { max_iters: 100, ..PrecoderConfig::default() },
        }
    }
}

/// Activation environment where each step re-solves the precoder under the
/// chosen O-RU set. Rates are cached per activation pattern.
#[derive(Debug, Clone)]
pub struct NetworkEnv<T: Scalar> {
    fading: LargeScaleFading<T>,
    channels: ChannelSet<T>,
    spec: UtilitySpec<T>,
    cfg: NetworkEnvConfig,
    lambda: Vec<T>,
    z_prev: Vec<bool>,
    last_violation: f64,
    cache: HashMap<Vec<bool>, Vec<T>>,
}

impl<T: Scalar> NetworkEnv<T> {
    pub fn new(
        fading: LargeScaleFading<T>,
        channels: ChannelSet<T>,
        spec: UtilitySpec<T>,
        cfg: NetworkEnvConfig,
    ) -> Result<Self> {
        spec.validate()?;
        if fading.num_users() != channels.num_users() || fading.num_orus() != channels.num_orus() {
            return Err(invalid("fading and channel dimensions differ"));
        }
        if spec.num_users() != channels.num_users() {
            return Err(invalid("utility spec user count differs from the channel set"));
        }
        if !(cfg.lambda_min > 0.0 && cfg.lambda_max >= cfg.lambda_min) {
            return Err(invalid("penalty range must satisfy 0 < lambda_min ≤ lambda_max"));
        }
        let (k_n, l_n) = (channels.num_users(), channels.num_orus());
        Ok(Self {
            lambda: vec![T::of(cfg.lambda_min); k_n],
            z_prev: vec![true; l_n],
            fading,
            channels,
            spec,
            cfg,
            last_violation: 0.0,
            cache: HashMap::new(),
        })
    }

    pub fn fading(&self) -> &LargeScaleFading<T> {
        &self.fading
    }

    pub fn spec(&self) -> &UtilitySpec<T> {
        &self.spec
    }

    pub fn lambda(&self) -> &[T] {
        &self.lambda
    }

    pub fn set_lambda(&mut self, lambda: Vec<T>) -> Result<()> {
        if lambda.len() != self.lambda.len() || lambda.iter().any(|&x| !(x >= T::zero())) {
            return Err(invalid("one non-negative penalty per user"));
        }
        self.lambda = lambda;
        Ok(())
    }

    /// Per-user rates in Mbps with O-RUs `z` active.
    pub fn rates_for(&mut self, z: &[bool]) -> Result<Vec<T>> {
        if z.len() != self.channels.num_orus() {
            return Err(invalid("activation length differs from the O-RU count"));
        }
        if let Some(r) = self.cache.get(z) {
            return Ok(r.clone());
        }
        let assoc = associate_users(&self.fading, z, self.cfg.l_max)?;
        let out = solve(&self.channels, &assoc, &self.spec, z, None, &self.cfg.precoder)?;
        self.cache.insert(z.to_vec(), out.state.rates_mbps.clone());
        Ok(out.state.rates_mbps)
    }

    fn observe(&mut self, z: &[bool]) -> Result<(Vec<T>, Vec<Vec<T>>)> {
        let rates = self.rates_for(z)?;
        let ups = normalized_violations(&rates, &self.spec.r_min_mbps);
        self.last_violation = rates
            .iter()
            .zip(&self.spec.r_min_mbps)
            .map(|(&r, &m)| (m - r).max(T::zero()).to64())
            .sum();
        let obs = build_observations(&self.fading, &ups, &self.lambda, z)?;
        Ok((ups, obs))
    }
}

impl<T: Scalar> Environment<T> for NetworkEnv<T> {
    fn num_agents(&self) -> usize {
        self.channels.num_orus()
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Result<Vec<Vec<T>>> {
        if self.cfg.randomize_lambda {
            let (lo, hi) = (self.cfg.lambda_min.ln(), self.cfg.lambda_max.ln());
            for x in self.lambda.iter_mut() {
                *x = T::of(rng.random_range(lo..=hi).exp());
            }
        }
        let l_n = self.num_agents();
        self.z_prev = if self.cfg.random_start {
            (0..l_n).map(|_| rng.random::<bool>()).collect()
        } else {
            vec![true; l_n]
        };
        let z = self.z_prev.clone();
        Ok(self.observe(&z)?.1)
    }

    fn step(&mut self, z: &[bool]) -> Result<EnvStep<T>> {
        let (ups, observations) = self.observe(z)?;
        let reward = compute_reward(z, &self.z_prev, &ups, &self.lambda);
        self.z_prev = z.to_vec();
        Ok(EnvStep { reward, observations })
    }

    fn last_violation_sum(&self) -> f64 {
        self.last_violation
    }
}
