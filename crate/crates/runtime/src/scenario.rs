use std::path::{Path, PathBuf};

use cellfree_core::agents::{translate_intent, AgentConfig, ObjectiveSpec, World};
use cellfree_core::mappo::{Mappo, MappoConfig, NetworkEnvConfig};
use cellfree_core::memory::MemoryConfig;
use cellfree_core::net_model::{
    compute_large_scale_fading, dbm_to_watts, draw_channels, generate_topology, Antennas, NoiseParams, PathLossParams,
    Topology,
};
use cellfree_core::precoder::PrecoderConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{field, Result};

/// Deployment geometry and radio parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub num_orus: usize,
    pub num_users: usize,
    #[serde(default = "default_area")]
    pub area_m: f64,
    #[serde(default = "default_l_max")]
    pub l_max: usize,
    #[serde(default = "default_p_max")]
    pub p_max_dbm: f64,
    #[serde(default)]
    pub antennas: Antennas,
    #[serde(default)]
    pub path_loss: PathLossParams,
    #[serde(default)]
    pub noise: NoiseParams,
    /// Explicit coordinates in metres; drawn from the seed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oru_positions: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_positions: Option<Vec<[f64; 2]>>,
    /// Small-scale fading seed; defaults to `seed ^ 0xabcd`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel_seed: Option<u64>,
}

fn default_area() -> f64 {
    500.0
}

fn default_l_max() -> usize {
    3
}

fn default_p_max() -> f64 {
    30.0
}

/// Plain gradient step sizes of the DRL+GA baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradientSteps {
    /// Per Mbps of shortfall.
    pub delta_mu: f64,
    /// Per Mbps of violation.
    pub delta_lambda: f64,
}

impl Default for GradientSteps {
    fn default() -> Self {
        Self { delta_mu: 0.05, delta_lambda: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSpec {
    pub episodes: usize,
    pub seed: u64,
    /// Minimum rates of the training environment. Empty means the largest
    /// energy-saving requirement per user found in the schedule.
    pub r_min_mbps: Vec<f64>,
    pub mappo: MappoConfig,
    pub env: NetworkEnvConfig,
}

impl Default for TrainingSpec {
    fn default() -> Self {
        Self {
            episodes: 2000,
            seed: 7,
            r_min_mbps: Vec::new(),
            mappo: MappoConfig::default(),
            env: NetworkEnvConfig::default(),
        }
    }
}

/// Experience memory of the proposed mode. The embedder is fitted on random
/// constraint vectors over the scenario's own fading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemorySpec {
    pub store: MemoryConfig,
    pub corpus_size: usize,
    /// Chance that a user carries a constraint in a corpus sample.
    pub constraint_prob: f64,
    pub max_rate_mbps: f64,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for MemorySpec {
    fn default() -> Self {
        Self {
            store: MemoryConfig::default(),
            corpus_size: 200,
            constraint_prob: 0.4,
            max_rate_mbps: 300.0,
            epochs: 300,
            lr: 0.05,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduledIntent {
    /// Loop at whose boundary the intent takes effect.
    pub at_loop: u64,
    pub intent: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub loops: u64,
    pub network: NetworkSpec,
    #[serde(default)]
    pub precoder: PrecoderConfig,
    #[serde(default)]
    pub agents: AgentConfig,
    #[serde(default)]
    pub gradient_ascent: GradientSteps,
    #[serde(default)]
    pub training: TrainingSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memory: Option<MemorySpec>,
    /// Activation policy, relative to the scenario file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub schedule: Vec<ScheduledIntent>,
}

/// Schedule entry with its translation.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduledObjective {
    pub at_loop: u64,
    pub text: String,
    pub spec: ObjectiveSpec,
}

impl Scenario {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let sc: Self = toml::from_str(s)?;
        sc.validate()?;
        Ok(sc)
    }

    /// Reads and validates a scenario; a relative checkpoint path is taken
    /// relative to the file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut sc = Self::from_toml_str(&std::fs::read_to_string(path)?)?;
        if let (Some(ck), Some(dir)) = (sc.checkpoint.as_mut(), path.parent()) {
            if ck.is_relative() {
                *ck = dir.join(&*ck);
            }
        }
        Ok(sc)
    }

    pub fn validate(&self) -> Result<()> {
        let n = &self.network;
        if self.name.trim().is_empty() {
            return Err(field("name", "must not be empty"));
        }
        if self.loops == 0 {
            return Err(field("loops", "must be at least 1"));
        }
        if n.num_orus == 0 || n.num_users == 0 {
            return Err(field("network", "num_orus and num_users must be at least 1"));
        }
        if n.l_max == 0 {
            return Err(field("network.l_max", "must be at least 1"));
        }
        if !(n.area_m > 0.0) {
            return Err(field("network.area_m", "must be positive"));
        }
        if !n.p_max_dbm.is_finite() {
            return Err(field("network.p_max_dbm", "must be finite"));
        }
        n.antennas.validate()?;
        if let Some(p) = &n.oru_positions {
            if p.len() != n.num_orus {
                return Err(field("network.oru_positions", format!("expected {} entries, got {}", n.num_orus, p.len())));
            }
        }
        if let Some(p) = &n.user_positions {
            if p.len() != n.num_users {
                return Err(field("network.user_positions", format!("expected {} entries, got {}", n.num_users, p.len())));
            }
        }
        if n.oru_positions.is_some() != n.user_positions.is_some() {
            return Err(field("network", "give both oru_positions and user_positions or neither"));
        }
        self.agents.validate()?;
        self.training.mappo.validate()?;
        if !self.training.r_min_mbps.is_empty() && self.training.r_min_mbps.len() != n.num_users {
            return Err(field("training.r_min_mbps", format!("expected {} entries", n.num_users)));
        }
        if self.training.r_min_mbps.iter().any(|r| !(*r >= 0.0)) {
            return Err(field("training.r_min_mbps", "entries must be non-negative"));
        }
        let mut prev = 0;
        for (i, s) in self.schedule.iter().enumerate() {
            if s.at_loop <= prev {
                return Err(field(&format!("schedule[{i}].at_loop"), "loop indices must start at 1 and strictly increase"));
            }
            if s.at_loop > self.loops {
                return Err(field(&format!("schedule[{i}].at_loop"), format!("beyond the last loop {}", self.loops)));
            }
            prev = s.at_loop;
            translate_intent(&s.intent, n.num_users)
                .map_err(|e| field(&format!("schedule[{i}].intent"), e.to_string()))?;
        }
        Ok(())
    }

    pub fn objectives(&self) -> Result<Vec<ScheduledObjective>> {
        self.schedule
            .iter()
            .map(|s| {
                Ok(ScheduledObjective {
                    at_loop: s.at_loop,
                    text: s.intent.clone(),
                    spec: translate_intent(&s.intent, self.network.num_users)?,
                })
            })
            .collect()
    }

    /// True when some scheduled intent enters energy saving.
    pub fn needs_policy(&self) -> Result<bool> {
        Ok(self.objectives()?.iter().any(|o| o.spec.energy_saving))
    }

    pub fn training_r_min(&self) -> Result<Vec<f64>> {
        if !self.training.r_min_mbps.is_empty() {
            return Ok(self.training.r_min_mbps.clone());
        }
        let mut r = vec![0.0; self.network.num_users];
        for o in self.objectives()?.iter().filter(|o| o.spec.energy_saving) {
            for (a, &b) in r.iter_mut().zip(&o.spec.r_min_mbps) {
                *a = f64::max(*a, b);
            }
        }
        Ok(r)
    }

    pub fn p_max_w(&self) -> f64 {
        dbm_to_watts(self.network.p_max_dbm)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("scenario serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn topology(&self) -> Result<Topology> {
        let n = &self.network;
        let t = match (&n.oru_positions, &n.user_positions) {
            (Some(o), Some(u)) => Topology::from_positions(o.clone(), u.clone(), n.area_m, n.antennas)?,
            _ => generate_topology(self.seed, n.num_orus, n.num_users, n.area_m, n.antennas)?,
        };
        Ok(t)
    }

    pub fn build_world(&self, policy: Option<Mappo<f64>>) -> Result<World> {
        let n = &self.network;
        let fading = compute_large_scale_fading::<f64>(&self.topology()?, &n.path_loss)?;
        let channels = draw_channels(&fading, n.antennas, &n.noise, n.channel_seed.unwrap_or(self.seed ^ 0xabcd))?;
        Ok(World { fading, channels, l_max: n.l_max, p_max_w: self.p_max_w(), precoder: self.precoder.clone(), policy })
    }
}
