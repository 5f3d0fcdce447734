use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::bus::{AgentId, Bus, Interface, Message};
use super::intent::ObjectiveSpec;
use super::reasoner::{GrammarBackend, IntentBackend, Translation};
use super::steps::{
    monitoring_step, oru_management_step, user_weighting_step, AgentConfig, HistoryEntry, HistoryWindow,
    MonitorAction, MonitorDecision, OruContext, PenaltyState, WeightingState,
};
use crate::error::{invalid, Result};
use crate::mappo::Mappo;
use crate::memory::{Embedder, Experience, ExperienceMeta, MemoryStore};
use crate::net_model::{associate_users, ChannelSet, LargeScaleFading};
use crate::precoder::{priority_weights, solve, solve_fixed_multipliers, PrecoderConfig, PrecodingState, UtilitySpec};

/// Radio deployment, solver settings and the trained activation policy.
#[derive(Debug, Clone)]
pub struct World {
    pub fading: LargeScaleFading<f64>,
    pub channels: ChannelSet<f64>,
    pub l_max: usize,
    pub p_max_w: f64,
    pub precoder: PrecoderConfig,
    pub policy: Option<Mappo<f64>>,
}

impl World {
    pub fn num_users(&self) -> usize {
        self.channels.num_users()
    }

    pub fn num_orus(&self) -> usize {
        self.channels.num_orus()
    }
}

/// Embedder plus the experience store it keys.
#[derive(Debug, Clone)]
pub struct MemoryContext {
    pub embedder: Embedder,
    pub store: MemoryStore,
}

/// How the near-RT loop updates its coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LoopMode {
    /// Agent feedback: monitoring boosts weights and escalates penalties.
    Coordinated,
    /// No monitoring; μ and λ both take plain gradient steps every loop and
    /// the activation policy is queried every loop.
    GradientAscent { delta_mu: f64, delta_lambda: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryHit {
    pub index: usize,
    pub similarity: f64,
}

/// State after one near-RT loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopSnapshot {
    /// 0 is the state before any loop ran.
    pub loop_index: u64,
    pub intent_kind: String,
    pub energy_saving: bool,
    pub rates_mbps: Vec<f64>,
    pub r_min_mbps: Vec<f64>,
    pub upsilon_mbps: Vec<f64>,
    pub alpha: Vec<f64>,
    pub mu: Vec<f64>,
    pub lambda: Vec<f64>,
    pub active: Vec<bool>,
    pub active_fraction: f64,
    pub decision: MonitorDecision,
    pub memory_hit: Option<MemoryHit>,
    pub converged: bool,
    pub precoder_iterations: usize,
    pub messages: Vec<Message>,
}

/// Result of driving one intent to convergence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub converged: bool,
    pub loops_run: usize,
    /// Loops until the final run of satisfied loops began, counting that loop.
    pub loops_to_converge: Option<usize>,
    /// Users (numbered from 1) still violated when the loop cap was hit.
    pub violated_users: Vec<usize>,
    pub memory_hit: Option<MemoryHit>,
    pub trace: Vec<LoopSnapshot>,
}

#[derive(Debug, Clone, Default)]
struct Episode {
    start_loop: u64,
    fresh: bool,
    retrieved: Option<Experience>,
    hit: Option<MemoryHit>,
    ok_streak: usize,
    first_ok: Option<u64>,
    converged: bool,
    loops_to_converge: Option<usize>,
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.4}")).collect();
    format!("[{}]", parts.join(", "))
}

fn fmt_bits(z: &[bool]) -> String {
    z.iter().map(|&a| if a { '1' } else { '0' }).collect()
}

fn violations(rates: &[f64], r_min: &[f64]) -> Vec<f64> {
    rates.iter().zip(r_min).map(|(&r, &m)| (m - r).max(0.0)).collect()
}

/// Owns the world state and runs the near-RT loop: weighting, O-RU
/// management, precoding, monitoring. Intents submitted between loops take
/// effect at the next loop boundary.
pub struct Coordinator {
    world: World,
    cfg: AgentConfig,
    mode: LoopMode,
    bus: Bus,
    backend: Box<dyn IntentBackend>,
    memory: Option<MemoryContext>,
    objective: ObjectiveSpec,
    utility: UtilitySpec<f64>,
    pending: VecDeque<(String, ObjectiveSpec)>,
    precoding: PrecodingState<f64>,
    weighting: WeightingState,
    penalties: PenaltyState,
    z: Vec<bool>,
    history: HistoryWindow,
    boost_req: Vec<usize>,
    raise_req: Vec<usize>,
    next_loop: u64,
    episode: Episode,
    last: LoopSnapshot,
}

impl Coordinator {
    /// Starts from all O-RUs on under an unconstrained sum-rate objective.
    pub fn new(world: World, cfg: AgentConfig, mode: LoopMode) -> Result<Self> {
        Self::with_parts(world, cfg, mode, Box::new(GrammarBackend), Bus::new())
    }

    pub fn with_parts(
        world: World,
        cfg: AgentConfig,
        mode: LoopMode,
        backend: Box<dyn IntentBackend>,
        bus: Bus,
    ) -> Result<Self> {
        cfg.validate()?;
        let (k_n, l_n) = (world.num_users(), world.num_orus());
        if world.fading.num_users() != k_n || world.fading.num_orus() != l_n {
            return Err(invalid("fading and channel dimensions differ"));
        }
        if let Some(p) = &world.policy {
            if p.num_users() != k_n || p.num_agents() != l_n {
                return Err(invalid("activation policy was trained for a different deployment"));
            }
        }
        let objective = ObjectiveSpec::unconstrained(k_n);
        let utility = objective.utility_spec(world.p_max_w, cfg.dual_step)?;
        let z = vec![true; l_n];
        let assoc = associate_users(&world.fading, &z, world.l_max)?;
        let out = solve(&world.channels, &assoc, &utility, &z, None, &world.precoder)?;
        let precoding = out.state;
        let penalties = PenaltyState::new(k_n, cfg.lambda_init, cfg.lambda_max);
        let weighting = WeightingState { alpha: precoding.alpha.clone(), mu: vec![0.0; k_n], boost: vec![1.0; k_n] };
        let mut history = HistoryWindow::new(cfg.window)?;
        let rates = precoding.rates_mbps.clone();
        history.push(HistoryEntry {
            loop_index: 0,
            upsilon_mbps: vec![0.0; k_n],
            rates_mbps: rates.clone(),
            mu: weighting.mu.clone(),
            lambda: penalties.lambda.clone(),
            alpha: weighting.alpha.clone(),
            active: z.clone(),
        });
        let last = LoopSnapshot {
            loop_index: 0,
            intent_kind: objective.intent_kind().into(),
            energy_saving: false,
            r_min_mbps: objective.r_min_mbps.clone(),
            upsilon_mbps: vec![0.0; k_n],
            rates_mbps: rates,
            alpha: weighting.alpha.clone(),
            mu: weighting.mu.clone(),
            lambda: penalties.lambda.clone(),
            active: z.clone(),
            active_fraction: 1.0,
            decision: MonitorDecision::default(),
            memory_hit: None,
            converged: false,
            precoder_iterations: out.iterations,
            messages: Vec::new(),
        };
        Ok(Self {
            world,
            cfg,
            mode,
            bus,
            backend,
            memory: None,
            objective,
            utility,
            pending: VecDeque::new(),
            precoding,
            weighting,
            penalties,
            z,
            history,
            boost_req: Vec::new(),
            raise_req: Vec::new(),
            next_loop: 1,
            episode: Episode::default(),
            last,
        })
    }

    pub fn set_memory(&mut self, memory: Option<MemoryContext>) {
        self.memory = memory;
    }

    pub fn memory(&self) -> Option<&MemoryContext> {
        self.memory.as_ref()
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn config(&self) -> &AgentConfig {
        &self.cfg
    }

    pub fn bus(&self) -> &Bus {
        &self.bus
    }

    pub fn objective(&self) -> &ObjectiveSpec {
        &self.objective
    }

    /// Most recent snapshot; before any loop, the initial all-on state.
    pub fn snapshot(&self) -> &LoopSnapshot {
        &self.last
    }

    pub fn history(&self) -> &HistoryWindow {
        &self.history
    }

    pub fn next_loop_index(&self) -> u64 {
        self.next_loop
    }

    pub fn has_pending(&self) -> bool {
        !self.pending.is_empty()
    }

    pub fn episode_converged(&self) -> bool {
        self.episode.converged
    }

    /// Translates `text` now and queues it for the next loop boundary.
    pub fn submit_intent(&mut self, text: &str) -> Result<Translation> {
        let tr = self.backend.translate(text, self.world.num_users())?;
        self.enqueue_objective(text, tr.spec.clone())?;
        Ok(tr)
    }

    /// Queues an objective translated elsewhere.
    pub fn enqueue_objective(&mut self, text: &str, spec: ObjectiveSpec) -> Result<()> {
        spec.validate(self.world.num_users())?;
        self.pending.push_back((text.to_string(), spec));
        Ok(())
    }

    fn apply_objective(&mut self, t: u64, text: String, spec: ObjectiveSpec) -> Result<()> {
        let k_n = self.world.num_users();
        self.bus.send(t, AgentId::Operator, AgentId::Supervisor, Interface::Internal, text)?;
        for (to, body) in spec.routed_messages() {
            self.bus.send(t, AgentId::Supervisor, to, Interface::A1, body)?;
        }
        self.utility = spec.utility_spec(self.world.p_max_w, self.cfg.dual_step)?;
        self.weighting = WeightingState::neutral(k_n);
        self.penalties = PenaltyState::new(k_n, self.cfg.lambda_init, self.cfg.lambda_max);
        self.boost_req.clear();
        self.raise_req.clear();
        self.episode = Episode { start_loop: t, fresh: true, ..Episode::default() };
        if let (LoopMode::Coordinated, Some(mem)) = (self.mode, &self.memory) {
            let q = mem.embedder.embed(&self.world.fading, &spec.r_min_mbps)?;
            if let Some(r) = mem.store.retrieve(&q, Some(spec.intent_kind()))? {
                for (l, &v) in self.penalties.lambda.iter_mut().zip(&r.experience.lambda) {
                    *l = v.clamp(0.0, self.cfg.lambda_max);
                }
                self.bus.send(
                    t,
                    AgentId::Memory,
                    AgentId::UserWeighting,
                    Interface::Internal,
                    format!("Retrieved experience {} (similarity {:.4})", r.index, r.similarity),
                )?;
                self.episode.hit = Some(MemoryHit { index: r.index, similarity: r.similarity });
                self.episode.retrieved = Some(r.experience);
            }
        }
        self.objective = spec;
        Ok(())
    }

    /// Runs one near-RT loop.
    pub fn step(&mut self) -> Result<LoopSnapshot> {
        let t = self.next_loop;
        self.next_loop += 1;
        let first_msg = self.bus.len() as u64;
        if let Some((text, spec)) = self.pending.pop_front() {
            self.apply_objective(t, text, spec)?;
        }
        let k_n = self.world.num_users();
        let mbps = self.world.channels.mbps_per_bpshz();
        let latest = self.history.latest().cloned().expect("history holds the initial state");

        self.weighting = match self.mode {
            LoopMode::Coordinated => {
                let retrieved = if self.episode.fresh { self.episode.retrieved.as_ref() } else { None };
                user_weighting_step(
                    &self.utility,
                    &self.history,
                    retrieved,
                    &self.boost_req,
                    &self.weighting,
                    &self.cfg,
                    &self.world.precoder,
                    mbps,
                )?
            }
            LoopMode::GradientAscent { delta_mu, .. } => {
                let mu: Vec<f64> = self
                    .weighting
                    .mu
                    .iter()
                    .zip(latest.rates_mbps.iter().zip(&self.utility.r_min_mbps))
                    .map(|(&m, (&r, &rm))| (m + delta_mu * (rm - r)).max(0.0))
                    .collect();
                let rates: Vec<f64> = latest.rates_mbps.iter().map(|r| r / mbps).collect();
                let alpha = priority_weights(&rates, &mu, &self.utility, &self.world.precoder);
                WeightingState { alpha, mu, boost: vec![1.0; k_n] }
            }
        };
        self.bus.send(t, AgentId::UserWeighting, AgentId::Odu, Interface::E2, format!("alpha = {}", fmt_vec(&self.weighting.alpha)))?;

        let (raises, reinvoke) = match self.mode {
            LoopMode::Coordinated => (std::mem::take(&mut self.raise_req), self.episode.fresh),
            LoopMode::GradientAscent { delta_lambda, .. } => {
                if self.objective.energy_saving {
                    for (l, &u) in self.penalties.lambda.iter_mut().zip(&latest.upsilon_mbps) {
                        *l = (*l + delta_lambda * u).min(self.penalties.lambda_max);
                    }
                }
                (Vec::new(), true)
            }
        };
        let ctx = OruContext {
            fading: &self.world.fading,
            policy: self.world.policy.as_ref(),
            z_prev: &self.z,
            reinvoke,
        };
        let z = oru_management_step(&self.objective, &self.history, &mut self.penalties, &raises, &ctx, &self.cfg)?;
        self.z = z;
        self.bus.send(t, AgentId::OruManagement, AgentId::Odu, Interface::E2, format!("z = {}", fmt_bits(&self.z)))?;

        let assoc = associate_users(&self.world.fading, &self.z, self.world.l_max)?;
        let mut state = self.precoding.clone();
        state.mu = self.weighting.mu.clone();
        let out = solve_fixed_multipliers(
            &self.world.channels,
            &assoc,
            &self.utility,
            &state,
            &self.weighting.boost,
            &self.world.precoder,
        )?;
        self.precoding = out.state;
        let rates = self.precoding.rates_mbps.clone();
        let ups = violations(&rates, &self.utility.r_min_mbps);
        self.history.push(HistoryEntry {
            loop_index: t,
            rates_mbps: rates.clone(),
            upsilon_mbps: ups.clone(),
            mu: self.weighting.mu.clone(),
            lambda: self.penalties.lambda.clone(),
            alpha: self.weighting.alpha.clone(),
            active: self.z.clone(),
        });
        self.bus.send(t, AgentId::Odu, AgentId::Monitoring, Interface::E2, format!("rates_mbps = {}", fmt_vec(&rates)))?;

        let decision = match self.mode {
            LoopMode::Coordinated => monitoring_step(&self.history, &self.weighting.alpha, &self.utility, &self.cfg)?,
            LoopMode::GradientAscent { .. } => MonitorDecision::default(),
        };
        for a in &decision.actions {
            match *a {
                MonitorAction::BoostWeight(k) => self.bus.send(
                    t,
                    AgentId::Monitoring,
                    AgentId::UserWeighting,
                    Interface::Internal,
                    format!("Boost: alpha_{} x{}", k + 1, self.cfg.boost_factor),
                )?,
                MonitorAction::RaisePenalty(k) => self.bus.send(
                    t,
                    AgentId::Monitoring,
                    AgentId::OruManagement,
                    Interface::Internal,
                    format!("Raise penalty: lambda_{} x{}", k + 1, self.cfg.lambda_growth),
                )?,
            };
        }
        self.boost_req = decision.boosts();
        self.raise_req = decision.raises();

        let satisfied = ups.iter().all(|&u| u <= self.cfg.viol_tol_mbps);
        if satisfied {
            self.episode.ok_streak += 1;
            if self.episode.ok_streak == 1 {
                self.episode.first_ok = Some(t);
            }
        } else {
            self.episode.ok_streak = 0;
            self.episode.first_ok = None;
        }
        if !self.episode.converged && self.episode.ok_streak >= self.cfg.patience {
            self.episode.converged = true;
            let first = self.episode.first_ok.unwrap_or(t);
            let loops = (first - self.episode.start_loop + 1) as usize;
            self.episode.loops_to_converge = Some(loops);
            self.store_experience(t, loops)?;
        }
        let memory_hit = if self.episode.fresh { self.episode.hit } else { None };
        self.episode.fresh = false;

        let active = self.z.iter().filter(|&&a| a).count();
        self.last = LoopSnapshot {
            loop_index: t,
            intent_kind: self.objective.intent_kind().into(),
            energy_saving: self.objective.energy_saving,
            rates_mbps: rates,
            r_min_mbps: self.utility.r_min_mbps.clone(),
            upsilon_mbps: ups,
            alpha: self.weighting.alpha.clone(),
            mu: self.weighting.mu.clone(),
            lambda: self.penalties.lambda.clone(),
            active: self.z.clone(),
            active_fraction: active as f64 / self.z.len() as f64,
            decision,
            memory_hit,
            converged: self.episode.converged,
            precoder_iterations: out.iterations,
            messages: self.bus.since(first_msg),
        };
        Ok(self.last.clone())
    }

    fn store_experience(&mut self, t: u64, loops: usize) -> Result<()> {
        if self.mode != LoopMode::Coordinated {
            return Ok(());
        }
        let Some(mem) = self.memory.as_mut() else {
            return Ok(());
        };
        let key = mem.embedder.embed(&self.world.fading, &self.objective.r_min_mbps)?;
        mem.store.store(Experience {
            key,
            alpha: self.weighting.alpha.clone(),
            lambda: self.penalties.lambda.clone(),
            meta: ExperienceMeta { intent_kind: self.objective.intent_kind().into(), loops_to_converge: loops },
        })?;
        self.bus.send(
            t,
            AgentId::Memory,
            AgentId::Supervisor,
            Interface::Internal,
            format!("Stored experience for {} after {loops} loops", self.objective.intent_kind()),
        )?;
        Ok(())
    }

    /// Submits `text` and loops until the episode converges or the loop cap
    /// is reached.
    pub fn run_until_converged(&mut self, text: &str) -> Result<EpisodeOutcome> {
        self.submit_intent(text)?;
        let mut trace = Vec::new();
        while trace.len() < self.cfg.loop_cap {
            let snap = self.step()?;
            let done = snap.converged && !self.has_pending();
            trace.push(snap);
            if done {
                break;
            }
        }
        let last = trace.last().expect("loop cap is at least one");
        let violated_users = if self.episode.converged {
            Vec::new()
        } else {
            last.upsilon_mbps
                .iter()
                .enumerate()
                .filter(|(_, &u)| u > self.cfg.viol_tol_mbps)
                .map(|(k, _)| k + 1)
                .collect()
        };
        if !violated_users.is_empty() {
            tracing::warn!(target: "agents", ?violated_users, "loop cap reached with violated constraints");
        }
        Ok(EpisodeOutcome {
            converged: self.episode.converged,
            loops_run: trace.len(),
            loops_to_converge: self.episode.loops_to_converge,
            violated_users,
            memory_hit: self.episode.hit,
            trace,
        })
    }
}
