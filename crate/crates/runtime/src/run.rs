use std::fmt;
use std::time::Instant;
use std::path::Path;

use cellfree_core::agents::{
    AgentId, Bus, Coordinator, Interface, LoopMode, LoopSnapshot, MemoryContext, MonitorDecision, ObjectiveSpec, World,
};
use cellfree_core::mappo::{EpisodeStats, InputNorm, Mappo, NetworkEnv};
use cellfree_core::memory::{raw_features, Embedder, MemoryStore};
use cellfree_core::net_model::associate_users;
use cellfree_core::precoder::{solve, UtilityKind, UtilitySpec};
use cellfree_core::Error as CoreError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::record::RunRecord;
use crate::scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Coordinated agents with monitoring feedback.
    #[value(name = "proposed")]
    Proposed,
    /// Activation policy with plain gradient steps on μ and λ.
    #[value(name = "drl_ga")]
    DrlGa,
    /// Incremental activation of each violated user's strongest O-RU.
    #[value(name = "greedy")]
    Greedy,
    #[value(name = "full_power")]
    FullPower,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Proposed, Mode::DrlGa, Mode::Greedy, Mode::FullPower];

    pub fn uses_policy(self) -> bool {
        matches!(self, Mode::Proposed | Mode::DrlGa)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Proposed => "proposed",
            Mode::DrlGa => "drl_ga",
            Mode::Greedy => "greedy",
            Mode::FullPower => "full_power",
        })
    }
}

/// Result of the greedy activation search.
#[derive(Debug, Clone, PartialEq)]
pub struct GreedyOutcome {
    pub active: Vec<bool>,
    pub rates_mbps: Vec<f64>,
    pub feasible: bool,
    pub rounds: usize,
}

fn solve_rates(world: &World, utility: &UtilitySpec<f64>, z: &[bool]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, usize)> {
    if z.iter().all(|&a| !a) {
        let k = world.num_users();
        return Ok((vec![0.0; k], vec![0.0; k], vec![0.0; k], 0));
    }
    let assoc = associate_users(&world.fading, z, world.l_max)?;
    let out = solve(&world.channels, &assoc, utility, z, None, &world.precoder)?;
    Ok((out.state.rates_mbps, out.state.alpha, out.state.mu, out.iterations))
}

/// Starting from every O-RU off, each round turns on, for every user still
/// below its minimum rate, the strongest O-RU it does not yet have, then
/// re-solves the precoder. Stops when all minimums hold or no violated user
/// has an O-RU left.
pub fn greedy_activation(world: &World, utility: &UtilitySpec<f64>, viol_tol_mbps: f64) -> Result<GreedyOutcome> {
    let l_n = world.num_orus();
    let mut z = vec![false; l_n];
    let mut rates = vec![0.0; world.num_users()];
    let mut rounds = 0;
    loop {
        let violated: Vec<usize> =
            (0..rates.len()).filter(|&k| utility.r_min_mbps[k] - rates[k] > viol_tol_mbps).collect();
        if violated.is_empty() {
            return Ok(GreedyOutcome { active: z, rates_mbps: rates, feasible: true, rounds });
        }
        let mut changed = false;
        for k in violated {
            if let Some(l) = world.fading.ranked_orus(k).into_iter().find(|&l| !z[l]) {
                z[l] = true;
                changed = true;
            }
        }
        if !changed {
            tracing::warn!(target: "runtime", "greedy activation exhausted the O-RUs with violated users left");
            return Ok(GreedyOutcome { active: z, rates_mbps: rates, feasible: false, rounds });
        }
        rounds += 1;
        rates = solve_rates(world, utility, &z)?.0;
    }
}

/// Precoder-only loop for the greedy and full-power baselines. Mirrors the
/// coordinator's message flow and snapshot layout; λ is reported as zero.
pub struct BaselineLoop {
    world: World,
    mode: Mode,
    dual_step: f64,
    viol_tol_mbps: f64,
    bus: Bus,
    objective: ObjectiveSpec,
    pending: Vec<(String, ObjectiveSpec)>,
    cached: Option<(Vec<bool>, Vec<f64>, Vec<f64>, Vec<f64>, usize)>,
    next_loop: u64,
    last: LoopSnapshot,
}

impl BaselineLoop {
    pub fn new(world: World, mode: Mode, dual_step: f64, viol_tol_mbps: f64) -> Result<Self> {
        if mode.uses_policy() {
            return Err(CoreError::InvalidArgument(format!("{mode} is not a precoder-only baseline")).into());
        }
        let k = world.num_users();
        let objective = ObjectiveSpec::unconstrained(k);
        let utility = objective.utility_spec(world.p_max_w, dual_step)?;
        let z = vec![true; world.num_orus()];
        let (rates, alpha, mu, iterations) = solve_rates(&world, &utility, &z)?;
        let last = LoopSnapshot {
            loop_index: 0,
            intent_kind: objective.intent_kind().into(),
            energy_saving: false,
            rates_mbps: rates,
            r_min_mbps: vec![0.0; k],
            upsilon_mbps: vec![0.0; k],
            alpha,
            mu,
            lambda: vec![0.0; k],
            active: z,
            active_fraction: 1.0,
            decision: MonitorDecision::default(),
            memory_hit: None,
            converged: false,
            precoder_iterations: iterations,
            messages: Vec::new(),
        };
        Ok(Self {
            world,
            mode,
            dual_step,
            viol_tol_mbps,
            bus: Bus::new(),
            objective,
            pending: Vec::new(),
            cached: None,
            next_loop: 1,
            last,
        })
    }

    pub fn enqueue_objective(&mut self, text: &str, spec: ObjectiveSpec) -> Result<()> {
        spec.validate(self.world.num_users())?;
        self.pending.push((text.to_string(), spec));
        Ok(())
    }

    pub fn snapshot(&self) -> &LoopSnapshot {
        &self.last
    }

    pub fn step(&mut self) -> Result<LoopSnapshot> {
        let t = self.next_loop;
        self.next_loop += 1;
        let first = self.bus.len() as u64;
        for (text, spec) in std::mem::take(&mut self.pending) {
            self.bus.send(t, AgentId::Operator, AgentId::Supervisor, Interface::Internal, text)?;
            for (to, body) in spec.routed_messages() {
                self.bus.send(t, AgentId::Supervisor, to, Interface::A1, body)?;
            }
            self.objective = spec;
            self.cached = None;
        }
        let utility = self.objective.utility_spec(self.world.p_max_w, self.dual_step)?;
        if self.cached.is_none() {
            let z = match self.mode {
                Mode::Greedy if self.objective.energy_saving => {
                    greedy_activation(&self.world, &utility, self.viol_tol_mbps)?.active
                }
                _ => vec![true; self.world.num_orus()],
            };
            let (rates, alpha, mu, it) = solve_rates(&self.world, &utility, &z)?;
            self.cached = Some((z, rates, alpha, mu, it));
        }
        let (z, rates, alpha, mu, it) = self.cached.clone().expect("filled above");
        let bits: String = z.iter().map(|&a| if a { '1' } else { '0' }).collect();
        self.bus.send(t, AgentId::OruManagement, AgentId::Odu, Interface::E2, format!("z = {bits}"))?;
        let ups: Vec<f64> = rates.iter().zip(&utility.r_min_mbps).map(|(&r, &m)| (m - r).max(0.0)).collect();
        let rendered: Vec<String> = rates.iter().map(|r| format!("{r:.4}")).collect();
        self.bus.send(
            t,
            AgentId::Odu,
            AgentId::Monitoring,
            Interface::E2,
            format!("rates_mbps = [{}]", rendered.join(", ")),
        )?;
        let active = z.iter().filter(|&&a| a).count();
        self.last = LoopSnapshot {
            loop_index: t,
            intent_kind: self.objective.intent_kind().into(),
            energy_saving: self.objective.energy_saving,
            converged: ups.iter().all(|&u| u <= self.viol_tol_mbps),
            rates_mbps: rates,
            r_min_mbps: utility.r_min_mbps.clone(),
            upsilon_mbps: ups,
            alpha,
            mu,
            lambda: vec![0.0; self.world.num_users()],
            active_fraction: active as f64 / z.len() as f64,
            active: z,
            decision: MonitorDecision::default(),
            memory_hit: None,
            precoder_iterations: it,
            messages: self.bus.since(first),
        };
        Ok(self.last.clone())
    }
}

/// Single writer of the simulated network under any mode.
pub enum Simulation {
    Agents(Box<Coordinator>),
    Baseline(Box<BaselineLoop>),
}

impl Simulation {
    pub fn new(scenario: &Scenario, mode: Mode, policy: Option<Mappo<f64>>) -> Result<Self> {
        if mode.uses_policy() && policy.is_none() && scenario.needs_policy()? {
            return Err(CoreError::MissingCheckpoint(format!(
                "scenario `{}` enters energy saving under {mode}; run `cellfree train` first",
                scenario.name
            ))
            .into());
        }
        let world = scenario.build_world(if mode.uses_policy() { policy } else { None })?;
        let cfg = scenario.agents.clone();
        Ok(match mode {
            Mode::Proposed | Mode::DrlGa => {
                let loop_mode = if mode == Mode::Proposed {
                    LoopMode::Coordinated
                } else {
                    LoopMode::GradientAscent {
                        delta_mu: scenario.gradient_ascent.delta_mu,
                        delta_lambda: scenario.gradient_ascent.delta_lambda,
                    }
                };
                let memory = match (&scenario.memory, mode) {
                    (Some(_), Mode::Proposed) => Some(fit_memory(scenario, &world)?),
                    _ => None,
                };
                let mut c = Coordinator::new(world, cfg, loop_mode)?;
                c.set_memory(memory);
                Simulation::Agents(Box::new(c))
            }
            Mode::Greedy | Mode::FullPower => Simulation::Baseline(Box::new(BaselineLoop::new(
                world,
                mode,
                cfg.dual_step,
                cfg.viol_tol_mbps,
            )?)),
        })
    }

    pub fn enqueue_objective(&mut self, text: &str, spec: ObjectiveSpec) -> Result<()> {
        match self {
            Simulation::Agents(c) => c.enqueue_objective(text, spec)?,
            Simulation::Baseline(b) => b.enqueue_objective(text, spec)?,
        }
        Ok(())
    }

    pub fn step(&mut self) -> Result<LoopSnapshot> {
        match self {
            Simulation::Agents(c) => Ok(c.step()?),
            Simulation::Baseline(b) => b.step(),
        }
    }

    pub fn snapshot(&self) -> &LoopSnapshot {
        match self {
            Simulation::Agents(c) => c.snapshot(),
            Simulation::Baseline(b) => b.snapshot(),
        }
    }
}

/// Runs every loop of the scenario, applying scheduled intents at their
/// loop boundaries.
pub fn run_scenario(scenario: &Scenario, mode: Mode, policy: Option<Mappo<f64>>) -> Result<RunRecord> {
    let mut sim = Simulation::new(scenario, mode, policy)?;
    let n = &scenario.network;
    let mut record = RunRecord::new(&scenario.name, &scenario.hash(), mode, n.num_users, n.num_orus);
    let schedule = scenario.objectives()?;
    let mut next = schedule.iter().peekable();
    for t in 1..=scenario.loops {
        while let Some(o) = next.next_if(|o| o.at_loop == t) {
            sim.enqueue_objective(&o.text, o.spec.clone())?;
        }
        let t0 = Instant::now();
        let snap = sim.step()?;
        record.push(snap, t0.elapsed().as_secs_f64() * 1e3)?;
    }
    tracing::info!(target: "runtime", scenario = %scenario.name, %mode, loops = record.len(), "run finished");
    Ok(record)
}

/// Trains the activation policy on the scenario's deployment under a
/// sum-rate objective with the training minimum rates.
pub fn train_policy(
    scenario: &Scenario,
    episodes: usize,
    mut progress: impl FnMut(&EpisodeStats),
) -> Result<(Mappo<f64>, Vec<EpisodeStats>)> {
    let world = scenario.build_world(None)?;
    let tr = &scenario.training;
    let spec = UtilitySpec::uniform(UtilityKind::SumRate, scenario.training_r_min()?, world.p_max_w, scenario.agents.dual_step)?;
    let mut env = NetworkEnv::new(world.fading.clone(), world.channels.clone(), spec, tr.env.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(tr.seed);
    let mut m = Mappo::new(
        world.num_users(),
        world.num_orus(),
        tr.mappo.clone(),
        InputNorm::from_fading(&world.fading),
        &mut rng,
    )?;
    let mut stats = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let s = m.train_iteration(&mut env, &mut rng)?;
        progress(&s);
        stats.push(s);
    }
    Ok((m, stats))
}

/// Fits the embedder on random constraint vectors over the deployment and
/// returns it with an empty store.
pub fn fit_memory(scenario: &Scenario, world: &World) -> Result<MemoryContext> {
    let spec = scenario.memory.clone().unwrap_or_default();
    let (k, l) = (world.num_users(), world.num_orus());
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let corpus = (0..spec.corpus_size)
        .map(|_| {
            let r: Vec<f64> = (0..k)
                .map(|_| {
                    if rng.random_bool(spec.constraint_prob) {
                        rng.random_range(0.0..spec.max_rate_mbps)
                    } else {
                        0.0
                    }
                })
                .collect();
            raw_features(&world.fading, &r, spec.store.reference_rate_mbps)
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let (embedder, loss) = Embedder::fit(k, l, &corpus, &spec.store, spec.epochs, spec.lr, spec.seed)?;
    tracing::info!(target: "runtime", loss, "memory embedder fitted");
    let store = MemoryStore::new(embedder.ae.d_emb(), k, l, &spec.store);
    Ok(MemoryContext { embedder, store })
}

/// Loads the policy from `path`, else from the scenario's checkpoint. `None`
/// when neither is set.
pub fn load_policy(scenario: &Scenario, path: Option<&Path>) -> Result<Option<Mappo<f64>>> {
    match path.or(scenario.checkpoint.as_deref()) {
        Some(p) => Ok(Some(Mappo::load(p)?)),
        None => Ok(None),
    }
}
