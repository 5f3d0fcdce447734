use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::intent::ObjectiveSpec;
use crate::error::{invalid, Error, Result};
use crate::mappo::{build_observations, normalized_violations, Mappo};
use crate::memory::Experience;
use crate::net_model::LargeScaleFading;
use crate::precoder::{dual_ascent_update, priority_weights, PrecoderConfig, UtilityKind, UtilitySpec};

/// Thresholds of the rule-based agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub window: usize,
    pub alpha_high: f64,
    pub boost_factor: f64,
    pub lambda_init: f64,
    pub lambda_growth: f64,
    pub lambda_max: f64,
    pub viol_tol_mbps: f64,
    pub stall_tol_mbps: f64,
    /// Entries needed before a stall can be declared.
    pub stall_min_entries: usize,
    pub patience: usize,
    pub loop_cap: usize,
    /// Dual step of the weighting agent, per Mbps.
    pub dual_step: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            window: 10,
            alpha_high: 50.0,
            boost_factor: 1.5,
            lambda_init: 1.0,
            lambda_growth: 2.0,
            lambda_max: 100.0,
            viol_tol_mbps: 0.1,
            stall_tol_mbps: 0.05,
            stall_min_entries: 3,
            patience: 3,
            loop_cap: 200,
            dual_step: 0.05,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: &str| Err(Error::Config { field: field.into(), reason: reason.into() });
        if self.window == 0 {
            return bad("window", "must be at least 1");
        }
        if !(self.alpha_high > 0.0) {
            return bad("alpha_high", "must be positive");
        }
        if !(self.boost_factor > 1.0) {
            return bad("boost_factor", "must exceed 1");
        }
        if !(self.lambda_growth > 1.0) {
            return bad("lambda_growth", "must exceed 1");
        }
        if !(self.lambda_init >= 0.0 && self.lambda_max >= self.lambda_init) {
            return bad("lambda_max", "must be at least lambda_init ≥ 0");
        }
        if !(self.viol_tol_mbps >= 0.0) || !(self.stall_tol_mbps >= 0.0) {
            return bad("viol_tol_mbps", "tolerances must be non-negative");
        }
        if self.patience == 0 {
            return bad("patience", "must be at least 1");
        }
        if self.loop_cap == 0 {
            return bad("loop_cap", "must be at least 1");
        }
        if !(self.dual_step > 0.0) {
            return bad("dual_step", "must be positive");
        }
        Ok(())
    }
}

/// One near-RT loop as seen by the agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub loop_index: u64,
    pub rates_mbps: Vec<f64>,
    /// `max(0, R_min − r)` in Mbps.
    pub upsilon_mbps: Vec<f64>,
    pub mu: Vec<f64>,
    pub lambda: Vec<f64>,
    pub alpha: Vec<f64>,
    pub active: Vec<bool>,
}

/// Last `W` loops, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryWindow {
    cap: usize,
    entries: VecDeque<HistoryEntry>,
}

impl HistoryWindow {
    pub fn new(window: usize) -> Result<Self> {
        if window == 0 {
            return Err(invalid("history window must hold at least one loop"));
        }
        Ok(Self { cap: window, entries: VecDeque::with_capacity(window) })
    }

    pub fn capacity(&self) -> usize {
        self.cap
    }

    pub fn push(&mut self, e: HistoryEntry) {
        if self.entries.len() == self.cap {
            self.entries.pop_front();
        }
        self.entries.push_back(e);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn latest(&self) -> Option<&HistoryEntry> {
        self.entries.back()
    }

    pub fn iter(&self) -> impl Iterator<Item = &HistoryEntry> {
        self.entries.iter()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }
}

/// Violation penalties `0 ≤ λ_k ≤ λ_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyState {
    pub lambda: Vec<f64>,
    pub lambda_max: f64,
}

impl PenaltyState {
    pub fn new(num_users: usize, init: f64, lambda_max: f64) -> Self {
        Self { lambda: vec![init.clamp(0.0, lambda_max); num_users], lambda_max }
    }

    pub fn raise(&mut self, user: usize, growth: f64) {
        let l = &mut self.lambda[user];
        *l = (*l * growth).min(self.lambda_max);
    }
}

/// Priority weights with their dual and boost components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightingState {
    pub alpha: Vec<f64>,
    pub mu: Vec<f64>,
    /// Accumulated monitoring boosts, `α_k = b_k (U'_k + μ_k)`.
    pub boost: Vec<f64>,
}

impl WeightingState {
    pub fn neutral(num_users: usize) -> Self {
        Self { alpha: vec![1.0; num_users], mu: vec![0.0; num_users], boost: vec![1.0; num_users] }
    }
}

fn marginal_utility(spec: &UtilitySpec<f64>, rate_mbps: f64, rate_bps_hz_per_mbps: f64, pcfg: &PrecoderConfig) -> f64 {
    match spec.kind {
        UtilityKind::SumRate => 1.0,
        UtilityKind::SumLogRate => 1.0 / (rate_mbps / rate_bps_hz_per_mbps).max(pcfg.r_floor),
        UtilityKind::EnergySaving => 0.0,
    }
}

/// User-weighting agent.
///
/// With a retrieved experience the stored α is returned unchanged and μ (or,
/// below the marginal utility, the boost) is backed out of it against the
/// latest rates. Otherwise μ takes a dual step
/// on the observed violations, α follows from the precoder's priority rule,
/// and each boost request multiplies that user's boost factor.
/// `mbps_per_bps_hz` converts the history's Mbps back to bit/s/Hz.
#[allow(clippy::too_many_arguments)]
pub fn user_weighting_step(
    spec: &UtilitySpec<f64>,
    history: &HistoryWindow,
    retrieved: Option<&Experience>,
    boost_requests: &[usize],
    prev: &WeightingState,
    cfg: &AgentConfig,
    pcfg: &PrecoderConfig,
    mbps_per_bps_hz: f64,
) -> Result<WeightingState> {
    let k_n = spec.num_users();
    if prev.alpha.len() != k_n || prev.mu.len() != k_n || prev.boost.len() != k_n {
        return Err(invalid("weighting state does not match the user count"));
    }
    let Some(latest) = history.latest() else {
        return Ok(prev.clone());
    };
    let rates_bps_hz: Vec<f64> = latest.rates_mbps.iter().map(|r| r / mbps_per_bps_hz).collect();
    if let Some(exp) = retrieved {
        if exp.alpha.len() != k_n {
            return Err(invalid("retrieved experience has the wrong user count"));
        }
        let mut mu = vec![0.0; k_n];
        let mut boost = vec![1.0; k_n];
        for k in 0..k_n {
            let d = marginal_utility(spec, latest.rates_mbps[k], mbps_per_bps_hz, pcfg);
            if exp.alpha[k] >= d {
                mu[k] = exp.alpha[k] - d;
            } else if d > 0.0 {
                boost[k] = exp.alpha[k] / d;
            }
        }
        return Ok(WeightingState { alpha: exp.alpha.clone(), mu, boost });
    }
    // step on the violation only, so satisfied users keep their multiplier
    let clipped: Vec<f64> = latest.rates_mbps.iter().zip(&spec.r_min_mbps).map(|(&r, &m)| r.min(m)).collect();
    let mu = dual_ascent_update(&prev.mu, &clipped, spec);
    let mut boost = prev.boost.clone();
    for &k in boost_requests {
        if k >= k_n {
            return Err(invalid(format!("boost request for unknown user {k}")));
        }
        boost[k] *= cfg.boost_factor;
    }
    let base = priority_weights(&rates_bps_hz, &mu, spec, pcfg);
    let alpha = base
        .iter()
        .zip(&boost)
        .map(|(&a, &b)| (a * b).clamp(pcfg.alpha_floor, pcfg.alpha_cap))
        .collect();
    Ok(WeightingState { alpha, mu, boost })
}

/// Inputs the O-RU management agent needs besides the objective.
pub struct OruContext<'a> {
    pub fading: &'a LargeScaleFading<f64>,
    pub policy: Option<&'a Mappo<f64>>,
    pub z_prev: &'a [bool],
    /// Query the policy even without a penalty change, e.g. on a new intent.
    pub reinvoke: bool,
}

/// O-RU management agent.
///
/// Outside energy saving every O-RU is on. In energy saving, each raise
/// request multiplies that user's penalty, and the activation policy is
/// queried whenever a penalty moved or `reinvoke` is set; otherwise the
/// previous activation is kept.
pub fn oru_management_step(
    spec: &ObjectiveSpec,
    history: &HistoryWindow,
    penalties: &mut PenaltyState,
    raise_requests: &[usize],
    ctx: &OruContext<'_>,
    cfg: &AgentConfig,
) -> Result<Vec<bool>> {
    let l_n = ctx.fading.num_orus();
    if !spec.energy_saving {
        return Ok(vec![true; l_n]);
    }
    let policy = ctx.policy.ok_or_else(|| {
        Error::MissingCheckpoint("energy saving needs a trained activation policy; run training first".into())
    })?;
    for &k in raise_requests {
        if k >= penalties.lambda.len() {
            return Err(invalid(format!("penalty request for unknown user {k}")));
        }
        penalties.raise(k, cfg.lambda_growth);
    }
    if !ctx.reinvoke && raise_requests.is_empty() && ctx.z_prev.len() == l_n {
        return Ok(ctx.z_prev.to_vec());
    }
    let ups = match history.latest() {
        Some(e) => normalized_violations(&e.rates_mbps, &spec.r_min_mbps),
        None => vec![0.0; spec.num_users()],
    };
    let obs = build_observations(ctx.fading, &ups, &penalties.lambda, ctx.z_prev)?;
    policy.infer_activations(&obs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", content = "user", rename_all = "snake_case")]
pub enum MonitorAction {
    BoostWeight(usize),
    RaisePenalty(usize),
}

/// Empty when every constraint holds.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonitorDecision {
    pub actions: Vec<MonitorAction>,
}

impl MonitorDecision {
    pub fn is_ok(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn boosts(&self) -> Vec<usize> {
        self.actions
            .iter()
            .filter_map(|a| match a {
                MonitorAction::BoostWeight(k) => Some(*k),
                _ => None,
            })
            .collect()
    }

    pub fn raises(&self) -> Vec<usize> {
        self.actions
            .iter()
            .filter_map(|a| match a {
                MonitorAction::RaisePenalty(k) => Some(*k),
                _ => None,
            })
            .collect()
    }
}

/// Monitoring agent: a user violated by more than the tolerance in the
/// latest loop gets its weight boosted while `α_k < α_high`, and a penalty
/// raise otherwise or when its rate has stalled over the window.
pub fn monitoring_step(history: &HistoryWindow, alpha: &[f64], spec: &UtilitySpec<f64>, cfg: &AgentConfig) -> Result<MonitorDecision> {
    let latest = history.latest().ok_or_else(|| invalid("monitoring needs at least one loop of history"))?;
    let k_n = spec.num_users();
    if alpha.len() != k_n || latest.upsilon_mbps.len() != k_n {
        return Err(invalid("monitoring inputs do not match the user count"));
    }
    let mut actions = Vec::new();
    for k in 0..k_n {
        if spec.r_min_mbps[k] <= 0.0 || latest.upsilon_mbps[k] <= cfg.viol_tol_mbps {
            continue;
        }
        let stalled = history.len() >= cfg.stall_min_entries && {
            let (lo, hi) = history
                .iter()
                .map(|e| e.rates_mbps[k])
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r), hi.max(r)));
            hi - lo < cfg.stall_tol_mbps
        };
        if stalled || alpha[k] >= cfg.alpha_high {
            actions.push(MonitorAction::RaisePenalty(k));
        } else {
            actions.push(MonitorAction::BoostWeight(k));
        }
    }
    Ok(MonitorDecision { actions })
}
