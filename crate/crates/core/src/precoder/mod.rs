//! Downlink precoding: rate evaluation, WMMSE block updates under per-O-RU
//! power budgets, priority weights and dual ascent on minimum-rate
//! multipliers.

mod rate;
mod wmmse;

pub use rate::{effective_matrices, rates_from_effective, sinr_and_rate, EffectiveChannels};
pub use wmmse::wmmse_iteration;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::net_model::{Association, ChannelSet};
use crate::scalar::{frob2, CMat, Scalar, C};

/// Shape of the per-user utility whose derivative feeds the priority weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtilityKind {
    SumRate,
    SumLogRate,
    /// Rates only enter through the minimum-rate constraints.
    EnergySaving,
}

/// Objective and constraints handed to the precoder.
#[derive(Debug, Clone, PartialEq)]
pub struct UtilitySpec<T: Scalar> {
    pub kind: UtilityKind,
    /// Per-user minimum rate, Mbps.
    pub r_min_mbps: Vec<T>,
    /// Per-O-RU power budget, watts.
    pub p_max_w: T,
    /// Dual step per Mbps of violation, per user.
    pub step_sizes: Vec<T>,
}

impl<T: Scalar> UtilitySpec<T> {
    pub fn new(kind: UtilityKind, r_min_mbps: Vec<T>, p_max_w: T, step_sizes: Vec<T>) -> Result<Self> {
        let s = Self { kind, r_min_mbps, p_max_w, step_sizes };
        s.validate()?;
        Ok(s)
    }

    /// Same dual step for every user.
    pub fn uniform(kind: UtilityKind, r_min_mbps: Vec<T>, p_max_w: T, zeta: T) -> Result<Self> {
        let n = r_min_mbps.len();
        Self::new(kind, r_min_mbps, p_max_w, vec![zeta; n])
    }

    pub fn num_users(&self) -> usize {
        self.r_min_mbps.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.r_min_mbps.iter().any(|r| !(*r >= T::zero()) || !r.is_finite()) {
            return Err(invalid("minimum rates must be finite and non-negative"));
        }
        if !(self.p_max_w > T::zero()) {
            return Err(invalid("power budget must be positive"));
        }
        if self.step_sizes.len() != self.r_min_mbps.len() {
            return Err(invalid("one dual step size per user"));
        }
        if self.step_sizes.iter().any(|z| !(*z > T::zero())) {
            return Err(invalid("dual step sizes must be positive"));
        }
        Ok(())
    }
}

/// Numerical knobs of the precoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrecoderConfig {
    /// Floor on the rate inside `1/r`, bit/s/Hz.
    pub r_floor: f64,
    pub alpha_floor: f64,
    pub alpha_cap: f64,
    /// Max per-user rate change counted as stable, Mbps.
    pub rate_tol_mbps: f64,
    /// Consecutive stable outer iterations required.
    pub patience: usize,
    pub max_iters: usize,
    /// Relative power tolerance of the multiplier search.
    pub bisection_tol: f64,
    pub bisection_max_iters: usize,
    pub bracket_max_expansions: usize,
}

impl Default for PrecoderConfig {
    fn default() -> Self {
        Self {
            r_floor: 1e-6,
            alpha_floor: 1e-3,
            alpha_cap: 1e3,
            rate_tol_mbps: 1e-3,
            patience: 5,
            max_iters: 500,
            bisection_tol: 1e-6,
            bisection_max_iters: 60,
            bracket_max_expansions: 64,
        }
    }
}

/// Precoders, receive filters, MSE weights and the dual/priority state.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecodingState<T: Scalar> {
    num_orus: usize,
    /// `v[k * L + l]`, `n_t × n_s`; zero when `l` does not serve `k`.
    pub v: Vec<CMat<T>>,
    pub u: Vec<CMat<T>>,
    pub w: Vec<CMat<T>>,
    pub mu: Vec<T>,
    pub alpha: Vec<T>,
    /// bit/s/Hz.
    pub rates: Vec<T>,
    pub rates_mbps: Vec<T>,
    /// Consecutive outer iterations whose rate change stayed below tolerance.
    pub stable_streak: usize,
}

impl<T: Scalar> PrecodingState<T> {
    /// Starting point: strongest right singular directions of each served
    /// channel, with the O-RU budget split evenly over its users.
    pub fn initial(
        channels: &ChannelSet<T>,
        assoc: &Association,
        spec: &UtilitySpec<T>,
        cfg: &PrecoderConfig,
    ) -> Result<Self> {
        check_dims(channels, assoc, spec)?;
        let (k_n, l_n) = (channels.num_users(), channels.num_orus());
        let ant = channels.antennas();
        let mut v = vec![CMat::<T>::zeros(ant.n_t, ant.n_s); k_n * l_n];
        for (l, users) in assoc.served.iter().enumerate() {
            if users.is_empty() {
                continue;
            }
            let share = spec.p_max_w / T::of(users.len() as f64);
            for &k in users {
                v[k * l_n + l] = dominant_beamformer(channels.h(k, l), ant.n_s, share);
            }
        }
        let mut state = Self {
            num_orus: l_n,
            v,
            u: vec![CMat::<T>::zeros(ant.n_r, ant.n_s); k_n],
            w: vec![CMat::<T>::identity(ant.n_s, ant.n_s); k_n],
            mu: vec![T::zero(); k_n],
            alpha: vec![T::one(); k_n],
            rates: vec![T::zero(); k_n],
            rates_mbps: vec![T::zero(); k_n],
            stable_streak: 0,
        };
        state.refresh_rates(channels, assoc)?;
        state.alpha = priority_weights(&state.rates, &state.mu, spec, cfg);
        Ok(state)
    }

    pub fn num_users(&self) -> usize {
        self.mu.len()
    }

    pub fn num_orus(&self) -> usize {
        self.num_orus
    }

    #[inline]
    pub fn v(&self, k: usize, l: usize) -> &CMat<T> {
        &self.v[k * self.num_orus + l]
    }

    /// Transmit power `Σ_k tr(V_{k,l} V_{k,l}ᴴ)` of O-RU `l`.
    pub fn oru_power(&self, l: usize) -> T {
        (0..self.num_users()).fold(T::zero(), |acc, k| acc + frob2(self.v(k, l)))
    }

    pub fn oru_powers(&self) -> Vec<T> {
        (0..self.num_orus).map(|l| self.oru_power(l)).collect()
    }

    /// Recomputes the achieved rates from the current precoders.
    pub fn refresh_rates(&mut self, channels: &ChannelSet<T>, assoc: &Association) -> Result<()> {
        let psi = effective_matrices(channels, assoc, &self.v)?;
        self.rates = rates_from_effective(&psi, channels.noise_variance)?;
        let scale = channels.mbps_per_bpshz();
        self.rates_mbps = self.rates.iter().map(|&r| r * scale).collect();
        Ok(())
    }

    /// Adapts a previous state to a new association: precoders of dropped
    /// links are zeroed, new links get the initial direction, and O-RUs over
    /// budget are scaled down. Dual and priority state is kept.
    pub fn conform(
        &mut self,
        channels: &ChannelSet<T>,
        assoc: &Association,
        spec: &UtilitySpec<T>,
    ) -> Result<()> {
        check_dims(channels, assoc, spec)?;
        let l_n = self.num_orus;
        let ant = channels.antennas();
        let mut changed = false;
        for k in 0..self.num_users() {
            for l in 0..l_n {
                let idx = k * l_n + l;
                let serves = assoc.serves(k, l);
                if !serves && frob2(&self.v[idx]) > T::zero() {
                    self.v[idx].fill(C::new(T::zero(), T::zero()));
                    changed = true;
                } else if serves && frob2(&self.v[idx]) == T::zero() {
                    let share = spec.p_max_w / T::of(assoc.served[l].len() as f64);
                    self.v[idx] = dominant_beamformer(channels.h(k, l), ant.n_s, share);
                    changed = true;
                }
            }
        }
        for l in 0..l_n {
            let p = self.oru_power(l);
            if p > spec.p_max_w {
                let s = C::new((spec.p_max_w / p).sqrt(), T::zero());
                for k in 0..self.num_users() {
                    self.v[k * l_n + l] *= s;
                }
                changed = true;
            }
        }
        if changed {
            self.stable_streak = 0;
        }
        self.refresh_rates(channels, assoc)
    }
}

/// `sqrt(p / n_s)` times the `n_s` strongest right singular vectors of `h`.
fn dominant_beamformer<T: Scalar>(h: &CMat<T>, n_s: usize, power: T) -> CMat<T> {
    let gram = hermitian_part(&(h.adjoint() * h));
    let eig = nalgebra::SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let amp = C::new((power / T::of(n_s as f64)).sqrt(), T::zero());
    let n_t = h.ncols();
    CMat::<T>::from_fn(n_t, n_s, |i, j| eig.eigenvectors[(i, order[j])] * amp)
}

pub(crate) fn hermitian_part<T: Scalar>(m: &CMat<T>) -> CMat<T> {
    let half = C::new(T::of(0.5), T::zero());
    (m + m.adjoint()) * half
}

fn check_dims<T: Scalar>(
    channels: &ChannelSet<T>,
    assoc: &Association,
    spec: &UtilitySpec<T>,
) -> Result<()> {
    if assoc.num_users() != channels.num_users() || assoc.num_orus() != channels.num_orus() {
        return Err(invalid("association does not match the channel set"));
    }
    if spec.num_users() != channels.num_users() {
        return Err(invalid("utility spec has the wrong number of users"));
    }
    Ok(())
}

/// `α_k = U'_k(r_k) + μ_k`, clamped to `[alpha_floor, alpha_cap]`.
pub fn priority_weights<T: Scalar>(
    rates: &[T],
    mu: &[T],
    spec: &UtilitySpec<T>,
    cfg: &PrecoderConfig,
) -> Vec<T> {
    let floor = T::of(cfg.alpha_floor);
    let cap = T::of(cfg.alpha_cap);
    rates
        .iter()
        .zip(mu)
        .map(|(&r, &m)| {
            let d = match spec.kind {
                UtilityKind::SumRate => T::one(),
                UtilityKind::SumLogRate => T::one() / r.max(T::of(cfg.r_floor)),
                UtilityKind::EnergySaving => T::zero(),
            };
            (d + m).clamp(floor, cap)
        })
        .collect()
}

/// Projected dual step `μ_k ← max(0, μ_k + ζ_k (R_min_k − r_k))`, rates in Mbps.
pub fn dual_ascent_update<T: Scalar>(mu: &[T], rates_mbps: &[T], spec: &UtilitySpec<T>) -> Vec<T> {
    mu.iter()
        .zip(rates_mbps)
        .enumerate()
        .map(|(k, (&m, &r))| (m + spec.step_sizes[k] * (spec.r_min_mbps[k] - r)).max(T::zero()))
        .collect()
}

/// Result of [`solve`] and [`refine_fixed_weights`].
#[derive(Debug, Clone)]
pub struct SolveOutcome<T: Scalar> {
    pub state: PrecodingState<T>,
    pub converged: bool,
    pub iterations: usize,
}

fn max_abs_change<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |m, (&x, &y)| m.max((x - y).abs()))
}

fn check_activation(assoc: &Association, active: &[bool]) -> Result<()> {
    if active.len() != assoc.num_orus() {
        return Err(invalid("activation vector length does not match O-RU count"));
    }
    for (l, users) in assoc.served.iter().enumerate() {
        if !active[l] && !users.is_empty() {
            return Err(invalid(format!("inactive O-RU {l} has served users")));
        }
    }
    Ok(())
}

/// Alternates WMMSE passes, priority weights and dual ascent until the rates
/// settle or `max_iters` is reached. Non-convergence is reported, not fatal.
pub fn solve<T: Scalar>(
    channels: &ChannelSet<T>,
    assoc: &Association,
    spec: &UtilitySpec<T>,
    active: &[bool],
    warm_start: Option<&PrecodingState<T>>,
    cfg: &PrecoderConfig,
) -> Result<SolveOutcome<T>> {
    spec.validate()?;
    check_activation(assoc, active)?;
    let mut state = match warm_start {
        Some(s) => {
            let mut s = s.clone();
            s.conform(channels, assoc, spec)?;
            s
        }
        None => PrecodingState::initial(channels, assoc, spec, cfg)?,
    };
    let tol = T::of(cfg.rate_tol_mbps);
    for it in 1..=cfg.max_iters {
        let prev = state.rates_mbps.clone();
        state = wmmse_iteration(&state, channels, assoc, spec, cfg)?;
        state.alpha = priority_weights(&state.rates, &state.mu, spec, cfg);
        state.mu = dual_ascent_update(&state.mu, &state.rates_mbps, spec);
        let change = max_abs_change(&prev, &state.rates_mbps);
        // a violated constraint keeps its multiplier moving, so it is not a fixed point
        let violated = state
            .rates_mbps
            .iter()
            .zip(&spec.r_min_mbps)
            .any(|(&r, &m)| m - r > tol);
        if change < tol && !violated {
            state.stable_streak += 1;
        } else {
            state.stable_streak = 0;
        }
        tracing::trace!(
            target: "precoder",
            iteration = it,
            change_mbps = change.to64(),
            rates_mbps = ?state.rates_mbps.iter().map(|r| r.to64()).collect::<Vec<_>>(),
            mu = ?state.mu.iter().map(|r| r.to64()).collect::<Vec<_>>(),
            "outer iteration"
        );
        if state.stable_streak >= cfg.patience {
            return Ok(SolveOutcome { state, converged: true, iterations: it });
        }
    }
    tracing::debug!(target: "precoder", iterations = cfg.max_iters, "solve hit the iteration cap");
    Ok(SolveOutcome { state, converged: false, iterations: cfg.max_iters })
}

/// WMMSE passes with the priority weights frozen at `state.alpha`; this is
/// the precoding step run once per near-RT loop.
pub fn refine_fixed_weights<T: Scalar>(
    channels: &ChannelSet<T>,
    assoc: &Association,
    spec: &UtilitySpec<T>,
    state: &PrecodingState<T>,
    cfg: &PrecoderConfig,
) -> Result<SolveOutcome<T>> {
    let mut state = state.clone();
    state.conform(channels, assoc, spec)?;
    let tol = T::of(cfg.rate_tol_mbps);
    let mut streak = 0;
    for it in 1..=cfg.max_iters {
        let prev = state.rates_mbps.clone();
        state = wmmse_iteration(&state, channels, assoc, spec, cfg)?;
        if max_abs_change(&prev, &state.rates_mbps) < tol {
            streak += 1;
            if streak >= cfg.patience {
                return Ok(SolveOutcome { state, converged: true, iterations: it });
            }
        } else {
            streak = 0;
        }
    }
    Ok(SolveOutcome { state, converged: false, iterations: cfg.max_iters })
}

/// WMMSE passes with `μ` frozen at `state.mu` and the weights re-evaluated
/// every pass as `α_k = b_k (U'_k(r_k) + μ_k)`. For a sum-rate utility this
/// is [`refine_fixed_weights`] at `α = b ⊙ (1 + μ)`.
pub fn solve_fixed_multipliers<T: Scalar>(
    channels: &ChannelSet<T>,
    assoc: &Association,
    spec: &UtilitySpec<T>,
    state: &PrecodingState<T>,
    boost: &[T],
    cfg: &PrecoderConfig,
) -> Result<SolveOutcome<T>> {
    if boost.len() != spec.num_users() || boost.iter().any(|&b| !(b > T::zero())) {
        return Err(invalid("one positive boost factor per user"));
    }
    let weights = |rates: &[T], mu: &[T]| -> Vec<T> {
        priority_weights(rates, mu, spec, cfg)
            .into_iter()
            .zip(boost)
            .map(|(a, &b)| (a * b).clamp(T::of(cfg.alpha_floor), T::of(cfg.alpha_cap)))
            .collect()
    };
    let mut state = state.clone();
    state.conform(channels, assoc, spec)?;
    state.alpha = weights(&state.rates, &state.mu);
    let tol = T::of(cfg.rate_tol_mbps);
    let mut streak = 0;
    for it in 1..=cfg.max_iters {
        let prev = state.rates_mbps.clone();
        state = wmmse_iteration(&state, channels, assoc, spec, cfg)?;
        state.alpha = weights(&state.rates, &state.mu);
        if max_abs_change(&prev, &state.rates_mbps) < tol {
            streak += 1;
            if streak >= cfg.patience {
                return Ok(SolveOutcome { state, converged: true, iterations: it });
            }
        } else {
            streak = 0;
        }
    }
    Ok(SolveOutcome { state, converged: false, iterations: cfg.max_iters })
}
