use nalgebra::{Cholesky, SymmetricEigen};

use super::rate::{effective_matrices, EffectiveChannels};
use super::{check_dims, hermitian_part, PrecoderConfig, PrecodingState, UtilitySpec};
use crate::error::{numeric, Result};
use crate::net_model::{Association, ChannelSet};
use crate::scalar::{frob2, CMat, Scalar, C};

#[inline]
fn one<T: Scalar>() -> C<T> {
    C::new(T::one(), T::zero())
}

#[inline]
fn real<T: Scalar>(x: T) -> C<T> {
    C::new(x, T::zero())
}

/// MMSE receive filter and MSE weight of user `k`.
fn receiver_update<T: Scalar>(
    psi: &EffectiveChannels<T>,
    k: usize,
    sigma2: T,
) -> Result<(CMat<T>, CMat<T>)> {
    let own = psi.get(k, k);
    let (n_r, n_s) = own.shape();
    let mut cov = CMat::<T>::identity(n_r, n_r) * real(sigma2);
    for i in 0..psi.num_users() {
        let p = psi.get(k, i);
        cov.gemm(one(), p, &p.adjoint(), one());
    }
    let chol = Cholesky::new(hermitian_part(&cov))
        .ok_or_else(|| numeric(format!("receive covariance of user {k} not positive definite")))?;
    let u = chol.solve(own);
    // E = I - Uᴴ Ψ_kk is the MMSE matrix, Hermitian positive definite
    let mse = hermitian_part(&(CMat::<T>::identity(n_s, n_s) - u.adjoint() * own));
    let w = Cholesky::new(mse)
        .ok_or_else(|| numeric(format!("MSE matrix of user {k} not positive definite")))?
        .inverse();
    Ok((u, hermitian_part(&w)))
}

/// Optimal precoders of one O-RU given `(A + ξI) V_k = B_k` for all its users,
/// with `ξ ≥ 0` chosen to meet the power budget.
struct OruProblem<T: Scalar> {
    q: CMat<T>,
    lambdas: Vec<T>,
    /// `Qᴴ B_k` per served user.
    rotated: Vec<CMat<T>>,
    row_energy: Vec<T>,
    null_tol: T,
}

impl<T: Scalar> OruProblem<T> {
    fn new(a: CMat<T>, rhs: &[CMat<T>]) -> Self {
        let eig = SymmetricEigen::new(hermitian_part(&a));
        let lambdas: Vec<T> = eig.eigenvalues.iter().map(|&x| x.max(T::zero())).collect();
        let lam_max = lambdas.iter().fold(T::zero(), |m, &x| m.max(x));
        let q = eig.eigenvectors;
        let qh = q.adjoint();
        let rotated: Vec<CMat<T>> = rhs.iter().map(|b| &qh * b).collect();
        let n = lambdas.len();
        let mut row_energy = vec![T::zero(); n];
        for g in &rotated {
            for j in 0..n {
                row_energy[j] += g.row(j).iter().fold(T::zero(), |acc, z| acc + z.norm_sqr());
            }
        }
        Self { q, lambdas, rotated, row_energy, null_tol: lam_max * T::of(1e-10) }
    }

    fn weights(&self, xi: T) -> Vec<T> {
        self.lambdas
            .iter()
            .map(|&lam| {
                if xi == T::zero() && lam <= self.null_tol {
                    T::zero()
                } else {
                    T::one() / (lam + xi)
                }
            })
            .collect()
    }

    fn power(&self, xi: T) -> T {
        self.weights(xi)
            .iter()
            .zip(&self.row_energy)
            .fold(T::zero(), |acc, (&w, &e)| acc + e * w * w)
    }

    fn multiplier(&self, budget: T, cfg: &PrecoderConfig, oru: usize) -> Result<T> {
        if self.power(T::zero()) <= budget {
            return Ok(T::zero());
        }
        let total: T = self.row_energy.iter().fold(T::zero(), |a, &e| a + e);
        let mut hi = (total / budget).sqrt() * T::of(1e-3);
        if !(hi > T::zero()) {
            hi = T::of(1e-12);
        }
        let mut expansions = 0;
        while self.power(hi) > budget {
            hi *= T::of(2.0);
            expansions += 1;
            if expansions > cfg.bracket_max_expansions {
                return Err(numeric(format!(
                    "power multiplier of O-RU {oru} not bracketed after {expansions} expansions \
                     (budget {}, power at ξ={} is {})",
                    budget.to64(),
                    hi.to64(),
                    self.power(hi).to64()
                )));
            }
        }
        let mut lo = T::zero();
        let tol = T::of(cfg.bisection_tol);
        for _ in 0..cfg.bisection_max_iters {
            if budget - self.power(hi) <= tol * budget {
                break;
            }
            let mid = (lo + hi) * T::of(0.5);
            if self.power(mid) > budget {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(hi)
    }

    fn precoder(&self, idx: usize, xi: T) -> CMat<T> {
        let w = self.weights(xi);
        let mut g = self.rotated[idx].clone();
        for (j, &wj) in w.iter().enumerate() {
            let s = real(wj);
            g.row_mut(j).iter_mut().for_each(|z| *z *= s);
        }
        &self.q * g
    }
}

/// One WMMSE pass with fixed priority weights: receive filters `U`, then MSE
/// weights `W`, then a sweep over O-RUs updating each O-RU's precoders as an
/// exact block minimizer. Every pass is non-decreasing in `Σ α_k r_k`.
pub fn wmmse_iteration<T: Scalar>(
    state: &PrecodingState<T>,
    channels: &ChannelSet<T>,
    assoc: &Association,
    spec: &UtilitySpec<T>,
    cfg: &PrecoderConfig,
) -> Result<PrecodingState<T>> {
    check_dims(channels, assoc, spec)?;
    let (k_n, l_n) = (channels.num_users(), channels.num_orus());
    let sigma2 = channels.noise_variance;
    let mut next = state.clone();
    let mut psi = effective_matrices(channels, assoc, &state.v)?;

    let mut x = Vec::with_capacity(k_n);
    let mut y_h = Vec::with_capacity(k_n);
    for k in 0..k_n {
        let (u, w) = receiver_update(&psi, k, sigma2)?;
        // X_k = U W Uᴴ, Yᴴ_k = U W (W Hermitian)
        let uw = &u * &w;
        x.push(hermitian_part(&(&uw * u.adjoint())));
        y_h.push(uw);
        next.u[k] = u;
        next.w[k] = w;
    }

    let alpha = &state.alpha;
    for l in 0..l_n {
        let users = &assoc.served[l];
        if users.is_empty() {
            for k in 0..k_n {
                next.v[k * l_n + l].fill(C::new(T::zero(), T::zero()));
            }
            continue;
        }
        // T_i = α_i H_ilᴴ X_i; A = Σ_i T_i H_il over every receiver, since
        // O-RU l's signals reach all users.
        let t: Vec<CMat<T>> = (0..k_n)
            .map(|i| channels.h(i, l).adjoint() * &x[i] * real(alpha[i]))
            .collect();
        let n_t = channels.antennas().n_t;
        let mut a = CMat::<T>::zeros(n_t, n_t);
        for i in 0..k_n {
            a.gemm(one(), &t[i], channels.h(i, l), one());
        }
        let rhs: Vec<CMat<T>> = users
            .iter()
            .map(|&k| {
                let v_old = &next.v[k * l_n + l];
                // α_k Hᴴ Yᴴ_k − Σ_i T_i Z_{i,k,l}, with Z_{i,k,l} = Ψ_ik − H_il V_kl
                let mut b = channels.h(k, l).adjoint() * &y_h[k] * real(alpha[k]);
                for i in 0..k_n {
                    b.gemm(-one::<T>(), &t[i], psi.get(i, k), one());
                }
                b.gemm(one(), &a, v_old, one());
                b
            })
            .collect();
        let problem = OruProblem::new(a, &rhs);
        let xi = problem.multiplier(spec.p_max_w, cfg, l)?;
        let mut new_v: Vec<CMat<T>> = (0..users.len()).map(|j| problem.precoder(j, xi)).collect();
        let p: T = new_v.iter().fold(T::zero(), |acc, v| acc + frob2(v));
        if p > spec.p_max_w {
            let s = real((spec.p_max_w / p).sqrt());
            new_v.iter_mut().for_each(|v| *v *= s);
        }
        for (&k, v) in users.iter().zip(new_v) {
            let idx = k * l_n + l;
            let delta = &v - &next.v[idx];
            for i in 0..k_n {
                psi.get_mut(i, k).gemm(one(), channels.h(i, l), &delta, one());
            }
            next.v[idx] = v;
        }
        for k in 0..k_n {
            if !users.contains(&k) {
                next.v[k * l_n + l].fill(C::new(T::zero(), T::zero()));
            }
        }
    }
    next.refresh_rates(channels, assoc)?;
    Ok(next)
}
