use nalgebra::{Cholesky, SymmetricEigen};

use super::hermitian_part;
use crate::error::{invalid, numeric, Result};
use crate::net_model::{Association, ChannelSet};
use crate::scalar::{all_finite, CMat, Scalar, C};

/// `Ψ[k][i] = Σ_{l ∈ 𝓛_i} H_{k,l} V_{i,l}` for every receiver `k` and stream
/// owner `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveChannels<T: Scalar> {
    num_users: usize,
    psi: Vec<CMat<T>>,
}

impl<T: Scalar> EffectiveChannels<T> {
    /// Wraps explicit matrices, `psi[k * K + i]`.
    pub fn from_matrices(num_users: usize, psi: Vec<CMat<T>>) -> Result<Self> {
        if psi.len() != num_users * num_users || num_users == 0 {
            return Err(invalid("effective channel array must be K × K"));
        }
        Ok(Self { num_users, psi })
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    #[inline]
    pub fn get(&self, k: usize, i: usize) -> &CMat<T> {
        &self.psi[k * self.num_users + i]
    }

    #[inline]
    pub(crate) fn get_mut(&mut self, k: usize, i: usize) -> &mut CMat<T> {
        &mut self.psi[k * self.num_users + i]
    }
}

pub fn effective_matrices<T: Scalar>(
    channels: &ChannelSet<T>,
    assoc: &Association,
    v: &[CMat<T>],
) -> Result<EffectiveChannels<T>> {
    let (k_n, l_n) = (channels.num_users(), channels.num_orus());
    let ant = channels.antennas();
    if v.len() != k_n * l_n {
        return Err(invalid(format!("expected {} precoders, got {}", k_n * l_n, v.len())));
    }
    if v.iter().any(|m| m.shape() != (ant.n_t, ant.n_s)) {
        return Err(invalid("precoders must be n_t × n_s"));
    }
    if assoc.num_users() != k_n {
        return Err(invalid("association does not match the channel set"));
    }
    let mut psi = Vec::with_capacity(k_n * k_n);
    for k in 0..k_n {
        for i in 0..k_n {
            let mut acc = CMat::<T>::zeros(ant.n_r, ant.n_s);
            for &l in &assoc.serving[i] {
                acc.gemm(
                    C::new(T::one(), T::zero()),
                    channels.h(k, l),
                    &v[i * l_n + l],
                    C::new(T::one(), T::zero()),
                );
            }
            psi.push(acc);
        }
    }
    Ok(EffectiveChannels { num_users: k_n, psi })
}

fn interference_plus_noise<T: Scalar>(psi: &EffectiveChannels<T>, k: usize, sigma2: T) -> CMat<T> {
    let n_r = psi.get(k, k).nrows();
    let mut j = CMat::<T>::identity(n_r, n_r) * C::new(sigma2, T::zero());
    for i in 0..psi.num_users() {
        if i != k {
            let p = psi.get(k, i);
            j.gemm(C::new(T::one(), T::zero()), p, &p.adjoint(), C::new(T::one(), T::zero()));
        }
    }
    hermitian_part(&j)
}

fn user_rate<T: Scalar>(psi: &EffectiveChannels<T>, k: usize, sigma2: T) -> Result<T> {
    let j = interference_plus_noise(psi, k, sigma2);
    let chol = Cholesky::new(j)
        .ok_or_else(|| numeric(format!("interference-plus-noise matrix of user {k} not positive definite")))?;
    // whitened signal A = L⁻¹ Ψ_kk; det(I + Γ_k) = det(I + Aᴴ A)
    let a = chol
        .l_dirty()
        .solve_lower_triangular(psi.get(k, k))
        .ok_or_else(|| numeric("singular Cholesky factor"))?;
    let gram = hermitian_part(&(a.adjoint() * &a));
    let eig = SymmetricEigen::new(gram);
    let ln2 = T::ln_2();
    let r = eig
        .eigenvalues
        .iter()
        .fold(T::zero(), |acc, &lam| acc + lam.max(T::zero()).ln_1p() / ln2);
    if !r.is_finite() {
        return Err(numeric(format!("non-finite rate for user {k}")));
    }
    Ok(r.max(T::zero()))
}

/// Per-user rates `log2 det(I + Γ_k)` in bit/s/Hz.
pub fn rates_from_effective<T: Scalar>(psi: &EffectiveChannels<T>, sigma2: T) -> Result<Vec<T>> {
    if !(sigma2 > T::zero()) {
        return Err(invalid("noise variance must be positive"));
    }
    if !psi.psi.iter().all(all_finite) {
        return Err(numeric("effective channels contain non-finite entries"));
    }
    (0..psi.num_users()).map(|k| user_rate(psi, k, sigma2)).collect()
}

/// SINR matrices `Γ_k = Ψ_kk Ψ_kkᴴ (Σ_{i≠k} Ψ_ki Ψ_kiᴴ + σ² I)⁻¹` and rates.
pub fn sinr_and_rate<T: Scalar>(
    psi: &EffectiveChannels<T>,
    sigma2: T,
) -> Result<(Vec<CMat<T>>, Vec<T>)> {
    let rates = rates_from_effective(psi, sigma2)?;
    let mut gammas = Vec::with_capacity(psi.num_users());
    for k in 0..psi.num_users() {
        let j = interference_plus_noise(psi, k, sigma2);
        let j_inv = Cholesky::new(j)
            .ok_or_else(|| numeric("interference-plus-noise matrix not positive definite"))?
            .inverse();
        let s = psi.get(k, k);
        gammas.push(s * s.adjoint() * j_inv);
    }
    Ok((gammas, rates))
}
