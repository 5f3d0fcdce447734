mod common;

use cellfree_core::net_model::{associate_users, Antennas, ChannelSet, LargeScaleFading};
use cellfree_core::precoder::{
    effective_matrices, priority_weights, rates_from_effective, refine_fixed_weights,
    sinr_and_rate, solve, wmmse_iteration, EffectiveChannels, PrecoderConfig, PrecodingState,
    UtilityKind, UtilitySpec,
};
use cellfree_core::scalar::{CMat, C};
use common::*;
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cgauss(rng: &mut ChaCha8Rng, r: usize, c: usize) -> CMat<f64> {
    CMat::from_fn(r, c, |_, _| C::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
}

/// Ψ by explicit term-by-term accumulation.
fn psi_oracle(ch: &ChannelSet<f64>, assoc: &cellfree_core::net_model::Association, v: &[CMat<f64>], k: usize, i: usize) -> CMat<f64> {
    let l_n = ch.num_orus();
    let ant = ch.antennas();
    let mut out = CMat::zeros(ant.n_r, ant.n_s);
    for l in 0..l_n {
        if assoc.serving[i].contains(&l) {
            let h = ch.h(k, l);
            let p = &v[i * l_n + l];
            for a in 0..ant.n_r {
                for b in 0..ant.n_s {
                    for t in 0..ant.n_t {
                        out[(a, b)] += h[(a, t)] * p[(t, b)];
                    }
                }
            }
        }
    }
    out
}

/// log2 |det(I + Γ)| via a dense LU determinant.
fn rate_oracle(psi: &EffectiveChannels<f64>, k: usize, sigma2: f64) -> f64 {
    let n_r = psi.get(k, k).nrows();
    let mut j = CMat::<f64>::identity(n_r, n_r) * C::new(sigma2, 0.0);
    for i in 0..psi.num_users() {
        if i != k {
            j += psi.get(k, i) * psi.get(k, i).adjoint();
        }
    }
    let gamma = psi.get(k, k) * psi.get(k, k).adjoint() * j.try_inverse().unwrap();
    let m = CMat::<f64>::identity(n_r, n_r) + gamma;
    m.determinant().norm().log2()
}

fn two_by_two(seed: u64) -> (ChannelSet<f64>, cellfree_core::net_model::Association, Vec<CMat<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ant = Antennas::default();
    let h: Vec<CMat<f64>> = (0..4).map(|_| cgauss(&mut rng, 2, 4)).collect();
    let ch = ChannelSet::from_matrices(2, 2, ant, h, 0.3, 1e6).unwrap();
    let f = LargeScaleFading::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0])).unwrap();
    let assoc = associate_users(&f, &[true, true], 2).unwrap();
    let v: Vec<CMat<f64>> = (0..4).map(|_| cgauss(&mut rng, 4, 2)).collect();
    (ch, assoc, v)
}

#[test]
fn effective_channels_match_termwise_sum() {
    for seed in 0..5 {
        let (ch, assoc, v) = two_by_two(seed);
        let psi = effective_matrices(&ch, &assoc, &v).unwrap();
        for k in 0..2 {
            for i in 0..2 {
                let d = (psi.get(k, i) - psi_oracle(&ch, &assoc, &v, k, i)).norm();
                assert!(d < 1e-13, "k={k} i={i} diff={d}");
            }
        }
    }
}

#[test]
fn single_serving_oru_is_one_term() {
    let (ch, _, v) = two_by_two(9);
    let f = LargeScaleFading::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0])).unwrap();
    let assoc = associate_users(&f, &[true, true], 1).unwrap();
    let psi = effective_matrices(&ch, &assoc, &v).unwrap();
    // user 1 is served by O-RU 1 only
    let expect = ch.h(0, 1) * &v[1 * 2 + 1];
    assert!((psi.get(0, 1) - expect).norm() < 1e-14);
}

#[test]
fn rates_match_dense_determinant() {
    for seed in 0..10 {
        let (ch, assoc, v) = two_by_two(100 + seed);
        let psi = effective_matrices(&ch, &assoc, &v).unwrap();
        let (_, rates) = sinr_and_rate(&psi, ch.noise_variance).unwrap();
        for k in 0..2 {
            let o = rate_oracle(&psi, k, ch.noise_variance);
            assert!((rates[k] - o).abs() <= 1e-10 * o.max(1.0), "seed {seed}: {} vs {o}", rates[k]);
        }
    }
}

#[test]
fn scalar_rate_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..100 {
        let h = C::new(rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>() * 2.0 - 1.0);
        let v = C::new(rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>() * 2.0 - 1.0);
        let sigma2 = 0.01 + rng.random::<f64>();
        let psi = EffectiveChannels::from_matrices(1, vec![CMat::from_element(1, 1, h * v)]).unwrap();
        let r = rates_from_effective(&psi, sigma2).unwrap()[0];
        let expect = (1.0 + (h * v).norm_sqr() / sigma2).log2();
        assert!((r - expect).abs() <= 1e-12 * expect, "{r} vs {expect}");
    }
}

/// Single-user MIMO capacity by water-filling over the eigenmodes of HᴴH.
fn waterfilling_capacity(h: &CMat<f64>, p: f64, sigma2: f64, n_s: usize) -> f64 {
    let eig = SymmetricEigen::new(h.adjoint() * h);
    let mut g: Vec<f64> = eig.eigenvalues.iter().map(|&x| x / sigma2).collect();
    g.sort_by(|a, b| b.partial_cmp(a).unwrap());
    g.truncate(n_s);
    g.retain(|&x| x > 1e-12);
    for m in (1..=g.len()).rev() {
        let level = (p + g[..m].iter().map(|x| 1.0 / x).sum::<f64>()) / m as f64;
        if level - 1.0 / g[m - 1] >= 0.0 {
            return g[..m].iter().map(|x| (level * x).log2()).sum();
        }
    }
    0.0
}

#[test]
fn single_link_converges_to_waterfilling() {
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ant = Antennas::new(4, 2, 2).unwrap();
        let h = cgauss(&mut rng, 2, 4);
        let sigma2 = 0.05;
        let ch = ChannelSet::from_matrices(1, 1, ant, vec![h.clone()], sigma2, 1e6).unwrap();
        let f = LargeScaleFading::new(DMatrix::from_element(1, 1, 1.0)).unwrap();
        let assoc = associate_users(&f, &[true], 1).unwrap();
        let spec = UtilitySpec::uniform(UtilityKind::SumRate, vec![0.0], 1.0, 0.05).unwrap();
        let cfg = PrecoderConfig { rate_tol_mbps: 1e-10, max_iters: 2000, ..Default::default() };
        let out = solve(&ch, &assoc, &spec, &[true], None, &cfg).unwrap();
        let cap = waterfilling_capacity(&h, 1.0, sigma2, 2);
        let r = out.state.rates[0];
        assert!((r - cap).abs() < 1e-6 * cap, "seed {seed}: rate {r} capacity {cap}");
        assert!((out.state.oru_power(0) - 1.0).abs() < 1e-5);
        assert_eq!(out.state.mu, vec![0.0]);
    }
}

fn surrogate(alpha: &[f64], rates: &[f64]) -> f64 {
    alpha.iter().zip(rates).map(|(a, r)| a * r).sum()
}

#[test]
fn wmmse_pass_is_monotone_and_feasible() {
    let cfg = PrecoderConfig::default();
    for seed in 0..20u64 {
        let k = 2 + (seed as usize % 4);
        let l = 4 + (seed as usize % 7);
        let inst = instance(seed, l, k, 200.0, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = sum_rate_spec(k, 0.0);
        let mut state = PrecodingState::initial(&inst.channels, &inst.assoc, &spec, &cfg).unwrap();
        state.alpha = (0..k).map(|_| 0.2 + 2.0 * rng.random::<f64>()).collect();
        let mut prev = surrogate(&state.alpha, &state.rates);
        for _ in 0..30 {
            state = wmmse_iteration(&state, &inst.channels, &inst.assoc, &spec, &cfg).unwrap();
            let s = surrogate(&state.alpha, &state.rates);
            assert!(s >= prev * (1.0 - 1e-6), "seed {seed}: {s} < {prev}");
            prev = s;
            for p in state.oru_powers() {
                assert!(p <= spec.p_max_w * (1.0 + 1e-6));
            }
        }
    }
}

#[test]
fn inactive_oru_carries_nothing() {
    let cfg = PrecoderConfig::default();
    let inst = instance(3, 5, 3, 200.0, 3);
    let active = vec![true, false, true, true, false];
    let assoc = associate_users(&inst.fading, &active, 3).unwrap();
    let spec = sum_rate_spec(3, 0.0);
    let out = solve(&inst.channels, &assoc, &spec, &active, None, &PrecoderConfig { max_iters: 20, ..cfg }).unwrap();
    assert_eq!(out.state.oru_power(1), 0.0);
    assert_eq!(out.state.oru_power(4), 0.0);
    // activation inconsistent with the association is rejected
    assert!(solve(&inst.channels, &inst.assoc, &spec, &active, None, &PrecoderConfig::default()).is_err());
}

#[test]
fn zero_activation_gives_zero_rates() {
    let inst = instance(4, 4, 3, 200.0, 2);
    let active = vec![false; 4];
    let assoc = associate_users(&inst.fading, &active, 2).unwrap();
    let spec = sum_rate_spec(3, 5.0);
    let out = solve(&inst.channels, &assoc, &spec, &active, None, &PrecoderConfig { max_iters: 10, ..Default::default() }).unwrap();
    assert!(out.state.rates.iter().all(|&r| r == 0.0));
    assert!(out.state.oru_powers().iter().all(|&p| p == 0.0));
}

#[test]
fn common_weight_scaling_leaves_rates_unchanged() {
    let cfg = PrecoderConfig { bisection_tol: 1e-12, bisection_max_iters: 200, ..Default::default() };
    for seed in 0..5u64 {
        let inst = instance(seed + 50, 6, 3, 200.0, 3);
        let spec = sum_rate_spec(3, 0.0);
        let mut a = PrecodingState::initial(&inst.channels, &inst.assoc, &spec, &cfg).unwrap();
        a.alpha = vec![0.5, 1.3, 2.0];
        let mut b = a.clone();
        b.alpha = a.alpha.iter().map(|x| x * 7.5).collect();
        for _ in 0..5 {
            a = wmmse_iteration(&a, &inst.channels, &inst.assoc, &spec, &cfg).unwrap();
            b = wmmse_iteration(&b, &inst.channels, &inst.assoc, &spec, &cfg).unwrap();
        }
        for (x, y) in a.rates.iter().zip(&b.rates) {
            assert!((x - y).abs() <= 1e-6 * x.abs().max(1e-9), "{x} vs {y}");
        }
    }
}

#[test]
fn single_user_single_oru_full_power() {
    let inst = instance(11, 1, 1, 100.0, 1);
    let spec = sum_rate_spec(1, 0.0);
    let out = solve(&inst.channels, &inst.assoc, &spec, &inst.active, None, &PrecoderConfig::default()).unwrap();
    assert!(out.converged);
    assert_eq!(out.state.mu, vec![0.0]);
    assert!((out.state.oru_power(0) - 1.0).abs() < 1e-5);
}

#[test]
fn warm_start_from_converged_state_is_immediate() {
    let inst = instance(21, 6, 3, 500.0, 3);
    let spec = sum_rate_spec(3, 0.0);
    let cfg = PrecoderConfig { max_iters: 5000, ..Default::default() };
    let first = solve(&inst.channels, &inst.assoc, &spec, &inst.active, None, &cfg).unwrap();
    assert!(first.converged);
    let again = solve(&inst.channels, &inst.assoc, &spec, &inst.active, Some(&first.state), &cfg).unwrap();
    assert!(again.converged);
    assert!(again.iterations <= 2, "took {} iterations", again.iterations);
}

#[test]
fn binding_minimum_rates_are_met() {
    let cfg = PrecoderConfig { max_iters: 5000, ..Default::default() };
    let inst = instance(5, 6, 3, 500.0, 3);
    let free = solve(&inst.channels, &inst.assoc, &sum_rate_spec(3, 0.0), &inst.active, None, &cfg).unwrap();
    // ask the weakest user for more than it gets at the sum-rate optimum
    let weakest = (0..3)
        .min_by(|&a, &b| free.state.rates_mbps[a].partial_cmp(&free.state.rates_mbps[b]).unwrap())
        .unwrap();
    let mut r_min = vec![0.0; 3];
    r_min[weakest] = free.state.rates_mbps[weakest] + 5.0;
    for k in 0..3 {
        if k != weakest {
            r_min[k] = 10.0;
        }
    }
    let spec = UtilitySpec::uniform(UtilityKind::SumRate, r_min.clone(), 1.0, 0.05).unwrap();
    let out = solve(&inst.channels, &inst.assoc, &spec, &inst.active, None, &cfg).unwrap();
    assert!(out.converged, "did not converge in {} iterations", out.iterations);
    assert!(out.state.mu[weakest] > 0.0);
    for k in 0..3 {
        assert!(out.state.rates_mbps[k] >= r_min[k] - cfg.rate_tol_mbps, "user {k}: {} < {}", out.state.rates_mbps[k], r_min[k]);
    }
}

#[test]
fn refine_keeps_weights_frozen() {
    let inst = instance(8, 6, 3, 500.0, 3);
    let spec = UtilitySpec::uniform(UtilityKind::SumLogRate, vec![0.0; 3], 1.0, 0.05).unwrap();
    let cfg = PrecoderConfig { max_iters: 5000, ..Default::default() };
    let mut s = PrecodingState::initial(&inst.channels, &inst.assoc, &spec, &cfg).unwrap();
    s.alpha = vec![1.0, 4.0, 0.5];
    let out = refine_fixed_weights(&inst.channels, &inst.assoc, &spec, &s, &cfg).unwrap();
    assert!(out.converged);
    assert_eq!(out.state.alpha, vec![1.0, 4.0, 0.5]);
    let w = priority_weights(&out.state.rates, &out.state.mu, &spec, &cfg);
    assert!(w.iter().all(|x| x.is_finite()));
}

#[test]
fn single_precision_instance_runs() {
    let ant = Antennas::new(2, 2, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h: Vec<CMat<f32>> = (0..4)
        .map(|_| CMat::from_fn(2, 2, |_, _| C::new(rng.random::<f32>() - 0.5, rng.random::<f32>() - 0.5)))
        .collect();
    let ch = ChannelSet::from_matrices(2, 2, ant, h, 0.1f32, 1e6).unwrap();
    let f = LargeScaleFading::new(DMatrix::from_row_slice(2, 2, &[1.0f32, 0.5, 0.4, 1.0])).unwrap();
    let assoc = associate_users(&f, &[true, true], 2).unwrap();
    let spec = UtilitySpec::uniform(UtilityKind::SumRate, vec![0.0f32; 2], 1.0, 0.05).unwrap();
    let out = solve(&ch, &assoc, &spec, &[true, true], None, &PrecoderConfig { max_iters: 50, ..Default::default() }).unwrap();
    assert!(out.state.rates.iter().all(|r| r.is_finite() && *r >= 0.0));
    assert!(out.state.oru_powers().iter().all(|&p| p <= 1.0 + 1e-4));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn dual_multipliers_stay_nonnegative(mu in proptest::collection::vec(0.0f64..5.0, 4),
                                         rates in proptest::collection::vec(0.0f64..100.0, 4),
                                         r_min in proptest::collection::vec(0.0f64..50.0, 4)) {
        let spec = UtilitySpec::uniform(UtilityKind::SumRate, r_min, 1.0, 0.05).unwrap();
        let next = cellfree_core::precoder::dual_ascent_update(&mu, &rates, &spec);
        prop_assert!(next.iter().all(|&m| m >= 0.0));
    }

    #[test]
    fn random_activation_respects_budgets(seed in 0u64..1000, mask in proptest::collection::vec(any::<bool>(), 6)) {
        let inst = instance(seed, 6, 3, 200.0, 2);
        let assoc = associate_users(&inst.fading, &mask, 2).unwrap();
        let spec = sum_rate_spec(3, 5.0);
        let out = solve(&inst.channels, &assoc, &spec, &mask, None, &PrecoderConfig { max_iters: 15, ..Default::default() }).unwrap();
        for (l, p) in out.state.oru_powers().into_iter().enumerate() {
            let budget = if mask[l] { 1.0 } else { 0.0 };
            prop_assert!(p <= budget * (1.0 + 1e-6));
        }
    }
}
