//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any fails. Criteria run concurrently.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use cellfree_core::agents::{random_objective, render_intent, translate_intent, LoopSnapshot};
use cellfree_core::mappo::{
    build_observations, compute_advantages, log_softmax, Batch, InputNorm, Mappo, MappoConfig, NetworkEnv,
    NetworkEnvConfig, PpoLosses, OFF, ON,
};
use cellfree_core::memory::{cosine_similarity, Experience, ExperienceMeta, MemoryConfig, MemoryStore};
use cellfree_core::net_model::{
    associate_users, compute_large_scale_fading, draw_channels, generate_topology, Antennas, NoiseParams,
    PathLossParams, Topology,
};
use cellfree_core::precoder::{
    rates_from_effective, solve, wmmse_iteration, EffectiveChannels, PrecoderConfig, PrecodingState, UtilityKind,
    UtilitySpec,
};
use cellfree_core::qlora::{
    accounting_table, nf4_dequantize, nf4_half_max_gap, nf4_quantize, AccountingConfig, LayerManifest, NF4_LEVELS,
};
use cellfree_core::scalar::{CMat, C};
use cellfree_runtime::{run_scenario, train_policy, Mode, Scenario};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const MONOTONE_SLACK: f64 = 1e-6;
const POWER_SLACK: f64 = 1e-6;
const RATE_TOL: f64 = 1e-12;
const GRAD_TOL: f64 = 1e-4;
const ADV_TOL: f64 = 1e-12;
const SMOKE_SEEDS_NEEDED: usize = 9;
const SMOKE_EPISODES: usize = 500;
const SMOKE_R_MIN: f64 = 10.0;
const MIN_REDUCTION_VS_GREEDY: f64 = 0.10;
const VIOL_TOL_MBPS: f64 = 0.1;
const ES_FLOOR_MBPS: f64 = 50.0;
const WARM_MAX_LOOPS: usize = 2;
const COLD_MIN_LOOPS: usize = 5;
const TABLE_TOL: f64 = 0.05;
const TABLE_GB: [[f64; 4]; 2] = [[45.7, 15.3, 11.4, 3.8], [88.2, 29.5, 22.1, 7.4]];
const REDUCTION_PCT: (f64, f64) = (90.0, 94.0);
const P_MAX_W: f64 = 1.0;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn scenario(name: &str) -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name);
    Scenario::load(path).expect("bundled scenario loads")
}

fn random_instance(seed: u64, l: usize, k: usize, active: &[bool]) -> (cellfree_core::ChannelSet, cellfree_core::net_model::Association) {
    let ant = Antennas::default();
    let topo = generate_topology(seed, l, k, 200.0, ant).unwrap();
    let fading = compute_large_scale_fading::<f64>(&topo, &PathLossParams::default()).unwrap();
    let channels = draw_channels(&fading, ant, &NoiseParams::default(), seed ^ 0xabcd).unwrap();
    let assoc = associate_users(&fading, active, 3).unwrap();
    (channels, assoc)
}

fn surrogate(alpha: &[f64], rates: &[f64]) -> f64 {
    alpha.iter().zip(rates).map(|(a, r)| a * r).sum()
}

fn wmmse_monotonicity() -> Outcome {
    let t0 = Instant::now();
    let cfg = PrecoderConfig::default();
    let mut worst: f64 = 0.0;
    let mut passes = 0;
    for seed in 0..20u64 {
        let k = 1 + (seed as usize % 5);
        let l = 2 + (seed as usize % 9);
        let (ch, assoc) = random_instance(seed, l, k, &vec![true; l]);
        let spec = UtilitySpec::uniform(UtilityKind::SumRate, vec![0.0; k], P_MAX_W, 0.05).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = PrecodingState::initial(&ch, &assoc, &spec, &cfg).unwrap();
        state.alpha = (0..k).map(|_| 0.2 + 2.0 * rng.random::<f64>()).collect();
        let mut prev = surrogate(&state.alpha, &state.rates);
        for _ in 0..40 {
            state = wmmse_iteration(&state, &ch, &assoc, &spec, &cfg).unwrap();
            let s = surrogate(&state.alpha, &state.rates);
            worst = worst.max((prev - s) / prev.abs().max(f64::MIN_POSITIVE));
            prev = s;
            passes += 1;
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    check(
        worst <= MONOTONE_SLACK && secs < 60.0,
        format!("20 instances, {passes} passes, worst relative drop {worst:.2e}, {secs:.1} s"),
    )
}

fn power_feasibility() -> Outcome {
    let cfg = PrecoderConfig::default();
    let mut worst: f64 = f64::NEG_INFINITY;
    let mut checked = 0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let k = 1 + (seed as usize % 5);
        let l = 2 + (seed as usize % 9);
        let mut active: Vec<bool> = (0..l).map(|_| rng.random_bool(0.7)).collect();
        active[0] = true;
        let (ch, assoc) = random_instance(seed, l, k, &active);
        let r_min: Vec<f64> = (0..k).map(|_| if rng.random_bool(0.5) { rng.random_range(0.0..20.0) } else { 0.0 }).collect();
        let spec = UtilitySpec::uniform(UtilityKind::SumRate, r_min, P_MAX_W, 0.05).unwrap();
        let mut state = PrecodingState::initial(&ch, &assoc, &spec, &cfg).unwrap();
        let mut states = vec![state.clone()];
        for _ in 0..30 {
            state = wmmse_iteration(&state, &ch, &assoc, &spec, &cfg).unwrap();
            states.push(state.clone());
        }
        states.push(solve(&ch, &assoc, &spec, &active, None, &cfg).unwrap().state);
        for s in &states {
            for (l, p) in s.oru_powers().into_iter().enumerate() {
                let cap = if active[l] { P_MAX_W } else { 0.0 };
                worst = worst.max(p - cap * (1.0 + POWER_SLACK));
                checked += 1;
            }
        }
    }
    check(worst <= 0.0, format!("{checked} O-RU power checks, worst excess {worst:.2e} W"))
}

fn scalar_rate_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let h = C::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let v = C::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let sigma2 = 0.01 + rng.random::<f64>();
        let psi = EffectiveChannels::from_matrices(1, vec![CMat::from_element(1, 1, h * v)]).unwrap();
        let r = rates_from_effective(&psi, sigma2).unwrap()[0];
        let expect = (1.0 + (h * v).norm_sqr() / sigma2).log2();
        worst = worst.max((r - expect).abs() / expect);
    }
    check(worst <= RATE_TOL, format!("100 draws, worst relative error {worst:.2e}"))
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn grad_toy(seed: u64, c1: f64, zero_adv: bool) -> (Mappo<f64>, Batch<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = MappoConfig { policy_hidden: vec![6], critic_hidden: vec![6], c1, ..Default::default() };
    let mut m = Mappo::new(1, 2, cfg, InputNorm::identity(3), &mut rng).unwrap();
    for p in m.policies.iter_mut() {
        p.params_mut().iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
    }
    m.critic.params_mut().iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
    let n = 8;
    let observations: Vec<Vec<Vec<f64>>> =
        (0..n).map(|_| (0..2).map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect()).collect()).collect();
    let actions: Vec<Vec<bool>> = (0..n).map(|_| (0..2).map(|_| rng.random()).collect()).collect();
    let old_log_probs = (0..n)
        .map(|t| {
            (0..2)
                .map(|l| {
                    let lp = log_softmax(&m.logits(l, &observations[t][l]));
                    lp[if actions[t][l] { ON } else { OFF }] + rng.random_range(-0.5..0.5)
                })
                .collect()
        })
        .collect();
    let advantages = (0..n).map(|_| if zero_adv { 0.0 } else { rng.random_range(-2.0..2.0) }).collect();
    let returns = (0..n).map(|_| rng.random_range(-3.0..1.0)).collect();
    (m, Batch { observations, actions, old_log_probs, advantages, returns })
}

fn policy_fd(m: &mut Mappo<f64>, batch: &Batch<f64>, objective: fn(&PpoLosses<f64>) -> f64) -> f64 {
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for l in 0..2 {
        let (_, g) = m.policy_gradient(l, batch).unwrap();
        for i in 0..m.policies[l].num_params() {
            let p = m.policies[l].params()[i];
            m.policies[l].params_mut()[i] = p + h;
            let fp = objective(&m.ppo_losses(l, batch).unwrap());
            m.policies[l].params_mut()[i] = p - h;
            let fm = objective(&m.ppo_losses(l, batch).unwrap());
            m.policies[l].params_mut()[i] = p;
            worst = worst.max(rel_err(g[i], (fp - fm) / (2.0 * h)));
        }
    }
    worst
}

fn ppo_gradient_check() -> Outcome {
    let t0 = Instant::now();
    let (mut clip, mut ent, mut val) = (0.0f64, 0.0f64, 0.0f64);
    let mut params = 0;
    for seed in 0..5 {
        let (mut m, b) = grad_toy(seed, 0.0, false);
        params = m.policies[0].num_params() + m.critic.num_params();
        clip = clip.max(policy_fd(&mut m, &b, |l| -l.clip));
        let (mut m, b) = grad_toy(seed, 1.0, true);
        ent = ent.max(policy_fd(&mut m, &b, |l| -l.entropy));
        let (mut m, b) = grad_toy(seed, 0.01, false);
        let c2 = m.cfg.c2;
        let (_, g) = m.critic_gradient(&b);
        let h = 1e-5;
        for i in 0..m.critic.num_params() {
            let p = m.critic.params()[i];
            m.critic.params_mut()[i] = p + h;
            let fp = c2 * m.ppo_losses(0, &b).unwrap().value;
            m.critic.params_mut()[i] = p - h;
            let fm = c2 * m.ppo_losses(0, &b).unwrap().value;
            m.critic.params_mut()[i] = p;
            val = val.max(rel_err(g[i], (fp - fm) / (2.0 * h)));
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    check(
        clip < GRAD_TOL && ent < GRAD_TOL && val < GRAD_TOL && params <= 200 && secs < 60.0,
        format!("{params} params, worst relative error clip {clip:.1e} entropy {ent:.1e} value {val:.1e}, {secs:.1} s"),
    )
}

fn advantage_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for gamma in [0.0, 0.5, 0.9] {
        for n in 1..=10usize {
            let r: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..0.0)).collect();
            let v: Vec<f64> = (0..=n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let (a, ret) = compute_advantages(&r, &v, gamma).unwrap();
            for t in 0..n {
                let (mut ao, mut go) = (0.0, 0.0);
                for i in 0..n - t {
                    let gi = gamma.powi(i as i32);
                    ao += gi * (r[t + i] + gamma * v[t + i + 1] - v[t + i]);
                    go += gi * r[t + i];
                }
                worst = worst.max((a[t] - ao).abs() / ao.abs().max(1.0));
                worst = worst.max((ret[t] - go).abs() / go.abs().max(1.0));
            }
        }
    }
    check(worst <= ADV_TOL, format!("gamma 0, 0.5, 0.9, T 1..10, worst error {worst:.1e}"))
}

fn toy_env(seed: u64) -> NetworkEnv<f64> {
    let ant = Antennas::default();
    let topo =
        Topology::from_positions(vec![[50.0, 50.0], [480.0, 480.0]], vec![[30.0, 50.0], [70.0, 50.0]], 500.0, ant)
            .unwrap();
    let fading = compute_large_scale_fading::<f64>(&topo, &PathLossParams::default()).unwrap();
    let channels = draw_channels(&fading, ant, &NoiseParams::default(), seed).unwrap();
    let spec = UtilitySpec::uniform(UtilityKind::SumRate, vec![SMOKE_R_MIN; 2], P_MAX_W, 0.05).unwrap();
    NetworkEnv::new(fading, channels, spec, NetworkEnvConfig { l_max: 2, ..Default::default() }).unwrap()
}

fn mappo_smoke() -> Outcome {
    let t0 = Instant::now();
    let solved = std::thread::scope(|s| {
        let handles: Vec<_> = (0..10u64)
            .map(|seed| {
                s.spawn(move || {
                    let mut env = toy_env(seed);
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let cfg = MappoConfig::default();
                    assert_eq!((cfg.horizon, cfg.clip_eps), (10, 0.2));
                    let mut m = Mappo::new(2, 2, cfg, InputNorm::from_fading(env.fading()), &mut rng).unwrap();
                    for _ in 0..SMOKE_EPISODES {
                        m.train_iteration(&mut env, &mut rng).unwrap();
                    }
                    let obs = build_observations(env.fading(), &[0.0, 0.0], &[1.0, 1.0], &[true, true]).unwrap();
                    let z = m.infer_activations(&obs).unwrap();
                    let rates = env.rates_for(&z).unwrap();
                    z.iter().filter(|&&a| a).count() <= 1 && rates.iter().all(|&r| r >= SMOKE_R_MIN)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).filter(|&ok| ok).count()
    });
    let secs = t0.elapsed().as_secs_f64();
    check(
        solved >= SMOKE_SEEDS_NEEDED && secs < 600.0,
        format!("{solved}/10 seeds feasible with one O-RU after {SMOKE_EPISODES} episodes, {secs:.0} s"),
    )
}

fn final_active(snaps: &[LoopSnapshot]) -> usize {
    snaps.last().map_or(0, |s| s.active.iter().filter(|&&a| a).count())
}

fn satisfied(s: &LoopSnapshot) -> bool {
    s.rates_mbps.iter().zip(&s.r_min_mbps).all(|(r, m)| *r >= m - VIOL_TOL_MBPS)
}

fn comparative() -> Outcome {
    let sc = scenario("comparative.toml");
    let n = &sc.network;
    if (n.num_orus, n.num_users) != (20, 8) {
        return Err(format!("scenario is L={} K={}", n.num_orus, n.num_users));
    }
    let (policy, _) = train_policy(&sc, sc.training.episodes, |_| {}).map_err(|e| e.to_string())?;
    let mut active = Vec::new();
    let mut met = Vec::new();
    for mode in [Mode::Proposed, Mode::Greedy, Mode::FullPower] {
        let rec = run_scenario(&sc, mode, Some(policy.clone())).map_err(|e| e.to_string())?;
        let last = rec.snapshots().last().unwrap();
        if last.r_min_mbps != vec![10.0; 8] {
            return Err(format!("R_min is {:?}", last.r_min_mbps));
        }
        active.push(final_active(rec.snapshots()));
        met.push(satisfied(last));
    }
    let (p, g, f) = (active[0], active[1], active[2]);
    let reduction = 1.0 - p as f64 / g as f64;
    check(
        p <= g && g <= f && met[0] && met[1] && reduction >= MIN_REDUCTION_VS_GREEDY,
        format!(
            "active proposed {p}, greedy {g}, full_power {f}; constraints met {}/{}; {:.1}% below greedy",
            met[0],
            met[1],
            100.0 * reduction
        ),
    )
}

fn intent_translation() -> Outcome {
    let es = translate_intent("Enter the energy-saving mode. Guarantee 50 Mbps for user 3.", 5).map_err(|e| e.to_string())?;
    let um = translate_intent("Maximize the sum of log-rates. No minimum rate requirements.", 5).map_err(|e| e.to_string())?;
    let rows_ok = es.canonical_json()
        == r#"{"utility_kind":"sum_rate","energy_saving":true,"r_min_mbps":[0.0,0.0,50.0,0.0,0.0],"monitored_constraints":[{"user":3,"min_rate_mbps":50.0}]}"#
        && um.canonical_json()
            == r#"{"utility_kind":"sum_log_rate","energy_saving":false,"r_min_mbps":[0.0,0.0,0.0,0.0,0.0],"monitored_constraints":[]}"#;
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut round_trips = 0;
    for _ in 0..20 {
        let k = rng.random_range(1..=8);
        let spec = random_objective(k, &mut rng);
        let text = render_intent(&spec, &mut rng);
        if translate_intent(&text, k).ok().as_ref() == Some(&spec) {
            round_trips += 1;
        }
    }
    check(rows_ok && round_trips == 20, format!("table rows byte-exact {rows_ok}, paraphrases {round_trips}/20"))
}

fn timeline_shape() -> Outcome {
    let sc = scenario("timeline.toml");
    let at: Vec<u64> = sc.schedule.iter().map(|s| s.at_loop).collect();
    if at != [10, 40] {
        return Err(format!("schedule at {at:?}"));
    }
    let (policy, _) = train_policy(&sc, sc.training.episodes, |_| {}).map_err(|e| e.to_string())?;
    let rec = run_scenario(&sc, Mode::Proposed, Some(policy)).map_err(|e| e.to_string())?;
    let s = rec.snapshots();
    let at_loop = |t: u64| &s[(t - 1) as usize];
    let es_ok = at_loop(10).energy_saving && at_loop(10).r_min_mbps[2] >= ES_FLOOR_MBPS;
    let es_span = &s[9..39];
    let dropped = es_span.iter().position(|x| x.rates_mbps[2] < ES_FLOOR_MBPS);
    let recovered = dropped.and_then(|d| es_span[d..].iter().position(|x| x.rates_mbps[2] >= ES_FLOOR_MBPS - VIOL_TOL_MBPS).map(|r| d + r));
    let boosts: usize = es_span
        .iter()
        .flat_map(|x| &x.decision.actions)
        .filter(|a| matches!(a, cellfree_core::agents::MonitorAction::BoostWeight(2)))
        .count();
    let um_all_on = at_loop(40).active.iter().all(|&a| a) && !at_loop(40).energy_saving;
    let min_es_active = es_span.iter().map(|x| x.active.iter().filter(|&&a| a).count()).min().unwrap();
    check(
        es_ok && dropped.is_some() && recovered.is_some() && boosts >= 1 && um_all_on,
        format!(
            "r_3 below floor at loop {}, back at loop {}, {boosts} boost(s) on user 3, {min_es_active}/10 O-RUs in energy saving, all on at loop 40: {um_all_on}",
            dropped.map_or("never".into(), |d| (d + 10).to_string()),
            recovered.map_or("never".into(), |r| (r + 10).to_string()),
        ),
    )
}

/// Loops from `start` to the first loop of the first run of `patience`
/// satisfied loops, counting that loop.
fn loops_to_converge(s: &[LoopSnapshot], start: u64, end: u64, patience: usize) -> Option<usize> {
    let span: Vec<&LoopSnapshot> = s.iter().filter(|x| x.loop_index >= start && x.loop_index < end).collect();
    span.windows(patience)
        .position(|w| w.iter().all(|x| x.upsilon_mbps.iter().all(|&u| u <= VIOL_TOL_MBPS)))
        .map(|i| i + 1)
}

fn memory_warm_start() -> Outcome {
    let sc = scenario("memory.toml");
    let at: Vec<u64> = sc.schedule.iter().map(|s| s.at_loop).collect();
    if sc.schedule[0].intent != sc.schedule[2].intent {
        return Err("first and last intents differ".into());
    }
    let rec = run_scenario(&sc, Mode::Proposed, None).map_err(|e| e.to_string())?;
    let s = rec.snapshots();
    let p = sc.agents.patience;
    let cold = loops_to_converge(s, at[0], at[1], p);
    let warm = loops_to_converge(s, at[2], sc.loops + 1, p);
    let hit = s[(at[2] - 1) as usize].memory_hit;
    let cold_hit = s[(at[0] - 1) as usize].memory_hit.is_some();

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut agree = 0;
    let stores = 1000;
    for _ in 0..stores {
        let d = rng.random_range(2..=16);
        let mut store = MemoryStore::new(d, 2, 1, &MemoryConfig { dedup_tol: 1.1, ..Default::default() });
        for i in 0..rng.random_range(1..=100) {
            let key: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let meta = ExperienceMeta { intent_kind: "sum_rate".into(), loops_to_converge: 1 };
            store.store(Experience { key, alpha: vec![i as f64, 1.0], lambda: vec![1.0, 2.0], meta }).unwrap();
        }
        let q: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut best = (0, f64::NEG_INFINITY);
        for (i, e) in store.experiences().enumerate() {
            let sim = cosine_similarity(&q, &e.key);
            if sim >= best.1 {
                best = (i, sim);
            }
        }
        let got = store.retrieve_with_threshold(&q, None, -1.0).unwrap().unwrap();
        if got.index == best.0 && got.similarity == best.1 {
            agree += 1;
        }
    }
    let ok = matches!((cold, warm), (Some(c), Some(w)) if c >= COLD_MIN_LOOPS && w <= WARM_MAX_LOOPS)
        && hit.is_some()
        && !cold_hit
        && agree == stores;
    check(
        ok,
        format!(
            "cold {} loops, warm {} loops, similarity {:.4}, nearest neighbour {agree}/{stores} stores",
            cold.map_or("no".into(), |c| c.to_string()),
            warm.map_or("no".into(), |w| w.to_string()),
            hit.map_or(f64::NAN, |h| h.similarity)
        ),
    )
}

fn accounting() -> Outcome {
    let rows = accounting_table(&LayerManifest::bundled(), &AccountingConfig::default()).map_err(|e| e.to_string())?;
    if rows.len() != 2 {
        return Err(format!("{} models in the manifest", rows.len()));
    }
    let mut worst: f64 = 0.0;
    let mut reductions = Vec::new();
    for (r, want) in rows.iter().zip(TABLE_GB) {
        let got = [r.fp16_separate_gb, r.fp16_shared_gb, r.nf4_separate_gb, r.nf4_shared_gb];
        for (g, w) in got.iter().zip(want) {
            worst = worst.max((g - w).abs() / w);
        }
        reductions.push(r.reduction_pct);
    }
    let red_ok = reductions.iter().all(|&p| p >= REDUCTION_PCT.0 && p <= REDUCTION_PCT.1);
    check(
        worst <= TABLE_TOL && red_ok,
        format!("8 cells, worst deviation {:.1}%, reduction {:.1}% / {:.1}%", 100.0 * worst, reductions[0], reductions[1]),
    )
}

fn nf4_round_trip() -> Outcome {
    let mut fixed = true;
    for scale in [0.01, 1.0, 3.7] {
        let w = DMatrix::from_row_slice(1, 16, &NF4_LEVELS.map(|l| l * scale));
        let q = nf4_quantize(&w, 16).map_err(|e| e.to_string())?;
        fixed &= nf4_dequantize(&q) == w && q.codes == (0..16).collect::<Vec<u8>>();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let w: DMatrix<f64> = DMatrix::from_fn(100, 100, |_, _| StandardNormal.sample(&mut rng));
    let q = nf4_quantize(&w, 64).map_err(|e| e.to_string())?;
    let d = nf4_dequantize(&q);
    let half = nf4_half_max_gap();
    let mut worst: f64 = 0.0;
    for r in 0..100 {
        for c in 0..100 {
            let scale = q.block_scales[(r * 100 + c) / 64];
            worst = worst.max((w[(r, c)] - d[(r, c)]).abs() / (scale * half));
        }
    }
    check(
        fixed && worst <= 1.0 + 1e-12,
        format!("codebook fixed points {fixed}, 10000 samples, worst error {worst:.3} of the half-gap bound"),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("wmmse monotonicity", wmmse_monotonicity),
        ("power feasibility", power_feasibility),
        ("scalar rate oracle", scalar_rate_oracle),
        ("ppo gradient check", ppo_gradient_check),
        ("advantage oracle", advantage_oracle),
        ("mappo smoke training", mappo_smoke),
        ("comparative energy saving", comparative),
        ("intent translation", intent_translation),
        ("energy-saving timeline shape", timeline_shape),
        ("memory warm start", memory_warm_start),
        ("adapter memory table", accounting),
        ("nf4 round trip", nf4_round_trip),
    ];
    let results: Vec<Outcome> = std::thread::scope(|s| {
        let handles: Vec<_> = criteria.iter().map(|(_, f)| s.spawn(f)).collect();
        handles
            .into_iter()
            .map(|h| {
                h.join().unwrap_or_else(|p| {
                    let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
                    Err(format!("panicked: {}", msg.unwrap_or_default()))
                })
            })
            .collect()
    });
    let mut failed = 0;
    for ((name, _), r) in criteria.iter().zip(&results) {
        match r {
            Ok(d) => println!("PASS {name}: {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL {name}: {d}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
