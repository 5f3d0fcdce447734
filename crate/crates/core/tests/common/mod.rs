#![allow(dead_code)]

use cellfree_core::net_model::{
    associate_users, compute_large_scale_fading, draw_channels, generate_topology, Antennas,
    Association, ChannelSet, LargeScaleFading, NoiseParams, PathLossParams,
};
use cellfree_core::precoder::{UtilityKind, UtilitySpec};

pub struct Instance {
    pub fading: LargeScaleFading<f64>,
    pub channels: ChannelSet<f64>,
    pub assoc: Association,
    pub active: Vec<bool>,
}

/// Random deployment at the default radio parameters.
pub fn instance(seed: u64, l: usize, k: usize, area: f64, l_max: usize) -> Instance {
    let ant = Antennas::default();
    let topo = generate_topology(seed, l, k, area, ant).unwrap();
    let fading = compute_large_scale_fading::<f64>(&topo, &PathLossParams::default()).unwrap();
    let channels = draw_channels(&fading, ant, &NoiseParams::default(), seed ^ 0xabcd).unwrap();
    let active = vec![true; l];
    let assoc = associate_users(&fading, &active, l_max).unwrap();
    Instance { fading, channels, assoc, active }
}

pub fn p_max() -> f64 {
    // 30 dBm
    1.0
}

pub fn sum_rate_spec(k: usize, r_min: f64) -> UtilitySpec<f64> {
    UtilitySpec::uniform(UtilityKind::SumRate, vec![r_min; k], p_max(), 0.05).unwrap()
}

/// Two O-RUs, two users: O-RU 0 sits between the users, O-RU 1 is far away.
pub fn toy_parts(seed: u64) -> (LargeScaleFading<f64>, ChannelSet<f64>) {
    use cellfree_core::net_model::Topology;
    let ant = Antennas::default();
    let topo = Topology::from_positions(
        vec![[50.0, 50.0], [480.0, 480.0]],
        vec![[30.0, 50.0], [70.0, 50.0]],
        500.0,
        ant,
    )
    .unwrap();
    let fading = compute_large_scale_fading::<f64>(&topo, &PathLossParams::default()).unwrap();
    let channels = draw_channels(&fading, ant, &NoiseParams::default(), seed).unwrap();
    (fading, channels)
}

pub fn toy_env(seed: u64, r_min: f64) -> cellfree_core::NetworkEnv {
    use cellfree_core::mappo::{NetworkEnv, NetworkEnvConfig};
    let (fading, channels) = toy_parts(seed);
    let spec = sum_rate_spec(2, r_min);
    NetworkEnv::new(fading, channels, spec, NetworkEnvConfig { l_max: 2, ..Default::default() }).unwrap()
}
