//! Network geometry, large-scale fading, MIMO channels and user association.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scalar::{CMat, Scalar, C};

/// Antenna and stream counts shared by every O-RU and user.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Antennas {
    pub n_t: usize,
    pub n_r: usize,
    pub n_s: usize,
}

impl Antennas {
    pub fn new(n_t: usize, n_r: usize, n_s: usize) -> Result<Self> {
        let a = Self { n_t, n_r, n_s };
        a.validate()?;
        Ok(a)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_t == 0 || self.n_r == 0 || self.n_s == 0 {
            return Err(invalid("antenna and stream counts must be positive"));
        }
        if self.n_s > self.n_t.min(self.n_r) {
            return Err(invalid(format!(
                "n_s = {} exceeds min(n_t, n_r) = {}",
                self.n_s,
                self.n_t.min(self.n_r)
            )));
        }
        Ok(())
    }
}

impl Default for Antennas {
    fn default() -> Self {
        Self { n_t: 4, n_r: 2, n_s: 2 }
    }
}

/// Planar deployment of O-RUs and users inside a square area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub oru_positions: Vec<[f64; 2]>,
    pub user_positions: Vec<[f64; 2]>,
    pub area_side: f64,
    pub antennas: Antennas,
}

impl Topology {
    /// Builds a topology from explicit coordinates, checking the bounds.
    pub fn from_positions(
        oru_positions: Vec<[f64; 2]>,
        user_positions: Vec<[f64; 2]>,
        area_side: f64,
        antennas: Antennas,
    ) -> Result<Self> {
        let t = Self { oru_positions, user_positions, area_side, antennas };
        t.validate()?;
        Ok(t)
    }

    pub fn num_orus(&self) -> usize {
        self.oru_positions.len()
    }

    pub fn num_users(&self) -> usize {
        self.user_positions.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.area_side > 0.0) || !self.area_side.is_finite() {
            return Err(invalid("area side must be positive"));
        }
        if self.oru_positions.is_empty() || self.user_positions.is_empty() {
            return Err(invalid("topology needs at least one O-RU and one user"));
        }
        self.antennas.validate()?;
        let inside = |p: &[f64; 2]| {
            p.iter().all(|c| c.is_finite() && *c >= 0.0 && *c <= self.area_side)
        };
        if !self.oru_positions.iter().all(inside) || !self.user_positions.iter().all(inside) {
            return Err(invalid("positions must lie inside [0, area_side]^2"));
        }
        Ok(())
    }

    /// Euclidean distance between user `k` and O-RU `l`, in meters.
    pub fn distance(&self, k: usize, l: usize) -> f64 {
        let u = self.user_positions[k];
        let o = self.oru_positions[l];
        ((u[0] - o[0]).powi(2) + (u[1] - o[1]).powi(2)).sqrt()
    }
}

/// Draws O-RU and user positions uniformly in `[0, area_side]²`.
pub fn generate_topology(
    seed: u64,
    num_orus: usize,
    num_users: usize,
    area_side: f64,
    antennas: Antennas,
) -> Result<Topology> {
    if num_orus == 0 || num_users == 0 {
        return Err(invalid("O-RU and user counts must be at least 1"));
    }
    if !(area_side > 0.0) || !area_side.is_finite() {
        return Err(invalid(format!("area side must be positive, got {area_side}")));
    }
    antennas.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |n: usize| -> Vec<[f64; 2]> {
        (0..n)
            .map(|_| [rng.random::<f64>() * area_side, rng.random::<f64>() * area_side])
            .collect()
    };
    let oru_positions = draw(num_orus);
    let user_positions = draw(num_users);
    Ok(Topology { oru_positions, user_positions, area_side, antennas })
}

/// Log-distance path loss with optional log-normal shadowing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathLossParams {
    /// Loss at the reference distance, dB.
    pub pl0_db: f64,
    pub d0_m: f64,
    pub exponent: f64,
    /// Distances below this are clamped.
    pub d_min_m: f64,
    /// Shadowing standard deviation in dB; 0 disables shadowing.
    pub shadowing_std_db: f64,
    pub shadowing_seed: u64,
}

impl Default for PathLossParams {
    fn default() -> Self {
        Self {
            pl0_db: 30.0,
            d0_m: 1.0,
            exponent: 3.8,
            d_min_m: 1.0,
            shadowing_std_db: 0.0,
            shadowing_seed: 0,
        }
    }
}

impl PathLossParams {
    pub fn path_loss_db(&self, d: f64) -> f64 {
        self.pl0_db + 10.0 * self.exponent * (d.max(self.d_min_m) / self.d0_m).log10()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d0_m > 0.0) || !(self.d_min_m > 0.0) {
            return Err(invalid("reference and clamp distances must be positive"));
        }
        if !(self.exponent > 0.0) || !(self.shadowing_std_db >= 0.0) {
            return Err(invalid("path-loss exponent must be positive, shadowing non-negative"));
        }
        Ok(())
    }
}

/// Linear path gains `beta[(k, l)]` between user `k` and O-RU `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct LargeScaleFading<T: Scalar> {
    beta: DMatrix<T>,
}

impl<T: Scalar> LargeScaleFading<T> {
    /// Wraps a K×L gain matrix; every entry must be positive and finite.
    pub fn new(beta: DMatrix<T>) -> Result<Self> {
        if beta.nrows() == 0 || beta.ncols() == 0 {
            return Err(invalid("fading matrix must be non-empty"));
        }
        if !beta.iter().all(|b| b.is_finite() && *b > T::zero()) {
            return Err(invalid("large-scale fading entries must be positive and finite"));
        }
        Ok(Self { beta })
    }

    pub fn num_users(&self) -> usize {
        self.beta.nrows()
    }

    pub fn num_orus(&self) -> usize {
        self.beta.ncols()
    }

    #[inline]
    pub fn get(&self, k: usize, l: usize) -> T {
        self.beta[(k, l)]
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.beta
    }

    /// O-RU indices sorted by decreasing gain for user `k`, ties to the
    /// lower index.
    pub fn ranked_orus(&self, k: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.num_orus()).collect();
        idx.sort_by(|&a, &b| {
            self.get(k, b)
                .partial_cmp(&self.get(k, a))
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        idx
    }
}

/// Evaluates `beta = 10^(-PL(d)/10)` for every user/O-RU pair.
pub fn compute_large_scale_fading<T: Scalar>(
    topology: &Topology,
    params: &PathLossParams,
) -> Result<LargeScaleFading<T>> {
    topology.validate()?;
    params.validate()?;
    let (k_n, l_n) = (topology.num_users(), topology.num_orus());
    let mut rng = ChaCha8Rng::seed_from_u64(params.shadowing_seed);
    let shadow = Normal::new(0.0, params.shadowing_std_db.max(f64::MIN_POSITIVE))
        .expect("finite standard deviation");
    let mut beta = DMatrix::<T>::zeros(k_n, l_n);
    for k in 0..k_n {
        for l in 0..l_n {
            let mut pl = params.path_loss_db(topology.distance(k, l));
            if params.shadowing_std_db > 0.0 {
                pl += shadow.sample(&mut rng);
            }
            beta[(k, l)] = T::of(10f64.powf(-pl / 10.0));
        }
    }
    LargeScaleFading::new(beta)
}

/// Thermal noise model used to derive `sigma²` and the Mbps conversion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseParams {
    pub density_dbm_hz: f64,
    pub noise_figure_db: f64,
    pub bandwidth_hz: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self { density_dbm_hz: -174.0, noise_figure_db: 9.0, bandwidth_hz: 20e6 }
    }
}

impl NoiseParams {
    /// Noise power over the full bandwidth, in watts.
    pub fn variance_w(&self) -> f64 {
        let dbm = self.density_dbm_hz + self.noise_figure_db + 10.0 * self.bandwidth_hz.log10();
        dbm_to_watts(dbm)
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Small-scale MIMO channels `H[k][l]` (N_r × N_t) plus noise level.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet<T: Scalar> {
    num_users: usize,
    num_orus: usize,
    antennas: Antennas,
    h: Vec<CMat<T>>,
    pub noise_variance: T,
    pub bandwidth_hz: f64,
}

impl<T: Scalar> ChannelSet<T> {
    /// Assembles a channel set from row-major (user-major) matrices.
    pub fn from_matrices(
        num_users: usize,
        num_orus: usize,
        antennas: Antennas,
        h: Vec<CMat<T>>,
        noise_variance: T,
        bandwidth_hz: f64,
    ) -> Result<Self> {
        antennas.validate()?;
        if h.len() != num_users * num_orus {
            return Err(invalid(format!(
                "expected {} channel matrices, got {}",
                num_users * num_orus,
                h.len()
            )));
        }
        for m in &h {
            if m.shape() != (antennas.n_r, antennas.n_t) {
                return Err(invalid("channel matrix shape must be n_r × n_t"));
            }
            if !crate::scalar::all_finite(m) {
                return Err(invalid("channel entries must be finite"));
            }
        }
        if !(noise_variance > T::zero()) || !(bandwidth_hz > 0.0) {
            return Err(invalid("noise variance and bandwidth must be positive"));
        }
        Ok(Self { num_users, num_orus, antennas, h, noise_variance, bandwidth_hz })
    }

    #[inline]
    pub fn h(&self, k: usize, l: usize) -> &CMat<T> {
        &self.h[k * self.num_orus + l]
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_orus(&self) -> usize {
        self.num_orus
    }

    pub fn antennas(&self) -> Antennas {
        self.antennas
    }

    /// Conversion factor from bit/s/Hz to Mbps.
    pub fn mbps_per_bpshz(&self) -> T {
        T::of(self.bandwidth_hz / 1e6)
    }
}

/// Draws i.i.d. Rayleigh channels scaled by `sqrt(beta)`.
pub fn draw_channels<T: Scalar>(
    fading: &LargeScaleFading<T>,
    antennas: Antennas,
    noise: &NoiseParams,
    seed: u64,
) -> Result<ChannelSet<T>> {
    antennas.validate()?;
    let (k_n, l_n) = (fading.num_users(), fading.num_orus());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, std::f64::consts::FRAC_1_SQRT_2).expect("valid normal");
    let mut h = Vec::with_capacity(k_n * l_n);
    for k in 0..k_n {
        for l in 0..l_n {
            let amp = fading.get(k, l).to64().sqrt();
            let m = CMat::<T>::from_fn(antennas.n_r, antennas.n_t, |_, _| {
                let re = normal.sample(&mut rng);
                let im = normal.sample(&mut rng);
                C::new(T::of(amp * re), T::of(amp * im))
            });
            h.push(m);
        }
    }
    ChannelSet::from_matrices(
        k_n,
        l_n,
        antennas,
        h,
        T::of(noise.variance_w()),
        noise.bandwidth_hz,
    )
}

/// Serving sets under an activation vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Association {
    /// `serving[k]`: O-RUs serving user `k`, strongest first.
    pub serving: Vec<Vec<usize>>,
    /// `served[l]`: users served by O-RU `l`, ascending.
    pub served: Vec<Vec<usize>>,
    pub l_max: usize,
}

impl Association {
    pub fn num_users(&self) -> usize {
        self.serving.len()
    }

    pub fn num_orus(&self) -> usize {
        self.served.len()
    }

    pub fn serves(&self, k: usize, l: usize) -> bool {
        self.serving[k].contains(&l)
    }
}

/// Each user is served by up to `l_max` active O-RUs with the largest gain.
pub fn associate_users<T: Scalar>(
    fading: &LargeScaleFading<T>,
    active: &[bool],
    l_max: usize,
) -> Result<Association> {
    if active.len() != fading.num_orus() {
        return Err(invalid(format!(
            "activation vector has length {}, expected {}",
            active.len(),
            fading.num_orus()
        )));
    }
    if l_max == 0 {
        return Err(invalid("l_max must be at least 1"));
    }
    let mut served = vec![Vec::new(); fading.num_orus()];
    let serving: Vec<Vec<usize>> = (0..fading.num_users())
        .map(|k| {
            let set: Vec<usize> = fading
                .ranked_orus(k)
                .into_iter()
                .filter(|&l| active[l])
                .take(l_max)
                .collect();
            for &l in &set {
                served[l].push(k);
            }
            set
        })
        .collect();
    Ok(Association { serving, served, l_max })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fading(rows: &[&[f64]]) -> LargeScaleFading<f64> {
        let k = rows.len();
        let l = rows[0].len();
        LargeScaleFading::new(DMatrix::from_fn(k, l, |i, j| rows[i][j])).unwrap()
    }

    #[test]
    fn topology_is_seeded_and_bounded() {
        let a = generate_topology(7, 50, 20, 500.0, Antennas::default()).unwrap();
        let b = generate_topology(7, 50, 20, 500.0, Antennas::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.num_orus(), 50);
        assert_eq!(a.num_users(), 20);
        a.validate().unwrap();

        let tiny = generate_topology(1, 1, 1, 10.0, Antennas::default()).unwrap();
        for p in tiny.oru_positions.iter().chain(&tiny.user_positions) {
            assert!((0.0..=10.0).contains(&p[0]) && (0.0..=10.0).contains(&p[1]));
        }
    }

    #[test]
    fn topology_rejects_bad_arguments() {
        assert!(generate_topology(1, 0, 1, 10.0, Antennas::default()).is_err());
        assert!(generate_topology(1, 1, 0, 10.0, Antennas::default()).is_err());
        assert!(generate_topology(1, 1, 1, 0.0, Antennas::default()).is_err());
        assert!(generate_topology(1, 1, 1, 10.0, Antennas { n_t: 1, n_r: 2, n_s: 2 }).is_err());
    }

    #[test]
    fn fading_symmetry_ratio_and_clamp() {
        let ant = Antennas::default();
        let params = PathLossParams::default();
        let topo = Topology::from_positions(
            vec![[50.0, 50.0]],
            vec![[60.0, 50.0], [50.0, 40.0], [70.0, 50.0], [50.0, 50.5]],
            100.0,
            ant,
        )
        .unwrap();
        let f = compute_large_scale_fading::<f64>(&topo, &params).unwrap();
        assert_eq!(f.get(0, 0), f.get(1, 0));
        // doubling 10 m -> 20 m
        let ratio = f.get(2, 0) / f.get(0, 0);
        assert!((ratio - 2f64.powf(-3.8)).abs() < 1e-12 * ratio);
        // inside d_min
        assert!((f.get(3, 0) - 10f64.powf(-3.0)).abs() < 1e-15);
    }

    #[test]
    fn rayleigh_variance_tracks_beta() {
        let f = fading(&[&[2.5e-3]]);
        let ant = Antennas::new(1, 1, 1).unwrap();
        let mut acc = 0.0;
        let n = 10_000;
        for s in 0..n {
            let ch = draw_channels(&f, ant, &NoiseParams::default(), s as u64).unwrap();
            acc += ch.h(0, 0)[(0, 0)].norm_sqr();
        }
        let var = acc / n as f64;
        assert!((var / 2.5e-3 - 1.0).abs() < 0.05, "sample variance {var}");

        let a = draw_channels(&f, Antennas::default(), &NoiseParams::default(), 3).unwrap();
        let b = draw_channels(&f, Antennas::default(), &NoiseParams::default(), 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn association_examples() {
        let f = fading(&[&[0.1, 0.9, 0.5]]);
        let a = associate_users(&f, &[true, true, true], 2).unwrap();
        assert_eq!(a.serving[0], vec![1, 2]);
        let a = associate_users(&f, &[true, false, true], 2).unwrap();
        assert_eq!(a.serving[0], vec![2, 0]);
        let a = associate_users(&f, &[true, true, true], 5).unwrap();
        assert_eq!(a.serving[0], vec![1, 2, 0]);
        let a = associate_users(&f, &[false, false, false], 2).unwrap();
        assert!(a.serving[0].is_empty());
        assert!(associate_users(&f, &[true], 2).is_err());
    }

    #[test]
    fn association_ties_go_to_lower_index() {
        let f = fading(&[&[0.5, 0.5, 0.5]]);
        let a = associate_users(&f, &[true, true, true], 2).unwrap();
        assert_eq!(a.serving[0], vec![0, 1]);
    }

    #[test]
    fn noise_floor_matches_thermal_density() {
        let n = NoiseParams::default();
        let dbm = 10.0 * (n.variance_w() * 1e3).log10();
        assert!((dbm - (-174.0 + 9.0 + 73.0103)).abs() < 1e-3);
    }
}
