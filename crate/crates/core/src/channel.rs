//! Spatially consistent geometric channel generation at desk scale: user
//! placement and mobility, per-user path sets built from fixed scatterer
//! anchors, channel tensor assembly and stacking, and the episodic
//! drop-in/drop-out activity process.
//!
//! The model is deliberately simple but keeps the properties a learned
//! codebook exploits: path angles move continuously with the user, scatterer
//! anchors and small-scale factors are frozen per activation (so surviving
//! users have correlated channels across timesteps), and the LOS/NLOS state
//! follows a distance-based probability with hysteresis.
//!
//! Geometry: the base station sits at the origin with its planar array
//! facing the served sector; azimuth is measured from the array x-axis,
//! elevation from zenith (values above 90 degrees point below the horizon).
//! Users live on the ground plane inside an annular sector, or on a
//! configured roadway segment.

use num_complex::Complex;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::array_geometry::{ula_steering, upa_steering, ArrayGeometry, Sector};
use crate::error::{invalid, Result};
use crate::scalar::{cast, to_f64, Scalar};

/// Speed of light, m/s.
const C0: f64 = 299_792_458.0;

/// Full scenario parameterization. All fields are plain config values so the
/// struct doubles as the `[scenario]` section of the run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    /// Transmit array elements on the azimuth axis.
    pub n_x: usize,
    /// Transmit array elements on the elevation axis.
    pub n_y: usize,
    /// Receive ULA elements per user.
    pub n_r: usize,
    /// Carrier frequency in GHz.
    pub carrier_ghz: f64,
    /// Probability that a spawned user is stationary (otherwise roadway).
    pub p_stationary: f64,
    /// Mean roadway speed, m/s.
    pub speed_mean: f64,
    /// Roadway speed standard deviation, m/s.
    pub speed_sd: f64,
    /// Per-step probability that a user drops in or out of the network.
    pub p_activity: f64,
    /// Minimum active users at episode start.
    pub u_min: usize,
    /// Maximum active users at episode start (also the roster slot count).
    pub u_max: usize,
    /// Paths per user.
    pub l_p: usize,
    /// Path-loss exponent under LOS.
    pub ple_los: f64,
    /// Path-loss exponent under NLOS.
    pub ple_nlos: f64,
    /// Rician K-factor for the LOS direct path, dB.
    pub rician_k_db: f64,
    /// Receiver noise variance per antenna (linear).
    pub noise_var: f64,
    /// Base-station antenna height, m.
    pub bs_height: f64,
    /// User antenna height, m.
    pub ue_height: f64,
    /// Inner radius of the served annulus, m.
    pub cell_r_min: f64,
    /// Outer radius of the served annulus, m.
    pub cell_r_max: f64,
    /// Sector bounds, degrees.
    pub az_min_deg: f64,
    pub az_max_deg: f64,
    pub el_min_deg: f64,
    pub el_max_deg: f64,
    /// Roadway segment endpoints on the ground plane, m.
    pub road_start: [f64; 2],
    pub road_end: [f64; 2],
    /// Scatterer anchor distance range around the user, m.
    pub scatter_r_min: f64,
    pub scatter_r_max: f64,
    /// Cluster power decay constant: mean power of cluster `l` is
    /// proportional to `exp(-l / power_decay)`.
    pub power_decay: f64,
    /// Distance at which the aggregate link gain is 0 dB, m.
    pub gamma_ref_distance: f64,
    /// Interval between SSB bursts, seconds.
    pub timestep: f64,
    /// Intervals per episode.
    pub episode_len: usize,
    /// Length of the underlying mobility trajectory, in timesteps.
    pub trajectory_len: usize,
    /// Minimum timesteps between LOS/NLOS state changes.
    pub los_hysteresis_steps: u32,
    /// DFT codebook split.
    pub n_az_beams: usize,
    pub n_el_beams: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n_x: 8,
            n_y: 8,
            n_r: 4,
            carrier_ghz: 3.5,
            p_stationary: 0.3,
            speed_mean: 25.0,
            speed_sd: 5.0,
            p_activity: 0.2,
            u_min: 4,
            u_max: 12,
            l_p: 12,
            ple_los: 2.0,
            ple_nlos: 3.5,
            rician_k_db: 10.0,
            noise_var: 0.1,
            bs_height: 20.0,
            ue_height: 1.5,
            cell_r_min: 25.0,
            cell_r_max: 150.0,
            az_min_deg: 30.0,
            az_max_deg: 150.0,
            el_min_deg: 90.0,
            el_max_deg: 100.0,
            road_start: [-100.0, 60.0],
            road_end: [100.0, 60.0],
            scatter_r_min: 5.0,
            scatter_r_max: 40.0,
            power_decay: 3.0,
            gamma_ref_distance: 90.0,
            timestep: 0.005,
            episode_len: 20,
            trajectory_len: 400,
            los_hysteresis_steps: 10,
            n_az_beams: 4,
            n_el_beams: 2,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_x < 1 || self.n_y < 1 {
            return Err(invalid("scenario.n_x and scenario.n_y must be >= 1"));
        }
        if self.n_r < 1 {
            return Err(invalid("scenario.n_r must be >= 1"));
        }
        if !(self.carrier_ghz > 0.0) {
            return Err(invalid("scenario.carrier_ghz must be > 0"));
        }
        for (name, p) in [
            ("scenario.p_stationary", self.p_stationary),
            ("scenario.p_activity", self.p_activity),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(invalid(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if self.u_min < 1 || self.u_min > self.u_max {
            return Err(invalid(format!(
                "scenario.u_min..u_max must be an ordered range of >= 1, got {}..{}",
                self.u_min, self.u_max
            )));
        }
        if self.l_p < 1 {
            return Err(invalid("scenario.l_p must be >= 1"));
        }
        if !(self.speed_mean.is_finite() && self.speed_sd >= 0.0) {
            return Err(invalid("scenario.speed_mean/speed_sd must be finite, sd >= 0"));
        }
        if !(self.cell_r_min > 0.0 && self.cell_r_min < self.cell_r_max) {
            return Err(invalid("scenario.cell_r_min..cell_r_max must be ordered and positive"));
        }
        if !(self.scatter_r_min > 0.0 && self.scatter_r_min <= self.scatter_r_max) {
            return Err(invalid("scenario.scatter_r_min..scatter_r_max must be ordered and positive"));
        }
        if !(self.az_min_deg < self.az_max_deg) || !(self.el_min_deg < self.el_max_deg) {
            return Err(invalid("scenario sector bounds must be non-empty (degrees)"));
        }
        if !(self.power_decay > 0.0) {
            return Err(invalid("scenario.power_decay must be > 0"));
        }
        if !(self.gamma_ref_distance > 0.0) {
            return Err(invalid("scenario.gamma_ref_distance must be > 0"));
        }
        if !(self.timestep > 0.0) {
            return Err(invalid("scenario.timestep must be > 0"));
        }
        if self.episode_len < 1 || self.episode_len > self.trajectory_len {
            return Err(invalid("scenario.episode_len must be in [1, trajectory_len]"));
        }
        if self.noise_var < 0.0 {
            return Err(invalid("scenario.noise_var must be >= 0"));
        }
        if self.n_az_beams < 1 || self.n_el_beams < 1 {
            return Err(invalid("scenario.n_az_beams/n_el_beams must be >= 1"));
        }
        let road_len = {
            let dx = self.road_end[0] - self.road_start[0];
            let dy = self.road_end[1] - self.road_start[1];
            (dx * dx + dy * dy).sqrt()
        };
        if !(road_len > 0.0) {
            return Err(invalid("scenario.road_start/road_end must be distinct points"));
        }
        Ok(())
    }

    pub fn geometry(&self) -> ArrayGeometry {
        ArrayGeometry::new(self.n_x, self.n_y).expect("validated geometry")
    }

    pub fn sector(&self) -> Sector {
        Sector::new(
            self.az_min_deg.to_radians(),
            self.az_max_deg.to_radians(),
            self.el_min_deg.to_radians(),
            self.el_max_deg.to_radians(),
        )
        .expect("validated sector")
    }

    /// Carrier wavelength, m.
    pub fn wavelength(&self) -> f64 {
        C0 / (self.carrier_ghz * 1e9)
    }

    pub fn rician_k_linear(&self) -> f64 {
        10f64.powf(self.rician_k_db / 10.0)
    }
}

/// Per-user MIMO channel, stored once in the stacked layout. `h2(i, j)` and
/// `h3(i, n, m)` view the same buffer through `j = n * n_x + m`, so the
/// stacking bijection holds by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTensor<T: Scalar> {
    n_r: usize,
    n_x: usize,
    n_y: usize,
    data: Vec<Complex<T>>,
}

impl<T: Scalar> ChannelTensor<T> {
    pub fn zeros(n_r: usize, n_x: usize, n_y: usize) -> Self {
        Self {
            n_r,
            n_x,
            n_y,
            data: vec![Complex::new(T::zero(), T::zero()); n_r * n_x * n_y],
        }
    }

    pub fn from_data(n_r: usize, n_x: usize, n_y: usize, data: Vec<Complex<T>>) -> Result<Self> {
        if data.len() != n_r * n_x * n_y {
            return Err(invalid(format!(
                "channel data length {} does not match {n_r} x {n_x} x {n_y}",
                data.len()
            )));
        }
        if data.iter().any(|c| !(c.re.is_finite() && c.im.is_finite())) {
            return Err(invalid("channel entries must be finite"));
        }
        Ok(Self { n_r, n_x, n_y, data })
    }

    pub fn n_r(&self) -> usize {
        self.n_r
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_y(&self) -> usize {
        self.n_y
    }

    pub fn n_t(&self) -> usize {
        self.n_x * self.n_y
    }

    /// Stacked 2-D view.
    #[inline]
    pub fn h2(&self, rx: usize, tx: usize) -> Complex<T> {
        self.data[rx * self.n_t() + tx]
    }

    /// 3-D view; `h3(i, n, m) == h2(i, n * n_x + m)`.
    #[inline]
    pub fn h3(&self, rx: usize, n: usize, m: usize) -> Complex<T> {
        self.h2(rx, n * self.n_x + m)
    }

    #[inline]
    pub fn add_to(&mut self, rx: usize, tx: usize, v: Complex<T>) {
        let nt = self.n_t();
        self.data[rx * nt + tx] = self.data[rx * nt + tx] + v;
    }

    pub fn row(&self, rx: usize) -> &[Complex<T>] {
        let nt = self.n_t();
        &self.data[rx * nt..(rx + 1) * nt]
    }

    pub fn data(&self) -> &[Complex<T>] {
        &self.data
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data
            .iter()
            .map(|c| {
                let re = to_f64(c.re);
                let im = to_f64(c.im);
                re * re + im * im
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|c| c.re == T::zero() && c.im == T::zero())
    }

    pub fn cast<U: Scalar>(&self) -> ChannelTensor<U> {
        ChannelTensor {
            n_r: self.n_r,
            n_x: self.n_x,
            n_y: self.n_y,
            data: self
                .data
                .iter()
                .map(|c| Complex::new(cast::<U>(to_f64(c.re)), cast::<U>(to_f64(c.im))))
                .collect(),
        }
    }
}

/// One propagation path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Path {
    pub gain: Complex<f64>,
    pub departure_az: f64,
    pub departure_el: f64,
    pub arrival_az: f64,
    pub arrival_el: f64,
}

/// The set of paths between the base station and one user.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    paths: Vec<Path>,
}

impl PathSet {
    pub fn new(paths: Vec<Path>) -> Result<Self> {
        if paths.is_empty() {
            return Err(invalid("a path set must contain at least one path"));
        }
        let total: f64 = paths.iter().map(|p| p.gain.norm_sqr()).sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(invalid("path gains must be finite with positive total power"));
        }
        for p in &paths {
            for a in [p.departure_az, p.departure_el, p.arrival_az, p.arrival_el] {
                if !a.is_finite() {
                    return Err(invalid("path angles must be finite"));
                }
            }
        }
        Ok(Self { paths })
    }

    pub fn paths(&self) -> &[Path] {
        &self.paths
    }

    pub fn total_power(&self) -> f64 {
        self.paths.iter().map(|p| p.gain.norm_sqr()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MobilityClass {
    Stationary,
    Roadway,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LosState {
    Los,
    Nlos,
}

/// Full per-user simulation state.
#[derive(Debug, Clone, PartialEq)]
pub struct UserState {
    pub id: u64,
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    pub mobility: MobilityClass,
    pub los: LosState,
    /// Aggregate link-budget scale (transmit power, gains, path loss).
    pub gamma: f64,
    /// Fixed scatterer anchor positions; never move after spawn.
    pub anchors: Vec<[f64; 3]>,
    /// Receive ULA axis direction on the ground plane, radians.
    pub heading: f64,
    /// Per-cluster complex fading factors, frozen per activation.
    small_scale: Vec<Complex<f64>>,
    /// Per-path static phase offsets.
    path_phases: Vec<f64>,
    steps_since_los_change: u32,
}

/// Roster of user slots; `None` marks an inactive slot.
pub type Roster = Vec<Option<UserState>>;

pub fn active_count(roster: &Roster) -> usize {
    roster.iter().filter(|s| s.is_some()).count()
}

/// Distance-based LOS probability (UMi-like).
pub fn los_probability(d2d: f64) -> f64 {
    if d2d <= 0.0 {
        return 1.0;
    }
    let p = 18.0 / d2d + (-d2d / 36.0).exp() * (1.0 - 18.0 / d2d);
    p.clamp(0.0, 1.0)
}

fn link_gain(config: &ScenarioConfig, d3d: f64, los: LosState) -> f64 {
    let ple = match los {
        LosState::Los => config.ple_los,
        LosState::Nlos => config.ple_nlos,
    };
    (config.gamma_ref_distance / d3d.max(1.0)).powf(ple)
}

fn horizontal_distance(p: [f64; 3]) -> f64 {
    (p[0] * p[0] + p[1] * p[1]).sqrt()
}

fn distance3(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

/// Departure angles from `from` toward `to`: azimuth from the x-axis in the
/// ground plane, elevation from zenith.
fn departure_angles(from: [f64; 3], to: [f64; 3]) -> (f64, f64) {
    let d = [to[0] - from[0], to[1] - from[1], to[2] - from[2]];
    let az = d[1].atan2(d[0]);
    let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    let el = if r > 0.0 { (d[2] / r).clamp(-1.0, 1.0).acos() } else { 0.0 };
    (az, el)
}

/// Arrival angles at a user whose ULA axis points along `heading`: the
/// azimuth is the angle between the incoming ray direction and the array
/// axis, the elevation the ray's zenith angle.
fn arrival_angles(user_pos: [f64; 3], source: [f64; 3], heading: f64) -> (f64, f64) {
    let d = [
        source[0] - user_pos[0],
        source[1] - user_pos[1],
        source[2] - user_pos[2],
    ];
    let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    if r <= 0.0 {
        return (std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2);
    }
    let cos_az = (d[0] * heading.cos() + d[1] * heading.sin()) / r;
    let az = cos_az.clamp(-1.0, 1.0).acos();
    let el = (d[2] / r).clamp(-1.0, 1.0).acos();
    (az, el)
}

fn bs_position(config: &ScenarioConfig) -> [f64; 3] {
    [0.0, 0.0, config.bs_height]
}

fn draw_complex_gaussian(rng: &mut ChaCha8Rng) -> Complex<f64> {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Spawns a fresh user at a random location per the configured mix.
pub fn spawn_user(config: &ScenarioConfig, rng: &mut ChaCha8Rng, id: u64) -> Result<UserState> {
    let sector = config.sector();
    let stationary = rng.gen::<f64>() < config.p_stationary;

    let (position, velocity, mobility) = if stationary {
        let az = rng.gen_range(sector.az_min..sector.az_max);
        // Area-uniform radius over the annulus.
        let u: f64 = rng.gen();
        let r2 = config.cell_r_min * config.cell_r_min
            + u * (config.cell_r_max * config.cell_r_max - config.cell_r_min * config.cell_r_min);
        let r = r2.sqrt();
        (
            [r * az.cos(), r * az.sin(), config.ue_height],
            [0.0, 0.0, 0.0],
            MobilityClass::Stationary,
        )
    } else {
        let t: f64 = rng.gen();
        let (a, b) = (config.road_start, config.road_end);
        let pos = [
            a[0] + t * (b[0] - a[0]),
            a[1] + t * (b[1] - a[1]),
            config.ue_height,
        ];
        let speed_dist = Normal::new(config.speed_mean, config.speed_sd)
            .map_err(|e| invalid(format!("scenario speed distribution: {e}")))?;
        let speed = speed_dist.sample(rng).max(0.0);
        let dir: f64 = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        let len = distance3([a[0], a[1], 0.0], [b[0], b[1], 0.0]);
        let unit = [(b[0] - a[0]) / len, (b[1] - a[1]) / len];
        (
            pos,
            [dir * speed * unit[0], dir * speed * unit[1], 0.0],
            MobilityClass::Roadway,
        )
    };

    let heading = rng.gen_range(0.0..std::f64::consts::TAU);

    let mut anchors = Vec::with_capacity(config.l_p);
    for _ in 0..config.l_p {
        let ang = rng.gen_range(0.0..std::f64::consts::TAU);
        let dist = rng.gen_range(config.scatter_r_min..=config.scatter_r_max);
        let height = rng.gen_range(config.ue_height..=config.bs_height.max(config.ue_height + 1.0));
        anchors.push([
            position[0] + dist * ang.cos(),
            position[1] + dist * ang.sin(),
            height,
        ]);
    }

    let small_scale = (0..config.l_p).map(|_| draw_complex_gaussian(rng)).collect();
    let path_phases = (0..config.l_p)
        .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
        .collect();

    let d2d = horizontal_distance(position);
    let los = if rng.gen::<f64>() < los_probability(d2d) {
        LosState::Los
    } else {
        LosState::Nlos
    };
    let d3d = distance3(bs_position(config), position);
    let gamma = link_gain(config, d3d, los);

    Ok(UserState {
        id,
        position,
        velocity,
        mobility,
        los,
        gamma,
        anchors,
        heading,
        small_scale,
        path_phases,
        steps_since_los_change: 0,
    })
}

/// Draws the initial roster: a uniform number of active users in
/// `[u_min, u_max]`, each placed per the mobility mix.
pub fn place_users(config: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Result<Roster> {
    config.validate()?;
    let n_active = rng.gen_range(config.u_min..=config.u_max);
    let mut roster: Roster = Vec::with_capacity(config.u_max);
    for slot in 0..config.u_max {
        if slot < n_active {
            roster.push(Some(spawn_user(config, rng, slot as u64)?));
        } else {
            roster.push(None);
        }
    }
    Ok(roster)
}

/// Advances one user by `dt` seconds: kinematics, roadway reflection at the
/// segment ends, and the hysteretic LOS re-evaluation. Scatterer anchors
/// stay fixed.
pub fn step_user(state: &mut UserState, config: &ScenarioConfig, dt: f64, rng: &mut ChaCha8Rng) -> Result<()> {
    if !(dt > 0.0) {
        return Err(invalid(format!("dt must be > 0, got {dt}")));
    }
    for k in 0..3 {
        state.position[k] += state.velocity[k] * dt;
    }
    if state.mobility == MobilityClass::Roadway {
        reflect_on_road(state, config);
    }

    state.steps_since_los_change = state.steps_since_los_change.saturating_add(1);
    if state.steps_since_los_change >= config.los_hysteresis_steps {
        let d2d = horizontal_distance(state.position);
        let target = if rng.gen::<f64>() < los_probability(d2d) {
            LosState::Los
        } else {
            LosState::Nlos
        };
        if target != state.los {
            state.los = target;
            state.steps_since_los_change = 0;
        }
    }

    let d3d = distance3(bs_position(config), state.position);
    state.gamma = link_gain(config, d3d, state.los);
    Ok(())
}

fn reflect_on_road(state: &mut UserState, config: &ScenarioConfig) {
    let (a, b) = (config.road_start, config.road_end);
    let seg = [b[0] - a[0], b[1] - a[1]];
    let len2 = seg[0] * seg[0] + seg[1] * seg[1];
    let t = ((state.position[0] - a[0]) * seg[0] + (state.position[1] - a[1]) * seg[1]) / len2;
    if t < 0.0 || t > 1.0 {
        let tc = t.clamp(0.0, 1.0);
        state.position[0] = a[0] + tc * seg[0];
        state.position[1] = a[1] + tc * seg[1];
        state.velocity[0] = -state.velocity[0];
        state.velocity[1] = -state.velocity[1];
    }
}

/// One churn step: every active user drops with probability `p_activity`,
/// every inactive slot spawns a fresh user with the same probability.
/// Survivors keep their trajectories, anchors and fading state.
pub fn ue_activity_step(
    roster: &mut Roster,
    config: &ScenarioConfig,
    rng: &mut ChaCha8Rng,
    next_id: &mut u64,
) -> Result<()> {
    for slot in roster.iter_mut() {
        let coin: f64 = rng.gen();
        match slot {
            Some(_) => {
                if coin < config.p_activity {
                    *slot = None;
                }
            }
            None => {
                if coin < config.p_activity {
                    let id = *next_id;
                    *next_id += 1;
                    *slot = Some(spawn_user(config, rng, id)?);
                }
            }
        }
    }
    Ok(())
}

/// Builds the current path set for an active user. Deterministic given the
/// user state: all randomness (anchors, fading factors, static phases) was
/// drawn at spawn, so consecutive calls along a trajectory vary only through
/// geometry.
pub fn build_paths(state: &UserState, config: &ScenarioConfig) -> Result<PathSet> {
    let bs = bs_position(config);
    let lambda = config.wavelength();
    let k = config.rician_k_linear();

    let mut paths = Vec::with_capacity(config.l_p);
    let (n_clusters, cluster_budget) = match state.los {
        LosState::Los => {
            let d = distance3(bs, state.position);
            let (dep_az, dep_el) = departure_angles(bs, state.position);
            let (arr_az, arr_el) = arrival_angles(state.position, bs, state.heading);
            let amp = (k / (k + 1.0)).sqrt();
            let phase = -std::f64::consts::TAU * d / lambda;
            paths.push(Path {
                gain: Complex::from_polar(amp, phase),
                departure_az: dep_az,
                departure_el: dep_el,
                arrival_az: arr_az,
                arrival_el: arr_el,
            });
            (config.l_p - 1, 1.0 / (k + 1.0))
        }
        LosState::Nlos => (config.l_p, 1.0),
    };

    if n_clusters > 0 {
        let weights: Vec<f64> = (0..n_clusters)
            .map(|l| (-(l as f64) / config.power_decay).exp())
            .collect();
        let total: f64 = weights.iter().sum();
        for (l, w) in weights.iter().enumerate() {
            let anchor = state.anchors[l];
            let (dep_az, dep_el) = departure_angles(bs, anchor);
            let (arr_az, arr_el) = arrival_angles(state.position, anchor, state.heading);
            let length = distance3(bs, anchor) + distance3(anchor, state.position);
            let mean_power = cluster_budget * w / total;
            let phase = -std::f64::consts::TAU * length / lambda + state.path_phases[l];
            let gain = state.small_scale[l] * Complex::from_polar(mean_power.sqrt(), phase);
            paths.push(Path {
                gain,
                departure_az: dep_az,
                departure_el: dep_el,
                arrival_az: arr_az,
                arrival_el: arr_el,
            });
        }
    }

    PathSet::new(paths)
}

/// Assembles the MIMO channel from a path set: each path contributes the
/// outer product of the receive steering vector and the conjugated transmit
/// steering vector, scaled by the path gain.
pub fn assemble_channel<T: Scalar>(
    paths: &PathSet,
    tx_geom: &ArrayGeometry,
    n_r: usize,
) -> Result<ChannelTensor<T>> {
    if n_r < 1 {
        return Err(invalid("receiver must have at least one antenna"));
    }
    let n_t = tx_geom.n_t();
    let mut h = ChannelTensor::<T>::zeros(n_r, tx_geom.n_x(), tx_geom.n_y());
    for path in paths.paths() {
        let a_t = upa_steering::<T>(tx_geom, path.departure_az, path.departure_el)?;
        let a_r = ula_steering::<T>(n_r, path.arrival_az)?;
        let gain = Complex::new(cast::<T>(path.gain.re), cast::<T>(path.gain.im));
        for (i, ar) in a_r.iter().enumerate() {
            let row_factor = gain * *ar;
            for j in 0..n_t {
                h.add_to(i, j, row_factor * a_t[j].conj());
            }
        }
    }
    Ok(h)
}

/// Snapshot of one active user at one timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct UeSample {
    pub gamma: f64,
    pub channel: ChannelTensor<f64>,
}

/// One timestep of an episode: per-slot samples, `None` for inactive slots.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeStep {
    pub users: Vec<Option<UeSample>>,
}

impl EpisodeStep {
    pub fn active(&self) -> impl Iterator<Item = (usize, &UeSample)> {
        self.users
            .iter()
            .enumerate()
            .filter_map(|(slot, s)| s.as_ref().map(|u| (slot, u)))
    }

    pub fn n_active(&self) -> usize {
        self.users.iter().filter(|s| s.is_some()).count()
    }
}

/// A fixed-length simulation segment with churn.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub t_start: u32,
    pub n_slots: usize,
    pub steps: Vec<EpisodeStep>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Generates one episode: place users, then per timestep advance mobility,
/// churn the roster, and record per-user channels and link gains. A pure
/// function of `(config, rng state)`.
pub fn generate_episode(config: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Result<Episode> {
    config.validate()?;
    let geom = config.geometry();
    let t_start = rng.gen_range(0..=(config.trajectory_len - config.episode_len)) as u32;
    let mut roster = place_users(config, rng)?;
    let mut next_id = config.u_max as u64;

    let mut steps = Vec::with_capacity(config.episode_len);
    for t in 0..config.episode_len {
        if t > 0 {
            for slot in roster.iter_mut().flatten() {
                step_user(slot, config, config.timestep, rng)?;
            }
            ue_activity_step(&mut roster, config, rng, &mut next_id)?;
        }
        let mut users = Vec::with_capacity(roster.len());
        for slot in &roster {
            match slot {
                Some(user) => {
                    let paths = build_paths(user, config)?;
                    let channel = assemble_channel::<f64>(&paths, &geom, config.n_r)?;
                    users.push(Some(UeSample {
                        gamma: user.gamma,
                        channel,
                    }));
                }
                None => users.push(None),
            }
        }
        steps.push(EpisodeStep { users });
    }

    Ok(Episode {
        t_start,
        n_slots: config.u_max,
        steps,
    })
}

/// RNG for episode `index` under `master`: episodes are independent streams
/// so they can be generated in any order or in parallel.
pub fn episode_rng(master: u64, index: u64) -> ChaCha8Rng {
    crate::rng::substream(master, crate::rng::streams::PLACEMENT, index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn test_rng(seed: u64) -> ChaCha8Rng {
        crate::rng::substream(seed, "channel-test", 0)
    }

    /// Correlation magnitude between two equally shaped channels.
    fn corr(a: &ChannelTensor<f64>, b: &ChannelTensor<f64>) -> f64 {
        let mut acc = Complex::new(0.0, 0.0);
        for (x, y) in a.data().iter().zip(b.data()) {
            acc += x.conj() * y;
        }
        acc.norm() / (a.frobenius_norm() * b.frobenius_norm())
    }

    #[test]
    fn placement_respects_bounds_and_determinism() {
        let config = ScenarioConfig::default();
        for seed in 0..20 {
            let roster = place_users(&config, &mut test_rng(seed)).unwrap();
            let n = active_count(&roster);
            assert!((4..=12).contains(&n), "active count {n} outside [4, 12]");
            assert_eq!(roster.len(), 12);
        }
        let a = place_users(&config, &mut test_rng(7)).unwrap();
        let b = place_users(&config, &mut test_rng(7)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn degenerate_mobility_mix_is_all_roadway() {
        let config = ScenarioConfig {
            p_stationary: 0.0,
            ..Default::default()
        };
        let roster = place_users(&config, &mut test_rng(3)).unwrap();
        for user in roster.iter().flatten() {
            assert_eq!(user.mobility, MobilityClass::Roadway);
        }
    }

    #[test]
    fn stationary_users_have_zero_velocity() {
        let config = ScenarioConfig {
            p_stationary: 1.0,
            ..Default::default()
        };
        let roster = place_users(&config, &mut test_rng(4)).unwrap();
        for user in roster.iter().flatten() {
            assert_eq!(user.mobility, MobilityClass::Stationary);
            assert_eq!(user.velocity, [0.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn step_kinematics() {
        let config = ScenarioConfig::default();
        let mut rng = test_rng(5);

        let mut stationary = spawn_user(
            &ScenarioConfig {
                p_stationary: 1.0,
                ..config.clone()
            },
            &mut rng,
            0,
        )
        .unwrap();
        let before = stationary.position;
        step_user(&mut stationary, &config, 0.005, &mut rng).unwrap();
        assert_eq!(stationary.position, before);

        let roadway_cfg = ScenarioConfig {
            p_stationary: 0.0,
            speed_sd: 0.0,
            ..config.clone()
        };
        let mut roadway = spawn_user(&roadway_cfg, &mut rng, 1).unwrap();
        let before = roadway.position;
        step_user(&mut roadway, &roadway_cfg, 0.005, &mut rng).unwrap();
        let moved = distance3(before, roadway.position);
        assert_relative_eq!(moved, 25.0 * 0.005, epsilon = 1e-12);
    }

    #[test]
    fn departure_angles_move_continuously() {
        // A roadway user at >= 10 m range moves 0.125 m per step, so no
        // path's departure angle may change by a degree or more.
        let config = ScenarioConfig {
            p_stationary: 0.0,
            speed_sd: 0.0,
            road_start: [-50.0, 12.0],
            road_end: [50.0, 12.0],
            ..Default::default()
        };
        let mut rng = test_rng(6);
        for _ in 0..50 {
            let mut user = spawn_user(&config, &mut rng, 0).unwrap();
            let before = build_paths(&user, &config).unwrap();
            step_user(&mut user, &config, 0.005, &mut rng).unwrap();
            let after = build_paths(&user, &config).unwrap();
            assert_eq!(before.paths().len(), after.paths().len());
            for (p, q) in before.paths().iter().zip(after.paths()) {
                let daz = (p.departure_az - q.departure_az).abs().to_degrees();
                let del = (p.departure_el - q.departure_el).abs().to_degrees();
                assert!(daz < 1.0 && del < 1.0, "departure step too large: {daz} / {del} deg");
            }
        }
    }

    #[test]
    fn activity_step_degenerate_probabilities() {
        let base = ScenarioConfig::default();
        let mut rng = test_rng(8);
        let mut next_id = 100;

        let frozen_cfg = ScenarioConfig {
            p_activity: 0.0,
            ..base.clone()
        };
        let mut roster = place_users(&frozen_cfg, &mut rng).unwrap();
        let before = roster.clone();
        ue_activity_step(&mut roster, &frozen_cfg, &mut rng, &mut next_id).unwrap();
        assert_eq!(roster, before);

        let churn_cfg = ScenarioConfig {
            p_activity: 1.0,
            ..base
        };
        let mut roster = place_users(&churn_cfg, &mut rng).unwrap();
        let before_ids: Vec<Option<u64>> = roster.iter().map(|s| s.as_ref().map(|u| u.id)).collect();
        ue_activity_step(&mut roster, &churn_cfg, &mut rng, &mut next_id).unwrap();
        for (slot, before_id) in roster.iter().zip(before_ids) {
            match before_id {
                // Every previously active slot dropped...
                Some(id) => assert!(slot.as_ref().map(|u| u.id) != Some(id)),
                // ...and every previously inactive slot filled.
                None => assert!(slot.is_some()),
            }
        }
    }

    #[test]
    fn churn_rate_matches_bernoulli_parameter() {
        let config = ScenarioConfig::default();
        let mut rng = test_rng(9);
        let mut next_id = 1000;
        let mut transitions = 0usize;
        let mut opportunities = 0usize;
        let mut roster = place_users(&config, &mut rng).unwrap();
        // 10 000 slot-level Bernoulli trials.
        while opportunities < 10_000 {
            let before: Vec<bool> = roster.iter().map(|s| s.is_some()).collect();
            ue_activity_step(&mut roster, &config, &mut rng, &mut next_id).unwrap();
            for (b, s) in before.iter().zip(&roster) {
                opportunities += 1;
                if *b != s.is_some() {
                    transitions += 1;
                }
            }
        }
        let rate = transitions as f64 / opportunities as f64;
        assert!(
            (rate - 0.2).abs() <= 0.01,
            "churn rate {rate} deviates from 0.2 by more than 0.01"
        );
    }

    #[test]
    fn rician_limit_concentrates_power_on_direct_path() {
        let config = ScenarioConfig {
            rician_k_db: 90.0,
            cell_r_max: 17.0,
            cell_r_min: 5.0,
            p_stationary: 1.0,
            ..Default::default()
        };
        let mut rng = test_rng(10);
        let user = spawn_user(&config, &mut rng, 0).unwrap();
        assert_eq!(user.los, LosState::Los);
        let paths = build_paths(&user, &config).unwrap();
        let direct = paths.paths()[0].gain.norm_sqr();
        assert!(direct / paths.total_power() > 1.0 - 1e-6);
    }

    #[test]
    fn single_path_set_uses_exact_geometric_angles() {
        let config = ScenarioConfig {
            l_p: 1,
            cell_r_max: 17.0,
            cell_r_min: 5.0,
            p_stationary: 1.0,
            ..Default::default()
        };
        let mut rng = test_rng(11);
        let user = spawn_user(&config, &mut rng, 0).unwrap();
        assert_eq!(user.los, LosState::Los);
        let paths = build_paths(&user, &config).unwrap();
        assert_eq!(paths.paths().len(), 1);
        let (az, el) = departure_angles([0.0, 0.0, config.bs_height], user.position);
        assert_relative_eq!(paths.paths()[0].departure_az, az, epsilon = 1e-12);
        assert_relative_eq!(paths.paths()[0].departure_el, el, epsilon = 1e-12);
    }

    #[test]
    fn path_power_normalization_monte_carlo() {
        let config = ScenarioConfig::default();
        let mut rng = test_rng(12);
        let mut acc = 0.0;
        let n = 10_000;
        for i in 0..n {
            let user = spawn_user(&config, &mut rng, i).unwrap();
            acc += build_paths(&user, &config).unwrap().total_power();
        }
        let mean = acc / n as f64;
        assert!(
            (mean - 1.0).abs() <= 0.03,
            "mean path power {mean} deviates from 1 by more than 3%"
        );
    }

    #[test]
    fn single_broadside_path_gives_all_ones_channel() {
        let geom = ArrayGeometry::new(4, 4).unwrap();
        let paths = PathSet::new(vec![Path {
            gain: Complex::new(1.0, 0.0),
            departure_az: PI / 2.0,
            departure_el: PI / 2.0,
            arrival_az: PI / 2.0,
            arrival_el: PI / 2.0,
        }])
        .unwrap();
        let h = assemble_channel::<f64>(&paths, &geom, 3).unwrap();
        for i in 0..3 {
            for j in 0..16 {
                assert!((h.h2(i, j) - Complex::new(1.0, 0.0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn single_path_channel_has_rank_one() {
        let geom = ArrayGeometry::new(3, 2).unwrap();
        let paths = PathSet::new(vec![Path {
            gain: Complex::new(0.3, -0.8),
            departure_az: 1.1,
            departure_el: 1.9,
            arrival_az: 0.7,
            arrival_el: 1.5,
        }])
        .unwrap();
        let h = assemble_channel::<f64>(&paths, &geom, 4).unwrap();
        // Every 2x2 minor of a rank-1 matrix vanishes.
        for i in 0..4 {
            for k in (i + 1)..4 {
                for j in 0..6 {
                    for l in (j + 1)..6 {
                        let minor = h.h2(i, j) * h.h2(k, l) - h.h2(i, l) * h.h2(k, j);
                        assert!(minor.norm() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn assembled_channel_matches_brute_force_sum() {
        // Independent evaluation of the per-element sum with raw phase
        // arithmetic, no steering-vector helpers.
        let geom = ArrayGeometry::new(4, 3).unwrap();
        let n_r = 4;
        let mut rng = test_rng(13);
        let paths = PathSet::new(
            (0..6)
                .map(|_| Path {
                    gain: Complex::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5),
                    departure_az: rng.gen_range(0.0..PI),
                    departure_el: rng.gen_range(0.0..PI),
                    arrival_az: rng.gen_range(0.0..PI),
                    arrival_el: rng.gen_range(0.0..PI),
                })
                .collect(),
        )
        .unwrap();
        let h = assemble_channel::<f64>(&paths, &geom, n_r).unwrap();
        for i in 0..n_r {
            for n in 0..3 {
                for m in 0..4 {
                    let mut want = Complex::new(0.0, 0.0);
                    for p in paths.paths() {
                        let rx_phase = PI * i as f64 * p.arrival_az.cos();
                        let tx_phase = PI * (m as f64 * p.departure_az.cos() + n as f64 * p.departure_el.cos());
                        want += p.gain
                            * Complex::from_polar(1.0, rx_phase)
                            * Complex::from_polar(1.0, -tx_phase);
                    }
                    assert!(
                        (h.h3(i, n, m) - want).norm() < 1e-12,
                        "mismatch at ({i},{n},{m})"
                    );
                }
            }
        }
    }

    #[test]
    fn stacking_bijection_holds() {
        let mut rng = test_rng(14);
        let data: Vec<Complex<f64>> = (0..2 * 15)
            .map(|_| Complex::new(rng.gen(), rng.gen()))
            .collect();
        let h = ChannelTensor::from_data(2, 5, 3, data.clone()).unwrap();
        for i in 0..2 {
            for n in 0..3 {
                for m in 0..5 {
                    assert_eq!(h.h3(i, n, m), h.h2(i, n * 5 + m));
                    assert_eq!(h.h3(i, n, m), data[i * 15 + n * 5 + m]);
                }
            }
        }
    }

    #[test]
    fn episode_has_twenty_steps_and_is_deterministic() {
        let config = ScenarioConfig::default();
        let a = generate_episode(&config, &mut episode_rng(42, 0)).unwrap();
        let b = generate_episode(&config, &mut episode_rng(42, 0)).unwrap();
        assert_eq!(a.len(), 20);
        assert_eq!(a, b);
        let c = generate_episode(&config, &mut episode_rng(42, 1)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn frozen_world_keeps_channels_constant() {
        // No churn, everyone stationary, forced LOS (whole cell within the
        // d < 18 m always-LOS region): nothing varies across steps.
        let config = ScenarioConfig {
            p_activity: 0.0,
            p_stationary: 1.0,
            rician_k_db: 90.0,
            cell_r_min: 5.0,
            cell_r_max: 17.0,
            ..Default::default()
        };
        let ep = generate_episode(&config, &mut episode_rng(1, 0)).unwrap();
        let first = &ep.steps[0];
        for step in &ep.steps[1..] {
            assert_eq!(step, first);
        }
    }

    #[test]
    fn moving_user_channels_stay_correlated() {
        let config = ScenarioConfig::default();
        let mut rng = test_rng(15);
        let mut moving_acc = 0.0;
        let mut cross_acc = 0.0;
        let n = 1000;
        for i in 0..n {
            let mut a = spawn_user(&config, &mut rng, 2 * i).unwrap();
            let b = spawn_user(&config, &mut rng, 2 * i + 1).unwrap();
            let geom = config.geometry();
            let h_a0 = assemble_channel::<f64>(&build_paths(&a, &config).unwrap(), &geom, config.n_r).unwrap();
            let h_b = assemble_channel::<f64>(&build_paths(&b, &config).unwrap(), &geom, config.n_r).unwrap();
            step_user(&mut a, &config, config.timestep, &mut rng).unwrap();
            let h_a1 = assemble_channel::<f64>(&build_paths(&a, &config).unwrap(), &geom, config.n_r).unwrap();
            moving_acc += corr(&h_a0, &h_a1);
            cross_acc += corr(&h_a0, &h_b);
        }
        let moving = moving_acc / n as f64;
        let cross = cross_acc / n as f64;
        assert!(
            moving > cross,
            "step-to-step correlation {moving} should exceed cross-user correlation {cross}"
        );
    }
}
