//! True power gains from a tomographic shadowing model and the noisy
//! gain estimates that ground nodes extract from UAV pilots.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scene::{Building, Point3, Scene, Trajectory};

/// Log-distance path loss plus per-building line-integral absorption, and
/// the pilot/noise parameters of the measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelModel {
    /// Gain at 1 m, dB.
    pub reference_gain_db: f64,
    pub pathloss_exponent: f64,
    /// Noise variance per received sample, linear (W).
    pub noise_power: f64,
    /// Per-symbol transmit power, dBm.
    pub tx_power_dbm: f64,
    pub n_pilot_symbols: usize,
}

impl Default for ChannelModel {
    fn default() -> Self {
        Self {
            reference_gain_db: -40.0,
            pathloss_exponent: 2.0,
            noise_power: 0.0,
            tx_power_dbm: 30.0,
            n_pilot_symbols: 16,
        }
    }
}

impl ChannelModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.pathloss_exponent > 0.0) {
            return Err(invalid(format!("pathloss exponent must be > 0, got {}", self.pathloss_exponent)));
        }
        if !(self.noise_power >= 0.0) || !self.noise_power.is_finite() {
            return Err(invalid(format!("noise power must be >= 0, got {}", self.noise_power)));
        }
        if self.n_pilot_symbols == 0 || !self.tx_power_dbm.is_finite() || !self.reference_gain_db.is_finite() {
            return Err(invalid("pilot must have at least one symbol and finite power"));
        }
        Ok(())
    }

    /// Per-symbol transmit power in watts.
    pub fn symbol_power(&self) -> f64 {
        10f64.powf((self.tx_power_dbm - 30.0) / 10.0)
    }

    /// Pilot energy `||x||^2 = N_p * P`.
    pub fn pilot_energy(&self) -> f64 {
        self.n_pilot_symbols as f64 * self.symbol_power()
    }

    /// Variance of the complex estimation error on the channel coefficient.
    pub fn estimation_noise_variance(&self) -> f64 {
        self.noise_power / self.pilot_energy()
    }

    pub fn with_noise_power(&self, noise_power: f64) -> Self {
        Self { noise_power, ..self.clone() }
    }

    /// Unobstructed gain (dB) at distance `d`.
    pub fn free_space_gain_db(&self, d: f64) -> f64 {
        self.reference_gain_db - 10.0 * self.pathloss_exponent * d.log10()
    }
}

/// Length of the part of segment `p0 -> p1` strictly inside the box.
///
/// Slab clipping; a segment that only touches a face, edge or corner
/// contributes zero.
pub fn ray_box_interior_length(p0: &Point3, p1: &Point3, building: &Building) -> f64 {
    let lo = building.min_corner();
    let hi = building.max_corner();
    let dir = p1 - p0;
    let mut t_enter = 0.0f64;
    let mut t_exit = 1.0f64;
    for k in 0..3 {
        if dir[k] == 0.0 {
            if p0[k] <= lo[k] || p0[k] >= hi[k] {
                return 0.0;
            }
        } else {
            let inv = 1.0 / dir[k];
            let (mut ta, mut tb) = ((lo[k] - p0[k]) * inv, (hi[k] - p0[k]) * inv);
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t_enter = t_enter.max(ta);
            t_exit = t_exit.min(tb);
            if t_exit <= t_enter {
                return 0.0;
            }
        }
    }
    (t_exit - t_enter) * dir.norm()
}

/// Total shadowing loss in dB along the segment.
pub fn shadowing_loss_db(scene: &Scene, a: &Point3, b: &Point3) -> f64 {
    scene.buildings().iter().map(|bd| bd.attenuation() * ray_box_interior_length(a, b, bd)).sum()
}

/// Linear power gain between a ground node and a waypoint.
pub fn true_gain(scene: &Scene, model: &ChannelModel, node_pos: &Point3, waypoint: &Point3) -> Result<f64> {
    let d = (waypoint - node_pos).norm();
    if !(d > 0.0) {
        return Err(invalid("node and waypoint coincide; gain is singular"));
    }
    let db = model.free_space_gain_db(d) - shadowing_loss_db(scene, node_pos, waypoint);
    Ok(10f64.powf(db / 10.0))
}

/// Per-waypoint gain estimates measured by one node. Entries are linear and non-negative.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiVector(Vec<f64>);

impl CsiVector {
    pub fn new(gains: Vec<f64>) -> Result<Self> {
        if let Some(i) = gains.iter().position(|g| !(*g >= 0.0) || !g.is_finite()) {
            return Err(invalid(format!("CSI entry {i} is negative or not finite")));
        }
        Ok(Self(gains))
    }

    pub fn gains(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Noise-free gains from every waypoint to `node_pos`.
pub fn true_gains(scene: &Scene, model: &ChannelModel, trajectory: &Trajectory, node_pos: &Point3) -> Result<Vec<f64>> {
    trajectory.waypoints().iter().map(|w| true_gain(scene, model, node_pos, w)).collect()
}

/// Draws a circularly-symmetric complex Gaussian sample of the given variance.
pub fn complex_gaussian<R: Rng>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (0.5 * variance).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}

/// `|sqrt(g) + z|^2` with `z ~ CN(0, noise_variance)`.
///
/// Expanded so that a zero-variance draw returns `g` bit-exactly while
/// still consuming the same random numbers.
pub fn noisy_gain<R: Rng>(gain: f64, noise_variance: f64, rng: &mut R) -> f64 {
    let z = complex_gaussian(rng, noise_variance);
    (gain + 2.0 * gain.sqrt() * z.re + z.norm_sqr()).max(0.0)
}

/// Gain estimates at `node_pos` for every waypoint of the trajectory.
pub fn measure_csi<R: Rng>(
    scene: &Scene,
    model: &ChannelModel,
    trajectory: &Trajectory,
    node_pos: &Point3,
    rng: &mut R,
) -> Result<CsiVector> {
    model.validate()?;
    let var = model.estimation_noise_variance();
    let gains = true_gains(scene, model, trajectory, node_pos)?;
    Ok(CsiVector(gains.into_iter().map(|g| noisy_gain(g, var, rng)).collect()))
}

/// Applies the measurement noise to precomputed true gains.
pub fn corrupt_gains<R: Rng>(true_gains: &[f64], model: &ChannelModel, rng: &mut R) -> CsiVector {
    let var = model.estimation_noise_variance();
    CsiVector(true_gains.iter().map(|&g| noisy_gain(g, var, rng)).collect())
}

/// Least-squares channel estimate `x^H y / x^H x`.
pub fn ls_channel_estimate(pilot: &[Complex64], received: &[Complex64]) -> Result<Complex64> {
    if pilot.len() != received.len() {
        return Err(invalid(format!("pilot has {} symbols, received {}", pilot.len(), received.len())));
    }
    let energy: f64 = pilot.iter().map(|x| x.norm_sqr()).sum();
    if !(energy > 0.0) {
        return Err(invalid("pilot sequence is zero"));
    }
    let corr: Complex64 = pilot.iter().zip(received).map(|(x, y)| x.conj() * y).sum();
    Ok(corr / energy)
}

/// Received block `y = h x + w` with white `w ~ CN(0, noise_power I)`.
pub fn simulate_reception<R: Rng>(h: Complex64, pilot: &[Complex64], noise_power: f64, rng: &mut R) -> Vec<Complex64> {
    pilot.iter().map(|x| h * x + complex_gaussian(rng, noise_power)).collect()
}
