use crate::error::{invalid, Result};
use crate::propagation::CsiVector;

use super::network::{Architecture, Network};

/// Maps linear gains to the standardized dB representation the networks
/// consume, and rescales network outputs back to meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub db_floor: f64,
    pub mean_db: f64,
    pub std_db: f64,
    /// Network outputs are multiplied by this to obtain meters.
    pub output_scale: f64,
}

impl Default for Normalization {
    fn default() -> Self {
        Self { db_floor: -150.0, mean_db: 0.0, std_db: 1.0, output_scale: 1.0 }
    }
}

impl Normalization {
    /// Fits the dB mean and standard deviation over every entry of `csi`.
    pub fn fit<'a, I>(csi: I, db_floor: f64) -> Result<Self>
    where
        I: IntoIterator<Item = &'a CsiVector>,
    {
        let (mut n, mut sum, mut sq) = (0usize, 0.0, 0.0);
        for v in csi {
            for &g in v.gains() {
                let db = to_db(g, db_floor);
                n += 1;
                sum += db;
                sq += db * db;
            }
        }
        if n == 0 {
            return Err(invalid("cannot fit a normalization on an empty dataset"));
        }
        let mean = sum / n as f64;
        let var = (sq / n as f64 - mean * mean).max(0.0);
        let std = if var > 0.0 { var.sqrt() } else { 1.0 };
        Ok(Self { db_floor, mean_db: mean, std_db: std, output_scale: 1.0 })
    }

    pub fn apply(&self, csi: &CsiVector) -> Vec<f64> {
        csi.gains().iter().map(|&g| (to_db(g, self.db_floor) - self.mean_db) / self.std_db).collect()
    }
}

fn to_db(g: f64, floor: f64) -> f64 {
    (10.0 * g.log10()).max(floor)
}

/// A network layout together with its weights and input/output scaling.
#[derive(Debug, Clone)]
pub struct NetworkModel {
    pub(crate) network: Network,
    pub(crate) normalization: Normalization,
    pub(crate) weights: Vec<f64>,
}

impl NetworkModel {
    pub fn new(architecture: Architecture, normalization: Normalization, weights: Vec<f64>) -> Result<Self> {
        let network = Network::new(architecture)?;
        if weights.len() != network.num_params() {
            return Err(invalid(format!(
                "architecture needs {} parameters, got {}",
                network.num_params(),
                weights.len()
            )));
        }
        if !(normalization.std_db > 0.0) || !normalization.output_scale.is_finite() {
            return Err(invalid("normalization constants are invalid"));
        }
        Ok(Self { network, normalization, weights })
    }

    pub fn zeros(architecture: Architecture, normalization: Normalization) -> Result<Self> {
        let n = Network::new(architecture.clone())?.num_params();
        Self::new(architecture, normalization, vec![0.0; n])
    }

    pub fn architecture(&self) -> &Architecture {
        self.network.architecture()
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn normalization(&self) -> &Normalization {
        &self.normalization
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn n_waypoints(&self) -> usize {
        self.architecture().input_len
    }

    /// Normalized features of one CSI vector; checks the length.
    pub fn features(&self, csi: &CsiVector) -> Result<Vec<f64>> {
        if csi.len() != self.n_waypoints() {
            return Err(invalid(format!(
                "CSI vector has {} entries but the model expects {}",
                csi.len(),
                self.n_waypoints()
            )));
        }
        Ok(self.normalization.apply(csi))
    }
}
