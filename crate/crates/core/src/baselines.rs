//! Fingerprinting baselines: nearest-neighbour lookup (DFPL) and a network
//! regressing the position directly from one CSI vector (NFPL).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::propagation::CsiVector;
use crate::regressor::train::{self, Objective, TrainConfig};
use crate::regressor::{Architecture, Network, NetworkModel, Normalization, Record, TrainOutcome, Workspace};
use crate::scene::Point2;

/// How DFPL compares CSI vectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Representation {
    /// Plain linear gains.
    Raw,
    /// Standardized dB, as fed to the networks.
    Normalized(Normalization),
}

impl Representation {
    fn apply(&self, csi: &CsiVector) -> Vec<f64> {
        match self {
            Representation::Raw => csi.gains().to_vec(),
            Representation::Normalized(n) => n.apply(csi),
        }
    }
}

/// Stored training fingerprints.
#[derive(Debug, Clone)]
pub struct FingerprintStore {
    features: Vec<Vec<f64>>,
    positions: Vec<Point2>,
    representation: Representation,
}

impl FingerprintStore {
    pub fn new(records: &[Record], representation: Representation) -> Result<Self> {
        let first = records.first().ok_or_else(|| invalid("fingerprint store needs at least one record"))?;
        let n = first.csi.len();
        if records.iter().any(|r| r.csi.len() != n) {
            return Err(invalid("fingerprints must share one CSI length"));
        }
        Ok(Self {
            features: records.iter().map(|r| representation.apply(&r.csi)).collect(),
            positions: records.iter().map(|r| r.position).collect(),
            representation,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn n_waypoints(&self) -> usize {
        self.features[0].len()
    }

    /// Index of the nearest stored fingerprint; ties go to the lowest index.
    pub fn nearest(&self, query: &CsiVector) -> Result<usize> {
        if query.len() != self.n_waypoints() {
            return Err(invalid(format!(
                "query has {} entries, store holds {}",
                query.len(),
                self.n_waypoints()
            )));
        }
        let q = self.representation.apply(query);
        let mut best = (0, f64::INFINITY);
        for (k, f) in self.features.iter().enumerate() {
            let d2: f64 = f.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum();
            if d2 < best.1 {
                best = (k, d2);
            }
        }
        Ok(best.0)
    }
}

/// Position of the stored fingerprint closest to `query`.
pub fn dfpl_locate(store: &FingerprintStore, query: &CsiVector) -> Result<Point2> {
    Ok(store.positions[store.nearest(query)?])
}

/// Weights of the direct position regressor.
#[derive(Debug, Clone)]
pub struct NfplParams {
    model: NetworkModel,
}

impl NfplParams {
    pub fn from_model(model: NetworkModel) -> Result<Self> {
        let arch = model.architecture();
        if arch.input_width != 1 || arch.outputs != 2 {
            return Err(invalid("position regressor needs an N x 1 input and two outputs"));
        }
        Ok(Self { model })
    }

    pub fn zeros(n: usize, normalization: Normalization) -> Result<Self> {
        Self::from_model(NetworkModel::zeros(Architecture::positional(n), normalization)?)
    }

    pub fn model(&self) -> &NetworkModel {
        &self.model
    }

    pub fn into_model(self) -> NetworkModel {
        self.model
    }

    pub fn n_waypoints(&self) -> usize {
        self.model.n_waypoints()
    }

    pub fn workspace(&self) -> Workspace {
        self.model.network().workspace()
    }

    pub fn locate_features(&self, features: &[f64], ws: &mut Workspace) -> Point2 {
        let out = self.model.network().forward(self.model.weights(), features, ws);
        Point2::new(out[0], out[1]) * self.model.normalization().output_scale
    }
}

pub fn nfpl_locate(params: &NfplParams, query: &CsiVector) -> Result<Point2> {
    let f = params.model.features(query)?;
    Ok(params.locate_features(&f, &mut params.workspace()))
}

struct PositionObjective<'a> {
    network: &'a Network,
    output_scale: f64,
    features: Vec<Vec<f64>>,
    positions: Vec<Point2>,
}

impl Objective for PositionObjective<'_> {
    type Scratch = Workspace;

    fn num_examples(&self) -> usize {
        self.features.len()
    }

    fn num_params(&self) -> usize {
        self.network.num_params()
    }

    fn scratch(&self) -> Workspace {
        self.network.workspace()
    }

    fn accumulate(&self, w: &[f64], idx: usize, scale: f64, ws: &mut Workspace, grad: &mut [f64]) -> f64 {
        let x = &self.features[idx];
        let out = self.network.forward(w, x, ws);
        let ex = out[0] * self.output_scale - self.positions[idx].x;
        let ey = out[1] * self.output_scale - self.positions[idx].y;
        let k = 2.0 * scale * self.output_scale;
        self.network.backward(w, x, ws, &[k * ex, k * ey], grad);
        ex * ex + ey * ey
    }
}

fn objective<'a>(params: &'a NfplParams, records: &[Record]) -> Result<PositionObjective<'a>> {
    if records.is_empty() {
        return Err(invalid("position regressor needs a non-empty dataset"));
    }
    Ok(PositionObjective {
        network: params.model.network(),
        output_scale: params.model.normalization().output_scale,
        features: records.iter().map(|r| params.model.features(&r.csi)).collect::<Result<_>>()?,
        positions: records.iter().map(|r| r.position).collect(),
    })
}

/// Mean squared position error (m^2) and its gradient over `records`.
pub fn nfpl_gradient(params: &NfplParams, records: &[Record]) -> Result<(f64, Vec<f64>)> {
    let obj = objective(params, records)?;
    let idx: Vec<usize> = (0..records.len()).collect();
    Ok(train::batch_gradient(&obj, params.model.weights(), &idx))
}

/// Fresh position regressor with normalization and output bias fitted to `records`.
pub fn nfpl_initial_params(records: &[Record], config: &TrainConfig) -> Result<NfplParams> {
    let first = records.first().ok_or_else(|| invalid("position regressor needs a non-empty dataset"))?;
    let n = first.csi.len();
    let mut norm = Normalization::fit(records.iter().map(|r| &r.csi), config.db_floor)?;
    let count = records.len() as f64;
    let mean = records.iter().fold(Point2::zeros(), |acc, r| acc + r.position) / count;
    let spread = (records.iter().map(|r| (r.position - mean).norm_squared()).sum::<f64>() / count).sqrt();
    norm.output_scale = if spread > 0.0 { spread } else { 1.0 };
    let arch = Architecture::positional(n);
    let net = Network::new(arch.clone())?;
    let mut weights = net.init_params(&mut ChaCha8Rng::seed_from_u64(config.seed));
    let bias = net.output_bias_range();
    weights[bias.start] = mean.x / norm.output_scale;
    weights[bias.start + 1] = mean.y / norm.output_scale;
    NfplParams::from_model(NetworkModel::new(arch, norm, weights)?)
}

/// Adam on the mean squared position error, starting from `params`.
pub fn nfpl_train(params: NfplParams, records: &[Record], config: &TrainConfig) -> Result<TrainOutcome<NfplParams>> {
    let mut weights = params.model.weights().to_vec();
    let loss_trace = {
        let obj = objective(&params, records)?;
        train::train_objective(&obj, &mut weights, config)?
    };
    let mut params = params;
    params.model.weights_mut().copy_from_slice(&weights);
    Ok(TrainOutcome { params, loss_trace })
}

/// Trains from scratch on `pretrain`, then continues on `finetune`.
pub fn nfpl_pretrain_then_finetune(
    pretrain: &[Record],
    finetune: &[Record],
    pretrain_config: &TrainConfig,
    finetune_config: &TrainConfig,
) -> Result<TrainOutcome<NfplParams>> {
    let n = pretrain.first().map(|r| r.csi.len());
    if n != finetune.first().map(|r| r.csi.len()) {
        return Err(invalid("pretraining and fine-tuning CSI lengths differ"));
    }
    let init = nfpl_initial_params(pretrain, pretrain_config)?;
    let first = nfpl_train(init, pretrain, pretrain_config)?;
    let second = nfpl_train(first.params, finetune, finetune_config)?;
    let mut loss_trace = first.loss_trace;
    loss_trace.extend(second.loss_trace);
    Ok(TrainOutcome { params: second.params, loss_trace })
}
