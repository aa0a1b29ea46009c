//! Permutation-invariant distance regression from CSI pairs.
//!
//! A subnetwork `f` reads the two normalized CSI vectors as the columns of
//! an `N x 2` image. The distance estimate is `(f(a, b) + f(b, a)) / 2`,
//! which is symmetric by construction; predictions are clamped at zero.

pub mod checkpoint;
pub mod model;
pub mod network;
pub mod train;

use std::cmp::Ordering;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::propagation::CsiVector;
use crate::scene::Point2;

pub use model::{NetworkModel, Normalization};
pub use network::{Architecture, ConvSpec, Network, Workspace};
pub use train::{Adam, Objective, TrainConfig};

/// Measured CSI with the position it was recorded at.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub csi: CsiVector,
    pub position: Point2,
}

/// `M_0` labelled records; training examples are all pairs `i < j`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairDataset {
    records: Vec<Record>,
}

impl PairDataset {
    pub fn new(records: Vec<Record>) -> Result<Self> {
        if let Some(first) = records.first() {
            let n = first.csi.len();
            if let Some(i) = records.iter().position(|r| r.csi.len() != n) {
                return Err(invalid(format!("record {i} has {} CSI entries, expected {n}", records[i].csi.len())));
            }
        }
        Ok(Self { records })
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// CSI length, `None` when empty.
    pub fn n_waypoints(&self) -> Option<usize> {
        self.records.first().map(|r| r.csi.len())
    }

    pub fn pair_count(&self) -> usize {
        let m = self.records.len();
        m * m.saturating_sub(1) / 2
    }

    /// All `(i, j)` with `i < j`, row by row.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let m = self.records.len();
        (0..m).flat_map(move |i| (i + 1..m).map(move |j| (i, j)))
    }

    pub fn target(&self, i: usize, j: usize) -> f64 {
        (self.records[i].position - self.records[j].position).norm()
    }
}

/// The distance regressor: subnetwork weights plus normalization.
#[derive(Debug, Clone)]
pub struct RegressorParams {
    model: NetworkModel,
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
}

fn fill_pair_image(image: &mut [f64], a: &[f64], b: &[f64]) {
    for (t, px) in image.chunks_exact_mut(2).enumerate() {
        px[0] = a[t];
        px[1] = b[t];
    }
}

/// Reusable buffers for evaluating the symmetric network.
#[derive(Debug, Clone)]
pub struct PairEvaluator {
    first: Workspace,
    second: Workspace,
    image_first: Vec<f64>,
    image_second: Vec<f64>,
}

impl PairEvaluator {
    fn new(net: &Network) -> Self {
        let size = net.architecture().input_size();
        Self {
            first: net.workspace(),
            second: net.workspace(),
            image_first: vec![0.0; size],
            image_second: vec![0.0; size],
        }
    }
}

impl RegressorParams {
    pub fn from_model(model: NetworkModel) -> Result<Self> {
        let arch = model.architecture();
        if arch.input_width != 2 || arch.outputs != 1 {
            return Err(invalid("distance regressor needs an N x 2 input and a scalar output"));
        }
        Ok(Self { model })
    }

    pub fn new(architecture: Architecture, normalization: Normalization, weights: Vec<f64>) -> Result<Self> {
        Self::from_model(NetworkModel::new(architecture, normalization, weights)?)
    }

    pub fn zeros(architecture: Architecture, normalization: Normalization) -> Result<Self> {
        Self::from_model(NetworkModel::zeros(architecture, normalization)?)
    }

    /// Fan-in scaled random weights for `architecture`.
    pub fn random(architecture: Architecture, normalization: Normalization, seed: u64) -> Result<Self> {
        let net = Network::new(architecture.clone())?;
        let weights = net.init_params(&mut ChaCha8Rng::seed_from_u64(seed));
        Self::new(architecture, normalization, weights)
    }

    pub fn model(&self) -> &NetworkModel {
        &self.model
    }

    pub fn into_model(self) -> NetworkModel {
        self.model
    }

    pub fn weights(&self) -> &[f64] {
        self.model.weights()
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        self.model.weights_mut()
    }

    pub fn num_params(&self) -> usize {
        self.model.network().num_params()
    }

    pub fn n_waypoints(&self) -> usize {
        self.model.n_waypoints()
    }

    pub fn normalization(&self) -> &Normalization {
        self.model.normalization()
    }

    pub fn features(&self, csi: &CsiVector) -> Result<Vec<f64>> {
        self.model.features(csi)
    }

    pub fn evaluator(&self) -> PairEvaluator {
        PairEvaluator::new(self.model.network())
    }

    /// `f(a, b)` in meters.
    pub fn subnetwork_forward(&self, csi_a: &CsiVector, csi_b: &CsiVector) -> Result<f64> {
        let (fa, fb) = (self.features(csi_a)?, self.features(csi_b)?);
        let mut ev = self.evaluator();
        fill_pair_image(&mut ev.image_first, &fa, &fb);
        let net = self.model.network();
        Ok(net.forward(self.weights(), &ev.image_first, &mut ev.first)[0] * self.normalization().output_scale)
    }

    /// `(f(a, b) + f(b, a)) / 2` before clamping.
    pub fn symmetric_output(&self, csi_a: &CsiVector, csi_b: &CsiVector) -> Result<f64> {
        let (fa, fb) = (self.features(csi_a)?, self.features(csi_b)?);
        Ok(self.symmetric_output_features(&fa, &fb, &mut self.evaluator()))
    }

    /// Distance estimate in meters, never negative.
    pub fn predict_distance(&self, csi_a: &CsiVector, csi_b: &CsiVector) -> Result<f64> {
        Ok(self.symmetric_output(csi_a, csi_b)?.max(0.0))
    }

    /// As [`Self::predict_distance`] on precomputed features.
    pub fn predict_features(&self, fa: &[f64], fb: &[f64], ev: &mut PairEvaluator) -> f64 {
        self.symmetric_output_features(fa, fb, ev).max(0.0)
    }

    /// The two orderings are always evaluated lexicographically-smaller
    /// first, so swapping the arguments replays the same arithmetic.
    fn symmetric_output_features(&self, fa: &[f64], fb: &[f64], ev: &mut PairEvaluator) -> f64 {
        let (x, y) = if lexicographic(fa, fb) == Ordering::Greater { (fb, fa) } else { (fa, fb) };
        fill_pair_image(&mut ev.image_first, x, y);
        fill_pair_image(&mut ev.image_second, y, x);
        let net = self.model.network();
        let w = self.weights();
        let o1 = net.forward(w, &ev.image_first, &mut ev.first)[0];
        let o2 = net.forward(w, &ev.image_second, &mut ev.second)[0];
        0.5 * (o1 + o2) * self.normalization().output_scale
    }

    fn objective<'a>(&'a self, dataset: &PairDataset, pairs: Vec<(u32, u32)>) -> Result<PairObjective<'a>> {
        if dataset.n_waypoints().is_some_and(|n| n != self.n_waypoints()) {
            return Err(invalid(format!(
                "dataset has {} waypoints, model expects {}",
                dataset.n_waypoints().unwrap_or(0),
                self.n_waypoints()
            )));
        }
        let features = dataset.records().iter().map(|r| self.model.normalization.apply(&r.csi)).collect();
        let positions = dataset.records().iter().map(|r| r.position).collect();
        Ok(PairObjective { params: self, features, positions, pairs })
    }

    /// Mean squared distance error (m^2) over every pair `i < j`.
    ///
    /// Uses the unclamped symmetric output, the same quantity the gradient
    /// differentiates.
    pub fn loss(&self, dataset: &PairDataset) -> Result<f64> {
        if dataset.pair_count() == 0 {
            return Err(invalid("loss needs at least one pair"));
        }
        let pairs: Vec<(usize, usize)> = dataset.pairs().collect();
        Ok(self.gradient(dataset, &pairs)?.0)
    }

    /// Mean squared error over `pairs` and its exact gradient.
    pub fn gradient(&self, dataset: &PairDataset, pairs: &[(usize, usize)]) -> Result<(f64, Vec<f64>)> {
        if pairs.is_empty() {
            return Err(invalid("gradient needs a non-empty batch"));
        }
        let m = dataset.len();
        if let Some(&(i, j)) = pairs.iter().find(|&&(i, j)| i >= m || j >= m || i == j) {
            return Err(invalid(format!("pair ({i}, {j}) is not a valid pair of distinct records")));
        }
        let list = pairs.iter().map(|&(i, j)| (i as u32, j as u32)).collect();
        let objective = self.objective(dataset, list)?;
        let idx: Vec<usize> = (0..pairs.len()).collect();
        Ok(train::batch_gradient(&objective, self.weights(), &idx))
    }
}

struct PairObjective<'a> {
    params: &'a RegressorParams,
    features: Vec<Vec<f64>>,
    positions: Vec<Point2>,
    pairs: Vec<(u32, u32)>,
}

impl Objective for PairObjective<'_> {
    type Scratch = PairEvaluator;

    fn num_examples(&self) -> usize {
        self.pairs.len()
    }

    fn num_params(&self) -> usize {
        self.params.num_params()
    }

    fn scratch(&self) -> PairEvaluator {
        self.params.evaluator()
    }

    fn accumulate(&self, w: &[f64], idx: usize, scale: f64, ev: &mut PairEvaluator, grad: &mut [f64]) -> f64 {
        let (i, j) = self.pairs[idx];
        let (i, j) = (i as usize, j as usize);
        let target = (self.positions[i] - self.positions[j]).norm();
        let (fa, fb) = (&self.features[i], &self.features[j]);
        let (x, y) = if lexicographic(fa, fb) == Ordering::Greater { (fb, fa) } else { (fa, fb) };
        fill_pair_image(&mut ev.image_first, x, y);
        fill_pair_image(&mut ev.image_second, y, x);
        let net = self.params.model.network();
        let out_scale = self.params.normalization().output_scale;
        let o1 = net.forward(w, &ev.image_first, &mut ev.first)[0];
        let o2 = net.forward(w, &ev.image_second, &mut ev.second)[0];
        let err = 0.5 * (o1 + o2) * out_scale - target;
        let d_out = [scale * err * out_scale];
        net.backward(w, &ev.image_first, &mut ev.first, &d_out, grad);
        net.backward(w, &ev.image_second, &mut ev.second, &d_out, grad);
        err * err
    }
}

/// Parameters after training plus the per-epoch mean loss.
#[derive(Debug, Clone)]
pub struct TrainOutcome<P> {
    pub params: P,
    pub loss_trace: Vec<f64>,
}

/// Fresh regressor for `dataset`: normalization fitted to its CSI, output
/// scale and bias matched to the spread of its pair distances.
pub fn initial_params(dataset: &PairDataset, config: &TrainConfig) -> Result<RegressorParams> {
    let n = dataset.n_waypoints().ok_or_else(|| invalid("cannot initialize from an empty dataset"))?;
    if dataset.pair_count() == 0 {
        return Err(invalid("dataset needs at least two records"));
    }
    let mut norm = Normalization::fit(dataset.records().iter().map(|r| &r.csi), config.db_floor)?;
    let (mut sum, mut sq) = (0.0, 0.0);
    for (i, j) in dataset.pairs() {
        let d = dataset.target(i, j);
        sum += d;
        sq += d * d;
    }
    let count = dataset.pair_count() as f64;
    let rms = (sq / count).sqrt();
    norm.output_scale = if rms > 0.0 { rms } else { 1.0 };
    let mut params = RegressorParams::random(Architecture::pairwise(n), norm, config.seed)?;
    let bias = params.model.network().output_bias_range();
    params.weights_mut()[bias].iter_mut().for_each(|b| *b = sum / count / norm.output_scale);
    Ok(params)
}

/// Adam on the pair MSE starting from `params`.
pub fn train(params: RegressorParams, dataset: &PairDataset, config: &TrainConfig) -> Result<TrainOutcome<RegressorParams>> {
    train_with_progress(params, dataset, config, |_, _| {})
}

pub fn train_with_progress<F: FnMut(usize, f64)>(
    mut params: RegressorParams,
    dataset: &PairDataset,
    config: &TrainConfig,
    on_epoch: F,
) -> Result<TrainOutcome<RegressorParams>> {
    if dataset.pair_count() == 0 {
        return Err(invalid("training needs at least two records"));
    }
    let pairs = dataset.pairs().map(|(i, j)| (i as u32, j as u32)).collect();
    let mut weights = params.weights().to_vec();
    let loss_trace = {
        let objective = params.objective(dataset, pairs)?;
        train::train_objective_with(&objective, &mut weights, config, on_epoch)?
    };
    params.weights_mut().copy_from_slice(&weights);
    Ok(TrainOutcome { params, loss_trace })
}

/// Trains from scratch on `pretrain`, then continues on `finetune`.
///
/// Normalization constants come from the pretraining data and are kept for
/// fine-tuning so the learned features stay valid.
pub fn pretrain_then_finetune(
    pretrain: &PairDataset,
    finetune: &PairDataset,
    pretrain_config: &TrainConfig,
    finetune_config: &TrainConfig,
) -> Result<TrainOutcome<RegressorParams>> {
    if pretrain.n_waypoints() != finetune.n_waypoints() {
        return Err(invalid(format!(
            "pretraining data has {:?} waypoints but fine-tuning data has {:?}",
            pretrain.n_waypoints(),
            finetune.n_waypoints()
        )));
    }
    let init = initial_params(pretrain, pretrain_config)?;
    let first = train(init, pretrain, pretrain_config)?;
    let second = train(first.params, finetune, finetune_config)?;
    let mut loss_trace = first.loss_trace;
    loss_trace.extend(second.loss_trace);
    Ok(TrainOutcome { params: second.params, loss_trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_csi(rng: &mut ChaCha8Rng, n: usize) -> CsiVector {
        CsiVector::new((0..n).map(|_| 10f64.powf(rng.random_range(-12.0..-5.0))).collect()).unwrap()
    }

    fn toy_dataset(m: usize, n: usize, seed: u64) -> PairDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PairDataset::new(
            (0..m)
                .map(|_| Record {
                    csi: random_csi(&mut rng, n),
                    position: Point2::new(rng.random_range(0.0..100.0), rng.random_range(0.0..80.0)),
                })
                .collect(),
        )
        .unwrap()
    }

    fn norm() -> Normalization {
        Normalization { db_floor: -150.0, mean_db: -85.0, std_db: 20.0, output_scale: 30.0 }
    }

    #[test]
    fn averaging_and_clamp() {
        // f(a,b) = +5 and f(b,a) = -3 via a linear single-dense net on 1-wide images
        let arch = Architecture { input_len: 1, input_width: 2, convs: vec![], hidden: vec![], outputs: 1 };
        let n = Normalization { db_floor: -150.0, mean_db: 0.0, std_db: 1.0, output_scale: 1.0 };
        // image = [a_db, b_db]; out = w0 a + w1 b + c
        let a = CsiVector::new(vec![10f64.powf(0.1)]).unwrap(); // 1 dB
        let b = CsiVector::new(vec![10f64.powf(0.2)]).unwrap(); // 2 dB
        // f(a,b) = w0*1 + w1*2 + c = 5, f(b,a) = w0*2 + w1*1 + c = -3 -> w0 - w1 = -8
        let p = RegressorParams::new(arch, n, vec![-4.0, 4.0, -3.0]).unwrap();
        let fab = p.subnetwork_forward(&a, &b).unwrap();
        let fba = p.subnetwork_forward(&b, &a).unwrap();
        assert!((fab - 1.0).abs() < 1e-9 && (fba + 7.0).abs() < 1e-9, "{fab} {fba}");
        let p = RegressorParams::new(p.model.architecture().clone(), n, vec![-4.0, 4.0, 1.0]).unwrap();
        assert!((p.subnetwork_forward(&a, &b).unwrap() - 5.0).abs() < 1e-9);
        assert!((p.subnetwork_forward(&b, &a).unwrap() + 3.0).abs() < 1e-9);
        assert!((p.predict_distance(&a, &b).unwrap() - 1.0).abs() < 1e-9);
        let p = RegressorParams::new(p.model.architecture().clone(), n, vec![-4.0, 4.0, -3.0]).unwrap();
        assert_eq!(p.predict_distance(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn symmetric_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = RegressorParams::random(Architecture::pairwise(32), norm(), 9).unwrap();
        for _ in 0..20 {
            let a = random_csi(&mut rng, 32);
            let b = random_csi(&mut rng, 32);
            let ab = p.symmetric_output(&a, &b).unwrap();
            assert_eq!(ab.to_bits(), p.symmetric_output(&b, &a).unwrap().to_bits());
            let fab = p.subnetwork_forward(&a, &b).unwrap();
            let fba = p.subnetwork_forward(&b, &a).unwrap();
            assert!((ab - 0.5 * (fab + fba)).abs() <= 1e-12 * ab.abs().max(1.0));
        }
    }

    #[test]
    fn zero_model_predicts_zero() {
        let p = RegressorParams::zeros(Architecture::pairwise(20), norm()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (a, b) = (random_csi(&mut rng, 20), random_csi(&mut rng, 20));
        assert_eq!(p.subnetwork_forward(&a, &b).unwrap(), 0.0);
        assert_eq!(p.predict_distance(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let p = RegressorParams::zeros(Architecture::pairwise(20), norm()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (a, b) = (random_csi(&mut rng, 20), random_csi(&mut rng, 21));
        assert!(p.predict_distance(&a, &b).is_err());
    }

    #[test]
    fn loss_of_constant_zero_predictor() {
        let p = RegressorParams::zeros(Architecture::pairwise(20), norm()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ds = PairDataset::new(vec![
            Record { csi: random_csi(&mut rng, 20), position: Point2::new(0.0, 0.0) },
            Record { csi: random_csi(&mut rng, 20), position: Point2::new(6.0, 8.0) },
        ])
        .unwrap();
        assert_eq!(p.loss(&ds).unwrap(), 100.0);
    }

    #[test]
    fn loss_matches_double_loop() {
        let ds = toy_dataset(10, 20, 4);
        let p = RegressorParams::random(Architecture::pairwise(20), norm(), 5).unwrap();
        let mut total = 0.0;
        let mut count = 0;
        for i in 0..10 {
            for j in 0..10 {
                if i < j {
                    let r = (&ds.records()[i], &ds.records()[j]);
                    let e = p.symmetric_output(&r.0.csi, &r.1.csi).unwrap() - (r.0.position - r.1.position).norm();
                    total += e * e;
                    count += 1;
                }
            }
        }
        assert_eq!(count, 45);
        let want = total / count as f64;
        assert!((p.loss(&ds).unwrap() - want).abs() < 1e-10 * want);
    }

    #[test]
    fn empty_loss_is_error() {
        let ds = toy_dataset(1, 20, 4);
        let p = RegressorParams::zeros(Architecture::pairwise(20), norm()).unwrap();
        assert!(p.loss(&ds).is_err());
        assert!(p.gradient(&ds, &[]).is_err());
    }

    #[test]
    fn pair_count_is_quadratic() {
        assert_eq!(toy_dataset(30, 8, 1).pair_count(), 435);
        assert_eq!(toy_dataset(30, 8, 1).pairs().count(), 435);
    }
}
