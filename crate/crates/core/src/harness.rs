//! Monte-Carlo evaluation: data generation, training, sweeps over anchor
//! count and noise power, and result files.
//!
//! Every random stream is derived from the master seed and a fixed tag, so a
//! realization draws the same node layout and the same noise samples no
//! matter which algorithms or sweep points are evaluated alongside it.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{
    dfpl_locate, nfpl_initial_params, nfpl_train, FingerprintStore, NfplParams, Representation,
};
use crate::dataset::{generate_dataset, CsiDataset};
use crate::error::{invalid, Result};
use crate::multilateration::{locate, RefineOptions};
use crate::propagation::{corrupt_gains, true_gains, ChannelModel};
use crate::regressor::{self, Record, RegressorParams, TrainConfig};
use crate::scene::{sample_ground_positions, Point2, Point3, Scene, SceneGenerator, Trajectory};
use crate::scenefile::{self, TrajectorySpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Learned distances, linearized multilateration, Gauss-Newton refinement.
    Iccl,
    /// Learned distances, linearized multilateration only.
    IcclLinear,
    /// Nearest fingerprint on standardized dB features.
    Dfpl,
    /// Nearest fingerprint on plain linear gains.
    DfplRaw,
    Nfpl,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] =
        [Algorithm::Iccl, Algorithm::IcclLinear, Algorithm::Dfpl, Algorithm::DfplRaw, Algorithm::Nfpl];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Iccl => "iccl",
            Algorithm::IcclLinear => "iccl_linear",
            Algorithm::Dfpl => "dfpl",
            Algorithm::DfplRaw => "dfpl_raw",
            Algorithm::Nfpl => "nfpl",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == name)
            .ok_or_else(|| invalid(format!("unknown algorithm '{name}'")))
    }

    fn uses_anchors(self) -> bool {
        matches!(self, Algorithm::Iccl | Algorithm::IcclLinear)
    }
}

/// Everything one experiment needs. Loadable from a TOML file in which any
/// field may be omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Scene file for the test environment; generated from `scene_seed` when absent.
    pub scene_file: Option<PathBuf>,
    pub scene_seed: u64,
    /// Seed of the second, randomly generated environment used for pretraining.
    pub pretrain_scene_seed: u64,
    pub trajectory: TrajectorySpec,
    pub channel: ChannelModel,
    /// Fine-tuning (fingerprint) positions in the test environment.
    pub train_positions: usize,
    pub pretrain_positions: usize,
    /// Nodes per realization, anchors included.
    pub test_nodes: usize,
    pub anchor_counts: Vec<usize>,
    /// Anchor count of the noise sweep.
    pub noise_sweep_anchors: usize,
    /// Noise grid as SNR at the strongest waypoint (dB); see [`noise_power_for_snr`].
    pub snr_db: Vec<f64>,
    /// Explicit noise powers (W); replaces `snr_db` when non-empty.
    pub noise_powers: Vec<f64>,
    pub realizations: usize,
    pub seed: u64,
    pub algorithms: Vec<Algorithm>,
    pub refine: RefineOptions,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    pub nfpl_pretrain: TrainConfig,
    pub nfpl_finetune: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scene_file: None,
            scene_seed: 1,
            pretrain_scene_seed: 2,
            trajectory: TrajectorySpec::default_circle(),
            channel: ChannelModel::default(),
            train_positions: 200,
            pretrain_positions: 1000,
            test_nodes: 100,
            anchor_counts: vec![3, 5, 7, 10, 20],
            noise_sweep_anchors: 20,
            snr_db: (0..=8).map(|k| 40.0 - 5.0 * k as f64).collect(),
            noise_powers: Vec::new(),
            realizations: 100,
            seed: 0,
            algorithms: Algorithm::ALL.to_vec(),
            refine: RefineOptions::default(),
            pretrain: TrainConfig {
                learning_rate: 1e-3,
                batch_size: 64,
                epochs: 10,
                examples_per_epoch: Some(20_000),
                final_lr_fraction: 0.1,
                seed: 11,
                ..TrainConfig::default()
            },
            finetune: TrainConfig {
                learning_rate: 3e-4,
                batch_size: 64,
                epochs: 8,
                final_lr_fraction: 0.1,
                seed: 12,
                ..TrainConfig::default()
            },
            nfpl_pretrain: TrainConfig {
                batch_size: 32,
                epochs: 100,
                final_lr_fraction: 0.1,
                seed: 13,
                ..TrainConfig::default()
            },
            nfpl_finetune: TrainConfig {
                batch_size: 32,
                epochs: 100,
                final_lr_fraction: 0.1,
                seed: 14,
                ..TrainConfig::default()
            },
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> std::result::Result<Self, String> {
        let cfg: Self = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment configs always serialize")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|reason| crate::Error::Format { path: path.to_path_buf(), reason })
    }

    pub fn validate(&self) -> Result<()> {
        if self.realizations == 0 {
            return Err(invalid("realization count must be >= 1"));
        }
        if self.anchor_counts.is_empty() || (self.noise_powers.is_empty() && self.snr_db.is_empty()) {
            return Err(invalid("sweeps must be non-empty"));
        }
        if self.algorithms.is_empty() {
            return Err(invalid("algorithm list must be non-empty"));
        }
        let max_anchors = self.anchor_counts.iter().copied().chain([self.noise_sweep_anchors]).max().unwrap_or(0);
        if self.anchor_counts.iter().chain([&self.noise_sweep_anchors]).any(|&m| m < 3) {
            return Err(invalid("anchor counts must be >= 3"));
        }
        if self.test_nodes <= max_anchors {
            return Err(invalid(format!(
                "test node count {} must exceed the largest anchor count {max_anchors}",
                self.test_nodes
            )));
        }
        if self.train_positions < 2 || self.pretrain_positions < 2 {
            return Err(invalid("training sets need at least two positions"));
        }
        if self.noise_powers.iter().any(|s| !(s.is_finite() && *s >= 0.0)) || self.snr_db.iter().any(|s| !s.is_finite()) {
            return Err(invalid("noise grid entries must be finite (powers >= 0)"));
        }
        self.channel.validate()?;
        for c in [&self.pretrain, &self.finetune, &self.nfpl_pretrain, &self.nfpl_finetune] {
            c.validate()?;
        }
        self.trajectory.build()?;
        Ok(())
    }

    /// Noise powers (W) of the sweep, in configured order.
    pub fn noise_grid(&self) -> Result<Vec<f64>> {
        if !self.noise_powers.is_empty() {
            return Ok(self.noise_powers.clone());
        }
        let trajectory = self.trajectory.build()?;
        Ok(self.snr_db.iter().map(|&s| noise_power_for_snr(&self.channel, &trajectory, s)).collect())
    }
}

/// Noise power giving `snr_db` per received sample at the strongest possible
/// waypoint: a ground node directly below the lowest waypoint, unobstructed.
pub fn noise_power_for_snr(model: &ChannelModel, trajectory: &Trajectory, snr_db: f64) -> f64 {
    let gain = 10f64.powf(model.free_space_gain_db(trajectory.min_altitude()) / 10.0);
    gain * model.symbol_power() / 10f64.powf(snr_db / 10.0)
}

/// Independent stream seed for `(tag, index)` under `master`.
pub fn derive_seed(master: u64, tag: u64, index: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    mix(mix(mix(master) ^ tag) ^ index)
}

const TAG_PRETRAIN_DATA: u64 = 1;
const TAG_TRAIN_DATA: u64 = 2;
const TAG_NODES: u64 = 3;
const TAG_NOISE: u64 = 4;

fn rng_for(master: u64, tag: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, tag, index))
}

/// Test and pretraining scenes plus the trajectory.
#[derive(Debug, Clone)]
pub struct Environment {
    pub scene: Scene,
    pub pretrain_scene: Scene,
    pub trajectory: Trajectory,
}

impl Environment {
    pub fn from_config(config: &ExperimentConfig) -> Result<Self> {
        let generator = SceneGenerator::default();
        let scene = match &config.scene_file {
            Some(path) => scenefile::load(path)?.0,
            None => generator.generate(config.scene_seed)?,
        };
        let (w, d) = scene.extent();
        let pretrain_scene = SceneGenerator { extent: (w, d), ..generator }.generate(config.pretrain_scene_seed)?;
        Ok(Self { scene, pretrain_scene, trajectory: config.trajectory.build()? })
    }
}

/// Noise-free training sets: `(pretraining, fine-tuning)`.
pub fn generate_training_data(config: &ExperimentConfig, env: &Environment) -> Result<(CsiDataset, CsiDataset)> {
    let clean = config.channel.with_noise_power(0.0);
    let make = |scene: &Scene, count: usize, tag: u64| {
        let mut rng = rng_for(config.seed, tag, 0);
        let positions = sample_ground_positions(scene, count, &mut rng)?;
        generate_dataset(scene, &clean, &env.trajectory, &positions, &mut rng)
    };
    Ok((
        make(&env.pretrain_scene, config.pretrain_positions, TAG_PRETRAIN_DATA)?,
        make(&env.scene, config.train_positions, TAG_TRAIN_DATA)?,
    ))
}

/// Trained learners plus the fingerprint database they were fitted on.
#[derive(Debug, Clone)]
pub struct TrainedModels {
    pub iccl: RegressorParams,
    pub nfpl: NfplParams,
    pub fingerprints: Vec<Record>,
}

/// Both learners trained from scratch on `data`. `progress` receives
/// `(stage, epoch, mean loss)`.
pub fn pretrain_models<F: FnMut(&str, usize, f64)>(
    config: &ExperimentConfig,
    data: &CsiDataset,
    mut progress: F,
) -> Result<(RegressorParams, NfplParams)> {
    let pairs = regressor::PairDataset::new(data.records.clone())?;
    let init = regressor::initial_params(&pairs, &config.pretrain)?;
    let iccl = regressor::train_with_progress(init, &pairs, &config.pretrain, |e, l| progress("pretrain", e, l))?;
    let init = nfpl_initial_params(&data.records, &config.nfpl_pretrain)?;
    let nfpl = nfpl_train(init, &data.records, &config.nfpl_pretrain)?;
    report_last(&mut progress, "nfpl pretrain", &nfpl.loss_trace);
    Ok((iccl.params, nfpl.params))
}

/// Continues training both learners on `data`, keeping their normalization.
pub fn finetune_models<F: FnMut(&str, usize, f64)>(
    config: &ExperimentConfig,
    iccl: RegressorParams,
    nfpl: NfplParams,
    data: &CsiDataset,
    mut progress: F,
) -> Result<TrainedModels> {
    let pairs = regressor::PairDataset::new(data.records.clone())?;
    let iccl = regressor::train_with_progress(iccl, &pairs, &config.finetune, |e, l| progress("finetune", e, l))?;
    let nfpl = nfpl_train(nfpl, &data.records, &config.nfpl_finetune)?;
    report_last(&mut progress, "nfpl finetune", &nfpl.loss_trace);
    Ok(TrainedModels { iccl: iccl.params, nfpl: nfpl.params, fingerprints: data.records.clone() })
}

fn report_last<F: FnMut(&str, usize, f64)>(progress: &mut F, stage: &str, trace: &[f64]) {
    if let Some(l) = trace.last() {
        progress(stage, trace.len() - 1, *l);
    }
}

/// Pretraining followed by fine-tuning for both learners.
pub fn train_models<F: FnMut(&str, usize, f64)>(
    config: &ExperimentConfig,
    pretrain: &CsiDataset,
    finetune: &CsiDataset,
    mut progress: F,
) -> Result<TrainedModels> {
    let (iccl, nfpl) = pretrain_models(config, pretrain, &mut progress)?;
    finetune_models(config, iccl, nfpl, finetune, progress)
}

/// Root mean squared Euclidean error.
pub fn rmse(estimates: &[Point2], truths: &[Point2]) -> Result<f64> {
    if estimates.len() != truths.len() || estimates.is_empty() {
        return Err(invalid(format!(
            "rmse needs equal, non-zero lengths (got {} and {})",
            estimates.len(),
            truths.len()
        )));
    }
    let sq: f64 = estimates.iter().zip(truths).map(|(e, t)| (e - t).norm_squared()).sum();
    Ok((sq / estimates.len() as f64).sqrt())
}

/// One sweep point.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub algorithm: Algorithm,
    pub m_a: usize,
    /// Linear noise power (W).
    pub noise_power: f64,
    pub rmse_m: f64,
    /// Delta-method standard error of the RMSE over realizations.
    pub stderr_m: f64,
    /// Realizations that produced an estimate for every unknown.
    pub n_realizations: usize,
    pub failure_rate: f64,
}

impl SweepRow {
    pub fn noise_power_dbm(&self) -> f64 {
        10.0 * self.noise_power.log10() + 30.0
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn get(&self, algorithm: Algorithm, m_a: usize, noise_power: f64) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.algorithm == algorithm && r.m_a == m_a && r.noise_power == noise_power)
    }

    pub fn merge(mut self, other: SweepResult) -> Self {
        self.rows.extend(other.rows);
        self
    }
}

/// Grid over anchor counts and noise powers for the given algorithms.
///
/// Realization `r` always sees the same nodes and the same noise draws, so
/// all rows are paired. Anchors are the first `m_a` nodes; unknowns the rest.
pub fn evaluate(
    config: &ExperimentConfig,
    env: &Environment,
    models: &TrainedModels,
    algorithms: &[Algorithm],
    anchor_counts: &[usize],
    noise_powers: &[f64],
) -> Result<SweepResult> {
    config.validate()?;
    if algorithms.is_empty() || anchor_counts.is_empty() || noise_powers.is_empty() {
        return Err(invalid("evaluation grid must be non-empty"));
    }
    if let Some(&m) = anchor_counts.iter().find(|&&m| m < 3 || m >= config.test_nodes) {
        return Err(invalid(format!("anchor count {m} must lie in [3, {})", config.test_nodes)));
    }
    let n = env.trajectory.len();
    if models.iccl.n_waypoints() != n || models.nfpl.n_waypoints() != n {
        return Err(invalid(format!("models expect a different trajectory length than {n}")));
    }
    let stores = Stores {
        normalized: FingerprintStore::new(&models.fingerprints, Representation::Normalized(*models.iccl.normalization()))?,
        raw: FingerprintStore::new(&models.fingerprints, Representation::Raw)?,
    };
    let cells: Vec<(Algorithm, usize, usize)> = algorithms
        .iter()
        .flat_map(|&a| anchor_counts.iter().flat_map(move |&m| (0..noise_powers.len()).map(move |k| (a, m, k))))
        .collect();

    let per_realization: Vec<Vec<Option<f64>>> = (0..config.realizations)
        .into_par_iter()
        .map(|r| realization(config, env, models, &stores, &cells, anchor_counts, noise_powers, r as u64))
        .collect::<Result<_>>()?;

    let rows = cells
        .iter()
        .enumerate()
        .map(|(c, &(algorithm, m_a, k))| {
            let ok: Vec<f64> = per_realization.iter().filter_map(|v| v[c]).collect();
            let (rmse_m, stderr_m) = summarize(&ok);
            SweepRow {
                algorithm,
                m_a,
                noise_power: noise_powers[k],
                rmse_m,
                stderr_m,
                n_realizations: ok.len(),
                failure_rate: (config.realizations - ok.len()) as f64 / config.realizations as f64,
            }
        })
        .collect();
    Ok(SweepResult { rows })
}

struct Stores {
    normalized: FingerprintStore,
    raw: FingerprintStore,
}

/// RMSE and its standard error from per-realization mean squared errors.
fn summarize(mse: &[f64]) -> (f64, f64) {
    if mse.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = mse.len() as f64;
    let mean = mse.iter().sum::<f64>() / n;
    let rmse = mean.sqrt();
    if mse.len() < 2 || rmse == 0.0 {
        return (rmse, 0.0);
    }
    let var = mse.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (rmse, (var / n).sqrt() / (2.0 * rmse))
}

/// Mean squared error per grid cell for one realization; `None` marks a
/// degenerate multilateration.
#[allow(clippy::too_many_arguments)]
fn realization(
    config: &ExperimentConfig,
    env: &Environment,
    models: &TrainedModels,
    stores: &Stores,
    cells: &[(Algorithm, usize, usize)],
    anchor_counts: &[usize],
    noise_powers: &[f64],
    r: u64,
) -> Result<Vec<Option<f64>>> {
    let m = config.test_nodes;
    let nodes = sample_ground_positions(&env.scene, m, &mut rng_for(config.seed, TAG_NODES, r))?;
    let gains = nodes
        .iter()
        .map(|p| true_gains(&env.scene, &config.channel, &env.trajectory, &Point3::new(p.x, p.y, 0.0)))
        .collect::<Result<Vec<_>>>()?;
    let max_anchors = *anchor_counts.iter().max().expect("non-empty");
    let needs_iccl = cells.iter().any(|c| c.0.uses_anchors());
    let mut out = vec![None; cells.len()];

    for (k, &sigma2) in noise_powers.iter().enumerate() {
        // Same stream at every noise level: common random numbers across the sweep.
        let model = config.channel.with_noise_power(sigma2);
        let mut rng = rng_for(config.seed, TAG_NOISE, r);
        let csi: Vec<_> = gains.iter().map(|g| corrupt_gains(g, &model, &mut rng)).collect();

        // predicted[i][j - i - 1] = distance between anchor i and node j > i.
        let mut predicted: Vec<Vec<f64>> = Vec::new();
        if needs_iccl {
            let features = csi.iter().map(|c| models.iccl.features(c)).collect::<Result<Vec<_>>>()?;
            let mut ev = models.iccl.evaluator();
            predicted = (0..max_anchors)
                .map(|i| {
                    (i + 1..m)
                        .map(|j| models.iccl.predict_features(&features[i], &features[j], &mut ev).max(0.0))
                        .collect()
                })
                .collect();
        }
        let mut nfpl_ws = models.nfpl.workspace();
        let mut nfpl_cache: Vec<Option<Point2>> = vec![None; m];

        for (c, &(alg, m_a, kk)) in cells.iter().enumerate() {
            if kk != k {
                continue;
            }
            let mut sq = 0.0;
            let mut failed = false;
            for j in m_a..m {
                let est = match alg {
                    Algorithm::Iccl | Algorithm::IcclLinear => {
                        let d: Vec<f64> = (0..m_a).map(|i| predicted[i][j - i - 1]).collect();
                        let opts = (alg == Algorithm::Iccl).then_some(config.refine);
                        match locate(&nodes[..m_a], &d, opts) {
                            Ok(e) if !e.degenerate && e.position.iter().all(|v| v.is_finite()) => e.position,
                            _ => {
                                failed = true;
                                break;
                            }
                        }
                    }
                    Algorithm::Dfpl => dfpl_locate(&stores.normalized, &csi[j])?,
                    Algorithm::DfplRaw => dfpl_locate(&stores.raw, &csi[j])?,
                    Algorithm::Nfpl => *nfpl_cache[j].get_or_insert_with(|| {
                        let f = models.nfpl.model().features(&csi[j]).expect("length checked above");
                        models.nfpl.locate_features(&f, &mut nfpl_ws)
                    }),
                };
                sq += (est - nodes[j]).norm_squared();
            }
            if !failed {
                out[c] = Some(sq / (m - m_a) as f64);
            }
        }
    }
    Ok(out)
}

/// ICCL rows over every configured anchor count and noise power.
pub fn sweep_anchors(config: &ExperimentConfig, env: &Environment, models: &TrainedModels) -> Result<SweepResult> {
    let algs: Vec<Algorithm> = config.algorithms.iter().copied().filter(|a| a.uses_anchors()).collect();
    if algs.is_empty() {
        return Err(invalid("anchor sweep needs iccl or iccl_linear in the algorithm list"));
    }
    evaluate(config, env, models, &algs, &config.anchor_counts, &config.noise_grid()?)
}

/// Every configured algorithm over the noise grid at the fixed anchor count.
pub fn sweep_noise(config: &ExperimentConfig, env: &Environment, models: &TrainedModels) -> Result<SweepResult> {
    evaluate(config, env, models, &config.algorithms, &[config.noise_sweep_anchors], &config.noise_grid()?)
}

/// ICCL (with and without refinement) rows for the given grid.
pub fn run_iccl_pipeline(
    config: &ExperimentConfig,
    env: &Environment,
    models: &TrainedModels,
    anchor_counts: &[usize],
    noise_powers: &[f64],
) -> Result<SweepResult> {
    evaluate(config, env, models, &[Algorithm::Iccl, Algorithm::IcclLinear], anchor_counts, noise_powers)
}

/// Baseline rows on the same realization schedule as ICCL.
pub fn run_baseline_pipeline(
    config: &ExperimentConfig,
    env: &Environment,
    models: &TrainedModels,
    algorithm: Algorithm,
    anchor_counts: &[usize],
    noise_powers: &[f64],
) -> Result<SweepResult> {
    if algorithm.uses_anchors() {
        return Err(invalid(format!("{} is not a baseline", algorithm.name())));
    }
    evaluate(config, env, models, &[algorithm], anchor_counts, noise_powers)
}

pub const CSV_HEADER: &str = "algorithm,m_a,noise_power_dbm,rmse_m,stderr_m,n_realizations,failure_rate";

fn fmt_f(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v:.6}")
    }
}

/// Result table as CSV text.
pub fn results_csv(results: &SweepResult) -> String {
    let mut s = String::new();
    writeln!(s, "{CSV_HEADER}").unwrap();
    for r in &results.rows {
        writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.algorithm.name(),
            r.m_a,
            fmt_f(r.noise_power_dbm()),
            fmt_f(r.rmse_m),
            fmt_f(r.stderr_m),
            r.n_realizations,
            fmt_f(r.failure_rate)
        )
        .unwrap();
    }
    s
}

/// Plot data: one whitespace-separated block per (algorithm, anchor count),
/// blocks separated by two blank lines (gnuplot `index`), rows ordered by
/// noise power.
pub fn results_plot_data(results: &SweepResult) -> String {
    let mut keys: Vec<(Algorithm, usize)> = results.rows.iter().map(|r| (r.algorithm, r.m_a)).collect();
    keys.sort();
    keys.dedup();
    let mut s = String::new();
    for (b, (alg, m_a)) in keys.iter().enumerate() {
        if b > 0 {
            s.push_str("\n\n");
        }
        writeln!(s, "# algorithm={} m_a={}", alg.name(), m_a).unwrap();
        writeln!(s, "# noise_power_dbm rmse_m stderr_m").unwrap();
        let mut rows: Vec<&SweepRow> = results.rows.iter().filter(|r| r.algorithm == *alg && r.m_a == *m_a).collect();
        rows.sort_by(|a, b| a.noise_power.total_cmp(&b.noise_power));
        for r in rows {
            writeln!(s, "{} {} {}", fmt_f(r.noise_power_dbm()), fmt_f(r.rmse_m), fmt_f(r.stderr_m)).unwrap();
        }
    }
    s
}

/// Writes `path` (CSV) and the plot data next to it with a `.dat` extension.
pub fn emit_results(results: &SweepResult, path: &Path) -> Result<PathBuf> {
    std::fs::write(path, results_csv(results))?;
    let dat = path.with_extension("dat");
    std::fs::write(&dat, results_plot_data(results))?;
    Ok(dat)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmse_examples() {
        let p = [Point2::new(1.0, 2.0), Point2::new(-3.0, 0.5)];
        assert_eq!(rmse(&p, &p).unwrap(), 0.0);
        assert_eq!(rmse(&[Point2::new(3.0, 4.0)], &[Point2::zeros()]).unwrap(), 5.0);
        let e = [Point2::zeros(), Point2::new(10.0, 0.0)];
        assert!((rmse(&e, &[Point2::zeros(); 2]).unwrap() - 50f64.sqrt()).abs() < 1e-12);
        assert!(rmse(&e, &[Point2::zeros()]).is_err());
        assert!(rmse(&[], &[]).is_err());
    }

    #[test]
    fn default_config_round_trips() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        let partial = ExperimentConfig::from_toml("realizations = 3\nanchor_counts = [4, 6]\n").unwrap();
        assert_eq!(partial.realizations, 3);
        assert_eq!(partial.test_nodes, 100);
    }

    #[test]
    fn config_invariants() {
        let bad = |f: fn(&mut ExperimentConfig)| {
            let mut c = ExperimentConfig::default();
            f(&mut c);
            c.validate().is_err()
        };
        assert!(bad(|c| c.realizations = 0));
        assert!(bad(|c| c.anchor_counts.clear()));
        assert!(bad(|c| c.test_nodes = 20));
        assert!(bad(|c| {
            c.snr_db.clear();
            c.noise_powers.clear()
        }));
        assert!(ExperimentConfig::from_toml("no_such_field = 1\n").is_err());
    }

    #[test]
    fn snr_grid() {
        let cfg = ExperimentConfig::default();
        let grid = cfg.noise_grid().unwrap();
        assert_eq!(grid.len(), 9);
        // 40 m altitude: free-space gain -40 - 20 log10(40) dB, 1 W per symbol.
        let g = 10f64.powf((-40.0 - 20.0 * 40f64.log10()) / 10.0);
        assert!((grid[0] - g * 1e-4).abs() < 1e-12 * g);
        assert!((grid[8] - g).abs() < 1e-12 * g);
        assert!(grid.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn derived_seeds_differ() {
        let a = derive_seed(7, TAG_NODES, 0);
        assert_eq!(a, derive_seed(7, TAG_NODES, 0));
        assert_ne!(a, derive_seed(7, TAG_NODES, 1));
        assert_ne!(a, derive_seed(7, TAG_NOISE, 0));
        assert_ne!(a, derive_seed(8, TAG_NODES, 0));
    }

    #[test]
    fn standard_error_of_constant_is_zero() {
        assert_eq!(summarize(&[4.0, 4.0, 4.0]), (2.0, 0.0));
        let (r, s) = summarize(&[1.0, 9.0]);
        assert_eq!(r, 5f64.sqrt());
        // sd = 4 sqrt 2, se(mse) = 4, se(rmse) = 4 / (2 sqrt 5)
        assert!((s - 2.0 / 5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn csv_layout() {
        let res = SweepResult {
            rows: vec![SweepRow {
                algorithm: Algorithm::Iccl,
                m_a: 7,
                noise_power: 1e-3,
                rmse_m: 4.25,
                stderr_m: 0.125,
                n_realizations: 99,
                failure_rate: 0.01,
            }],
        };
        assert_eq!(results_csv(&res), format!("{CSV_HEADER}\niccl,7,0.000000,4.250000,0.125000,99,0.010000\n"));
        assert_eq!(
            results_plot_data(&res),
            "# algorithm=iccl m_a=7\n# noise_power_dbm rmse_m stderr_m\n0.000000 4.250000 0.125000\n"
        );
    }
}
