//! Byte-level check of the result file layout on a small, fully seeded run.

use iccl_core::baselines::nfpl_initial_params;
use iccl_core::harness::{self, Algorithm, Environment, ExperimentConfig, TrainedModels};
use iccl_core::regressor::{initial_params, PairDataset, TrainConfig};
use iccl_core::scenefile::TrajectorySpec;

fn small_config() -> ExperimentConfig {
    ExperimentConfig {
        trajectory: TrajectorySpec::Circle { center: [40.0, 45.0, 40.0], radius_m: 20.0, n_waypoints: 20 },
        train_positions: 12,
        pretrain_positions: 12,
        test_nodes: 10,
        anchor_counts: vec![3, 5],
        noise_sweep_anchors: 5,
        snr_db: vec![40.0, 10.0],
        realizations: 3,
        seed: 5,
        ..ExperimentConfig::default()
    }
}

/// Untrained but deterministic models: the golden file pins the plumbing,
/// not the learning.
fn models(config: &ExperimentConfig, env: &Environment) -> TrainedModels {
    let (_, fine) = harness::generate_training_data(config, env).unwrap();
    let cfg = TrainConfig::default();
    let iccl = initial_params(&PairDataset::new(fine.records.clone()).unwrap(), &cfg).unwrap();
    let nfpl = nfpl_initial_params(&fine.records, &cfg).unwrap();
    TrainedModels { iccl, nfpl, fingerprints: fine.records }
}

#[test]
fn sweep_csv_matches_golden_file() {
    let config = small_config();
    let env = Environment::from_config(&config).unwrap();
    let m = models(&config, &env);
    let res = harness::evaluate(&config, &env, &m, &Algorithm::ALL, &config.anchor_counts, &config.noise_grid().unwrap())
        .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.csv");
    let dat = harness::emit_results(&res, &path).unwrap();
    let csv = std::fs::read_to_string(&path).unwrap();
    if std::env::var_os("ICCL_BLESS").is_some() {
        let here = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
        std::fs::write(here.join("sweep.csv"), &csv).unwrap();
        std::fs::copy(&dat, here.join("sweep.dat")).unwrap();
        return;
    }
    let golden = include_str!("golden/sweep.csv");
    assert_eq!(csv, golden, "result CSV drifted from tests/golden/sweep.csv");
    assert_eq!(std::fs::read_to_string(dat).unwrap(), include_str!("golden/sweep.dat"));
}

#[test]
fn header_is_the_documented_schema() {
    assert_eq!(
        harness::CSV_HEADER,
        "algorithm,m_a,noise_power_dbm,rmse_m,stderr_m,n_realizations,failure_rate"
    );
}

#[test]
fn realizations_are_paired_across_grids() {
    // A realization's rows do not depend on what else is evaluated with it.
    let config = small_config();
    let env = Environment::from_config(&config).unwrap();
    let m = models(&config, &env);
    let grid = config.noise_grid().unwrap();
    let all = harness::evaluate(&config, &env, &m, &Algorithm::ALL, &config.anchor_counts, &grid).unwrap();
    let one = harness::evaluate(&config, &env, &m, &[Algorithm::Dfpl], &[5], &grid[1..]).unwrap();
    assert_eq!(all.get(Algorithm::Dfpl, 5, grid[1]).unwrap(), &one.rows[0]);
    let iccl = harness::run_iccl_pipeline(&config, &env, &m, &[3], &grid[..1]).unwrap();
    assert_eq!(all.get(Algorithm::Iccl, 3, grid[0]).unwrap(), iccl.get(Algorithm::Iccl, 3, grid[0]).unwrap());
}
