use iccl_core::baselines::{nfpl_initial_params, nfpl_locate, nfpl_train};
use iccl_core::dataset::generate_dataset;
use iccl_core::propagation::ChannelModel;
use iccl_core::regressor::{initial_params, train, PairDataset, TrainConfig};
use iccl_core::scene::{build_circular_trajectory, sample_ground_positions, Point3, SceneGenerator};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn toy() -> iccl_core::dataset::CsiDataset {
    let scene = SceneGenerator::default().generate(3).unwrap();
    let traj = build_circular_trajectory(Point3::new(40.0, 45.0, 40.0), 20.0, 20).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pos = sample_ground_positions(&scene, 22, &mut rng).unwrap();
    generate_dataset(&scene, &ChannelModel::default(), &traj, &pos, &mut rng).unwrap()
}

#[test]
fn pair_regressor_beats_constant_predictor() {
    let ds = PairDataset::new(toy().records).unwrap();
    let targets: Vec<f64> = ds.pairs().map(|(i, j)| ds.target(i, j)).collect();
    let mean = targets.iter().sum::<f64>() / targets.len() as f64;
    let baseline = targets.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / targets.len() as f64;

    let cfg = TrainConfig { epochs: 200, batch_size: 32, final_lr_fraction: 0.1, ..TrainConfig::default() };
    let init = initial_params(&ds, &cfg).unwrap();
    let out = train(init, &ds, &cfg).unwrap();
    let loss = out.params.loss(&ds).unwrap();
    assert!(loss < 0.05 * baseline, "loss {loss:.3} vs constant predictor {baseline:.3}");
    assert!(out.loss_trace.last().unwrap() < &out.loss_trace[0]);
}

#[test]
fn training_is_reproducible() {
    let ds = PairDataset::new(toy().records).unwrap();
    let cfg = TrainConfig { epochs: 3, batch_size: 16, ..TrainConfig::default() };
    let a = train(initial_params(&ds, &cfg).unwrap(), &ds, &cfg).unwrap();
    let b = train(initial_params(&ds, &cfg).unwrap(), &ds, &cfg).unwrap();
    assert_eq!(a.params.weights(), b.params.weights());
    assert_eq!(a.loss_trace, b.loss_trace);
}

#[test]
fn position_regressor_fits_training_set() {
    let recs = toy().records;
    let cfg = TrainConfig { epochs: 250, batch_size: 8, final_lr_fraction: 0.1, ..TrainConfig::default() };
    let init = nfpl_initial_params(&recs, &cfg).unwrap();
    let mean_err = |p: &iccl_core::baselines::NfplParams| {
        recs.iter().map(|r| (nfpl_locate(p, &r.csi).unwrap() - r.position).norm_squared()).sum::<f64>() / recs.len() as f64
    };
    let before = mean_err(&init);
    let out = nfpl_train(init, &recs, &cfg).unwrap();
    let after = mean_err(&out.params);
    assert!(after < 0.05 * before, "mse {after:.3} (started at {before:.3})");
}
