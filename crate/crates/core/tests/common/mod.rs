//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use iccl_core::baselines::{nfpl_gradient, NfplParams};
use iccl_core::propagation::CsiVector;
use iccl_core::regressor::{Architecture, Normalization, PairDataset, Record, RegressorParams};
use iccl_core::scene::Point2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_records(m: usize, n: usize, seed: u64) -> Vec<Record> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..m)
        .map(|_| Record {
            csi: CsiVector::new((0..n).map(|_| 10f64.powf(rng.random_range(-12.0..-6.0))).collect()).unwrap(),
            position: Point2::new(rng.random_range(0.0..10.0), rng.random_range(0.0..8.0)),
        })
        .collect()
}

pub fn unit_normalization(records: &[Record]) -> Normalization {
    Normalization::fit(records.iter().map(|r| &r.csi), -150.0).unwrap()
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Moves weights off zero so no ReLU sits exactly on its kink (zero-initialized
/// biases feeding dead units would make one-sided differences disagree).
fn jitter(w: &mut [f64], seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    w.iter_mut().for_each(|v| *v += rng.random_range(-0.1..0.1));
}

/// Largest relative error between the analytic gradient of the pair loss
/// and central differences with step `h`.
pub fn pair_gradient_check(arch: Architecture, m: usize, seed: u64, h: f64) -> f64 {
    let recs = random_records(m, arch.input_len, seed);
    let norm = unit_normalization(&recs);
    let mut params = RegressorParams::random(arch, norm, seed + 1).unwrap();
    jitter(params.weights_mut(), seed + 2);
    let ds = PairDataset::new(recs).unwrap();
    let pairs: Vec<(usize, usize)> = ds.pairs().collect();
    let (_, grad) = params.gradient(&ds, &pairs).unwrap();
    let mut worst: f64 = 0.0;
    for k in 0..params.num_params() {
        let mut p = params.clone();
        p.weights_mut()[k] += h;
        let up = p.loss(&ds).unwrap();
        p.weights_mut()[k] -= 2.0 * h;
        let down = p.loss(&ds).unwrap();
        let fd = (up - down) / (2.0 * h);
        worst = worst.max(rel_err(grad[k], fd, 1e-6));
    }
    worst
}

/// As [`pair_gradient_check`] for the two-output position regressor.
pub fn position_gradient_check(arch: Architecture, m: usize, seed: u64, h: f64) -> f64 {
    let recs = random_records(m, arch.input_len, seed);
    let norm = unit_normalization(&recs);
    let net = iccl_core::regressor::Network::new(arch.clone()).unwrap();
    let mut w = net.init_params(&mut ChaCha8Rng::seed_from_u64(seed + 1));
    jitter(&mut w, seed + 2);
    let model = iccl_core::regressor::NetworkModel::new(arch, norm, w).unwrap();
    let params = NfplParams::from_model(model).unwrap();
    let (_, grad) = nfpl_gradient(&params, &recs).unwrap();
    let mut worst: f64 = 0.0;
    for k in 0..grad.len() {
        let mut p = params.clone().into_model();
        p.weights_mut()[k] += h;
        let up = nfpl_gradient(&NfplParams::from_model(p.clone()).unwrap(), &recs).unwrap().0;
        p.weights_mut()[k] -= 2.0 * h;
        let down = nfpl_gradient(&NfplParams::from_model(p).unwrap(), &recs).unwrap().0;
        worst = worst.max(rel_err(grad[k], (up - down) / (2.0 * h), 1e-6));
    }
    worst
}
