mod common;

use common::*;
use iccl_core::regressor::{Architecture, ConvSpec, PairDataset, Record, RegressorParams};
use iccl_core::scene::Point2;

#[test]
fn tiny_stack_matches_finite_differences() {
    let err = pair_gradient_check(Architecture::tiny_pairwise(), 6, 1, 1e-5);
    assert!(err < 1e-4, "max relative error {err:e}");
}

#[test]
fn three_conv_stack_matches_finite_differences() {
    let arch = Architecture {
        input_len: 20,
        input_width: 2,
        convs: vec![
            ConvSpec { filters: 3, kernel_height: 3, pool: 2 },
            ConvSpec { filters: 3, kernel_height: 3, pool: 1 },
            ConvSpec { filters: 2, kernel_height: 3, pool: 1 },
        ],
        hidden: vec![5],
        outputs: 1,
    };
    let err = pair_gradient_check(arch, 5, 2, 1e-5);
    assert!(err < 1e-4, "max relative error {err:e}");
}

#[test]
fn position_head_matches_finite_differences() {
    let arch = Architecture {
        input_len: 8,
        input_width: 1,
        convs: vec![ConvSpec { filters: 2, kernel_height: 3, pool: 2 }, ConvSpec { filters: 2, kernel_height: 3, pool: 1 }],
        hidden: vec![4],
        outputs: 2,
    };
    let err = position_gradient_check(arch, 6, 3, 1e-5);
    assert!(err < 1e-4, "max relative error {err:e}");
}

#[test]
fn zero_loss_has_zero_gradient() {
    // Zero weights predict 0, so two records at the same spot give zero error.
    let recs = random_records(2, 8, 4);
    let norm = unit_normalization(&recs);
    let recs: Vec<Record> = recs.into_iter().map(|r| Record { position: Point2::new(1.0, 1.0), ..r }).collect();
    let ds = PairDataset::new(recs).unwrap();
    let p = RegressorParams::zeros(Architecture::tiny_pairwise(), norm).unwrap();
    let (loss, grad) = p.gradient(&ds, &[(0, 1)]).unwrap();
    assert_eq!(loss, 0.0);
    assert!(grad.iter().all(|g| *g == 0.0));
}

#[test]
fn swapped_pair_gives_identical_gradient() {
    let recs = random_records(2, 8, 5);
    let norm = unit_normalization(&recs);
    let ds = PairDataset::new(recs).unwrap();
    let p = RegressorParams::random(Architecture::tiny_pairwise(), norm, 6).unwrap();
    let (la, ga) = p.gradient(&ds, &[(0, 1)]).unwrap();
    let (lb, gb) = p.gradient(&ds, &[(1, 0)]).unwrap();
    assert_eq!(la.to_bits(), lb.to_bits());
    assert!(ga.iter().zip(&gb).all(|(a, b)| a.to_bits() == b.to_bits()));
}
