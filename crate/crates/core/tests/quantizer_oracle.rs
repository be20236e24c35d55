//! Criterion-scale equivalence between the quantizer and an exhaustive
//! distance-scan oracle: 1,000 random (z_e, codebook) instances.

mod common;

use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vqp_core::vq::{quantize, Codebook};

fn random_instance(rng: &mut ChaCha8Rng) -> (Array2<f64>, Codebook) {
    let t = rng.random_range(1..=64);
    let k = rng.random_range(2..=16);
    let d = rng.random_range(1..=8);
    let z_e = Array2::from_shape_fn((t, d), |_| rng.random_range(-2.0..2.0));
    let entries = Array2::from_shape_fn((k, d), |_| rng.random_range(-2.0..2.0));
    (z_e, Codebook::new(entries).unwrap())
}

#[test]
fn matches_exhaustive_scan_on_1000_random_instances() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for case in 0..1000 {
        let (z_e, book) = random_instance(&mut rng);
        let got = quantize(&z_e, &book).unwrap();
        let want = common::quantize_oracle(&z_e, &book);
        assert_eq!(got.indices, want, "case {case}");
    }
    let elapsed = start.elapsed();
    assert!(
        elapsed.as_secs_f64() < 10.0,
        "oracle sweep took {elapsed:?}, budget is 10 s"
    );
}

#[test]
fn ties_go_to_the_lowest_index() {
    // duplicate codes: every row must pick the first of the duplicates
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let d = rng.random_range(1..=4);
        let proto = Array2::from_shape_fn((1, d), |_| rng.random_range(-1.0..1.0));
        let mut entries = Array2::zeros((6, d));
        for i in 0..6 {
            entries.row_mut(i).assign(&proto.row(0));
        }
        let book = Codebook::new(entries).unwrap();
        let z_e = Array2::from_shape_fn((5, d), |_| rng.random_range(-1.0..1.0));
        let got = quantize(&z_e, &book).unwrap();
        assert!(got.indices.iter().all(|&i| i == 0));
    }
}

#[test]
fn equidistant_pair_resolves_to_lower_index() {
    // z_e exactly between codes 1 and 2 (and code 0 further away)
    let entries =
        Array2::from_shape_vec((3, 1), vec![10.0, -1.0, 1.0]).unwrap();
    let book = Codebook::new(entries).unwrap();
    let z_e = Array2::from_shape_vec((1, 1), vec![0.0]).unwrap();
    let got = quantize(&z_e, &book).unwrap();
    assert_eq!(got.indices, vec![1]);
}
