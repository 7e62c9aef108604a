//! Statistical and structural checks of splitting and standardization.

mod common;

use tebfar::dataio::{split, standardize, Dataset};
use tebfar::rng::stream_from;

fn toy_dataset(n: usize, seed: u64) -> Dataset {
    let mut rng = stream_from(seed);
    let joined = common::standard_normal_matrix(n, 3, &mut rng);
    Dataset::from_joined(&joined, vec!["a".into(), "b".into()], "y".into(), "toy".into())
}

#[test]
fn split_is_a_partition() {
    let data = toy_dataset(37, 1);
    let (train, test) = split(&data, 25, 9).unwrap();
    assert_eq!(train.n_rows() + test.n_rows(), 37);
    // Disjointness via responses: all values are distinct almost surely.
    let mut seen: Vec<f64> = train.response.iter().copied().collect();
    seen.extend(test.response.iter());
    let mut sorted = seen.clone();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    assert_eq!(sorted.len(), 37);
}

#[test]
fn split_membership_is_uniform_over_seeds() {
    let n = 30;
    let n_train = 18;
    let data = toy_dataset(n, 2);
    let seeds = 200;
    let mut counts = vec![0usize; n];
    for seed in 0..seeds {
        let (train, _) = split(&data, n_train, seed).unwrap();
        // Identify training rows by matching responses.
        for v in train.response.iter() {
            let idx = data.response.iter().position(|w| w == v).unwrap();
            counts[idx] += 1;
        }
    }
    let p = n_train as f64 / n as f64;
    let se = (p * (1.0 - p) / seeds as f64).sqrt();
    for (i, &c) in counts.iter().enumerate() {
        let freq = c as f64 / seeds as f64;
        assert!(
            (freq - p).abs() < 4.0 * se,
            "row {i} train frequency {freq} vs {p} (se {se})"
        );
    }
}

#[test]
fn train_parameters_standardize_test_data() {
    let data = toy_dataset(50, 3);
    let (train, test) = split(&data, 40, 4).unwrap();
    let train_std = standardize(&train).unwrap();
    let params = train_std.standardization.unwrap();
    let test_std = tebfar::dataio::apply_standardization(&params, &test).unwrap();
    // Test columns are near-standardized but generally not exactly so.
    let mean: f64 = test_std.response.sum() / test_std.n_rows() as f64;
    assert!(mean.abs() < 1.0);
    // Round trip back to the original scale.
    let back = tebfar::dataio::unstandardize_predictions(&params, test_std.response.as_slice());
    for (orig, b) in test.response.iter().zip(back) {
        assert!((orig - b).abs() < 1e-12);
    }
}
