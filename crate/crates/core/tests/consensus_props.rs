mod common;

use common::random_regular;
use nalgebra::DMatrix;
use ndc_dpsgd::consensus::{averaging_matrix, spectral_lambda, Connectivity};
use ndc_dpsgd::dpsgd::{dpsgd_step, ModelVector};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn deviation(models: &[ModelVector]) -> f64 {
    let n = models.len() as f64;
    let dim = models[0].dim();
    let mean: Vec<f64> = (0..dim)
        .map(|k| models.iter().map(|m| m.0[k]).sum::<f64>() / n)
        .collect();
    models
        .iter()
        .flat_map(|m| m.0.iter().zip(&mean).map(|(x, c)| (x - c).powi(2)))
        .sum::<f64>()
        .sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lambda_ignores_node_labels(n in 2usize..8, bits in proptest::collection::vec(any::<bool>(), 64), seed in any::<u64>()) {
        let conn = Connectivity::from_fn(n, |i, j| bits[i * 8 + j]);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let a = spectral_lambda(&averaging_matrix(&conn)).unwrap();
        let b = spectral_lambda(&averaging_matrix(&conn.permuted(&perm))).unwrap();
        prop_assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
    }

    #[test]
    fn lambda_lies_in_the_unit_interval(n in 1usize..9, bits in proptest::collection::vec(any::<bool>(), 81)) {
        let conn = Connectivity::from_fn(n, |i, j| bits[i * 9 + j]);
        let lambda = spectral_lambda(&averaging_matrix(&conn)).unwrap();
        prop_assert!((0.0..=1.0).contains(&lambda));
    }

    #[test]
    fn averaging_preserves_the_mean_for_regular_graphs(n in 2usize..9, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let conn = random_regular(n, &mut rng);
        let w = averaging_matrix(&conn);
        prop_assert!(w.is_symmetric());
        let models: Vec<ModelVector> = (0..n).map(|i| ModelVector(vec![i as f64, (i * i) as f64])).collect();
        let next = dpsgd_step(&models, &w, &vec![vec![0.0; 2]; n], 0.1).unwrap();
        for k in 0..2 {
            let before: f64 = models.iter().map(|m| m.0[k]).sum();
            let after: f64 = next.iter().map(|m| m.0[k]).sum();
            prop_assert!((before - after).abs() <= 1e-9 * before.abs().max(1.0));
        }
    }
}

#[test]
fn complete_graph_reaches_consensus_in_one_step() {
    let n = 5;
    let w = averaging_matrix(&Connectivity::complete(n));
    let models: Vec<ModelVector> = (0..n).map(|i| ModelVector(vec![i as f64; 3])).collect();
    let next = dpsgd_step(&models, &w, &vec![vec![0.0; 3]; n], 0.0).unwrap();
    assert!(deviation(&next) < 1e-12);
}

#[test]
fn deviation_shrinks_by_lambda_per_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..30 {
        let n = 3 + rand::Rng::random_range(&mut rng, 0..6);
        let w = averaging_matrix(&random_regular(n, &mut rng));
        let lambda = spectral_lambda(&w).unwrap();
        let data: Vec<f64> = (0..n * 4).map(|_| rand::Rng::random::<f64>(&mut rng)).collect();
        let mut models: Vec<ModelVector> = data.chunks(4).map(|c| ModelVector(c.to_vec())).collect();
        for _ in 0..50 {
            let before = deviation(&models);
            let scale: f64 = models.iter().flat_map(|m| &m.0).map(|x| x * x).sum::<f64>().sqrt();
            models = dpsgd_step(&models, &w, &vec![vec![0.0; 4]; n], 0.0).unwrap();
            assert!(deviation(&models) <= lambda * before * (1.0 + 1e-6) + 16.0 * f64::EPSILON * scale);
        }
    }
}

#[test]
fn defective_matrix_is_handled() {
    // Lower-triangular Jordan-like chain: eigenvalues 1, 1/2, 1/2.
    let w = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.5, 0.5, 0.0, 0.0, 0.5, 0.5]);
    let lambda = common::lambda_of(&w);
    assert!((lambda - 0.5).abs() < 1e-7);
}
