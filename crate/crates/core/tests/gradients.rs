mod common;

use common::{numeric_gradient, relative_error};
use ndc_dpsgd::dpsgd::{Architecture, Dataset, Loss, ModelSpec, ModelVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const PAIRS: usize = 100;
const TOLERANCE: f64 = 1e-5;

fn worst_error(spec: &ModelSpec, loss: Loss, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (dim, classes) = (6, 4);
    let outputs = if loss == Loss::SquaredError && seed % 2 == 1 {
        1
    } else {
        classes
    };
    let arch = Architecture::new(spec, loss, dim, outputs).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..PAIRS {
        let x: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let target = if outputs == 1 {
            StandardNormal.sample(&mut rng)
        } else {
            rng.random_range(0..classes) as f64
        };
        let data = Dataset::new(x, vec![target], dim, (outputs > 1).then_some(classes)).unwrap();
        let params = ModelVector(
            (0..arch.parameter_count())
                .map(|_| 0.5 * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                .collect(),
        );
        let analytic = arch.gradient(&params, &data, &[0]);
        let numeric = numeric_gradient(&arch, &params, &data, 0, 1e-5);
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    worst
}

#[test]
fn logistic_regression_cross_entropy() {
    let e = worst_error(&ModelSpec::LogisticRegression, Loss::CrossEntropy, 0);
    assert!(e <= TOLERANCE, "{e}");
}

#[test]
fn logistic_regression_squared_error() {
    for seed in [2, 3] {
        let e = worst_error(&ModelSpec::LogisticRegression, Loss::SquaredError, seed);
        assert!(e <= TOLERANCE, "{e}");
    }
}

#[test]
fn mlp_cross_entropy() {
    let e = worst_error(&ModelSpec::Mlp(vec![8, 5]), Loss::CrossEntropy, 4);
    assert!(e <= TOLERANCE, "{e}");
}

#[test]
fn mlp_squared_error() {
    for seed in [6, 7] {
        let e = worst_error(&ModelSpec::Mlp(vec![7]), Loss::SquaredError, seed);
        assert!(e <= TOLERANCE, "{e}");
    }
}

#[test]
fn batch_gradient_is_the_mean() {
    let arch = Architecture::new(&ModelSpec::Mlp(vec![3]), Loss::CrossEntropy, 2, 3).unwrap();
    let data = Dataset::new(vec![0.1, -0.4, 1.0, 0.3, -0.7, 0.2], vec![0.0, 2.0, 1.0], 2, Some(3)).unwrap();
    let params = ModelVector((0..arch.parameter_count()).map(|k| (k as f64 * 0.37).sin()).collect());
    let full = arch.gradient(&params, &data, &[0, 1, 2]);
    let parts: Vec<Vec<f64>> = (0..3).map(|i| arch.gradient(&params, &data, &[i])).collect();
    for k in 0..full.len() {
        let mean = (parts[0][k] + parts[1][k] + parts[2][k]) / 3.0;
        assert!((full[k] - mean).abs() < 1e-12);
    }
}
