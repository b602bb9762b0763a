use ndc_dpsgd::consensus::{AveragingMatrix, Connectivity};
use ndc_dpsgd::dpsgd::{
    dpsgd_step, evaluate_model, initialize, train, Architecture, ComputeTime, Dataset, GaussianClusters, Loss,
    ModelSpec, ModelVector, SyntheticSpec, TrainingConfig, TrainingData,
};
use ndc_dpsgd::optimizer::{optimize_rates, OptimizerConfig, RateAssignment};
use ndc_dpsgd::propagation::{build_channel_matrix, NodeLayout, RadioParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_data(seed: u64) -> TrainingData {
    let spec = SyntheticSpec {
        dim: 5,
        classes: 3,
        separation: 1.5,
        spread: 1.0,
    };
    let clusters = GaussianClusters::new(spec, seed).unwrap();
    TrainingData {
        train: clusters.sample(600, seed, 0),
        test: Some(clusters.sample(200, seed, 1)),
    }
}

fn assignment(layout: &NodeLayout, target: f64, eps: f64) -> RateAssignment {
    let channels = build_channel_matrix(layout, &RadioParams::reference(eps)).unwrap();
    optimize_rates(&channels, &OptimizerConfig::new(target, 6720.0)).unwrap()
}

fn config() -> TrainingConfig {
    TrainingConfig {
        learning_rate: 0.05,
        epochs: 3,
        iterations_per_epoch: Some(40),
        seed: 5,
        ..TrainingConfig::default()
    }
}

#[test]
fn uniform_averaging_with_shared_batches_is_plain_sgd() {
    let data = small_data(1).train;
    let arch = Architecture::for_dataset(&ModelSpec::Mlp(vec![4]), Loss::CrossEntropy, &data).unwrap();
    let n = 4;
    let mut nodes = initialize(&arch, 9, n);
    let mut single = nodes[0].clone();
    let w = AveragingMatrix::uniform(n);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let batch: Vec<usize> = (0..4).map(|_| rng.random_range(0..data.len())).collect();
        let grads: Vec<Vec<f64>> = nodes.iter().map(|m| arch.gradient(m, &data, &batch)).collect();
        nodes = dpsgd_step(&nodes, &w, &grads, 0.1).unwrap();
        let g = arch.gradient(&single, &data, &batch);
        single = ModelVector(single.0.iter().zip(&g).map(|(x, g)| x - 0.1 * g).collect());
    }
    for node in &nodes {
        for (a, b) in node.0.iter().zip(&single.0) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn random_labels_give_chance_accuracy() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let (dim, classes, samples) = (8, 10, 4000);
    let features: Vec<f64> = (0..samples * dim).map(|_| rng.random::<f64>() - 0.5).collect();
    let labels: Vec<f64> = (0..samples).map(|_| rng.random_range(0..classes) as f64).collect();
    let data = Dataset::new(features, labels, dim, Some(classes)).unwrap();
    let arch = Architecture::for_dataset(&ModelSpec::LogisticRegression, Loss::CrossEntropy, &data).unwrap();
    let model = initialize(&arch, 2, 1).remove(0);
    let all: Vec<usize> = (0..samples).collect();
    let acc = evaluate_model(&arch, &model, &data, &all).accuracy;
    assert!((acc - 0.1).abs() <= 0.03, "{acc}");
}

#[test]
fn identical_seeds_give_identical_traces() {
    let layout = NodeLayout::six_node_reference();
    let a = assignment(&layout, 0.5, 5.0);
    let data = small_data(2);
    let first = train(&layout, &a, &config(), &data).unwrap();
    let second = train(&layout, &a, &config(), &data).unwrap();
    assert_eq!(first, second);
    let other = train(&layout, &a, &TrainingConfig { seed: 6, ..config() }, &data).unwrap();
    assert_ne!(first.records, other.records);
}

#[test]
fn accuracy_curves_do_not_depend_on_epsilon() {
    let layout = NodeLayout::six_node_reference();
    let data = small_data(3);
    for target in [0.1, 0.3, 0.8] {
        let traces: Vec<_> = [3.0, 6.0]
            .iter()
            .map(|&eps| train(&layout, &assignment(&layout, target, eps), &config(), &data).unwrap())
            .collect();
        let acc = |t: &ndc_dpsgd::dpsgd::TrainingTrace| t.records.iter().map(|r| r.accuracy).collect::<Vec<_>>();
        assert_eq!(acc(&traces[0]), acc(&traces[1]), "target {target}");
        assert!(traces[0].t_com != traces[1].t_com);
    }
}

#[test]
fn time_columns_accumulate() {
    let layout = NodeLayout::six_node_reference();
    let a = assignment(&layout, 0.8, 5.0);
    let trace = train(&layout, &a, &config(), &small_data(4)).unwrap();
    assert_eq!(trace.records.len(), 6 * 4);
    for r in &trace.records {
        let iters = (r.epoch * 40) as f64;
        assert!((r.comm_s - iters * a.t_com).abs() <= 1e-9 * r.comm_s.max(1.0));
        assert!((r.compute_s - iters * 1e-3).abs() <= 1e-12);
        assert_eq!(r.total_s, r.compute_s + r.comm_s);
        assert!(r.test_accuracy.is_some());
    }
}

#[test]
fn measured_compute_time_is_positive() {
    let layout = NodeLayout::six_node_reference();
    let a = assignment(&layout, 0.8, 5.0);
    let cfg = TrainingConfig {
        compute: ComputeTime::Measured,
        epochs: 1,
        ..config()
    };
    let trace = train(&layout, &a, &cfg, &small_data(5)).unwrap();
    assert!(trace.records.last().unwrap().compute_s > 0.0);
}

#[test]
fn disconnected_nodes_train_independently() {
    let layout = NodeLayout::six_node_reference();
    let mut a = assignment(&layout, 0.8, 5.0);
    a.topology = Connectivity::identity(6);
    a.lambda = 1.0;
    let trace = train(&layout, &a, &config(), &small_data(6)).unwrap();
    let finals: Vec<f64> = (0..6).map(|i| trace.final_accuracy(i).unwrap()).collect();
    assert!(finals.iter().all(|&f| f > 0.5), "{finals:?}");
}
