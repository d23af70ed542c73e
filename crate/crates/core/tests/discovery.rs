use modforge::iterd::init_partition;
use modforge::rng::{seeded, seeded_stream};
use modforge::synth::generate;
use modforge::{
    discover, discover_from, evaluate, optimize, zscore_normalize, ActivationMatrix, Axis, Error, InitMode,
    IterDConfig, Partition, PlantedSpec, Status,
};
use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;

fn random_normalized(rows: usize, cols: usize, seed: u64) -> ActivationMatrix {
    let mut rng = seeded(seed);
    let values = Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0));
    zscore_normalize(&ActivationMatrix::from_values(values).unwrap()).unwrap().0
}

fn planted(n: usize, m: usize, k: usize, sigma: f64, seed: u64) -> ActivationMatrix {
    let (raw, _) = generate(&PlantedSpec::new(n, m, k, 1.0, sigma, seed)).unwrap();
    zscore_normalize(&raw).unwrap().0
}

fn surjection(rng: &mut impl Rng, len: usize, k: usize) -> Vec<usize> {
    let mut v: Vec<usize> = (0..len).map(|i| if i < k { i } else { rng.gen_range(0..k) }).collect();
    for i in (1..len).rev() {
        v.swap(i, rng.gen_range(0..=i));
    }
    v
}

/// `L` after moving one element, by full recomputation.
fn l_after_move(m: &ActivationMatrix, p: &Partition, axis: Axis, element: usize, target: usize) -> Option<f64> {
    let mut neurons = p.neuron_assign().to_vec();
    let mut samples = p.sample_assign().to_vec();
    match axis {
        Axis::Neuron => neurons[element] = target,
        Axis::Sample => samples[element] = target,
    }
    let q = Partition::new(p.k(), neurons, samples).ok()?;
    Some(evaluate(m, &q).unwrap().l)
}

#[test]
fn converged_partitions_admit_no_improving_single_move() {
    for seed in 0..4 {
        let m = random_normalized(14, 11, seed);
        let mut cfg = IterDConfig::new(3);
        cfg.init = InitMode::RandomBalanced;
        let init = init_partition(&m, &cfg, &mut seeded(seed)).unwrap();
        let (p, value, trace) = optimize(&m, init, 100).unwrap();
        assert_eq!(trace.status, Status::Converged);
        for axis in [Axis::Neuron, Axis::Sample] {
            for e in 0..p.assignment(axis).len() {
                for t in 0..3 {
                    if let Some(l) = l_after_move(&m, &p, axis, e, t) {
                        assert!(l <= value.l * (1.0 + 1e-12) + 1e-12, "{axis} {e} -> {t}: {l} > {}", value.l);
                    }
                }
            }
        }
    }
}

#[test]
fn discover_is_deterministic_and_matches_its_restarts() {
    let m = planted(150, 80, 4, 1.0, 5);
    let mut cfg = IterDConfig::new(4);
    cfg.init = InitMode::RandomBalanced;
    cfg.seed = 9;
    let a = discover(&m, &cfg).unwrap();
    let b = discover(&m, &cfg).unwrap();
    assert_eq!(a, b);

    // The winner is the best of the individual restarts, earliest on ties.
    let finals: Vec<f64> = (0..cfg.restarts)
        .map(|r| {
            let init = init_partition(&m, &cfg, &mut seeded_stream(cfg.seed, r as u64)).unwrap();
            optimize(&m, init, cfg.max_iters).unwrap().1.l
        })
        .collect();
    let best = finals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(a.objective.l, best);
    assert_eq!(a.restart, finals.iter().position(|&l| l == best).unwrap());
}

#[test]
fn discover_rejects_raw_input_and_oversized_k() {
    let mut rng = seeded(1);
    let raw = ActivationMatrix::from_values(Array2::from_shape_fn((5, 4), |_| rng.gen::<f64>())).unwrap();
    assert!(matches!(discover(&raw, &IterDConfig::new(2)), Err(Error::NotNormalized)));
    let m = zscore_normalize(&raw).unwrap().0;
    let err = discover(&m, &IterDConfig::new(5)).unwrap_err();
    assert!(matches!(err, Error::TooManyModules { k: 5, limit: 4 }));
    assert!(err.is_constraint_violation());
    assert!(discover_from(&m, Vec::new(), 10).is_err());
}

#[test]
fn single_module_is_a_fixed_point() {
    let m = random_normalized(6, 5, 3);
    let p = Partition::new(1, vec![0; 6], vec![0; 5]).unwrap();
    let (q, _, trace) = optimize(&m, p.clone(), 10).unwrap();
    assert_eq!(q, p);
    assert_eq!(trace.records.len(), 1);
    assert_eq!(trace.records[0].reassignments, 0);
}

#[test]
fn max_iters_caps_the_run() {
    let m = planted(200, 100, 5, 2.0, 3);
    let mut cfg = IterDConfig::new(5);
    cfg.init = InitMode::RandomBalanced;
    let init = init_partition(&m, &cfg, &mut seeded(0)).unwrap();
    let (_, _, trace) = optimize(&m, init, 1).unwrap();
    assert_eq!(trace.records.len(), 1);
    if trace.records[0].reassignments > 0 {
        assert_eq!(trace.status, Status::MaxItersReached);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn objective_is_symmetric_under_transpose(
        rows in 2usize..9,
        cols in 2usize..9,
        k in 1usize..3,
        seed in any::<u64>(),
    ) {
        let mut rng = seeded(seed);
        let values = Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-2.0..2.0));
        let p = Partition::new(k, surjection(&mut rng, rows, k), surjection(&mut rng, cols, k)).unwrap();
        let a = evaluate(&ActivationMatrix::from_values(values.clone()).unwrap(), &p).unwrap();
        let b = evaluate(&ActivationMatrix::from_values(values.t().to_owned()).unwrap(), &p.transposed()).unwrap();
        prop_assert!((a.l - b.l).abs() <= 1e-12 * a.l.abs().max(1.0));
        prop_assert!((a.xi - b.xi).abs() <= 1e-12 * a.xi.abs().max(1.0));
        prop_assert_eq!(a.balance, b.balance);
    }

    #[test]
    fn objective_ignores_module_labels(
        rows in 3usize..9,
        cols in 3usize..9,
        seed in any::<u64>(),
    ) {
        let k = 3;
        let mut rng = seeded(seed);
        let values = Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-2.0..2.0));
        let m = ActivationMatrix::from_values(values).unwrap();
        let neurons = surjection(&mut rng, rows, k);
        let samples = surjection(&mut rng, cols, k);
        let relabel = [2, 0, 1];
        let p = Partition::new(k, neurons.clone(), samples.clone()).unwrap();
        let q = Partition::new(
            k,
            neurons.iter().map(|&x| relabel[x]).collect(),
            samples.iter().map(|&x| relabel[x]).collect(),
        )
        .unwrap();
        let (a, b) = (evaluate(&m, &p).unwrap(), evaluate(&m, &q).unwrap());
        prop_assert!((a.l - b.l).abs() <= 1e-12 * a.l.abs().max(1.0));
    }

    #[test]
    fn traces_never_decrease(seed in any::<u64>(), k in 2usize..5) {
        let m = random_normalized(20, 15, seed);
        let mut cfg = IterDConfig::new(k);
        cfg.init = InitMode::RandomBalanced;
        let init = init_partition(&m, &cfg, &mut seeded(seed)).unwrap();
        let (_, value, trace) = optimize(&m, init, 100).unwrap();
        let seq = trace.l_sequence();
        prop_assert!(seq.windows(2).all(|w| w[1] >= w[0]));
        prop_assert_eq!(*seq.last().unwrap(), value.l);
    }
}
