use lltk_core::numkit::SeededRng;
use lltk_core::sampler::{
    filter_normalize, grid_sample, jump_and_retrain, load_sample_set, naive_sample,
    random_direction, save_sample_set, BudgetAccounting, Direction, GridConfig, JumpRetrainConfig,
    NaiveConfig, PointProvenance,
};
use lltk_core::trainer::{
    evaluate, init_params, make_dataset, train, Dataset, DatasetSpec, OptimizerConfig,
    OptimizerKind, ParamVector, TrainConfig,
};
use proptest::prelude::*;

/// Walks the layer sizes directly instead of going through the layout's
/// filter list.
fn slice_oracle(sizes: &[usize], d: &[f64], theta: &[f64]) -> Vec<f64> {
    let mut out = d.to_vec();
    let mut offset = 0;
    let mut rescale = |range: std::ops::Range<usize>| {
        let tn = theta[range.clone()].iter().map(|v| v * v).sum::<f64>().sqrt();
        let dn = d[range.clone()].iter().map(|v| v * v).sum::<f64>().sqrt();
        for i in range {
            out[i] = if tn == 0.0 || dn == 0.0 { 0.0 } else { d[i] * tn / dn };
        }
    };
    for w in sizes.windows(2) {
        for _ in 0..w[1] {
            rescale(offset..offset + w[0]);
            offset += w[0];
        }
        rescale(offset..offset + w[1]);
        offset += w[1];
    }
    assert_eq!(offset, theta.len());
    out
}

fn nonzero_biases(theta: &mut ParamVector, seed: u64) {
    let mut rng = SeededRng::new(seed, 99);
    let layout = theta.layout().clone();
    for l in layout.layers() {
        for v in &mut theta.as_mut_slice()[l.bias.clone()] {
            *v = rng.normal();
        }
    }
}

proptest! {
    #[test]
    fn filter_normalization_matches_slice_oracle(seed in 0u64..1000, zero_bias in any::<bool>()) {
        let mut theta = init_params(&[2, 8, 2], seed).unwrap();
        if !zero_bias {
            nonzero_biases(&mut theta, seed);
        }
        let d = random_direction(theta.layout(), seed, 3);
        let n = filter_normalize(&d, &theta).unwrap();
        let oracle = slice_oracle(&[2, 8, 2], &d.values, theta.as_slice());
        for (a, b) in n.values.iter().zip(&oracle) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
        for f in theta.layout().filters() {
            let tn = lltk_core::numkit::norm(&theta.as_slice()[f.clone()]);
            let dn = lltk_core::numkit::norm(&n.values[f]);
            prop_assert!((tn - dn).abs() <= 1e-12 * tn.max(1.0));
        }
    }
}

#[test]
fn wrong_shape_direction_is_rejected() {
    let theta = init_params(&[2, 8, 2], 0).unwrap();
    let d = Direction { values: vec![1.0; 3], seed: 0, normalized: false };
    assert!(filter_normalize(&d, &theta).is_err());
}

fn converged_optimum() -> (Dataset, TrainConfig, ParamVector) {
    let data = make_dataset(&DatasetSpec::two_moons(200, 200, 0.15, 1)).unwrap();
    let start = init_params(&[2, 16, 16, 2], 2).unwrap();
    let cfg = TrainConfig::new(OptimizerConfig::new(OptimizerKind::SgdMomentum, 0.1), 400, 20, 7);
    let t = train(&cfg, &data, &start).unwrap();
    assert!(t.last().train_acc >= 0.99);
    (data, cfg, t.last().params.clone())
}

#[test]
fn jump_and_retrain_properties() {
    let (data, cfg, optimum) = converged_optimum();
    let opt_loss = evaluate(&optimum, &data.train.inputs, &data.train.labels, 0.0).unwrap().loss;
    let jr = JumpRetrainConfig::default();
    let (set, runs) = jump_and_retrain(&optimum, &data, &cfg, &jr).unwrap();
    assert_eq!(set.budget(), 640);
    assert_eq!(set.points.len(), 660);
    assert_eq!(runs.len(), 20);
    assert_eq!(set.runs().len(), 20);
    let included = lltk_core::sampler::SampleSet { accounting: BudgetAccounting::IncludeJumpInit, ..set.clone() };
    assert_eq!(included.budget(), 660);

    for r in &runs {
        assert!(r.first().train_loss >= opt_loss);
        assert!(r.last().train_loss <= r.first().train_loss);
    }
    // the jump is linear in the step size
    for seed_runs in runs.chunks(4) {
        let dists: Vec<f64> = seed_runs.iter().map(|r| r.first().params.distance(&optimum)).collect();
        assert!(dists.windows(2).all(|w| w[0] < w[1]), "{dists:?}");
    }
    let descended = runs.iter().filter(|r| r.last().train_loss <= 0.1 * r.first().train_loss).count();
    assert!(descended >= 19, "{descended}/20");

    let (again, _) = jump_and_retrain(&optimum, &data, &cfg, &jr).unwrap();
    assert_eq!(again, set);
    let threaded = JumpRetrainConfig { threads: 3, ..jr.clone() };
    assert_eq!(jump_and_retrain(&optimum, &data, &cfg, &threaded).unwrap().0, set);

    let zero = JumpRetrainConfig { step_sizes: vec![0.0], seeds: vec![0], epochs: 0, ..jr };
    let (z, _) = jump_and_retrain(&optimum, &data, &cfg, &zero).unwrap();
    assert_eq!(z.points[0].params, optimum);
}

#[test]
fn grid_and_naive_budgets_and_losses() {
    let (data, _, optimum) = converged_optimum();
    let grid = grid_sample(&optimum, &data, 0.0, &GridConfig::default()).unwrap();
    assert_eq!(grid.budget(), 640);
    assert!(grid.points.iter().all(|p| p.train_loss.is_finite() && p.train_loss >= 0.0));
    assert!(grid.points.iter().all(|p| p.params != optimum));
    let small = GridConfig { per_axis: 3, budget: None, ..GridConfig::default() };
    let g3 = grid_sample(&optimum, &data, 0.0, &small).unwrap();
    assert_eq!(g3.points.len(), 26);
    for p in &g3.points {
        let PointProvenance::Grid { coords, .. } = p.provenance else { panic!() };
        assert!(coords.iter().all(|c| [-1.0, 0.0, 1.0].contains(c)));
    }
    let one = GridConfig { per_axis: 1, budget: None, ..GridConfig::default() };
    assert!(grid_sample(&optimum, &data, 0.0, &one).unwrap().points.is_empty());

    let naive = naive_sample(&optimum, &data, 1e-4, &NaiveConfig::default()).unwrap();
    assert_eq!(naive.budget(), 640);
    for p in naive.points.iter().step_by(37) {
        let e = lltk_core::trainer::loss_and_grad(&p.params, &data.train.inputs, &data.train.labels, 1e-4).unwrap();
        assert!((e.loss - p.train_loss).abs() <= 1e-12);
        let PointProvenance::Naive { direction, c } = p.provenance else { panic!() };
        let d = filter_normalize(&random_direction(optimum.layout(), 0, direction as u64), &optimum).unwrap();
        assert_eq!(optimum.offset(&d.values, c), p.params);
    }
    let with_zero = NaiveConfig { steps: vec![0.0, 0.5], ..NaiveConfig::default() };
    assert!(naive_sample(&optimum, &data, 0.0, &with_zero).is_err());
}

#[test]
fn sample_sets_round_trip_through_files() {
    let (data, cfg, optimum) = converged_optimum();
    let dir = tempfile::tempdir().unwrap();
    let jr = JumpRetrainConfig { seeds: vec![0, 1], step_sizes: vec![0.5, 1.0], epochs: 3, ..Default::default() };
    let (set, _) = jump_and_retrain(&optimum, &data, &cfg, &jr).unwrap();
    let files = save_sample_set(&set, &dir.path().join("jr"), "opt.traj", &jr.describe()).unwrap();
    assert_eq!(files.len(), 5);
    let (back, index, read) = load_sample_set(&dir.path().join("jr"), &optimum).unwrap();
    assert_eq!(back, set);
    assert_eq!(read.len(), 5);
    assert_eq!(index.get("budget"), Some("12"));

    let gcfg = GridConfig { per_axis: 4, budget: Some(40), ..GridConfig::default() };
    let grid = grid_sample(&optimum, &data, 0.0, &gcfg).unwrap();
    save_sample_set(&grid, &dir.path().join("grid"), "opt.traj", &gcfg.describe()).unwrap();
    assert_eq!(load_sample_set(&dir.path().join("grid"), &optimum).unwrap().0, grid);

    let ncfg = NaiveConfig { n_dirs: 3, steps: vec![0.25, 1.0], seed: 4 };
    let naive = naive_sample(&optimum, &data, 0.0, &ncfg).unwrap();
    save_sample_set(&naive, &dir.path().join("naive"), "opt.traj", &ncfg.describe()).unwrap();
    assert_eq!(load_sample_set(&dir.path().join("naive"), &optimum).unwrap().0, naive);
}
