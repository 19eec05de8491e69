mod common;

use sparse_mtl::datagen::{synth_population, window_split};
use sparse_mtl::experiment::{
    complement_of, grid_search, run_comparison, task_folds, train, transfer_evaluate, GridSpec,
    ModelKind, ModelSpec, SearchStrategy, SolverDefaults, TransferScaling,
};
use sparse_mtl::metrics::ConfusionCounts;
use sparse_mtl::model::Standardizer;
use sparse_mtl::solver::check_trace_invariants;

fn quick() -> SolverDefaults {
    SolverDefaults {
        max_iters: 300,
        ..SolverDefaults::default()
    }
}

#[test]
fn single_task_report_matches_hand_counted_f1() {
    let pop = synth_population(&common::shared_population(4, 1, 0.6)).unwrap();
    let (train_set, test_set) = pop.split(30).unwrap();
    let spec = ModelSpec {
        epsilon: 0.3,
        xi: 0.01,
        n_windows: 1,
    };
    let (report, models) = run_comparison(
        &train_set,
        &[(ModelKind::Independent, spec)],
        &test_set,
        &quick(),
    )
    .unwrap();
    let (f, col) = models[0].windows[0].column_for(0);
    let scaled = f.standardization[0].apply(&test_set[0]).unwrap();
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (row, &y) in scaled.features().rows().into_iter().zip(scaled.labels()) {
        let z: f64 = row
            .iter()
            .zip(f.weights.column(col))
            .map(|(a, b)| a * b)
            .sum();
        let pred = u8::from(1.0 / (1.0 + (-z).exp()) >= 0.5);
        match (y, pred) {
            (1, 1) => tp += 1,
            (0, 1) => fp += 1,
            (1, 0) => fn_ += 1,
            _ => {}
        }
    }
    let hand = 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64;
    assert_eq!(report.summary[0].f1, hand);
    let counts = ConfusionCounts { tp, fp, tn: 0, fn_ };
    assert_eq!(counts.f1(), hand);
}

#[test]
fn mtl_transfers_at_least_as_well_to_a_third_task() {
    // The third task shares the structural modes but has its own nuisance
    // modes, so only the shared features carry over.
    let spec = ModelSpec {
        epsilon: 0.2,
        xi: 0.01,
        n_windows: 1,
    };
    let mut wins = 0;
    for seed in 0..20 {
        let pop = synth_population(&common::shared_population(100 + seed, 3, 0.6)).unwrap();
        let (mut train_set, mut test_set) = pop.split(25).unwrap();
        let unseen = test_set.pop().unwrap();
        let reference = train_set.pop().unwrap();
        let score = |kind| {
            let model = train(&train_set, kind, &spec, &quick()).unwrap();
            (0..2)
                .map(|l| {
                    let (f, col) = model.windows[0].column_for(l);
                    transfer_evaluate(f, col, &unseen, TransferScaling::Reference(&reference))
                        .unwrap()
                })
                .sum::<f64>()
                / 2.0
        };
        wins += usize::from(score(ModelKind::Mtl) >= score(ModelKind::Independent));
    }
    assert!(
        wins >= 16,
        "MTL transfer at least as good on {wins}/20 seeds"
    );
}

#[test]
fn cross_validation_scales_with_training_folds_only() {
    let pop = synth_population(&common::shared_population(8, 2, 0.3)).unwrap();
    let folds = task_folds(&pop.tasks, 5, 17).unwrap();
    let spec = ModelSpec {
        epsilon: 0.3,
        xi: 0.01,
        n_windows: 2,
    };
    let plan = window_split(pop.tasks[0].n_features(), 2).unwrap();
    for (t, tf) in pop.tasks.iter().zip(&folds) {
        for held in tf {
            let idx = complement_of(t.n_samples(), held);
            let train_part = t
                .select_samples(&idx)
                .unwrap()
                .select_features(plan.ranges[1].clone())
                .unwrap();
            let model = train(
                std::slice::from_ref(&train_part),
                ModelKind::Independent,
                &ModelSpec {
                    n_windows: 1,
                    ..spec
                },
                &quick(),
            )
            .unwrap();
            let (f, _) = model.windows[0].column_for(0);
            assert_eq!(f.standardization[0], Standardizer::fit(&train_part));
            check_trace_invariants(f, spec.xi).unwrap();
        }
    }
}

#[test]
fn exhaustive_and_staged_searches_agree_on_a_single_point() {
    let pop = synth_population(&common::shared_population(2, 2, 0.3)).unwrap();
    let mut grid = GridSpec {
        epsilons: vec![0.3],
        xis: vec![0.01],
        window_counts: vec![2],
        folds: 3,
        seed: 1,
        strategy: SearchStrategy::Exhaustive,
        initial_windows: 2,
        refine_epsilons: vec![],
        solver: SolverDefaults {
            max_iters: 100,
            ..SolverDefaults::default()
        },
    };
    let ex = grid_search(&pop.tasks, &grid, ModelKind::Mtl).unwrap();
    grid.strategy = SearchStrategy::Staged;
    let st = grid_search(&pop.tasks, &grid, ModelKind::Mtl).unwrap();
    assert_eq!(ex.best.spec(), st.best.spec());
    assert_eq!(ex.best.mean_f1, st.best.mean_f1);
    assert_eq!(ex.best.mean_gini, st.best.mean_gini);
    assert!((0.0..=1.0).contains(&ex.best.mean_f1));
}
