//! Exactness guarantees of the runners: degenerate gates reproduce the
//! baseline trajectories bit-for-bit, repeated runs are identical, and the
//! parallel worker path matches the sequential one.

use gal_core::datastream::WorldConfig;
use gal_core::gate::{acceptance_rate, GateConfig, GateDecision};
use gal_core::model::ClassifierConfig;
use gal_core::trainer::{
    run_baseline, run_bsgal, run_offline_filter, run_random_dropout, RunConfig, TrainReport,
    TrainSetup,
};

fn small_setup() -> TrainSetup {
    TrainSetup {
        world: WorldConfig {
            num_classes: 6,
            input_dim: 8,
            real_base_count: 60,
            eval_size: 120,
            seed: 11,
            ..WorldConfig::default()
        },
        model: ClassifierConfig { input_dim: 8, hidden_dim: 12, num_classes: 6, seed: 4 },
        run: RunConfig {
            iterations: 40,
            b_accept: 6,
            b_test: 10,
            num_workers: 3,
            k_max: 4,
            eval_every: 10,
            ..RunConfig::default()
        },
    }
}

/// Bitwise comparison of everything that describes the training trajectory.
fn same_trajectory(a: &TrainReport, b: &TrainReport) {
    assert_eq!(a.accuracy_trajectory, b.accuracy_trajectory);
    assert_eq!(a.final_accuracy, b.final_accuracy);
    assert_eq!(a.final_params, b.final_params);
    let a_losses: Vec<f64> = a.records.iter().map(|r| r.train_loss).collect();
    let b_losses: Vec<f64> = b.records.iter().map(|r| r.train_loss).collect();
    assert_eq!(a_losses, b_losses);
}

#[test]
fn forced_accept_gate_matches_baseline() {
    let setup = small_setup();
    let baseline = run_baseline(&setup).unwrap();

    let mut forced = setup.clone();
    forced.run.gate = GateConfig::Fixed { tau: f64::NEG_INFINITY };
    let streamed = run_bsgal(&forced).unwrap();
    assert!(streamed.records.iter().all(|r| r.accepted.iter().all(|a| *a)));
    same_trajectory(&baseline, &streamed);
}

#[test]
fn forced_reject_gate_matches_real_only_baseline() {
    let mut real_only = small_setup();
    real_only.run.k_max = 0;
    let baseline = run_baseline(&real_only).unwrap();

    let mut forced = small_setup();
    forced.run.gate = GateConfig::Fixed { tau: f64::INFINITY };
    let streamed = run_bsgal(&forced).unwrap();
    assert!(streamed.records.iter().all(|r| r.accepted.iter().all(|a| !*a)));
    same_trajectory(&baseline, &streamed);
}

#[test]
fn dropout_extremes_match_the_two_baselines() {
    let setup = small_setup();
    let always = run_random_dropout(&setup, 1.0).unwrap();
    same_trajectory(&run_baseline(&setup).unwrap(), &always);

    let mut real_only = setup.clone();
    real_only.run.k_max = 0;
    let never = run_random_dropout(&setup, 0.0).unwrap();
    same_trajectory(&run_baseline(&real_only).unwrap(), &never);
}

#[test]
fn repeated_runs_are_identical() {
    let setup = small_setup();
    let a = run_bsgal(&setup).unwrap();
    let b = run_bsgal(&setup).unwrap();
    same_trajectory(&a, &b);
    assert_eq!(a.records, b.records);
    assert_eq!(a.acceptance_rate, b.acceptance_rate);
}

#[test]
fn parallel_workers_match_sequential() {
    let sequential = small_setup();
    let mut parallel = small_setup();
    parallel.run.parallel = true;
    for (a, b) in [
        (run_bsgal(&sequential).unwrap(), run_bsgal(&parallel).unwrap()),
        (run_baseline(&sequential).unwrap(), run_baseline(&parallel).unwrap()),
    ] {
        same_trajectory(&a, &b);
        assert_eq!(a.records, b.records);
    }
}

#[test]
fn acceptance_rate_log_matches_recomputation() {
    let setup = small_setup();
    let report = run_bsgal(&setup).unwrap();
    let decisions: Vec<GateDecision> = report
        .records
        .iter()
        .flat_map(|rec| {
            rec.scores
                .iter()
                .zip(&rec.accepted)
                .zip(&rec.effective_taus)
                .map(move |((score, accepted), tau)| GateDecision {
                    accepted: *accepted,
                    effective_tau: *tau,
                    score: *score,
                    iteration: rec.iteration,
                })
        })
        .collect();
    assert_eq!(
        decisions.len(),
        setup.run.iterations as usize * setup.run.num_workers
    );
    let recomputed = acceptance_rate(&decisions, 1.0).unwrap();
    assert_eq!(recomputed, report.acceptance_rate);
    assert_eq!(
        report.records.last().unwrap().cumulative_accept_rate,
        report.acceptance_rate
    );
    // Every decision is consistent with the logged threshold.
    assert!(decisions.iter().all(|d| d.accepted == (d.score > d.effective_tau)));
}

#[test]
fn offline_keep_all_ignores_the_scoring_model() {
    // With keep_fraction = 1 nothing is filtered, so two different frozen
    // models must produce identical training runs.
    let mut setup = small_setup();
    setup.run.offline_pool_size = 100;
    let model_a = ClassifierConfig { seed: 1, ..setup.model.clone() };
    let model_b = ClassifierConfig { seed: 2, ..setup.model.clone() };
    let params_a = gal_core::model::Classifier::new(model_a).unwrap().init_params();
    let params_b = gal_core::model::Classifier::new(model_b).unwrap().init_params();
    let a = run_offline_filter(&setup, 1.0, &params_a).unwrap();
    let b = run_offline_filter(&setup, 1.0, &params_b).unwrap();
    same_trajectory(&a, &b);
    assert_eq!(a.offline_stats.as_ref().unwrap().kept, 100);
    assert_eq!(a.offline_stats.as_ref().unwrap().discarded_mean_noise, None);
}

#[test]
fn memoryless_cache_trainer_matches_grad_dot_trainer() {
    // beta = 0 makes the cache exactly the current test gradient, so the two
    // estimator paths must produce identical runs.
    let mut dot_setup = small_setup();
    dot_setup.run.estimator = gal_core::estimator::EstimatorKind::GradDot;
    dot_setup.run.normalized = false;
    dot_setup.run.gate = GateConfig::Fixed { tau: -0.05 };
    let mut cache_setup = small_setup();
    cache_setup.run.estimator = gal_core::estimator::EstimatorKind::GradCache;
    cache_setup.run.normalized = false;
    cache_setup.run.beta = 0.0;
    cache_setup.run.gate = GateConfig::Fixed { tau: -0.05 };
    let a = run_bsgal(&dot_setup).unwrap();
    let b = run_bsgal(&cache_setup).unwrap();
    same_trajectory(&a, &b);
    assert_eq!(a.records, b.records);
}

#[test]
fn every_estimator_kind_trains() {
    use gal_core::estimator::EstimatorKind;
    for kind in [EstimatorKind::LossDiff, EstimatorKind::GradCacheGlobal] {
        let mut setup = small_setup();
        setup.run.estimator = kind;
        setup.run.normalized = kind.uses_cache();
        if !kind.uses_cache() {
            setup.run.gate = GateConfig::Fixed { tau: -0.05 };
        }
        let report = run_bsgal(&setup).unwrap();
        assert_eq!(report.records.len(), 40);
        assert!(report.final_accuracy > 0.0);
        assert!(report.records.iter().all(|r| r.scores.iter().all(|s| s.is_finite())));
    }
}

#[test]
fn clean_generated_data_beats_real_only() {
    // Pristine, uncorrupted extra data is class-balanced free information on
    // a long-tailed dataset.
    let mut clean_finals = Vec::new();
    let mut real_only_finals = Vec::new();
    for s in 0..5u64 {
        let mut setup = TrainSetup {
            world: WorldConfig {
                noise_tiers: vec![0.0],
                tier_weights: vec![1.0],
                corruption_rate: 0.0,
                ..WorldConfig::default()
            },
            model: ClassifierConfig::default(),
            run: RunConfig {
                iterations: 1500,
                seed: 700 + s,
                parallel: true,
                ..RunConfig::default()
            },
        };
        clean_finals.push(run_baseline(&setup).unwrap().final_accuracy);
        setup.run.k_max = 0;
        real_only_finals.push(run_baseline(&setup).unwrap().final_accuracy);
    }
    let clean = clean_finals.iter().sum::<f64>() / 5.0;
    let real_only = real_only_finals.iter().sum::<f64>() / 5.0;
    assert!(
        clean >= real_only,
        "clean generated data ({clean}) should not hurt vs real-only ({real_only})"
    );
}

#[test]
fn eval_cadence_and_record_count() {
    let setup = small_setup();
    let report = run_baseline(&setup).unwrap();
    assert_eq!(report.records.len(), 40);
    let iters: Vec<u64> = report.accuracy_trajectory.iter().map(|(t, _)| *t).collect();
    assert_eq!(iters, vec![10, 20, 30, 40]);
}
