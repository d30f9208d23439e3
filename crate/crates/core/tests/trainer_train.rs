use exitbench_core::exitsim::{entropy_exit, LogitsFile};
use exitbench_core::trainer::{
    exit_accuracies, export_logits, init_network, strided_groups, train, MultiExitNet,
    SyntheticConfig, SyntheticDataset, TrainConfig, TrainError, TrainStrategy,
};

fn data(classes: usize) -> SyntheticDataset {
    SyntheticDataset::generate(&SyntheticConfig {
        num_samples: 240,
        num_classes: classes,
        width: 6,
        separation: 3.0,
        noise: 0.6,
        seed: 11,
        ..SyntheticConfig::default()
    })
    .unwrap()
}

fn config(strategy: TrainStrategy, epochs: usize) -> TrainConfig {
    TrainConfig {
        num_layers: 4,
        width: 6,
        num_classes: 2,
        strategy,
        epochs,
        learning_rate: 0.5,
        batch_size: Some(32),
        seed: 3,
    }
}

fn fit(cfg: &TrainConfig, data: &SyntheticDataset) -> MultiExitNet {
    let mut net = init_network(cfg.num_layers, cfg.width, cfg.num_classes, cfg.seed).unwrap();
    train(&mut net, &data.train, cfg).unwrap();
    net
}

fn bits(values: &[f64]) -> Vec<u64> {
    values.iter().map(|v| v.to_bits()).collect()
}

#[test]
fn sum_strategy_separates_clusters_at_every_exit() {
    let d = data(2);
    let net = fit(&config(TrainStrategy::Sum, 30), &d);
    let acc = exit_accuracies(&net, &d.train).unwrap();
    assert!(acc.iter().all(|&a| a >= 0.95), "{acc:?}");
}

#[test]
fn training_is_deterministic() {
    let d = data(3);
    let mut cfg = config(TrainStrategy::Weighted, 5);
    cfg.num_classes = 3;
    let run = || {
        let mut net = init_network(4, 6, 3, cfg.seed).unwrap();
        let report = train(&mut net, &d.train, &cfg).unwrap();
        (
            serde_json::to_string(&net).unwrap(),
            serde_json::to_string(&report).unwrap(),
        )
    };
    assert_eq!(run(), run());
    assert_eq!(data(3), data(3));
}

#[test]
fn history_has_one_record_per_epoch() {
    let d = data(2);
    let mut net = init_network(4, 6, 2, 0).unwrap();
    let report = train(
        &mut net,
        &d.train,
        &config(TrainStrategy::GradientEquilibrium, 4),
    )
    .unwrap();
    assert_eq!(report.history.len(), 4);
    assert!(report.history.iter().all(|r| r.exit_losses.len() == 4));
    assert_eq!(report.steps, 4 * d.train.len().div_ceil(32));
}

#[test]
fn two_stage_freezes_backbone_in_stage_two() {
    let d = data(2);
    let stage1 = fit(
        &config(
            TrainStrategy::TwoStage {
                stage1_epochs: 6,
                stage2_epochs: 0,
            },
            6,
        ),
        &d,
    );
    let both = fit(
        &config(
            TrainStrategy::TwoStage {
                stage1_epochs: 6,
                stage2_epochs: 8,
            },
            14,
        ),
        &d,
    );
    assert_eq!(bits(&stage1.block_params()), bits(&both.block_params()));
    assert_eq!(stage1.heads.last(), both.heads.last());
    assert_ne!(stage1.heads[0], both.heads[0]);
    let acc = exit_accuracies(&both, &d.train).unwrap();
    assert!(acc.iter().all(|&a| a >= 0.9), "{acc:?}");
}

#[test]
fn two_stage_epoch_split_must_add_up() {
    let d = data(2);
    let mut net = init_network(4, 6, 2, 0).unwrap();
    let cfg = config(
        TrainStrategy::TwoStage {
            stage1_epochs: 2,
            stage2_epochs: 2,
        },
        5,
    );
    assert!(matches!(
        train(&mut net, &d.train, &cfg),
        Err(TrainError::Config(_))
    ));
}

#[test]
fn grouped_matches_sum_at_top_exit() {
    let d = data(2);
    let sum = fit(&config(TrainStrategy::Sum, 30), &d);
    let grouped = fit(
        &config(
            TrainStrategy::Grouped {
                groups: strided_groups(4, 2),
            },
            30,
        ),
        &d,
    );
    let a = exit_accuracies(&sum, &d.test).unwrap()[3];
    let b = exit_accuracies(&grouped, &d.test).unwrap()[3];
    assert!((a - b).abs() <= 0.05, "sum {a} grouped {b}");
}

#[test]
fn invalid_groups_are_rejected() {
    let d = data(2);
    let mut net = init_network(4, 6, 2, 0).unwrap();
    let cfg = config(
        TrainStrategy::Grouped {
            groups: vec![vec![1, 2, 3]],
        },
        1,
    );
    assert!(matches!(
        train(&mut net, &d.train, &cfg),
        Err(TrainError::Groups(_))
    ));
}

#[test]
fn divergence_aborts_with_diagnostic() {
    let d = data(2);
    let mut net = init_network(4, 6, 2, 0).unwrap();
    let mut cfg = config(TrainStrategy::Sum, 3);
    cfg.learning_rate = f64::MAX;
    match train(&mut net, &d.train, &cfg) {
        Err(TrainError::Diverged { .. }) => {}
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn exported_logits_feed_the_simulator() {
    let d = data(3);
    let mut cfg = config(TrainStrategy::Sum, 20);
    cfg.num_classes = 3;
    let net = fit(&cfg, &d);
    let file = export_logits(&net, &d.test).unwrap();
    let parsed = LogitsFile::parse(&file.to_text()).unwrap();
    assert_eq!(parsed, file);
    assert!(parsed.samples.iter().all(|s| s.num_exits() == 4));

    let top = exit_accuracies(&net, &d.test).unwrap()[3];
    let hits = parsed
        .samples
        .iter()
        .zip(&d.test.labels)
        .filter(|(s, &y)| {
            let dec = entropy_exit(s, 0.0).unwrap();
            dec.layer == 4 && dec.pred.as_f64() == y as f64
        })
        .count();
    assert_eq!(hits as f64 / d.test.len() as f64, top);

    let mut prev = f64::INFINITY;
    for k in 0..=12 {
        let mean = parsed
            .samples
            .iter()
            .map(|s| entropy_exit(s, k as f64 * 0.1).unwrap().layer as f64)
            .sum::<f64>()
            / parsed.samples.len() as f64;
        assert!(mean <= prev);
        prev = mean;
    }
}
