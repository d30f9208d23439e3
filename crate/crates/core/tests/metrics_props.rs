use exitbench_core::metrics::{
    accuracy, dataset_metric, f1_binary, pearson, spearman, GoldFile, MetricKind, TaskKind,
};
use exitbench_core::trace::Pred;
use proptest::prelude::*;

// Textbook definitions, written without sharing code with the crate.
fn oracle_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov: f64 = (0..x.len()).map(|i| (x[i] - mx) * (y[i] - my)).sum::<f64>() / (n - 1.0);
    let sx = ((0..x.len()).map(|i| (x[i] - mx).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let sy = ((0..x.len()).map(|i| (y[i] - my).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    cov / (sx * sy)
}

fn oracle_ranks(v: &[f64]) -> Vec<f64> {
    // rank = 1 + #smaller + (#equal − 1)/2
    v.iter()
        .map(|&a| {
            let less = v.iter().filter(|&&b| b < a).count() as f64;
            let equal = v.iter().filter(|&&b| b == a).count() as f64;
            1.0 + less + (equal - 1.0) / 2.0
        })
        .collect()
}

fn lcg(seed: u64, n: usize) -> Vec<f64> {
    let mut s = seed;
    (0..n)
        .map(|_| {
            s = s
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64 * 10.0 - 5.0
        })
        .collect()
}

#[test]
fn pearson_matches_covariance_oracle_on_random_vectors() {
    for seed in 0..50 {
        let x = lcg(seed, 10);
        let y = lcg(seed + 1000, 10);
        assert!((pearson(&x, &y).unwrap() - oracle_pearson(&x, &y)).abs() < 1e-12);
    }
}

#[test]
fn spearman_matches_rank_then_pearson_oracle() {
    for seed in 0..50 {
        // coarse values force ties
        let x: Vec<f64> = lcg(seed, 12).iter().map(|v| v.round()).collect();
        let y: Vec<f64> = lcg(seed + 77, 12)
            .iter()
            .map(|v| (v * 2.0).round())
            .collect();
        let expected = oracle_pearson(&oracle_ranks(&x), &oracle_ranks(&y));
        assert!((spearman(&x, &y).unwrap() - expected).abs() < 1e-12);
    }
}

fn vec_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..30).prop_flat_map(|n| {
        (
            prop::collection::vec(-100.0f64..100.0, n),
            prop::collection::vec(-100.0f64..100.0, n),
        )
    })
}

proptest! {
    #[test]
    fn correlations_bounded((x, y) in vec_pair()) {
        if let Ok(r) = pearson(&x, &y) {
            prop_assert!((-1.0..=1.0).contains(&r));
        }
        if let Ok(r) = spearman(&x, &y) {
            prop_assert!((-1.0..=1.0).contains(&r));
        }
    }

    #[test]
    fn spearman_invariant_under_monotone_transform((x, y) in vec_pair()) {
        let tx: Vec<f64> = x.iter().map(|v| (v / 50.0).exp() * 3.0 + 1.0).collect();
        let ty: Vec<f64> = y.iter().map(|v| v * v * v).collect();
        if let Ok(r) = spearman(&x, &y) {
            prop_assert!((spearman(&tx, &ty).unwrap() - r).abs() < 1e-12);
        }
    }

    #[test]
    fn classification_metrics_bounded_and_permutation_invariant(
        pairs in prop::collection::vec((0i64..2, 0i64..2), 1..40),
        seed in any::<u64>(),
    ) {
        let (p, g): (Vec<i64>, Vec<i64>) = pairs.iter().copied().unzip();
        let acc = accuracy(&p, &g).unwrap();
        let f1 = f1_binary(&p, &g).unwrap();
        prop_assert!((0.0..=1.0).contains(&acc) && (0.0..=1.0).contains(&f1));

        let mut idx: Vec<usize> = (0..p.len()).collect();
        let mut s = seed;
        for i in (1..idx.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
            idx.swap(i, (s >> 33) as usize % (i + 1));
        }
        let gold = GoldFile {
            dataset_id: "d".into(),
            task_kind: TaskKind::Classification,
            metric_kind: MetricKind::AccF1Mean,
            num_labels: Some(2),
            labels: g.iter().map(|&c| Pred::Class(c)).collect(),
        };
        let shuffled = GoldFile {
            labels: idx.iter().map(|&i| Pred::Class(g[i])).collect(),
            ..gold.clone()
        };
        let preds: Vec<Pred> = p.iter().map(|&c| Pred::Class(c)).collect();
        let shuffled_preds: Vec<Pred> = idx.iter().map(|&i| preds[i]).collect();
        let m = dataset_metric(&gold, &preds).unwrap();
        prop_assert!((0.0..=100.0).contains(&m));
        prop_assert!((m - dataset_metric(&shuffled, &shuffled_preds).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn regression_metric_in_range((x, y) in vec_pair()) {
        let gold = GoldFile {
            dataset_id: "sts".into(),
            task_kind: TaskKind::Regression,
            metric_kind: MetricKind::PearsonSpearmanMean,
            num_labels: None,
            labels: y.iter().map(|&v| Pred::Value(v)).collect(),
        };
        let preds: Vec<Pred> = x.iter().map(|&v| Pred::Value(v)).collect();
        if let Ok(m) = dataset_metric(&gold, &preds) {
            prop_assert!((-100.0..=100.0).contains(&m));
        }
    }
}
