//! Generators for valid trace files.

use exitbench_core::cost::Shape;
use exitbench_core::trace::{Pred, SampleTrace, SubmissionFile, TraceStep};
use proptest::prelude::*;

pub fn step() -> impl Strategy<Value = TraceStep> {
    let id = prop_oneof![
        Just("emb".to_string()),
        (1u32..25).prop_map(|k| format!("layer_{k}")),
        (1u32..25).prop_map(|k| format!("exit_{k}")),
        "[a-z][a-z0-9_.-]{0,12}",
    ];
    let shape = prop_oneof![
        (1u64..5000).prop_map(Shape::D1),
        (1u64..512, 1u64..2048).prop_map(|(a, b)| Shape::D2(a, b)),
    ];
    (shape, id).prop_map(|(s, i)| TraceStep::new(s, i))
}

pub fn pred(regression: bool) -> BoxedStrategy<Pred> {
    if regression {
        (-5_000_000i64..5_000_000)
            .prop_map(|micro| {
                let v: f64 = format!("{:.6}", micro as f64 / 1e6).parse().unwrap();
                Pred::Value(v)
            })
            .boxed()
    } else {
        (0i64..10).prop_map(Pred::Class).boxed()
    }
}

/// Valid files, including token-pruning traces with shrinking sequence dims.
pub fn submission() -> impl Strategy<Value = SubmissionFile> {
    any::<bool>().prop_flat_map(|regression| {
        let plain = (pred(regression), prop::collection::vec(step(), 1..12));
        let pruned = (pred(regression), 2u64..200, 1usize..10).prop_map(|(p, n0, layers)| {
            let mut steps = vec![TraceStep::new(Shape::D1(n0), "emb")];
            let mut n = n0;
            for k in 1..=layers {
                steps.push(TraceStep::new(Shape::D2(n, 768), format!("layer_{k}")));
                n = (n * 2 / 3).max(1);
            }
            steps.push(TraceStep::new(Shape::D1(768), format!("exit_{layers}")));
            (p, steps)
        });
        prop::collection::vec(prop_oneof![plain, pruned], 0..20).prop_map(|rows| {
            SubmissionFile::new(
                "ds",
                rows.into_iter()
                    .enumerate()
                    .map(|(i, (pred, steps))| SampleTrace {
                        index: i as u64,
                        pred,
                        steps,
                    })
                    .collect(),
            )
        })
    })
}
