use logitfix_core::classifier::{
    evaluate_accuracy, select_correct_subset, train_classifier, Architecture, ClassifierSpec, LabeledExample,
};
use logitfix_core::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

/// Two classes split by a line with a clear margin.
fn separable_toy(count: usize, seed: u64) -> Vec<LabeledExample> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    while out.len() < count {
        let (a, b): (f32, f32) = (rng.gen(), rng.gen());
        let side = a + 0.6 * b - 0.8;
        if side.abs() < 0.05 {
            continue;
        }
        out.push(LabeledExample::new(Tensor::from_vec(vec![a, b]), usize::from(side > 0.0)).unwrap());
    }
    out
}

/// Rosenblatt perceptron; returns true once an epoch passes with no mistakes.
fn perceptron_separates(data: &[LabeledExample]) -> bool {
    let mut w = [0.0f64; 3];
    for _ in 0..10_000 {
        let mut mistakes = 0;
        for ex in data {
            let x = [f64::from(ex.image.data()[0]), f64::from(ex.image.data()[1]), 1.0];
            let y = if ex.label == 1 { 1.0 } else { -1.0 };
            let s: f64 = w.iter().zip(&x).map(|(a, b)| a * b).sum();
            if y * s <= 0.0 {
                mistakes += 1;
                for (wi, xi) in w.iter_mut().zip(&x) {
                    *wi += y * xi;
                }
            }
        }
        if mistakes == 0 {
            return true;
        }
    }
    false
}

fn toy_spec() -> ClassifierSpec {
    ClassifierSpec {
        widths: vec![16, 16],
        classes: 2,
        epochs: 40,
        batch_size: 16,
        learning_rate: 1e-2,
        lr_decay: 1.0,
        ..ClassifierSpec::new(Architecture::Mlp2h)
    }
}

#[test]
fn mlp_fits_a_separable_toy() {
    let data = separable_toy(300, 1);
    assert!(perceptron_separates(&data));
    let (net, logs) = train_classifier(&data, &toy_spec(), |_| {}).unwrap();
    assert_eq!(logs.len(), 40);
    assert!(evaluate_accuracy(&net, &data).unwrap().fraction() >= 0.99);
}

#[test]
fn training_is_reproducible() {
    let data = separable_toy(120, 2);
    let spec = ClassifierSpec {
        epochs: 3,
        ..toy_spec()
    };
    let (a, la) = train_classifier(&data, &spec, |_| {}).unwrap();
    let (b, lb) = train_classifier(&data, &spec, |_| {}).unwrap();
    for (p, q) in a.parameters().iter().zip(b.parameters()) {
        assert!(p.bitwise_eq(q));
    }
    assert_eq!(la, lb);
}

#[test]
fn epoch_callback_sees_every_log() {
    let data = separable_toy(50, 3);
    let mut seen = Vec::new();
    let (_, logs) = train_classifier(
        &data,
        &ClassifierSpec {
            epochs: 4,
            ..toy_spec()
        },
        |l| seen.push(l.epoch),
    )
    .unwrap();
    assert_eq!(seen, vec![1, 2, 3, 4]);
    assert_eq!(logs.iter().map(|l| l.epoch).collect::<Vec<_>>(), seen);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn selected_subset_is_always_fully_correct(seed in 0u64..1000, per_class in 1usize..20) {
        let spec = ClassifierSpec { seed, epochs: 0, ..toy_spec() };
        let data = separable_toy(60, seed);
        let (net, _) = train_classifier(&data, &spec, |_| {}).unwrap();
        let sel = select_correct_subset(&net, &data, per_class).unwrap();
        prop_assert!(sel.per_class.iter().all(|&c| c <= per_class));
        prop_assert_eq!(sel.examples.len(), sel.indices.len());
        if !sel.examples.is_empty() {
            prop_assert_eq!(evaluate_accuracy(&net, &sel.examples).unwrap().fraction(), 1.0);
        }
        for (ex, &i) in sel.examples.iter().zip(&sel.indices) {
            prop_assert!(ex.image.bitwise_eq(&data[i].image));
        }
    }
}
