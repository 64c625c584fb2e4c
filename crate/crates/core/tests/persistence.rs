mod support;

use std::path::Path;

use logitfix_core::attacks::AttackKind;
use logitfix_core::defender::{LogitsRecord, LogitsSet};
use logitfix_core::io::checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
use logitfix_core::io::idx::load_idx_dataset;
use logitfix_core::io::logits::{load_logits_store, save_logits_store, LogitsStore};
use logitfix_core::io::{checksum_hex, file_checksum};
use logitfix_core::Tensor;
use proptest::prelude::*;
use support::reference::{random_input, random_network};

fn logit() -> impl Strategy<Value = f32> {
    prop_oneof![
        any::<f32>().prop_filter("finite", |v| v.is_finite()),
        Just(-0.0f32),
        Just(f32::MIN_POSITIVE / 4.0),
    ]
}

fn record(classes: usize) -> impl Strategy<Value = LogitsRecord> {
    (
        proptest::collection::vec(logit(), classes),
        proptest::collection::vec(logit(), classes),
        0..classes,
        any::<bool>(),
        any::<bool>(),
    )
        .prop_map(|(z, z_adv, label, success, attack_failed)| LogitsRecord {
            z: Tensor::from_vec(z),
            z_adv: Tensor::from_vec(z_adv),
            label,
            success,
            attack_failed,
        })
}

fn store() -> impl Strategy<Value = LogitsStore> {
    (1usize..6).prop_flat_map(|c| {
        (
            proptest::collection::vec(record(c), 0..8),
            prop::sample::select(vec![
                AttackKind::Pgd,
                AttackKind::Mim,
                AttackKind::DeepFool,
                AttackKind::Cw,
            ]),
            any::<[u8; 32]>(),
        )
            .prop_map(move |(records, attack, sum)| LogitsStore::new(LogitsSet { attack, records }, c, sum).unwrap())
    })
}

fn bitwise_same(a: &LogitsStore, b: &LogitsStore) -> bool {
    a.classes == b.classes
        && a.classifier_checksum == b.classifier_checksum
        && a.set.attack == b.set.attack
        && a.set.records.len() == b.set.records.len()
        && a.set.records.iter().zip(&b.set.records).all(|(x, y)| {
            x.z.bitwise_eq(&y.z)
                && x.z_adv.bitwise_eq(&y.z_adv)
                && (x.label, x.success, x.attack_failed) == (y.label, y.success, y.attack_failed)
        })
}

proptest! {
    #[test]
    fn logits_store_round_trips_bitwise(s in store()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set.lgt");
        save_logits_store(&path, &s).unwrap();
        let back = load_logits_store(&path).unwrap();
        prop_assert!(bitwise_same(&s, &back));
    }

    #[test]
    fn any_single_byte_flip_is_rejected(s in store(), at in any::<prop::sample::Index>(), flip in 1u8..=255) {
        let mut bytes = s.encode();
        let i = at.index(bytes.len());
        bytes[i] ^= flip;
        prop_assert!(LogitsStore::decode(&bytes, Path::new("mem")).is_err());
    }

    #[test]
    fn checkpoints_round_trip_bitwise(seed in 0u64..10_000, conv in any::<bool>()) {
        let net = random_network(seed, conv);
        let bytes = encode_checkpoint(&net, &[("seed".into(), seed.to_string())]).unwrap();
        let back = decode_checkpoint(&bytes, Path::new("mem")).unwrap();
        prop_assert_eq!(back.config.clone(), vec![("seed".to_string(), seed.to_string())]);
        for (a, b) in net.parameters().iter().zip(back.network.parameters()) {
            prop_assert!(a.bitwise_eq(b));
        }
        let (x, _) = random_input(&net, seed);
        let image = Tensor::new(net.input_shape().to_vec(), x).unwrap();
        prop_assert!(net.logits(&image).unwrap().bitwise_eq(&back.network.logits(&image).unwrap()));
        prop_assert_eq!(encode_checkpoint(&back.network, &back.config).unwrap(), bytes);
    }
}

#[test]
fn store_names_the_checkpoint_that_produced_it() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("m.ckpt");
    let saved = save_checkpoint(&ckpt, &random_network(1, false), &[]).unwrap();
    let (_, loaded) = load_checkpoint(&ckpt).unwrap();
    assert_eq!(saved, loaded);
    assert_eq!(file_checksum(&ckpt).unwrap(), saved);
    let store = LogitsStore::new(
        LogitsSet {
            attack: AttackKind::Pgd,
            records: vec![],
        },
        3,
        saved,
    )
    .unwrap();
    let path = dir.path().join("s.lgt");
    save_logits_store(&path, &store).unwrap();
    let back = load_logits_store(&path).unwrap();
    assert!(back.verify_classifier(&loaded).is_ok());
    assert_eq!(checksum_hex(&back.classifier_checksum).len(), 64);
    let other = save_checkpoint(&ckpt, &random_network(2, false), &[]).unwrap();
    assert_eq!(back.verify_classifier(&other).unwrap_err().kind(), "checksum");
}

#[test]
fn bundled_test_split_matches_its_header() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist");
    let data = load_idx_dataset(
        &dir.join("test-images-idx3-ubyte.gz"),
        &dir.join("test-labels-idx1-ubyte.gz"),
    )
    .unwrap();
    // header fields: 3000 images of 28 × 28
    assert_eq!(data.len(), 3000);
    assert!(data.iter().all(|e| e.label <= 9 && e.image.shape() == [1, 28, 28]));
    assert!(data
        .iter()
        .all(|e| e.image.data().iter().all(|v| (0.0..=1.0).contains(v))));
}
