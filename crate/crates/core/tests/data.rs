use proptest::prelude::*;
use scalelab::data::cifar::RECORD_LEN;
use scalelab::data::{
    parse_cifar_batch, parse_idx, preprocess, sphere_normalize, synthetic_dataset, Dataset, IdxError,
    IdxTensor, RawImages, Split,
};
use scalelab::numerics::Matrix;

fn idx_bytes(dims: &[u32], payload: &[u8]) -> Vec<u8> {
    let mut out = vec![0, 0, 8, dims.len() as u8];
    for d in dims {
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(payload);
    out
}

fn row_norms(m: &Matrix) -> Vec<f64> {
    m.iter_rows().map(|r| r.iter().map(|x| x * x).sum()).collect()
}

proptest! {
    #[test]
    fn idx_images_round_trip(n in 0u32..5, h in 1u32..6, w in 1u32..6, seed in any::<u64>()) {
        let len = (n * h * w) as usize;
        let payload: Vec<u8> = (0..len).map(|i| (seed.wrapping_mul(i as u64 + 1) >> 7) as u8).collect();
        let bytes = idx_bytes(&[n, h, w], &payload);
        let t = parse_idx(&bytes).unwrap();
        prop_assert_eq!(&t.dims, &vec![n, h, w]);
        prop_assert_eq!(t.to_bytes(), bytes);
    }

    #[test]
    fn idx_labels_round_trip(labels in prop::collection::vec(0u8..10, 0..50)) {
        let bytes = idx_bytes(&[labels.len() as u32], &labels);
        prop_assert_eq!(parse_idx(&bytes).unwrap(), IdxTensor { dims: vec![labels.len() as u32], data: labels });
    }

    #[test]
    fn idx_rejects_wrong_payload_length(n in 1u32..20, extra in 1usize..5, longer in any::<bool>()) {
        let len = if longer { n as usize + extra } else { (n as usize).saturating_sub(extra.min(n as usize)) };
        prop_assume!(len != n as usize);
        let bytes = idx_bytes(&[n], &vec![1; len]);
        let is_payload_error = matches!(parse_idx(&bytes), Err(IdxError::Payload { .. }));
        prop_assert!(is_payload_error);
    }

    #[test]
    fn cifar_round_trip(labels in prop::collection::vec(0u8..10, 0..4), fill in any::<u8>()) {
        let mut bytes = Vec::new();
        for (i, &l) in labels.iter().enumerate() {
            bytes.push(l);
            bytes.extend((0..RECORD_LEN - 1).map(|j| fill.wrapping_add((i * 31 + j) as u8)));
        }
        let records = parse_cifar_batch(&bytes, "batch").unwrap();
        prop_assert_eq!(records.len(), labels.len());
        prop_assert_eq!(records.to_bytes(), bytes);
    }

    #[test]
    fn cifar_rejects_bad_labels(label in 10u8..=255) {
        let mut bytes = vec![0u8; RECORD_LEN];
        bytes[0] = label;
        prop_assert!(parse_cifar_batch(&bytes, "batch").is_err());
    }

    #[test]
    fn sphere_normalization_is_idempotent(
        rows in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 7), 1..12),
    ) {
        let m = Matrix::from_rows(&rows).unwrap();
        let (once, kept) = sphere_normalize(&m);
        let (twice, kept2) = sphere_normalize(&once);
        prop_assert_eq!(kept2.len(), once.rows());
        for (i, &k) in kept.iter().enumerate() {
            prop_assert!(rows[k].iter().any(|&x| x != 0.0));
            prop_assert!((row_norms(&once)[i] - 7.0).abs() <= 1e-9 * 7.0);
            for (a, b) in once.row(i).iter().zip(twice.row(i)) {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
            }
        }
    }

    #[test]
    fn subsampling_is_seeded_and_labels_are_one_hot(k in 1usize..30, seed in any::<u64>()) {
        let raw = RawImages {
            name: "toy".into(),
            dim: 4,
            pixels: (0..40 * 4).map(|i| (i % 251 + 1) as u8).collect(),
            labels: (0..40).map(|i| (i % 10) as u8).collect(),
        };
        let a = preprocess(&raw, Some(k), seed, Split::Train).unwrap();
        let b = preprocess(&raw, Some(k), seed, Split::Train).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.len(), k);
        for row in a.labels.iter_rows() {
            prop_assert_eq!(row.iter().filter(|&&y| y == 1.0).count(), 1);
            prop_assert_eq!(row.iter().filter(|&&y| y == -1.0).count(), 9);
        }
        // eval splits are never subsampled
        prop_assert_eq!(preprocess(&raw, Some(k), seed, Split::Eval).unwrap().len(), 40);
    }
}

#[test]
fn zero_rows_are_dropped() {
    let m = Matrix::from_rows(&[vec![0.0, 0.0], vec![3.0, 4.0]]).unwrap();
    let d = Dataset::from_parts("z", Split::Train, &m, &[1, 0], 2).unwrap();
    assert_eq!(d.len(), 1);
    assert_eq!(d.excluded_rows, 1);
    assert_eq!(d.classes, vec![0]);
    let expected = [3.0 * (2.0f64 / 25.0).sqrt(), 4.0 * (2.0f64 / 25.0).sqrt()];
    assert_eq!(d.inputs.row(0), &expected);
}

#[test]
fn synthetic_sets_are_reproducible_and_normalized() {
    let a = synthetic_dataset(30, 8, 3, 5.0, 4).unwrap();
    assert_eq!(a, synthetic_dataset(30, 8, 3, 5.0, 4).unwrap());
    assert_ne!(a.inputs, synthetic_dataset(30, 8, 3, 5.0, 5).unwrap().inputs);
    assert!(row_norms(&a.inputs).iter().all(|s| (s - 8.0).abs() < 1e-9));
    assert_eq!(a.classes, (0..30).map(|i| i % 3).collect::<Vec<_>>());
}
