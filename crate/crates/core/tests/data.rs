use std::fs;

use hsnet::data::{
    apply_augment, augment, draw_augment, export_cifar10, load_cifar10, load_cifar10_file,
    load_cifar10_split, mixup, mixup_with, smooth_labels, synth_blobs, AugmentDraw, Batch, Split,
    CIFAR_RECORD_BYTES,
};
use hsnet::{Error, Rng, Tensor4};

fn fake_cifar_bytes(records: usize, seed: u64) -> Vec<u8> {
    let mut rng = Rng::new(seed);
    let mut bytes = Vec::with_capacity(records * CIFAR_RECORD_BYTES);
    for _ in 0..records {
        bytes.push(rng.below(10) as u8);
        bytes.extend((0..CIFAR_RECORD_BYTES - 1).map(|_| rng.below(256) as u8));
    }
    bytes
}

#[test]
fn standard_file_loads_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("test_batch.bin");
    let bytes = fake_cifar_bytes(10_000, 1);
    fs::write(&path, &bytes).unwrap();
    let ds = load_cifar10(&path).unwrap();
    assert_eq!(ds.len(), 10_000);
    assert_eq!(ds.images.dims(), [10_000, 3, 32, 32]);
    assert_eq!(ds.labels[0], bytes[0] as usize);
    // Planar RGB: the first pixel of the green plane is byte 1 + 1024.
    assert_eq!(ds.images.at(0, 1, 0, 0), bytes[1 + 1024] as f64 / 255.0);

    let out = dir.path().join("again.bin");
    export_cifar10(&ds, &out).unwrap();
    assert!(fs::read(&out).unwrap() == bytes);
}

#[test]
fn first_record_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("one.bin");
    let bytes = fake_cifar_bytes(3, 2);
    fs::write(&path, &bytes).unwrap();
    let first = load_cifar10_file(&path, Some(1)).unwrap();
    assert_eq!(first.len(), 1);
    let out = dir.path().join("first.bin");
    export_cifar10(&first, &out).unwrap();
    assert_eq!(fs::read(&out).unwrap(), &bytes[..CIFAR_RECORD_BYTES]);
}

#[test]
fn truncated_file_names_file_and_size() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data_batch_3.bin");
    fs::write(&path, fake_cifar_bytes(10, 3)).unwrap();
    let err = load_cifar10(&path).unwrap_err();
    assert!(matches!(err, Error::Format { .. }));
    let msg = err.to_string();
    assert!(
        msg.contains("data_batch_3.bin") && msg.contains("30730000"),
        "{msg}"
    );

    let odd = dir.path().join("custom.bin");
    let mut b = fake_cifar_bytes(2, 3);
    b.pop();
    fs::write(&odd, b).unwrap();
    assert!(matches!(load_cifar10(&odd), Err(Error::Format { .. })));
}

#[test]
fn missing_file_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        load_cifar10(dir.path().join("nope.bin")),
        Err(Error::Io { .. })
    ));
    assert!(matches!(
        load_cifar10_split(dir.path(), Split::Test, None),
        Err(Error::Io { .. })
    ));
}

#[test]
fn bad_label_byte_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.bin");
    let mut b = fake_cifar_bytes(1, 4);
    b[0] = 10;
    fs::write(&path, b).unwrap();
    assert!(matches!(load_cifar10(&path), Err(Error::Format { .. })));
}

#[test]
fn train_split_reads_in_order_with_limit() {
    let dir = tempfile::tempdir().unwrap();
    let bytes = fake_cifar_bytes(10_000, 5);
    fs::write(dir.path().join("data_batch_1.bin"), &bytes).unwrap();
    let ds = load_cifar10_split(dir.path(), Split::Train, Some(50)).unwrap();
    assert_eq!(ds.len(), 50);
    let labels: Vec<usize> = (0..50)
        .map(|i| bytes[i * CIFAR_RECORD_BYTES] as usize)
        .collect();
    assert_eq!(ds.labels, labels);
    // Past the first file the second one is required.
    assert!(matches!(
        load_cifar10_split(dir.path(), Split::Train, Some(10_001)),
        Err(Error::Io { .. })
    ));
}

#[test]
fn synthetic_export_round_trips() {
    let ds = synth_blobs(4, 5, 32, &Rng::new(9)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("synth.bin");
    export_cifar10(&ds, &path).unwrap();
    let back = load_cifar10(&path).unwrap();
    assert_eq!(back.images, ds.images);
    assert_eq!(back.labels, ds.labels);
    let small = synth_blobs(4, 1, 8, &Rng::new(9)).unwrap();
    assert!(export_cifar10(&small, dir.path().join("bad.bin")).is_err());
}

#[test]
fn synth_blobs_construction() {
    let a = synth_blobs(10, 100, 16, &Rng::new(42)).unwrap();
    let b = synth_blobs(10, 100, 16, &Rng::new(42)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 1000);
    assert_eq!(a.histogram(), vec![100; 10]);
    assert!(a.images.data().iter().all(|v| (0.0..=1.0).contains(v)));
    assert_ne!(
        a.images,
        synth_blobs(10, 100, 16, &Rng::new(43)).unwrap().images
    );
    assert!(synth_blobs(1, 10, 16, &Rng::new(0)).is_err());
}

#[test]
fn nearest_centroid_separates_blobs() {
    let ds = synth_blobs(10, 100, 32, &Rng::new(42)).unwrap();
    let per = 3 * 32 * 32;
    let (fit, test): (Vec<usize>, Vec<usize>) = (0..ds.len()).partition(|i| (i / 10) % 2 == 0);
    let mut centroids = vec![vec![0.0; per]; 10];
    for &i in &fit {
        for (c, v) in centroids[ds.labels[i]]
            .iter_mut()
            .zip(&ds.images.data()[i * per..(i + 1) * per])
        {
            *c += v / 50.0;
        }
    }
    let correct = test
        .iter()
        .filter(|&&i| {
            let x = &ds.images.data()[i * per..(i + 1) * per];
            let dist = |c: &Vec<f64>| c.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            let best = (0..10)
                .min_by(|&a, &b| dist(&centroids[a]).total_cmp(&dist(&centroids[b])))
                .unwrap();
            best == ds.labels[i]
        })
        .count();
    assert!(
        correct as f64 / test.len() as f64 >= 0.99,
        "{correct}/{}",
        test.len()
    );
}

fn ramp(dims: [usize; 4]) -> Tensor4 {
    let n: usize = dims.iter().product();
    Tensor4::from_vec(dims, (1..=n).map(|v| v as f64).collect()).unwrap()
}

#[test]
fn augment_identity_and_involution() {
    let x = ramp([3, 3, 5, 6]);
    assert_eq!(augment(&x, &mut Rng::new(1), 0, 0.0).unwrap(), x);
    let flip = vec![
        AugmentDraw {
            dy: 0,
            dx: 0,
            flip: true
        };
        3
    ];
    let once = apply_augment(&x, &flip, 0).unwrap();
    assert_ne!(once, x);
    assert_eq!(once.at(0, 0, 0, 0), x.at(0, 0, 0, 5));
    assert_eq!(apply_augment(&once, &flip, 0).unwrap(), x);
    assert!(augment(&x, &mut Rng::new(1), 1, 1.5).is_err());
}

#[test]
fn crop_shifts_content_and_zero_fills() {
    let x = ramp([1, 1, 4, 4]);
    let d = [AugmentDraw {
        dy: 0,
        dx: 3,
        flip: false,
    }];
    let y = apply_augment(&x, &d, 2).unwrap();
    // Output (r, c) reads input (r - 2, c + 1).
    for r in 0..4 {
        for c in 0..4 {
            let (sr, sc) = (r as isize - 2, c as isize + 1);
            let want = if (0..4).contains(&sr) && (0..4).contains(&sc) {
                x.at(0, 0, sr as usize, sc as usize)
            } else {
                0.0
            };
            assert_eq!(y.at(0, 0, r, c), want);
        }
    }
}

#[test]
fn crop_offsets_are_uniform() {
    // Chi-square over the 81 offsets of pad = 4; df = 80, 1% critical value 112.33.
    let draws = draw_augment(10_000, &mut Rng::new(42), 4, 0.5).unwrap();
    let mut counts = [0usize; 81];
    for d in &draws {
        counts[d.dy * 9 + d.dx] += 1;
    }
    let expected = 10_000.0 / 81.0;
    let chi2: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    assert!(chi2 < 112.33, "chi2 {chi2}");
    let flips = draws.iter().filter(|d| d.flip).count();
    assert!((flips as f64 - 5000.0).abs() < 4.0 * 50.0);
}

#[test]
fn label_smoothing_values() {
    let t = smooth_labels(&[3], 10, 0.1).unwrap();
    for k in 0..10 {
        let want = if k == 3 { 0.91 } else { 0.01 };
        assert!((t.data()[k] - want).abs() < 1e-15);
    }
    let hard = smooth_labels(&[0, 2], 3, 0.0).unwrap();
    assert_eq!(hard.data(), &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    let rows = smooth_labels(&[0, 4, 9, 7], 10, 0.3).unwrap();
    for r in rows.data().chunks(10) {
        assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    assert!(smooth_labels(&[0], 10, 1.0).is_err());
}

fn toy_batch() -> Batch {
    Batch {
        images: Tensor4::randn([4, 3, 2, 2], &mut Rng::new(7), 1.0).unwrap(),
        targets: smooth_labels(&[0, 1, 2, 1], 3, 0.1).unwrap(),
    }
}

#[test]
fn mixup_special_cases() {
    let b = toy_batch();
    assert_eq!(mixup_with(&b, 1.0, &[3, 2, 1, 0]).unwrap(), b);
    let same = mixup_with(&b, 0.5, &[0, 1, 2, 3]).unwrap();
    assert_eq!(same, b);
    let mixed = mixup(&b, 0.2, &mut Rng::new(8)).unwrap();
    for r in mixed.targets.data().chunks(3) {
        assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
    assert_eq!(mixed, mixup(&b, 0.2, &mut Rng::new(8)).unwrap());
    assert!(mixup(&b, 0.0, &mut Rng::new(8)).is_err());
}
