//! Generator contracts: every pixel recomputable from the returned structure
//! lists, exact masks, connectivity, sparsity bands, noise scale, folds.

use std::collections::VecDeque;

use segbench::datagen::{
    add_noise_snr, airy_sample, airy_sample_with, cells_sample, generate, generate_noisy, load_pgm,
    make_folds, random_crops, save_pgm, stack_batch, vessels_sample, AiryParams, DataKind, Sample,
    AIRY_BACKGROUND, CELLS_BACKGROUND, VESSELS_BACKGROUND,
};
use segbench::error::Error;
use segbench::rng::stream;
use segbench::tensor::Tensor;

fn mask_fraction(s: &Sample) -> f64 {
    s.mask.data.iter().sum::<f64>() / s.mask.data.len() as f64
}

#[test]
fn airy_pixels_match_the_returned_spots() {
    let (s, spots) = airy_sample(32, 40, &mut stream(7, &[])).unwrap();
    assert_eq!(s.image.shape, vec![1, 32, 40]);
    for iy in 0..32 {
        for ix in 0..40 {
            let (y, x) = (iy as f64, ix as f64);
            let expect: f64 =
                AIRY_BACKGROUND + spots.iter().map(|sp| sp.intensity(y, x)).sum::<f64>();
            let expect = expect.clamp(0.0, 1.0);
            let got = s.image.data[iy * 40 + ix];
            assert!(
                (got - expect).abs() < 1e-12,
                "({iy},{ix}): {got} vs {expect}"
            );
            let inside = spots.iter().any(|sp| sp.covers(y, x));
            assert_eq!(
                s.mask.data[iy * 40 + ix],
                f64::from(inside as u8),
                "mask ({iy},{ix})"
            );
        }
    }
    let peak = spots.iter().map(|sp| sp.amp).fold(0.0f64, f64::max);
    assert_eq!(s.amplitude, peak);
}

#[test]
fn cells_distractors_never_touch_the_mask() {
    for seed in 0..10u64 {
        let (s, blobs) = cells_sample(40, 40, &mut stream(seed, &[])).unwrap();
        let distractors: Vec<_> = blobs.iter().filter(|b| !b.labeled).collect();
        for iy in 0..40 {
            for ix in 0..40 {
                let (y, x) = (iy as f64, ix as f64);
                let in_mask = s.mask.data[iy * 40 + ix] == 1.0;
                let expect = blobs.iter().any(|b| b.labeled && b.covers(y, x));
                assert_eq!(in_mask, expect, "mask oracle at ({iy},{ix}) seed {seed}");
                if distractors.iter().any(|b| b.covers(y, x)) {
                    assert!(
                        !in_mask,
                        "distractor pixel ({iy},{ix}) is labeled, seed {seed}"
                    );
                }
            }
        }
    }
}

#[test]
fn cells_pixels_match_the_returned_blobs() {
    let (s, blobs) = cells_sample(36, 32, &mut stream(3, &[])).unwrap();
    for iy in 0..36 {
        for ix in 0..32 {
            let (y, x) = (iy as f64, ix as f64);
            let expect = (CELLS_BACKGROUND + blobs.iter().map(|b| b.intensity(y, x)).sum::<f64>())
                .clamp(0.0, 1.0);
            let got = s.image.data[iy * 32 + ix];
            assert!(
                (got - expect).abs() < 1e-12,
                "({iy},{ix}): {got} vs {expect}"
            );
        }
    }
}

#[test]
fn vessel_pixels_match_the_returned_path() {
    let (s, points) = vessels_sample(32, 32, &mut stream(5, &[])).unwrap();
    assert!(!points.is_empty());
    for iy in 0..32 {
        for ix in 0..32 {
            let (y, x) = (iy as f64, ix as f64);
            let shade = points.iter().map(|p| p.shade(y, x)).fold(0.0f64, f64::max);
            let expect = if shade > 0.0 {
                (VESSELS_BACKGROUND + s.amplitude * shade).clamp(0.0, 1.0)
            } else {
                VESSELS_BACKGROUND
            };
            let got = s.image.data[iy * 32 + ix];
            assert!(
                (got - expect).abs() < 1e-12,
                "({iy},{ix}): {got} vs {expect}"
            );
            let covered = points.iter().any(|p| p.covers(y, x));
            assert_eq!(
                s.mask.data[iy * 32 + ix],
                f64::from(covered as u8),
                "mask ({iy},{ix})"
            );
        }
    }
}

#[test]
fn vessel_masks_are_one_4connected_component() {
    for seed in 0..25u64 {
        let (s, _) = vessels_sample(40, 40, &mut stream(seed, &[11])).unwrap();
        let w = 40usize;
        let positives: Vec<usize> = (0..s.mask.data.len())
            .filter(|i| s.mask.data[*i] == 1.0)
            .collect();
        assert!(!positives.is_empty(), "seed {seed}: empty vessel mask");
        let mut seen = vec![false; s.mask.data.len()];
        let mut queue = VecDeque::from([positives[0]]);
        seen[positives[0]] = true;
        let mut reached = 0;
        while let Some(i) = queue.pop_front() {
            reached += 1;
            let (y, x) = (i / w, i % w);
            let mut push = |j: usize| {
                if s.mask.data[j] == 1.0 && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            };
            if y > 0 {
                push(i - w);
            }
            if y + 1 < 40 {
                push(i + w);
            }
            if x > 0 {
                push(i - 1);
            }
            if x + 1 < w {
                push(i + 1);
            }
        }
        assert_eq!(
            reached,
            positives.len(),
            "seed {seed}: {} of {} vessel pixels reachable",
            reached,
            positives.len()
        );
    }
}

#[test]
fn mask_sparsity_stays_in_band() {
    let bands = [
        (DataKind::Airy, 0.005, 0.25),
        (DataKind::Cells, 0.01, 0.40),
        (DataKind::Vessels, 0.003, 0.25),
    ];
    for (kind, lo, hi) in bands {
        for (i, s) in generate(kind, 20, 48, 48, 1234).unwrap().iter().enumerate() {
            let f = mask_fraction(s);
            assert!(
                (lo..=hi).contains(&f),
                "{} image {i}: mask fraction {f} outside [{lo},{hi}]",
                kind.name()
            );
        }
    }
}

#[test]
fn sparse_airy_configuration_is_heavily_imbalanced() {
    let params = AiryParams {
        spots: 1..=1,
        radius: (1.2, 1.6),
        amp: (0.5, 0.9),
    };
    for seed in 0..8u64 {
        let (s, _) = airy_sample_with(&params, 64, 64, &mut stream(seed, &[2])).unwrap();
        assert!(
            mask_fraction(&s) < 0.01,
            "seed {seed}: {}",
            mask_fraction(&s)
        );
        assert!(mask_fraction(&s) > 0.0, "seed {seed}: empty mask");
    }
}

#[test]
fn images_stay_in_unit_range_and_masks_are_binary() {
    for kind in DataKind::ALL {
        for s in generate(kind, 6, 32, 32, 99).unwrap() {
            assert!(
                s.image.data.iter().all(|v| (0.0..=1.0).contains(v)),
                "{}",
                kind.name()
            );
            assert!(
                s.mask.data.iter().all(|v| *v == 0.0 || *v == 1.0),
                "{}",
                kind.name()
            );
            assert!(s.amplitude > 0.0);
        }
    }
}

#[test]
fn generation_is_deterministic_and_prefix_stable() {
    for kind in DataKind::ALL {
        let a = generate(kind, 5, 32, 32, 42).unwrap();
        let b = generate(kind, 5, 32, 32, 42).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.image.data, y.image.data);
            assert_eq!(x.mask.data, y.mask.data);
        }
        // The first samples do not depend on how many are requested.
        let longer = generate(kind, 8, 32, 32, 42).unwrap();
        assert_eq!(a[0].image.data, longer[0].image.data);
        let other = generate(kind, 5, 32, 32, 43).unwrap();
        assert_ne!(a[0].image.data, other[0].image.data, "{}", kind.name());
    }
}

#[test]
fn rejects_tiny_images() {
    assert!(matches!(
        generate(DataKind::Airy, 1, 8, 32, 0),
        Err(Error::Config(_))
    ));
}

#[test]
fn noise_sigma_tracks_the_requested_snr() {
    // Flat mid-gray image: no clamping interference at snr = 10.
    let clean = Sample {
        image: Tensor::full(&[1, 128, 128], 0.5),
        mask: Tensor::zeros(&[1, 128, 128]),
        amplitude: 1.0,
    };
    let noisy = add_noise_snr(&clean, 10.0, &mut stream(8, &[])).unwrap();
    let diffs: Vec<f64> = noisy
        .image
        .data
        .iter()
        .zip(&clean.image.data)
        .map(|(a, b)| a - b)
        .collect();
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / diffs.len() as f64;
    let sigma = var.sqrt();
    assert!(
        (sigma - 0.1).abs() < 0.002,
        "measured sigma {sigma}, expected 0.1 within 2%"
    );
    assert_eq!(noisy.mask.data, clean.mask.data);
}

#[test]
fn noise_respects_unit_range_and_rejects_bad_snr() {
    let (s, _) = airy_sample(32, 32, &mut stream(4, &[])).unwrap();
    let noisy = add_noise_snr(&s, 1.0, &mut stream(4, &[1])).unwrap();
    assert!(noisy.image.data.iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(matches!(
        add_noise_snr(&s, 0.0, &mut stream(4, &[2])),
        Err(Error::Config(_))
    ));
    assert!(matches!(
        add_noise_snr(&s, f64::INFINITY, &mut stream(4, &[3])),
        Err(Error::Config(_))
    ));
}

#[test]
fn noisy_generation_shares_clean_structure_across_snr() {
    let clean = generate(DataKind::Airy, 3, 32, 32, 77).unwrap();
    let a = generate_noisy(DataKind::Airy, 3, 32, 32, 4.0, 77).unwrap();
    let b = generate_noisy(DataKind::Airy, 3, 32, 32, 20.0, 77).unwrap();
    for i in 0..3 {
        assert_eq!(a[i].mask.data, clean[i].mask.data);
        assert_eq!(b[i].mask.data, clean[i].mask.data);
        assert_ne!(a[i].image.data, b[i].image.data);
    }
}

#[test]
fn folds_partition_with_rotating_roles() {
    for n in [5, 7, 11, 23, 50] {
        let folds = make_folds(n, 5, 321).unwrap();
        assert_eq!(folds.len(), 5);
        let sizes: Vec<usize> = folds.iter().map(|f| f.test.len()).collect();
        assert_eq!(sizes.iter().sum::<usize>(), n);
        for s in &sizes {
            assert!(
                (n / 5..=n / 5 + 1).contains(s),
                "n={n}: test sizes {sizes:?}"
            );
        }
        for (fi, fold) in folds.iter().enumerate() {
            let mut all: Vec<usize> = fold
                .train
                .iter()
                .chain(&fold.val)
                .chain(&fold.test)
                .copied()
                .collect();
            all.sort();
            assert_eq!(
                all,
                (0..n).collect::<Vec<_>>(),
                "n={n} fold {fi} is not a partition"
            );
            assert_eq!(fold.val, folds[(fi + 1) % 5].test, "validation rotates");
        }
        // Test parts are pairwise disjoint by the partition check above plus
        // equal total size; determinism:
        assert_eq!(folds, make_folds(n, 5, 321).unwrap());
        assert_ne!(folds, make_folds(n, 5, 322).unwrap());
    }
}

#[test]
fn folds_reject_degenerate_requests() {
    assert!(matches!(make_folds(10, 2, 0), Err(Error::Config(_))));
    assert!(matches!(make_folds(3, 5, 0), Err(Error::Config(_))));
}

#[test]
fn fold_remainder_goes_to_earliest_parts() {
    let folds = make_folds(7, 5, 0).unwrap();
    let sizes: Vec<usize> = folds.iter().map(|f| f.test.len()).collect();
    assert_eq!(sizes, vec![2, 2, 1, 1, 1]);
}

#[test]
fn crops_slice_the_source_images() {
    let samples = generate(DataKind::Cells, 2, 40, 40, 5).unwrap();
    let mut rng = stream(5, &[3]);
    let crops = random_crops(&samples, 16, 3, &mut rng).unwrap();
    assert_eq!(crops.len(), 6);
    for (img, msk) in &crops {
        assert_eq!(img.shape, vec![1, 16, 16]);
        assert_eq!(msk.shape, vec![1, 16, 16]);
        // Every crop row must appear verbatim in the source image.
        let row = &img.data[0..16];
        let found = samples
            .iter()
            .any(|s| s.image.data.windows(16).any(|win| win == row));
        assert!(found, "crop content not found in any source image");
    }
    // Full-size crop reproduces the image exactly.
    let full = random_crops(&samples, 40, 1, &mut stream(5, &[4])).unwrap();
    assert_eq!(full[0].0.data, samples[0].image.data);
    assert!(matches!(
        random_crops(&samples, 41, 1, &mut stream(5, &[5])),
        Err(Error::Shape(_))
    ));
}

#[test]
fn stack_batch_concatenates_in_order() {
    let samples = generate(DataKind::Airy, 3, 32, 32, 6).unwrap();
    let pairs: Vec<(Tensor, Tensor)> = samples
        .iter()
        .map(|s| (s.image.clone(), s.mask.clone()))
        .collect();
    let (images, masks) = stack_batch(&pairs).unwrap();
    assert_eq!(images.shape, vec![3, 1, 32, 32]);
    assert_eq!(&images.data[1024..2048], &samples[1].image.data[..]);
    assert_eq!(&masks.data[2048..3072], &samples[2].mask.data[..]);
    assert!(matches!(stack_batch(&[]), Err(Error::Shape(_))));
}

#[test]
fn pgm_round_trip_preserves_quantized_values() {
    let dir = tempfile::tempdir().unwrap();
    let (s, _) = airy_sample(24, 32, &mut stream(9, &[])).unwrap();
    let path = dir.path().join("img.pgm");
    save_pgm(&path, &s.image).unwrap();
    let loaded = load_pgm(&path).unwrap();
    assert_eq!(loaded.shape, vec![1, 24, 32]);
    for (a, b) in loaded.data.iter().zip(&s.image.data) {
        let quantized = (b.clamp(0.0, 1.0) * 255.0).round() / 255.0;
        assert!((a - quantized).abs() < 1e-12);
    }
    // A second save/load cycle is lossless.
    let again = dir.path().join("img2.pgm");
    save_pgm(&again, &loaded).unwrap();
    assert_eq!(load_pgm(&again).unwrap().data, loaded.data);
}

#[test]
fn pgm_parser_handles_comments_and_reports_errors_by_file() {
    let dir = tempfile::tempdir().unwrap();
    let commented = dir.path().join("commented.pgm");
    std::fs::write(
        &commented,
        b"P5\n# a comment\n2 2\n# another\n255\n\x00\x40\x80\xff",
    )
    .unwrap();
    let t = load_pgm(&commented).unwrap();
    assert_eq!(t.shape, vec![1, 2, 2]);
    assert!((t.data[3] - 1.0).abs() < 1e-12);

    let bad_magic = dir.path().join("bad_magic.pgm");
    std::fs::write(&bad_magic, b"P2\n2 2\n255\n").unwrap();
    match load_pgm(&bad_magic) {
        Err(Error::Format(msg)) => assert!(msg.contains("bad_magic.pgm"), "{msg}"),
        other => panic!("expected format error, got {other:?}"),
    }

    let truncated = dir.path().join("short.pgm");
    std::fs::write(&truncated, b"P5\n4 4\n255\n\x01\x02").unwrap();
    match load_pgm(&truncated) {
        Err(Error::Format(msg)) => {
            assert!(msg.contains("short.pgm") && msg.contains("16"), "{msg}")
        }
        other => panic!("expected format error, got {other:?}"),
    }

    let wide = dir.path().join("wide.pgm");
    std::fs::write(&wide, b"P5\n2 2\n65535\n\x01\x02\x03\x04").unwrap();
    assert!(matches!(load_pgm(&wide), Err(Error::Format(_))));

    assert!(matches!(
        load_pgm(&dir.path().join("missing.pgm")),
        Err(Error::Io(_))
    ));
}
