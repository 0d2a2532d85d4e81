mod support;

use driftscope_core::density::{train_density, DensityConfig, PixelCnn, TrainConfig};
use driftscope_core::rng::{seeded, Rng, RngExt};
use driftscope_core::synth::{generate_set, BlobConfig};
use driftscope_core::ImagePatch;
use support::{binary_probability_mass, binary_training_set, probe_causality};

fn tiny(levels: u16, channels: usize) -> DensityConfig {
    DensityConfig { levels, channels, hidden: 12, blocks: 2, input_kernel: 5, block_kernel: 3 }
}

fn random_patch(h: usize, w: usize, c: usize, levels: u16, rng: &mut Rng) -> ImagePatch {
    let data = (0..h * w * c).map(|_| rng.gen_range(0..levels) as u8).collect();
    ImagePatch::new(h, w, c, levels, data).unwrap()
}

fn assert_causal(model: &PixelCnn, seed: u64) {
    let probe = probe_causality(model, 8, 8, 50, seed);
    assert!(probe.violations.is_empty(), "(earlier, perturbed) pairs that changed: {:?}", probe.violations);
    assert!(probe.later_changed > 0, "perturbations never reached later conditionals");
}

#[test]
fn earlier_conditionals_ignore_later_pixels() {
    assert_causal(&PixelCnn::new(tiny(16, 1), 1).unwrap(), 2);
}

#[test]
fn earlier_conditionals_ignore_later_subpixels_multichannel() {
    assert_causal(&PixelCnn::new(tiny(8, 3), 3).unwrap(), 4);
}

#[test]
fn trained_binary_model_normalizes_over_all_patches() {
    let cfg = DensityConfig { levels: 2, channels: 1, hidden: 8, blocks: 1, input_kernel: 3, block_kernel: 3 };
    let mut model = PixelCnn::new(cfg, 5).unwrap();
    let tc = TrainConfig { epochs: 5, batch_size: 32, lr: 5e-3, seed: 7 };
    train_density(&mut model, &binary_training_set(256, 6), &[], &tc).unwrap();
    let total = binary_probability_mass(&model);
    assert!((total - 1.0).abs() <= 1e-6, "sum of probabilities {total}");
}

#[test]
fn constant_patches_are_learned_to_near_zero_bits() {
    let cfg = DensityConfig { levels: 256, channels: 1, hidden: 8, blocks: 1, input_kernel: 3, block_kernel: 3 };
    let mut model = PixelCnn::new(cfg, 8).unwrap();
    let patches = vec![ImagePatch::gray(8, 8, 256, vec![100; 64]).unwrap(); 32];
    let tc = TrainConfig { epochs: 60, batch_size: 8, lr: 2e-2, seed: 9 };
    let curve = train_density(&mut model, &patches, &patches[..1], &tc).unwrap();
    let bpd = *curve.valid_bpd.last().unwrap();
    assert!(bpd <= 0.05, "constant patch scores {bpd} bits/dim");
}

fn two_cluster(count: usize, rng: &mut Rng) -> Vec<ImagePatch> {
    (0..count)
        .map(|_| {
            let bright = rng.gen_bool(0.5);
            let data = (0..16)
                .map(|_| {
                    let u: f64 = rng.gen_range(0.0..1.0);
                    let v = if u < 0.7 { 0 } else if u < 0.9 { 1 } else { 2 };
                    if bright {
                        7 - v
                    } else {
                        v
                    }
                })
                .collect();
            ImagePatch::gray(4, 4, 8, data).unwrap()
        })
        .collect()
}

/// Bits/dim of an independent per-position histogram fit on `train`.
fn histogram_baseline(train: &[ImagePatch], eval: &[ImagePatch], levels: usize) -> f64 {
    let dims = train[0].data().len();
    let mut counts = vec![vec![1.0; levels]; dims];
    for p in train {
        for (pos, &v) in p.data().iter().enumerate() {
            counts[pos][v as usize] += 1.0;
        }
    }
    let mut bits = 0.0;
    for p in eval {
        for (pos, &v) in p.data().iter().enumerate() {
            let total: f64 = counts[pos].iter().sum();
            bits -= (counts[pos][v as usize] / total).log2();
        }
    }
    bits / (eval.len() * dims) as f64
}

#[test]
fn two_cluster_data_matches_or_beats_histogram_baseline() {
    let mut rng = seeded(10);
    let train = two_cluster(1024, &mut rng);
    let valid = two_cluster(256, &mut rng);
    let cfg = DensityConfig { levels: 8, channels: 1, hidden: 16, blocks: 2, input_kernel: 3, block_kernel: 3 };
    let mut model = PixelCnn::new(cfg, 11).unwrap();
    let tc = TrainConfig { epochs: 10, batch_size: 32, lr: 5e-3, seed: 12 };
    let curve = train_density(&mut model, &train, &valid, &tc).unwrap();
    let model_bpd = *curve.valid_bpd.last().unwrap();
    let baseline = histogram_baseline(&train, &valid, 8);
    assert!(model_bpd <= baseline + 0.1, "model {model_bpd} bits/dim vs histogram {baseline}");
}

#[test]
fn validation_nll_decreases_on_synthetic_tiles() {
    let blobs = BlobConfig::default();
    let tiles = |count, seed| -> Vec<ImagePatch> {
        generate_set(&blobs, count, seed).unwrap().iter().flat_map(|(img, _)| img.tiles(8).unwrap()).collect()
    };
    let (train, valid) = (tiles(40, 20), tiles(10, 21));
    let cfg = DensityConfig { hidden: 16, blocks: 2, ..DensityConfig::default() };
    let mut model = PixelCnn::new(cfg, 22).unwrap();
    let tc = TrainConfig { epochs: 8, batch_size: 32, lr: 2e-3, seed: 23 };
    let curve = train_density(&mut model, &train, &valid, &tc).unwrap();
    let smooth: Vec<f64> = curve.valid_bpd.windows(3).map(|w| w.iter().sum::<f64>() / 3.0).collect();
    for pair in smooth.windows(2) {
        assert!(pair[1] < pair[0], "smoothed validation NLL rose: {smooth:?}");
    }
}

#[test]
fn same_seed_gives_identical_training() {
    let mut rng = seeded(13);
    let train = two_cluster(64, &mut rng);
    let run = || {
        let cfg = DensityConfig { levels: 8, ..tiny(8, 1) };
        let mut model = PixelCnn::new(cfg, 14).unwrap();
        let curve =
            train_density(&mut model, &train, &train[..8], &TrainConfig { epochs: 2, batch_size: 16, lr: 1e-3, seed: 15 })
                .unwrap();
        (model, curve)
    };
    let (m1, c1) = run();
    let (m2, c2) = run();
    assert_eq!(c1, c2);
    assert_eq!(m1, m2);
}

#[test]
fn likelihood_does_not_depend_on_batch_composition() {
    let model = PixelCnn::new(tiny(16, 1), 16).unwrap();
    let mut rng = seeded(17);
    let patches: Vec<ImagePatch> = (0..70).map(|_| random_patch(8, 8, 1, 16, &mut rng)).collect();
    let batched = model.log_likelihoods(&patches).unwrap();
    for (i, p) in patches.iter().enumerate().step_by(7) {
        let single = model.log_likelihood(p).unwrap();
        assert_eq!(single.log_likelihood.to_bits(), batched[i].log_likelihood.to_bits());
    }
}
