use ndarray::Array2;
use proptest::prelude::*;

use super::*;
use crate::corpus::{build_neighbor_index, CorpusManifest, ManifestEntry, RecordingMetadata};
use crate::dsp::FeatureExtractor;

fn ramp(n: usize) -> Vec<f32> {
    (0..n).map(|i| ((i as f32) * 0.37).sin() * 0.4).collect()
}

fn pinned() -> AugmentConfig {
    AugmentConfig::disabled()
}

#[test]
fn disabled_noise_is_identity() {
    let mut rng = RandomSource::new(1);
    let input = ramp(500);
    let noise = ramp(700);
    let mut seg = input.clone();
    let cfg = AugmentConfig {
        noise_overlay_prob: 0.0,
        ..AugmentConfig::default()
    };
    let report = overlay_noise(&mut seg, &[&noise], &cfg, &mut rng);
    assert!(report.factors.is_empty());
    assert_eq!(seg, input);
}

#[test]
fn empty_pools_are_flagged_no_ops() {
    let mut rng = RandomSource::new(2);
    let input = ramp(100);
    let mut seg = input.clone();
    let cfg = AugmentConfig::default();
    assert!(overlay_noise(&mut seg, &[], &cfg, &mut rng).pool_empty);
    assert_eq!(combine_same_class(&mut seg, &[], &cfg, &mut rng), None);
    assert_eq!(overlay_neighbor_species(&mut seg, &[], &cfg, &mut rng), None);
    assert_eq!(seg, input);
}

#[test]
fn linear_superposition() {
    let input = ramp(256);
    let expect = |k: f32| -> Vec<f32> { input.iter().map(|v| (v * k).clamp(-1.0, 1.0)).collect() };

    let mut seg = input.clone();
    let cfg = AugmentConfig {
        noise_overlays_max: 1,
        noise_overlay_prob: 1.0,
        ..pinned()
    };
    overlay_noise(&mut seg, &[&input], &cfg, &mut RandomSource::new(3));
    assert_eq!(seg, expect(2.0));

    let mut seg = input.clone();
    let cfg = AugmentConfig {
        same_class_prob: 1.0,
        same_class_damp_range: [0.5, 0.5],
        ..pinned()
    };
    assert_eq!(combine_same_class(&mut seg, &[&input], &cfg, &mut RandomSource::new(4)), Some(0.5));
    assert_eq!(seg, expect(1.5));

    let mut seg = input.clone();
    let cfg = AugmentConfig {
        neighbor_prob: 1.0,
        neighbor_damp_center: 0.3,
        ..pinned()
    };
    assert_eq!(overlay_neighbor_species(&mut seg, &[&input], &cfg, &mut RandomSource::new(5)), Some(0.3));
    for (a, b) in seg.iter().zip(&input) {
        assert!((a - 1.3 * b).abs() < 1e-6);
    }
}

#[test]
fn overlay_count_statistics() {
    let mut rng = RandomSource::new(6);
    let noise = ramp(64);
    let cfg = AugmentConfig::default();
    let trials = 10_000;
    let mut total = 0;
    for _ in 0..trials {
        let mut seg = vec![0.0f32; 16];
        let r = overlay_noise(&mut seg, &[&noise], &cfg, &mut rng);
        assert!(r.factors.iter().all(|f| (0.9..=1.1).contains(f)));
        assert!(seg.iter().all(|v| (-1.0..=1.0).contains(v)));
        total += r.factors.len();
    }
    let mean = total as f64 / trials as f64;
    assert!((mean - 3.0).abs() < 0.1, "mean overlays {mean}");
}

fn rate_and_factors(
    op: fn(&mut [f32], &[&[f32]], &AugmentConfig, &mut RandomSource) -> Option<f64>,
    seed: u64,
) -> (f64, Vec<f64>) {
    let mut rng = RandomSource::new(seed);
    let donor = ramp(64);
    let cfg = AugmentConfig::default();
    let mut factors = Vec::new();
    for _ in 0..10_000 {
        let mut seg = vec![0.0f32; 8];
        if let Some(f) = op(&mut seg, &[&donor], &cfg, &mut rng) {
            factors.push(f);
        }
    }
    (factors.len() as f64 / 10_000.0, factors)
}

fn assert_uniform(factors: &[f64], lo: f64, hi: f64) {
    let bins = 10;
    let mut counts = vec![0usize; bins];
    for &f in factors {
        assert!((lo..=hi).contains(&f));
        counts[(((f - lo) / (hi - lo) * bins as f64) as usize).min(bins - 1)] += 1;
    }
    // largest deviation of the empirical CDF at the bin edges
    let n = factors.len() as f64;
    let mut cum = 0.0;
    let mut worst: f64 = 0.0;
    for (i, c) in counts.iter().enumerate() {
        cum += *c as f64 / n;
        worst = worst.max((cum - (i + 1) as f64 / bins as f64).abs());
    }
    assert!(worst < 1.63 / n.sqrt(), "KS distance {worst}");
}

#[test]
fn same_class_statistics() {
    let (rate, factors) = rate_and_factors(combine_same_class, 7);
    assert!((rate - 0.70).abs() < 0.02, "rate {rate}");
    assert_uniform(&factors, 0.2, 0.6);
}

#[test]
fn neighbor_statistics() {
    let (rate, factors) = rate_and_factors(overlay_neighbor_species, 8);
    assert!((rate - 0.30).abs() < 0.02, "rate {rate}");
    assert_uniform(&factors, 0.25, 0.35);
}

#[test]
fn volume_factors() {
    let mut seg: Vec<f32> = (0..100).map(|i| 0.5 * (i as f32 * 0.3).sin()).collect();
    let peak = seg.iter().fold(0f32, |m, v| m.max(v.abs()));
    scale_volume(&mut seg, 1.05);
    let new_peak = seg.iter().fold(0f32, |m, v| m.max(v.abs()));
    assert!((new_peak / peak - 1.05).abs() < 1e-6);

    let before = ramp(50);
    let mut same = before.clone();
    assert_eq!(volume_shift(&mut same, &pinned(), &mut RandomSource::new(9)), 1.0);
    assert_eq!(same, before);

    let mut rng = RandomSource::new(10);
    let factors: Vec<f64> = (0..10_000)
        .map(|_| volume_shift(&mut [0.0f32; 1], &AugmentConfig::default(), &mut rng))
        .collect();
    assert_uniform(&factors, 0.95, 1.05);
}

fn random_matrix(rows: usize, cols: usize, rng: &mut RandomSource) -> Array2<f32> {
    Array2::from_shape_fn((rows, cols), |_| rng.unit() as f32)
}

#[test]
fn cut_rotations_compose() {
    let mut rng = RandomSource::new(11);
    let m = random_matrix(4, 9, &mut rng);
    assert_eq!(rotate_columns(&m, 0), m);
    for c in 1..9 {
        assert_eq!(rotate_columns(&rotate_columns(&m, c), 9 - c), m);
    }
    let one = random_matrix(3, 1, &mut rng);
    assert_eq!(random_cut(&one, &mut rng), (one.clone(), 0));
}

#[test]
fn pitch_identity_and_centroid() {
    let mut rng = RandomSource::new(12);
    let m = random_matrix(80, 7, &mut rng);
    let same = rescale_rows(&m, 1.0);
    for (a, b) in same.iter().zip(m.iter()) {
        assert!((a - b).abs() < 1e-9);
    }
    let (p, f) = pitch_shift(&m, &pinned(), &mut rng);
    assert_eq!((p, f), (m.clone(), 1.0));

    let r = 60;
    let mut single = Array2::zeros((80, 3));
    single.row_mut(r).fill(1.0);
    let shifted = rescale_rows(&single, 1.05);
    let col: Vec<f64> = shifted.column(0).iter().map(|&v| f64::from(v)).collect();
    let mass: f64 = col.iter().sum();
    let centroid = col.iter().enumerate().map(|(i, v)| i as f64 * v).sum::<f64>() / mass;
    assert!((centroid - r as f64 / 1.05).abs() < 0.5, "centroid {centroid}");
    assert_eq!(rescale_rows(&single, 0.95).dim(), (80, 3));
}

#[test]
fn looped_windows() {
    let src: Vec<f32> = (0..10).map(|i| i as f32).collect();
    let mut rng = RandomSource::new(13);
    let w = random_window(&src, 25, &mut rng);
    assert_eq!(w.len(), 25);
    for pair in w.windows(2) {
        assert_eq!(pair[1], (pair[0] + 1.0) % 10.0);
    }
    let w = random_window(&src, 4, &mut rng);
    assert!(w[0] <= 6.0 && w == (0..4).map(|i| w[0] + i as f32).collect::<Vec<_>>());
}

#[test]
fn config_validation() {
    assert!(AugmentConfig::default().validate().is_ok());
    assert!(AugmentConfig::disabled().validate().is_ok());
    let bad = AugmentConfig {
        neighbor_prob: 1.5,
        ..AugmentConfig::default()
    };
    assert!(bad.validate().is_err());
    let bad = AugmentConfig {
        same_class_damp_range: [0.6, 0.2],
        ..AugmentConfig::default()
    };
    assert!(bad.validate().is_err());
}

fn toy_corpus() -> (CorpusManifest, SegmentBank) {
    let mut entries = Vec::new();
    let mut recordings = Vec::new();
    for i in 0..6 {
        let mut md = RecordingMetadata::new(i % 3);
        if i != 5 {
            md.latitude = Some(10.0 + 0.2 * i as f64);
            md.longitude = Some(20.0);
        }
        entries.push(ManifestEntry {
            recording_id: format!("r{i}"),
            audio_path: format!("r{i}.wav").into(),
            metadata: md,
        });
        let tone: Vec<f32> = (0..20_000)
            .map(|t| 0.3 * ((t as f32) * 0.05 * (i + 1) as f32).sin())
            .collect();
        recordings.push(SeparatedRecording {
            sound: tone,
            noise: ramp(3_000 + 100 * i),
        });
    }
    (CorpusManifest::new(entries, 3).unwrap(), SegmentBank { recordings })
}

#[test]
fn pools_follow_species_and_neighbors() {
    let (manifest, bank) = toy_corpus();
    let index = build_neighbor_index(&manifest);
    let ctx = AugmentContext::new(&manifest, &bank, &index).unwrap();
    assert_eq!(ctx.same_class_pool(0).len(), 1);
    assert_eq!(ctx.neighbor_pool(0).len(), 4);
    assert!(ctx.neighbor_pool(5).is_empty());
    assert_eq!(ctx.noise_pool().len(), 6);
}

#[test]
fn pipeline_disabled_equals_plain_features() {
    let (manifest, bank) = toy_corpus();
    let index = build_neighbor_index(&manifest);
    let ctx = AugmentContext::new(&manifest, &bank, &index).unwrap();
    let extractor = FeatureExtractor::new(256, 22050).unwrap();
    let cfg = AugmentConfig::disabled();
    let (mel, report) = augment_pipeline(&ctx, 2, &extractor, 32768, &cfg, &mut RandomSource::new(14)).unwrap();
    assert_eq!(mel.dim(), (80, 512));
    let seg = select_segment(ctx.sound(2), 32768, &mut RandomSource::new(14)).unwrap();
    assert_eq!(mel, extractor.extract(&seg).unwrap());
    assert_eq!(report.volume_factor, 1.0);
    assert_eq!(report.noise_factors, Vec::<f64>::new());
}

#[test]
fn pipeline_is_seeded_and_shaped() {
    let (manifest, bank) = toy_corpus();
    let index = build_neighbor_index(&manifest);
    let ctx = AugmentContext::new(&manifest, &bank, &index).unwrap();
    let cfg = AugmentConfig::default();
    for (window, samples) in [(256, 32768), (512, 65536)] {
        let extractor = FeatureExtractor::new(window, 22050).unwrap();
        let a = augment_pipeline(&ctx, 0, &extractor, samples, &cfg, &mut RandomSource::new(15)).unwrap();
        let b = augment_pipeline(&ctx, 0, &extractor, samples, &cfg, &mut RandomSource::new(15)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.0.dim(), (80, 512));
        assert!(a.0.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

proptest! {
    #[test]
    fn waveform_stages_stay_in_range(seed in 0u64..1000, gain in 0.5f32..1.0) {
        let mut rng = RandomSource::new(seed);
        let donor: Vec<f32> = (0..300).map(|i| gain * ((i as f32) * 0.9).sin()).collect();
        let mut seg: Vec<f32> = (0..200).map(|i| gain * ((i as f32) * 0.2).cos()).collect();
        let cfg = AugmentConfig {
            noise_overlay_prob: 1.0,
            same_class_prob: 1.0,
            neighbor_prob: 1.0,
            ..AugmentConfig::default()
        };
        combine_same_class(&mut seg, &[&donor], &cfg, &mut rng);
        prop_assert!(seg.iter().all(|v| (-1.0..=1.0).contains(v)));
        overlay_neighbor_species(&mut seg, &[&donor], &cfg, &mut rng);
        prop_assert!(seg.iter().all(|v| (-1.0..=1.0).contains(v)));
        overlay_noise(&mut seg, &[&donor], &cfg, &mut rng);
        prop_assert!(seg.iter().all(|v| (-1.0..=1.0).contains(v)));
        volume_shift(&mut seg, &cfg, &mut rng);
        prop_assert!(seg.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn cut_preserves_columns(seed in 0u64..1000, cols in 1usize..20) {
        let mut rng = RandomSource::new(seed);
        let m = random_matrix(3, cols, &mut rng);
        let (out, c) = random_cut(&m, &mut rng);
        prop_assert_eq!(out.dim(), m.dim());
        prop_assert!(cols < 2 || (1..cols).contains(&c));
        let key = |a: &Array2<f32>| {
            let mut cs: Vec<Vec<u32>> = a.columns().into_iter().map(|c| c.iter().map(|v| v.to_bits()).collect()).collect();
            cs.sort();
            cs
        };
        prop_assert_eq!(key(&out), key(&m));
    }

    #[test]
    fn pitch_preserves_shape(seed in 0u64..1000, cols in 1usize..10) {
        let mut rng = RandomSource::new(seed);
        let m = random_matrix(80, cols, &mut rng);
        let (out, f) = pitch_shift(&m, &AugmentConfig::default(), &mut rng);
        prop_assert_eq!(out.dim(), (80, cols));
        prop_assert!((0.95..=1.05).contains(&f));
    }
}
