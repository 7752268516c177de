use proptest::prelude::*;
use stnet::data::{
    decode_frames, encode_frames, generate_synthetic_dataset, prepare_clip, read_frame_container, resize_bilinear,
    sample_frame_indices, split_dataset, write_dataset, write_frame_container, Dataset, DatasetManifest,
    FrameSequence, ManifestEntry, SplitSpec, SyntheticConfig,
};
use stnet::models::InputShape;
use stnet::tensor::Tensor;
use stnet::Error;

fn mean_interframe_difference(seq: &FrameSequence) -> f64 {
    let [t, h, w, c] = seq.dims();
    let step = h * w * c;
    let mut total = 0.0;
    for i in 1..t {
        for k in 0..step {
            total += (seq.frames[i * step + k] as f64 - seq.frames[(i - 1) * step + k] as f64).abs();
        }
    }
    total / ((t - 1) * step) as f64
}

/// Best accuracy of any single threshold on the statistic, either direction.
fn best_threshold_accuracy(stats: &[(f64, usize)]) -> f64 {
    let mut best = 0usize;
    for &(cut, _) in stats {
        for above_is_violent in [true, false] {
            let correct = stats
                .iter()
                .filter(|&&(s, label)| ((s >= cut) == above_is_violent) == (label == 1))
                .count();
            best = best.max(correct);
        }
    }
    best as f64 / stats.len() as f64
}

#[test]
fn synthetic_classes_separate_on_frame_difference() {
    let cfg = SyntheticConfig { clips_per_class: 100, seed: 11, ..SyntheticConfig::default() };
    let (_, seqs) = generate_synthetic_dataset(&cfg).unwrap();
    assert_eq!(seqs.len(), 200);
    let stats: Vec<(f64, usize)> = seqs.iter().map(|s| (mean_interframe_difference(s), s.label)).collect();
    let acc = best_threshold_accuracy(&stats);
    println!("threshold separability on 200 clips: {acc:.3}");
    assert!(acc >= 0.95, "{acc}");
}

#[test]
fn synthetic_same_seed_is_bit_identical() {
    let cfg = SyntheticConfig { clips_per_class: 5, seed: 4, ..SyntheticConfig::default() };
    let a = generate_synthetic_dataset(&cfg).unwrap();
    let b = generate_synthetic_dataset(&cfg).unwrap();
    assert_eq!(a, b);
    let c = generate_synthetic_dataset(&SyntheticConfig { seed: 5, ..cfg }).unwrap();
    assert_ne!(a.1[0].frames, c.1[0].frames);
}

#[test]
fn container_round_trip_of_a_full_size_clip() {
    let dir = tempfile::tempdir().unwrap();
    let mut state = 0x9e37_79b9_u32;
    let frames: Vec<u8> = (0..25 * 90 * 90 * 3)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 17;
            state ^= state << 5;
            state as u8
        })
        .collect();
    let seq = FrameSequence::new(frames, [25, 90, 90, 3], 1, "fight-001".into(), 30.0).unwrap();
    let path = dir.path().join("clip.stnetfrm");
    write_frame_container(&seq, &path).unwrap();
    let back = read_frame_container(&path).unwrap();
    assert_eq!(back, seq);
    assert_eq!(std::fs::read(&path).unwrap(), encode_frames(&seq));
}

#[test]
fn short_file_is_integrity_error() {
    let seq = FrameSequence::new(vec![7; 25 * 4 * 4 * 3], [25, 4, 4, 3], 0, "x".into(), 30.0).unwrap();
    let bytes = encode_frames(&seq);
    let err = decode_frames(&bytes[..bytes.len() - 4 * 4 * 3]).unwrap_err();
    assert!(matches!(err, Error::Integrity(_)), "{err}");
}

#[test]
fn dataset_written_to_disk_loads_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SyntheticConfig { clips_per_class: 3, frames: 6, height: 12, width: 12, blob_radius: 2.0, ..SyntheticConfig::default() };
    let (manifest, seqs) = generate_synthetic_dataset(&cfg).unwrap();
    write_dataset(dir.path(), &manifest, &seqs).unwrap();
    let read = DatasetManifest::read(dir.path().join("manifest.jsonl")).unwrap();
    assert_eq!(read, manifest);
    let input = InputShape { frames: 4, height: 8, width: 8, channels: 3 };
    let from_disk = Dataset::load(dir.path(), &read, &input).unwrap();
    let in_memory = Dataset::from_sequences(&seqs, &input).unwrap();
    assert_eq!(from_disk, in_memory);
}

#[test]
fn preprocessing_is_bit_identical_when_repeated() {
    let cfg = SyntheticConfig { clips_per_class: 2, frames: 40, height: 30, width: 20, ..SyntheticConfig::default() };
    let (_, seqs) = generate_synthetic_dataset(&cfg).unwrap();
    let input = InputShape::FULL;
    for s in &seqs {
        let a = prepare_clip(s, &input).unwrap();
        let b = prepare_clip(s, &input).unwrap();
        assert_eq!(a.dims(), &[25, 90, 90, 3]);
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert!(a.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}

fn manifest(nv: usize, v: usize) -> DatasetManifest {
    let entries = (0..nv + v)
        .map(|i| ManifestEntry {
            clip_id: format!("c{i}"),
            path: format!("clips/c{i}.stnetfrm"),
            label: usize::from(i >= nv),
            frames: 25,
            height: 90,
            width: 90,
        })
        .collect();
    DatasetManifest::new(entries).unwrap()
}

#[test]
fn split_of_350_clips_is_280_35_35() {
    let s = split_dataset(&manifest(120, 230), &SplitSpec::new(42)).unwrap();
    assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (280, 35, 35));
}

#[test]
fn constant_frame_resizes_to_constant() {
    let f = Tensor::full(vec![7, 13, 3], 99.0f32).unwrap();
    let r = resize_bilinear(&f, 90, 90).unwrap();
    assert!(r.data().iter().all(|&v| (v - 99.0).abs() < 1e-6));
}

#[test]
fn empty_manifest_cannot_be_split() {
    let err = split_dataset(&DatasetManifest::default(), &SplitSpec::new(0)).unwrap_err();
    assert!(matches!(err, Error::Data(_)), "{err}");
}

proptest! {
    #[test]
    fn sampled_indices_are_sorted_and_in_range(total in 1usize..400, n in 1usize..60) {
        let idx = sample_frame_indices(total, n).unwrap();
        prop_assert_eq!(idx.len(), n);
        prop_assert!(idx.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(idx.iter().all(|&i| i < total));
    }

    #[test]
    fn resize_stays_within_source_range(
        h in 1usize..12, w in 1usize..12, oh in 1usize..20, ow in 1usize..20, seed in any::<u64>()
    ) {
        let mut s = seed | 1;
        let data: Vec<f32> = (0..h * w * 3).map(|_| { s ^= s << 13; s ^= s >> 7; s ^= s << 17; (s % 256) as f32 }).collect();
        let (lo, hi) = data.iter().fold((f32::MAX, f32::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        let r = resize_bilinear(&Tensor::new(vec![h, w, 3], data).unwrap(), oh, ow).unwrap();
        prop_assert!(r.data().iter().all(|&v| v >= lo - 1e-6 && v <= hi + 1e-6));
    }

    #[test]
    fn normalize_is_monotone(a in 0u8..=255, b in 0u8..=255) {
        let t = Tensor::from_vec(vec![a as f32, b as f32]).unwrap();
        let n = stnet::data::normalize(&t);
        prop_assert_eq!(a <= b, n.data()[0] <= n.data()[1]);
        prop_assert!(n.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn split_is_a_stratified_partition(nv in 10usize..80, v in 10usize..80, seed in any::<u64>()) {
        let m = manifest(nv, v);
        let spec = SplitSpec::new(seed);
        let s = split_dataset(&m, &spec).unwrap();
        let mut all: Vec<String> = s.train.entries.iter().chain(&s.validation.entries).chain(&s.test.entries)
            .map(|e| e.clip_id.clone()).collect();
        prop_assert_eq!(all.len(), m.len());
        all.sort();
        all.dedup();
        prop_assert_eq!(all.len(), m.len());
        for (part, ratio) in [(&s.train, 0.8), (&s.validation, 0.1), (&s.test, 0.1)] {
            let c = part.counts();
            prop_assert!((c[0] as f64 - ratio * nv as f64).abs() <= 1.0 + 1e-9);
            prop_assert!((c[1] as f64 - ratio * v as f64).abs() <= 1.0 + 1e-9);
        }
        prop_assert_eq!(split_dataset(&m, &spec).unwrap(), s);
    }
}
