use std::fs;

use ndarray::Array3;
use proptest::prelude::*;

use sar2opt_core::cloud_filter::{curate, train_classifier, ClassifierTraining, CloudClassifierSpec, ConvBlock, Scorer};
use sar2opt_core::pix2pix_net::{build_generator, Generator, GeneratorSpec};
use sar2opt_core::preprocess::PreprocessConfig;
use sar2opt_core::synthetic::{write_dataset, SyntheticLayout};
use sar2opt_core::tile_store::{BitDepth, DType, Split, Tile};
use sar2opt_core::translator::{translate_batch, Translator, INDEX_FILE};

fn translator() -> Translator {
    let spec = GeneratorSpec {
        base_width: 4,
        depth: 3,
        dropout_levels: vec![0],
        ..GeneratorSpec::default()
    };
    Translator::McDropout {
        generator: Generator::from_params(spec.clone(), build_generator(&spec, 1).unwrap()).unwrap(),
        preprocess: PreprocessConfig::default(),
    }
}

#[test]
fn batch_translation_writes_every_candidate_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let layout = SyntheticLayout {
        pairs: 3,
        size: 16,
        cloudy: &[],
        test: &[0, 2],
    };
    let manifest = write_dataset(&dir.path().join("data"), 5, &layout).unwrap().manifest;
    let t = translator();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = translate_batch(&t, &manifest, Split::Test, 3, 9, BitDepth::U8, &out).unwrap();
        (o, out)
    };
    let (first, a) = run("a");
    let (second, b) = run("b");
    assert!(first.failures.is_empty());
    assert_eq!(first.index.len(), 2);
    assert_eq!(first.index.values().map(Vec::len).sum::<usize>(), 6);
    assert_eq!(first, second);
    for files in first.index.values() {
        for f in files {
            assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
        }
    }
    let index: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join(INDEX_FILE)).unwrap()).unwrap();
    assert_eq!(index["pair_00"][2], "pair_00_cand2.png");

    let empty = translate_batch(&t, &manifest, Split::Val, 3, 9, BitDepth::U8, &dir.path().join("c")).unwrap();
    assert!(empty.index.is_empty() && empty.failures.is_empty());
}

#[test]
fn missing_sar_tile_is_recorded_as_a_failure() {
    let dir = tempfile::tempdir().unwrap();
    let layout = SyntheticLayout {
        pairs: 2,
        size: 16,
        cloudy: &[],
        test: &[0, 1],
    };
    let manifest = write_dataset(dir.path(), 5, &layout).unwrap().manifest;
    fs::remove_file(manifest.resolve(&manifest.entries()[1].sar_path)).unwrap();
    let o = translate_batch(&translator(), &manifest, Split::Test, 2, 0, BitDepth::U8, &dir.path().join("out")).unwrap();
    assert_eq!(o.index.len(), 1);
    assert_eq!(o.failures.len(), 1);
    assert_eq!(o.failures[0].pair_id, "pair_01");
}

#[test]
fn classifier_learns_white_from_dark() {
    let spec = CloudClassifierSpec {
        conv_blocks: vec![
            ConvBlock {
                out_channels: 4,
                kernel: 3,
                stride: 1,
            },
            ConvBlock {
                out_channels: 8,
                kernel: 3,
                stride: 1,
            },
        ],
        hidden_units: 8,
        input_size: (16, 16),
        ..CloudClassifierSpec::default()
    };
    let tile = |v: f64, jitter: usize| {
        let px = Array3::from_shape_fn((3, 16, 16), |(c, y, x)| (v - ((c + y + x + jitter) % 7) as f64).clamp(0.0, 255.0));
        Tile::new(px, DType::U8, None).unwrap()
    };
    let samples: Vec<(Tile, bool)> = (0..4).flat_map(|i| [(tile(250.0, i), true), (tile(20.0, i), false)]).collect();
    let cfg = ClassifierTraining {
        steps: 200,
        learning_rate: 1e-2,
        ..ClassifierTraining::default()
    };
    let (model, losses) = train_classifier(&spec, &samples, &cfg).unwrap();
    assert!(losses.last().unwrap() < &losses[0]);
    for (t, cloudy) in &samples {
        let p = model.score(t).unwrap().value;
        if *cloudy {
            assert!(p > 0.9, "white tile scored {p}");
        } else {
            assert!(p < 0.1, "dark tile scored {p}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn raising_the_threshold_never_drops_entries(seed in 0u64..1000, lo in 0.0f64..1.0, delta in 0.0f64..0.5) {
        let dir = tempfile::tempdir().unwrap();
        let layout = SyntheticLayout { pairs: 5, size: 16, cloudy: &[1, 3], test: &[] };
        let manifest = write_dataset(dir.path(), seed, &layout).unwrap().manifest;
        let hi = (lo + delta).min(1.0);
        let ids = |t: f64| -> Vec<String> {
            curate(&manifest, t, &Scorer::Heuristic).unwrap().manifest.entries().iter().map(|e| e.pair_id.clone()).collect()
        };
        let (kept_lo, kept_hi) = (ids(lo), ids(hi));
        prop_assert!(kept_lo.iter().all(|id| kept_hi.contains(id)));
        let outcome = curate(&manifest, hi, &Scorer::Heuristic).unwrap();
        prop_assert_eq!(outcome.manifest.len() + outcome.filtered.len() + outcome.rejects.len(), 5);
        prop_assert!(outcome.manifest.entries().iter().all(|e| e.cloud_score.is_some_and(|s| s <= hi)));
    }
}
