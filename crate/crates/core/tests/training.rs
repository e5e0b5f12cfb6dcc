use std::path::Path;

use sar2opt_core::pix2pix_net::{DiscriminatorSpec, GeneratorSpec, ModelSpec};
use sar2opt_core::preprocess::PreprocessConfig;
use sar2opt_core::synthetic::{write_dataset, SyntheticLayout};
use sar2opt_core::tile_store::Manifest;
use sar2opt_core::trainer::{checkpoint_dir, final_dir, fit, load_checkpoint, TrainSpec};
use sar2opt_core::Error;

fn small_model() -> ModelSpec {
    ModelSpec {
        generator: GeneratorSpec {
            base_width: 4,
            depth: 3,
            dropout_levels: vec![0],
            ..GeneratorSpec::default()
        },
        discriminator: DiscriminatorSpec {
            widths: vec![4, 8],
            ..DiscriminatorSpec::default()
        },
    }
}

fn dataset(root: &Path, test: &[usize]) -> Manifest {
    let layout = SyntheticLayout {
        pairs: 4,
        size: 16,
        cloudy: &[],
        test,
    };
    write_dataset(root, 3, &layout).unwrap().manifest
}

fn spec(epochs: usize) -> TrainSpec {
    TrainSpec {
        epochs,
        seed: 21,
        checkpoint_every: 2,
        ..TrainSpec::default()
    }
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(&dir.path().join("data"), &[]);
    let prep = PreprocessConfig::default();
    let quiet = &mut |_: &_| {};

    let straight = fit(&manifest, &small_model(), &prep, &spec(4), &dir.path().join("a"), None, quiet).unwrap();

    let b = dir.path().join("b");
    fit(&manifest, &small_model(), &prep, &spec(2), &b, None, quiet).unwrap();
    let resumed = fit(&manifest, &small_model(), &prep, &spec(4), &b, Some(&checkpoint_dir(&b, 2)), quiet).unwrap();

    assert_eq!(resumed.loss_history, straight.loss_history);
    assert_eq!(resumed.generator, straight.generator);
    assert_eq!(resumed.discriminator, straight.discriminator);
    assert_eq!(resumed.gen_opt, straight.gen_opt);
}

#[test]
fn fit_writes_periodic_and_final_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(&dir.path().join("data"), &[3]);
    let out = dir.path().join("ck");
    let mut seen = Vec::new();
    let state = fit(
        &manifest,
        &small_model(),
        &PreprocessConfig::default(),
        &spec(3),
        &out,
        None,
        &mut |s| seen.push(s.epoch),
    )
    .unwrap();
    assert_eq!(seen, [0, 1, 2]);
    // Three train pairs at batch size one.
    assert_eq!(state.step, 9);
    assert!(checkpoint_dir(&out, 2).join("state.json").is_file());
    assert!(!checkpoint_dir(&out, 3).exists());
    let ck = load_checkpoint(&final_dir(&out)).unwrap();
    assert_eq!(ck.state.epoch, 3);
    assert_eq!(ck.state.loss_history, state.loss_history);
    let csv = std::fs::read_to_string(final_dir(&out).join("history.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 9);
}

#[test]
fn empty_train_split_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(&dir.path().join("data"), &[0, 1, 2, 3]);
    let r = fit(
        &manifest,
        &small_model(),
        &PreprocessConfig::default(),
        &spec(1),
        &dir.path().join("ck"),
        None,
        &mut |_| {},
    );
    assert!(matches!(r, Err(Error::Config { .. })), "{r:?}");
}

#[test]
fn resume_with_another_seed_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(&dir.path().join("data"), &[]);
    let out = dir.path().join("ck");
    fit(
        &manifest,
        &small_model(),
        &PreprocessConfig::default(),
        &spec(1),
        &out,
        None,
        &mut |_| {},
    )
    .unwrap();
    let other = TrainSpec { seed: 22, ..spec(2) };
    let r = fit(
        &manifest,
        &small_model(),
        &PreprocessConfig::default(),
        &other,
        &out,
        Some(&final_dir(&out)),
        &mut |_| {},
    );
    assert!(matches!(r, Err(Error::Config { ref key, .. }) if key == "train.seed"), "{r:?}");
}
