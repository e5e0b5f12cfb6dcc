//! End-to-end demo on synthetic tiles: synthesize, curate, train, infer, evaluate.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use crate::cloud_filter::{curate, Scorer};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::pix2pix_net::ModelSpec;
use crate::quality_metrics::{evaluate, MetricReport};
use crate::synthetic::{write_dataset, SyntheticLayout};
use crate::tile_store::{load_tile_as, save_tile, write_manifest, BitDepth, Manifest, Split, TileRole};
use crate::trainer::{final_dir, fit};
use crate::translator::{translate_batch, Translator};

pub const DEMO_PAIRS: usize = 8;
pub const DEMO_SIZE: usize = 64;
pub const DEMO_CLOUDY: [usize; 2] = [2, 5];
pub const DEMO_TEST: [usize; 1] = [7];
pub const DEMO_MAX_ERROR: f64 = 0.1;

/// A failure tagged with the pipeline stage that produced it.
#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub source: Error,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage `{}` failed: {}", self.stage, self.source)
    }
}

impl std::error::Error for StageError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

trait Stage<T> {
    fn stage(self, name: &'static str) -> std::result::Result<T, StageError>;
}

impl<T> Stage<T> for Result<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, StageError> {
        self.map_err(|source| StageError { stage, source })
    }
}

/// Configuration the demo runs with: the tiny model and a short schedule.
pub fn demo_config(seed: u64, epochs: usize) -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    let model = ModelSpec::tiny();
    cfg.generator = model.generator;
    cfg.discriminator = model.discriminator;
    cfg.train.epochs = epochs;
    cfg.train.checkpoint_every = 0;
    cfg.seeds.train = seed;
    cfg.seeds.inference = seed.wrapping_add(7);
    cfg
}

#[derive(Debug, Clone)]
pub struct DemoOutcome {
    pub report: MetricReport,
    pub report_path: PathBuf,
    pub rejected: Vec<String>,
    pub elapsed: Duration,
}

fn check(ok: bool, msg: impl Into<String>) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Validation(msg.into()))
    }
}

/// Runs every stage under `out_dir` and checks the demo's acceptance conditions.
pub fn run_demo(out_dir: &Path, seed: u64, epochs: usize, log: &mut dyn FnMut(&str)) -> std::result::Result<DemoOutcome, StageError> {
    let start = Instant::now();
    let cfg = demo_config(seed, epochs);
    cfg.validate().stage("config")?;
    cfg.echo(out_dir).stage("config")?;

    let data = out_dir.join("data");
    let layout = SyntheticLayout {
        pairs: DEMO_PAIRS,
        size: DEMO_SIZE,
        cloudy: &DEMO_CLOUDY,
        test: &DEMO_TEST,
    };
    let set = write_dataset(&data, seed, &layout).stage("synthesize")?;
    log(&format!("synthesized {} pairs, cloudy: {:?}", set.manifest.len(), set.cloudy));

    let curated = curate(&set.manifest, cfg.cloud.threshold, &Scorer::Heuristic).stage("curate")?;
    let curated_path = out_dir.join("curated.jsonl");
    write_manifest(&curated.manifest, &curated_path).stage("curate")?;
    let rejected: Vec<String> = curated.filtered.iter().map(|e| e.pair_id.clone()).collect();
    let want: BTreeSet<&String> = set.cloudy.iter().collect();
    let got: BTreeSet<&String> = rejected.iter().collect();
    check(
        want == got && curated.rejects.is_empty(),
        format!("curation removed {rejected:?}, expected exactly {:?}", set.cloudy),
    )
    .stage("curate")?;
    log(&format!("curation kept {} pairs, removed {rejected:?}", curated.manifest.len()));

    let ckpts = out_dir.join("checkpoints");
    let spec = cfg.train_spec();
    let mut on_epoch = |s: &crate::trainer::EpochSummary| {
        if (s.epoch + 1).is_multiple_of(25) || s.epoch == 0 {
            log(&format!(
                "epoch {:>4}  mae {:.4}  g {:.3}  d {:.3}",
                s.epoch, s.mean_mae, s.mean_g_total, s.mean_d_loss
            ));
        }
    };
    fit(&curated.manifest, &cfg.model(), &cfg.preprocess, &spec, &ckpts, None, &mut on_epoch).stage("train")?;

    let translator = Translator::load(&final_dir(&ckpts)).stage("infer")?;
    let preds = out_dir.join("predictions");
    let depth = cfg.inference.output_bit_depth;
    let batch = translate_batch(
        &translator,
        &curated.manifest,
        Split::Test,
        cfg.inference.candidates,
        cfg.seeds.inference,
        depth,
        &preds,
    )
    .stage("infer")?;
    check(batch.failures.is_empty(), format!("{} test pairs failed", batch.failures.len())).stage("infer")?;

    let truths = out_dir.join("truths");
    write_truths(&curated.manifest, &cfg, depth, &truths).stage("evaluate")?;
    let report = evaluate(&preds, &truths, &cfg.ssim, true).stage("evaluate")?;
    let report_path = out_dir.join("report.json");
    report.write(&report_path).stage("evaluate")?;
    log(&format!(
        "error score {:.4} (mean), PSNR {:?}, SSIM {:.4}",
        report.aggregate.error_score_mean, report.aggregate.mean_psnr, report.aggregate.mean_ssim
    ));
    check(
        report.aggregate.error_score_mean < DEMO_MAX_ERROR,
        format!("error score {} is not below {DEMO_MAX_ERROR}", report.aggregate.error_score_mean),
    )
    .stage("evaluate")?;

    Ok(DemoOutcome {
        report,
        report_path,
        rejected,
        elapsed: start.elapsed(),
    })
}

/// Ground truth for evaluation: the test optical tiles after the training-time count cut,
/// written as `<pair_id>.<ext>`.
pub fn write_truths(manifest: &Manifest, cfg: &PipelineConfig, depth: BitDepth, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for e in manifest.split(Split::Test) {
        let optical = load_tile_as(&manifest.resolve(&e.optical_path), TileRole::Optical)?;
        let reference = cfg.preprocess.reference_optical(&optical)?;
        let scale = depth.max_value() / reference.dtype_origin().max_value().unwrap_or(depth.max_value());
        let px = reference.pixels().mapv(|v| (v * scale + 0.5).floor());
        let tile = reference.with_pixels(px, depth.dtype())?;
        save_tile(&tile, &dir.join(format!("{}.{}", e.pair_id, depth.extension())), depth)?;
    }
    Ok(())
}
