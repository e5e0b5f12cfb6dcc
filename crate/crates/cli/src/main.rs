//! `sar2opt`: curate, preprocess, train, infer, evaluate and demo subcommands.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sar2opt_core::cloud_filter::{curate, CloudClassifier, CloudMethod, Scorer};
use sar2opt_core::config::{load_config, PipelineConfig};
use sar2opt_core::pipeline::{run_demo, write_truths};
use sar2opt_core::preprocess::{convert_u16_to_u8, cumulative_count_cut, normalize, CountCutParams, CutTarget, DynamicRange};
use sar2opt_core::quality_metrics::{evaluate, WindowKind};
use sar2opt_core::tile_store::{
    load_tile_as, read_manifest, save_tile, save_tile_f32, write_manifest, BitDepth, DType, Manifest, ManifestEntry, Split, Tile, TileRole,
};
use sar2opt_core::trainer::{fit, load_model_spec, EpochSummary};
use sar2opt_core::translator::{translate_batch, Translator};
use sar2opt_core::Error;

#[derive(Parser)]
#[command(name = "sar2opt", version, about = "SAR-to-optical translation with cloud-filtered pix2pix")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score optical tiles for clouds and keep the clear pairs.
    Curate(CurateArgs),
    /// Count-cut, convert or normalize the tiles of a manifest.
    Preprocess(PreprocessArgs),
    /// Train the generator and discriminator on the manifest's train split.
    Train(TrainArgs),
    /// Write candidate predictions for one split of a manifest.
    Infer(InferArgs),
    /// Score predictions against truths and write a JSON report.
    Evaluate(EvaluateArgs),
    /// Run the whole pipeline on synthetic tiles.
    Demo(DemoArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Heuristic,
    Cnn,
}

#[derive(Clone, Copy, ValueEnum)]
enum DepthArg {
    U8,
    U16,
}

impl From<DepthArg> for BitDepth {
    fn from(d: DepthArg) -> Self {
        match d {
            DepthArg::U8 => BitDepth::U8,
            DepthArg::U16 => BitDepth::U16,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TargetArg {
    Both,
    Sar,
    Optical,
    None,
}

#[derive(Args)]
struct CurateArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    /// Keep entries whose cloud score is at most this.
    #[arg(long)]
    threshold: Option<f64>,
    /// Classifier directory for `--method cnn`.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// JSON-lines file listing unreadable entries and those above the threshold.
    #[arg(long)]
    rejects: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct PreprocessArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory for processed tiles and `manifest.jsonl`.
    #[arg(long)]
    out: PathBuf,
    /// Cumulative count cut fractions, e.g. `0.02,0.98`.
    #[arg(long, value_name = "LOW,HIGH")]
    count_cut: Option<String>,
    /// Cut over all channels jointly instead of per channel.
    #[arg(long)]
    global: bool,
    /// Convert 16-bit tiles to 8-bit through the count cut.
    #[arg(long)]
    to_u8: bool,
    /// Map to [-1, 1] and write 32-bit float TIFFs.
    #[arg(long)]
    normalize: bool,
    /// Which tiles of each pair are processed.
    #[arg(long, value_enum, default_value = "both")]
    apply_to: TargetArg,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Checkpoint directory to continue from.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    /// Update the discriminator only in epochs divisible by this.
    #[arg(long)]
    cadence: Option<usize>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lambda_adv: Option<f64>,
    #[arg(long)]
    lambda_mae: Option<f64>,
    #[arg(long)]
    lambda_mse: Option<f64>,
    #[arg(long)]
    base_width: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    dropout_rate: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    disc_widths: Option<Vec<usize>>,
    #[arg(long, value_name = "LOW,HIGH")]
    count_cut: Option<String>,
    #[arg(long, value_enum)]
    apply_to: Option<TargetArg>,
}

#[derive(Args)]
struct InferArgs {
    /// Single checkpoint, sampled with test-time dropout.
    #[arg(long, conflicts_with = "checkpoints", required_unless_present = "checkpoints")]
    checkpoint: Option<PathBuf>,
    /// Comma-separated checkpoints, one eval-mode candidate each.
    #[arg(long, value_delimiter = ',')]
    checkpoints: Option<Vec<PathBuf>>,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// Candidates per input (defaults to the checkpoint count in ensemble mode).
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    bit_depth: Option<DepthArg>,
    /// Also write count-cut ground truth tiles for the split here.
    #[arg(long)]
    truth_out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    ssim_window: Option<usize>,
    #[arg(long)]
    ssim_sigma: Option<f64>,
    /// Uniform instead of Gaussian SSIM window.
    #[arg(long)]
    uniform_window: bool,
    /// Dynamic range of the images being compared.
    #[arg(long, value_enum)]
    range: Option<DepthArg>,
    /// Fail if any truth lacks predictions.
    #[arg(long)]
    strict: bool,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct DemoArgs {
    #[arg(long, default_value = "demo_out")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
}

/// Error carrying the process exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self {
            code: e.exit_code() as u8,
            message: e.to_string(),
        }
    }
}

type CliResult = Result<(), Failure>;

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

fn config_or_default(path: Option<&Path>) -> Result<PipelineConfig, Error> {
    path.map_or_else(|| Ok(PipelineConfig::default()), load_config)
}

fn parse_cut(s: &str, per_channel: bool) -> Result<CountCutParams, Failure> {
    let (lo, hi) = s
        .split_once(',')
        .ok_or_else(|| usage(format!("--count-cut expects LOW,HIGH, got `{s}`")))?;
    let num = |v: &str| v.trim().parse::<f64>().map_err(|e| usage(format!("--count-cut value `{v}`: {e}")));
    Ok(CountCutParams::new(num(lo)?, num(hi)?, per_channel)?)
}

fn target(t: TargetArg) -> CutTarget {
    match t {
        TargetArg::Both => CutTarget::Both,
        TargetArg::Sar => CutTarget::Sar,
        TargetArg::Optical => CutTarget::Optical,
        TargetArg::None => CutTarget::None,
    }
}

fn open_manifest(path: &Path, cfg: &PipelineConfig) -> Result<Manifest, Error> {
    let mut m = read_manifest(path)?;
    if let Some(root) = &cfg.paths.data_root {
        m.root = root.clone();
    }
    Ok(m)
}

fn write_jsonl(path: &Path, rows: &[serde_json::Value]) -> Result<(), Error> {
    let mut text = String::new();
    for r in rows {
        text.push_str(&serde_json::to_string(r).expect("row serializes"));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })
}

fn cmd_curate(a: CurateArgs) -> CliResult {
    let mut cfg = config_or_default(a.config.as_deref())?;
    if let Some(m) = a.method {
        cfg.cloud.method = match m {
            MethodArg::Heuristic => CloudMethod::Heuristic,
            MethodArg::Cnn => CloudMethod::Cnn,
        };
    }
    if let Some(t) = a.threshold {
        cfg.cloud.threshold = t;
    }
    if a.weights.is_some() {
        cfg.cloud.weights = a.weights;
    }
    cfg.validate()?;
    let manifest = open_manifest(&a.manifest, &cfg)?;
    let model;
    let scorer = match cfg.cloud.method {
        CloudMethod::Heuristic => Scorer::Heuristic,
        CloudMethod::Cnn => {
            let dir = cfg
                .cloud
                .weights
                .as_ref()
                .ok_or_else(|| Error::config("cloud.weights", "the cnn method needs --weights"))?;
            model = CloudClassifier::load(dir)?;
            Scorer::Cnn(&model)
        }
    };
    let out = curate(&manifest, cfg.cloud.threshold, &scorer)?;
    write_manifest(&out.manifest, &a.out)?;
    if let Some(path) = &a.rejects {
        let mut rows: Vec<serde_json::Value> = out
            .rejects
            .iter()
            .map(|r| serde_json::json!({"pair_id": r.pair_id, "reason": r.reason}))
            .collect();
        rows.extend(
            out.filtered
                .iter()
                .map(|e| serde_json::json!({"pair_id": e.pair_id, "reason": "cloud score above threshold", "cloud_score": e.cloud_score})),
        );
        write_jsonl(path, &rows)?;
    }
    eprintln!(
        "kept {} of {} pairs ({} over threshold, {} unreadable)",
        out.manifest.len(),
        manifest.len(),
        out.filtered.len(),
        out.rejects.len()
    );
    Ok(())
}

fn process_tile(tile: &Tile, cut: Option<&CountCutParams>, to_u8: bool, norm: bool) -> Result<Tile, Error> {
    let mut t = tile.clone();
    if to_u8 && t.dtype_origin() == DType::U16 {
        t = convert_u16_to_u8(&t, cut.unwrap_or(&CountCutParams::default()))?;
    } else if let Some(c) = cut {
        t = cumulative_count_cut(&t, c)?;
    }
    if norm {
        t = normalize(&t, DynamicRange::of_dtype(t.dtype_origin())?)?;
    }
    Ok(t)
}

fn save_processed(t: &Tile, dir: &Path, id: &str) -> Result<String, Error> {
    let name = match t.dtype_origin() {
        DType::F32 => format!("{id}.tif"),
        DType::U8 => format!("{id}.png"),
        DType::U16 => format!("{id}.tif"),
    };
    let path = dir.join(&name);
    match t.dtype_origin() {
        DType::F32 => save_tile_f32(t, &path)?,
        DType::U8 => save_tile(t, &path, BitDepth::U8)?,
        DType::U16 => save_tile(t, &path, BitDepth::U16)?,
    }
    Ok(name)
}

fn cmd_preprocess(a: PreprocessArgs) -> CliResult {
    let cut = a.count_cut.as_deref().map(|s| parse_cut(s, !a.global)).transpose()?;
    let manifest = read_manifest(&a.manifest)?;
    let target = target(a.apply_to);
    let mut entries = Vec::new();
    for e in manifest.entries() {
        let mut out = e.clone();
        for (role, sub) in [(TileRole::Sar, "sar"), (TileRole::Optical, "optical")] {
            let src = match role {
                TileRole::Sar => &e.sar_path,
                TileRole::Optical => &e.optical_path,
            };
            let tile = load_tile_as(&manifest.resolve(src), role)?;
            let applies = matches!(
                (target, role),
                (CutTarget::Both, _) | (CutTarget::Sar, TileRole::Sar) | (CutTarget::Optical, TileRole::Optical)
            );
            let processed = if applies {
                process_tile(&tile, cut.as_ref(), a.to_u8, a.normalize)?
            } else {
                tile
            };
            let name = save_processed(&processed, &a.out.join(sub), &e.pair_id)?;
            let rel = PathBuf::from(sub).join(name);
            match role {
                TileRole::Sar => out.sar_path = rel,
                TileRole::Optical => out.optical_path = rel,
            }
        }
        entries.push(out);
    }
    let mut m = Manifest::new(entries, &a.out)?;
    m.curation_params = manifest.curation_params.clone();
    m.curation_params.insert(
        "preprocess".into(),
        serde_json::json!({
            "count_cut": cut,
            "to_u8": a.to_u8,
            "normalize": a.normalize,
        }),
    );
    write_manifest(&m, &a.out.join("manifest.jsonl"))?;
    eprintln!("processed {} pairs into {}", m.len(), a.out.display());
    Ok(())
}

fn cmd_train(a: TrainArgs) -> CliResult {
    let mut cfg = config_or_default(a.config.as_deref())?;
    let t = &mut cfg.train;
    macro_rules! set {
        ($dst:expr, $src:expr) => {
            if let Some(v) = $src {
                $dst = v;
            }
        };
    }
    set!(t.epochs, a.epochs);
    set!(t.batch_size, a.batch_size);
    set!(t.learning_rate, a.learning_rate);
    set!(t.beta1, a.beta1);
    set!(t.beta2, a.beta2);
    set!(t.d_update_cadence_epochs, a.cadence);
    set!(t.checkpoint_every, a.checkpoint_every);
    set!(cfg.seeds.train, a.seed);
    set!(cfg.loss.lambda_adv, a.lambda_adv);
    set!(cfg.loss.lambda_mae, a.lambda_mae);
    set!(cfg.loss.lambda_mse, a.lambda_mse);
    set!(cfg.generator.base_width, a.base_width);
    set!(cfg.generator.depth, a.depth);
    set!(cfg.generator.dropout_rate, a.dropout_rate);
    set!(cfg.discriminator.widths, a.disc_widths);
    if let Some(s) = a.count_cut.as_deref() {
        cfg.preprocess.count_cut = parse_cut(s, cfg.preprocess.count_cut.per_channel)?;
    }
    if let Some(t) = a.apply_to {
        cfg.preprocess.apply_to = target(t);
    }
    cfg.validate()?;
    if let Some(dir) = &a.resume {
        let (model, prep) = load_model_spec(dir)?;
        cfg.generator = model.generator;
        cfg.discriminator = model.discriminator;
        cfg.preprocess = prep;
    }
    cfg.echo(&a.out)?;
    let manifest = open_manifest(&a.manifest, &cfg)?;
    let start = Instant::now();
    let mut log = |s: &EpochSummary| {
        eprintln!(
            "epoch {:>5}  mae {:.4}  g {:.4}  d {:.4}  d-update {}  [{:.1?}]",
            s.epoch,
            s.mean_mae,
            s.mean_g_total,
            s.mean_d_loss,
            s.discriminator_updated,
            start.elapsed()
        )
    };
    let state = fit(
        &manifest,
        &cfg.model(),
        &cfg.preprocess,
        &cfg.train_spec(),
        &a.out,
        a.resume.as_deref(),
        &mut log,
    )?;
    eprintln!(
        "trained {} epochs / {} steps; final checkpoint in {}",
        state.epoch,
        state.step,
        a.out.join("final").display()
    );
    Ok(())
}

fn cmd_infer(a: InferArgs) -> CliResult {
    let cfg = config_or_default(a.config.as_deref())?;
    let split: Split = a.split.parse().map_err(|e: Error| usage(e.to_string()))?;
    let manifest = open_manifest(&a.manifest, &cfg)?;
    let (translator, n, ckpt) = match (&a.checkpoint, &a.checkpoints) {
        (Some(c), _) => (Translator::load(c)?, a.n.unwrap_or(cfg.inference.candidates), c.clone()),
        (None, Some(list)) => {
            let refs: Vec<&Path> = list.iter().map(PathBuf::as_path).collect();
            (Translator::load_ensemble(&refs)?, a.n.unwrap_or(list.len()), list[0].clone())
        }
        (None, None) => return Err(usage("one of --checkpoint or --checkpoints is required")),
    };
    let depth: BitDepth = a.bit_depth.map_or(cfg.inference.output_bit_depth, Into::into);
    let seed = a.seed.unwrap_or(cfg.seeds.inference);
    let out = translate_batch(&translator, &manifest, split, n, seed, depth, &a.out)?;
    if let Some(dir) = &a.truth_out {
        let (_, prep) = load_model_spec(&ckpt)?;
        let truth_cfg = PipelineConfig {
            preprocess: prep,
            ..cfg.clone()
        };
        let mut only_split = Vec::new();
        for e in manifest.split(split) {
            only_split.push(ManifestEntry {
                split: Split::Test,
                ..e.clone()
            });
        }
        let sub = Manifest::new(only_split, manifest.root.clone())?;
        write_truths(&sub, &truth_cfg, depth, dir)?;
    }
    eprintln!("wrote candidates for {} pairs ({} failures)", out.index.len(), out.failures.len());
    for f in &out.failures {
        eprintln!("  {}: {}", f.pair_id, f.reason);
    }
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> CliResult {
    let cfg = config_or_default(a.config.as_deref())?;
    let mut params = cfg.ssim;
    if let Some(w) = a.ssim_window {
        params.window_size = w;
    }
    if a.uniform_window {
        params.window_kind = WindowKind::Uniform;
    } else if let Some(sigma) = a.ssim_sigma {
        params.window_kind = WindowKind::Gaussian { sigma };
    }
    if let Some(r) = a.range {
        params.dynamic_range = DynamicRange::new(BitDepth::from(r).max_value())?;
    }
    let report = evaluate(&a.pred, &a.truth, &params, a.strict)?;
    report.write(&a.report)?;
    let agg = &report.aggregate;
    let psnr = agg.mean_psnr.map_or("inf".to_string(), |p| format!("{p:.3}"));
    eprintln!(
        "{} pairs: PSNR {psnr} dB, SSIM {:.4}, error score {:.4} (mean) / {:.4} (sum)",
        agg.pairs_scored, agg.mean_ssim, agg.error_score_mean, agg.error_score_sum
    );
    if !report.missing.is_empty() {
        eprintln!("no predictions for: {}", report.missing.join(", "));
    }
    Ok(())
}

fn cmd_demo(a: DemoArgs) -> CliResult {
    let mut log = |s: &str| eprintln!("[demo] {s}");
    match run_demo(&a.out, a.seed, a.epochs, &mut log) {
        Ok(o) => {
            let summary: BTreeMap<&str, serde_json::Value> = [
                ("report", serde_json::json!(o.report_path)),
                ("rejected", serde_json::json!(o.rejected)),
                ("error_score_mean", serde_json::json!(o.report.aggregate.error_score_mean)),
                ("elapsed_seconds", serde_json::json!(o.elapsed.as_secs_f64())),
            ]
            .into();
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
            Ok(())
        }
        Err(e) => Err(Failure {
            code: e.source.exit_code() as u8,
            message: e.to_string(),
        }),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Curate(a) => cmd_curate(a),
        Command::Preprocess(a) => cmd_preprocess(a),
        Command::Train(a) => cmd_train(a),
        Command::Infer(a) => cmd_infer(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Demo(a) => cmd_demo(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
