//! Adversarial training loop with an epoch-level discriminator cadence, checkpoints and
//! loss history.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::{s, Array3, Array4};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::{adversarial_loss_d_grad, total_generator_loss_grad, LossWeights};
use crate::optim::{optimizer_step, AdamConfig, AdamState};
use crate::par;
use crate::params::ParameterSet;
use crate::pix2pix_net::{build_discriminator, build_generator, Discriminator, Generator, Mode, ModelSpec};
use crate::preprocess::PreprocessConfig;
use crate::tile_store::{Manifest, Split, TileRole};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSpec {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// The discriminator is updated only in epochs divisible by this.
    pub d_update_cadence_epochs: usize,
    pub seed: u64,
    /// Checkpoint period in epochs; 0 writes only the final checkpoint.
    pub checkpoint_every: usize,
    pub loss: LossWeights,
}

impl Default for TrainSpec {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 1,
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            d_update_cadence_epochs: 2,
            seed: 0,
            checkpoint_every: 10,
            loss: LossWeights::default(),
        }
    }
}

impl TrainSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("train.epochs", self.epochs),
            ("train.batch_size", self.batch_size),
            ("train.d_update_cadence_epochs", self.d_update_cadence_epochs),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::config(key, "must be at least 1"));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(
                "train.learning_rate",
                format!("{} must be positive", self.learning_rate),
            ));
        }
        for (key, b) in [("train.beta1", self.beta1), ("train.beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(key, format!("{b} not in [0, 1)")));
            }
        }
        self.loss.validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
        }
    }

    /// Whether the discriminator is optimized during `epoch`.
    pub fn updates_discriminator(&self, epoch: usize) -> bool {
        epoch.is_multiple_of(self.d_update_cadence_epochs)
    }
}

/// SplitMix64 finalizer over `(seed, stream, index)`.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_GEN_INIT: u64 = 1;
const STREAM_DISC_INIT: u64 = 2;
const STREAM_SHUFFLE: u64 = 3;
const STREAM_DROPOUT: u64 = 4;

/// One row of the loss log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub g_total: f64,
    pub g_adv: f64,
    pub g_rec: f64,
    pub d_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    /// Mean unweighted reconstruction MAE in normalized units.
    pub mean_mae: f64,
    pub mean_g_total: f64,
    pub mean_d_loss: f64,
    pub discriminator_updated: bool,
}

/// A pair already mapped into the model domain, stored `C×H×W`.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedPair {
    pub pair_id: String,
    pub sar: Array3<f32>,
    pub optical: Array3<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    /// Number of completed epochs.
    pub epoch: usize,
    /// Number of completed generator steps.
    pub step: u64,
    pub generator: Generator<f32>,
    pub discriminator: Discriminator<f32>,
    pub gen_opt: AdamState<f32>,
    pub disc_opt: AdamState<f32>,
    /// All randomness is derived from this seed and the epoch/step counters.
    pub seed: u64,
    pub loss_history: Vec<LossRecord>,
    pub epoch_summaries: Vec<EpochSummary>,
}

impl TrainState {
    pub fn new(model: &ModelSpec, seed: u64) -> Result<Self> {
        model.validate()?;
        let g = build_generator(&model.generator, derive_seed(seed, STREAM_GEN_INIT, 0))?;
        let d = build_discriminator(&model.discriminator, derive_seed(seed, STREAM_DISC_INIT, 0))?;
        let generator = Generator::from_params(model.generator.clone(), g)?;
        let discriminator = Discriminator::from_params(model.discriminator.clone(), d)?;
        Ok(Self {
            epoch: 0,
            step: 0,
            gen_opt: AdamState::new(&generator.params),
            disc_opt: AdamState::new(&discriminator.params),
            generator,
            discriminator,
            seed,
            loss_history: Vec::new(),
            epoch_summaries: Vec::new(),
        })
    }

    pub fn model(&self) -> ModelSpec {
        ModelSpec {
            generator: self.generator.spec.clone(),
            discriminator: self.discriminator.spec.clone(),
        }
    }
}

fn stack(items: &[&Array3<f32>]) -> Array4<f32> {
    let (c, h, w) = items[0].dim();
    let mut out = Array4::zeros((items.len(), c, h, w));
    for (i, x) in items.iter().enumerate() {
        out.slice_mut(s![i, .., .., ..]).assign(x);
    }
    out
}

fn non_finite(step: u64, what: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence {
            step,
            message: format!("{what} is {v}"),
        })
    }
}

/// Discriminator loss on `(sar, optical)` against the detached `fake`, updating the
/// discriminator when `update` is set. The generator is never touched.
pub fn discriminator_step(
    state: &mut TrainState,
    spec: &TrainSpec,
    sar: &Array4<f32>,
    optical: &Array4<f32>,
    fake: &Array4<f32>,
    update: bool,
) -> Result<f64> {
    let d = &state.discriminator;
    let (real_logits, real_cache) = d.forward(sar, optical)?;
    let (fake_logits, fake_cache) = d.forward(sar, fake)?;
    let (loss, d_real, d_fake) = adversarial_loss_d_grad(&real_logits, &fake_logits);
    non_finite(state.step, "discriminator loss", loss)?;
    if update {
        let (mut grads, _, _) = d.backward(&real_cache, &d_real);
        let (fake_grads, _, _) = d.backward(&fake_cache, &d_fake);
        grads.add_assign(&fake_grads);
        optimizer_step(&mut state.discriminator.params, &grads, &mut state.disc_opt, &spec.adam()).map_err(|e| at_step(e, state.step))?;
    }
    Ok(loss)
}

fn at_step(e: Error, step: u64) -> Error {
    match e {
        Error::Divergence { message, .. } => Error::Divergence { step, message },
        other => other,
    }
}

/// One generator and (cadence permitting) one discriminator update on a batch.
pub fn train_step(state: &mut TrainState, spec: &TrainSpec, sar: &Array4<f32>, optical: &Array4<f32>) -> Result<(LossRecord, f64)> {
    let step = state.step;
    let mode = Mode::Train {
        seed: derive_seed(state.seed, STREAM_DROPOUT, step),
    };
    let (fake, gen_cache) = state.generator.forward(sar, mode)?;
    let update_d = spec.updates_discriminator(state.epoch);
    let d_loss = discriminator_step(state, spec, sar, optical, &fake, update_d)?;

    let w = &spec.loss;
    let (fake_logits, disc_cache) = state.discriminator.forward(sar, &fake)?;
    let (parts, mut d_fake, d_logits) = total_generator_loss_grad(&fake, optical, &fake_logits, w)?;
    non_finite(step, "generator loss", parts.total)?;
    if w.lambda_adv != 0.0 {
        let (_, _, d_fake_adv) = state.discriminator.backward(&disc_cache, &d_logits);
        d_fake += &d_fake_adv;
    }
    let (grads, _) = state.generator.backward(&gen_cache, &d_fake);
    optimizer_step(&mut state.generator.params, &grads, &mut state.gen_opt, &spec.adam()).map_err(|e| at_step(e, step))?;

    state.step += 1;
    let rec = LossRecord {
        step,
        g_total: parts.total,
        g_adv: parts.adversarial,
        g_rec: parts.reconstruction,
        d_loss,
    };
    state.loss_history.push(rec);
    Ok((rec, parts.mae))
}

/// Epoch `state.epoch` over `data` in a seed-determined order.
pub fn train_epoch(state: &mut TrainState, data: &[PreparedPair], spec: &TrainSpec) -> Result<EpochSummary> {
    if data.is_empty() {
        return Err(Error::config("train", "no training pairs"));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(state.seed, STREAM_SHUFFLE, state.epoch as u64));
    order.shuffle(&mut rng);

    let epoch = state.epoch;
    let (mut mae_sum, mut g_sum, mut d_sum, mut n) = (0.0, 0.0, 0.0, 0usize);
    for batch in order.chunks(spec.batch_size) {
        let sar = stack(&batch.iter().map(|&i| &data[i].sar).collect::<Vec<_>>());
        let optical = stack(&batch.iter().map(|&i| &data[i].optical).collect::<Vec<_>>());
        let (rec, mae) = train_step(state, spec, &sar, &optical)?;
        mae_sum += mae;
        g_sum += rec.g_total;
        d_sum += rec.d_loss;
        n += 1;
    }
    let summary = EpochSummary {
        epoch,
        mean_mae: mae_sum / n as f64,
        mean_g_total: g_sum / n as f64,
        mean_d_loss: d_sum / n as f64,
        discriminator_updated: spec.updates_discriminator(epoch),
    };
    state.epoch_summaries.push(summary);
    state.epoch += 1;
    Ok(summary)
}

/// Loads and normalizes every entry of `split`, in manifest order.
pub fn prepare_split(manifest: &Manifest, split: Split, prep: &PreprocessConfig) -> Result<Vec<PreparedPair>> {
    let entries: Vec<_> = manifest.split(split).collect();
    let f32_of = |t: crate::tile_store::Tile| t.into_pixels().mapv(|v| v as f32);
    par::map_slice(&entries, |entry| {
        let pair = manifest.load_pair(entry)?;
        Ok(PreparedPair {
            pair_id: pair.pair_id.clone(),
            sar: f32_of(prep.to_model_domain(&pair.sar, TileRole::Sar)?),
            optical: f32_of(prep.to_model_domain(&pair.optical, TileRole::Optical)?),
        })
    })
    .into_iter()
    .collect()
}

/// Everything stored in a checkpoint directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub preprocess: PreprocessConfig,
    pub train_spec: TrainSpec,
    pub state: TrainState,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    model: ModelSpec,
    preprocess: PreprocessConfig,
}

#[derive(Serialize, Deserialize)]
struct StateFile {
    epoch: usize,
    step: u64,
    rng: RngFile,
    epoch_summaries: Vec<EpochSummary>,
}

#[derive(Serialize, Deserialize)]
struct RngFile {
    seed: u64,
    scheme: String,
}

const RNG_SCHEME: &str = "splitmix64(seed, stream, counter) -> chacha8";
const HISTORY_HEADER: &str = "step,g_total,g_adv,g_rec,d_loss";

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("plain data serializes");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn save_checkpoint(dir: &Path, state: &TrainState, spec: &TrainSpec, prep: &PreprocessConfig) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    state.generator.params.save_dir(&dir.join("gen"))?;
    state.discriminator.params.save_dir(&dir.join("disc"))?;

    let opt = dir.join("optimizer.bin");
    let file = fs::File::create(&opt).map_err(|e| Error::io(&opt, e))?;
    let mut out = BufWriter::new(file);
    state
        .gen_opt
        .write_to(&mut out)
        .and_then(|_| state.disc_opt.write_to(&mut out))
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(&opt, e))?;

    write_json(&dir.join("train_spec.json"), spec)?;
    write_json(
        &dir.join("model.json"),
        &ModelFile {
            model: state.model(),
            preprocess: *prep,
        },
    )?;
    write_json(
        &dir.join("state.json"),
        &StateFile {
            epoch: state.epoch,
            step: state.step,
            rng: RngFile {
                seed: state.seed,
                scheme: RNG_SCHEME.into(),
            },
            epoch_summaries: state.epoch_summaries.clone(),
        },
    )?;

    let mut csv = String::from(HISTORY_HEADER);
    csv.push('\n');
    for r in &state.loss_history {
        writeln!(csv, "{},{:?},{:?},{:?},{:?}", r.step, r.g_total, r.g_adv, r.g_rec, r.d_loss).expect("string write");
    }
    let hist = dir.join("history.csv");
    fs::write(&hist, csv).map_err(|e| Error::io(&hist, e))
}

fn parse_history(path: &Path) -> Result<Vec<LossRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == HISTORY_HEADER => {}
        _ => {
            return Err(Error::Parse {
                path: path.into(),
                line: 1,
                message: format!("expected header `{HISTORY_HEADER}`"),
            })
        }
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let bad = |m: String| Error::Parse {
                path: path.into(),
                line: i + 1,
                message: m,
            };
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 5 {
                return Err(bad(format!("expected 5 fields, found {}", f.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("`{s}`: {e}")));
            Ok(LossRecord {
                step: f[0].parse().map_err(|e| bad(format!("`{}`: {e}", f[0])))?,
                g_total: num(f[1])?,
                g_adv: num(f[2])?,
                g_rec: num(f[3])?,
                d_loss: num(f[4])?,
            })
        })
        .collect()
}

/// Model shape and preprocessing stored with a checkpoint.
pub fn load_model_spec(dir: &Path) -> Result<(ModelSpec, PreprocessConfig)> {
    let m: ModelFile = read_json(&dir.join("model.json"))?;
    m.model.validate()?;
    Ok((m.model, m.preprocess))
}

/// The generator alone, for inference.
pub fn load_generator(dir: &Path) -> Result<(Generator<f32>, PreprocessConfig)> {
    let (model, prep) = load_model_spec(dir)?;
    let params = ParameterSet::load_dir(&dir.join("gen"))?;
    Ok((Generator::from_params(model.generator, params)?, prep))
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let (model, preprocess) = load_model_spec(dir)?;
    let train_spec: TrainSpec = read_json(&dir.join("train_spec.json"))?;
    let st: StateFile = read_json(&dir.join("state.json"))?;
    let generator = Generator::from_params(model.generator, ParameterSet::load_dir(&dir.join("gen"))?)?;
    let discriminator = Discriminator::from_params(model.discriminator, ParameterSet::load_dir(&dir.join("disc"))?)?;

    let opt = dir.join("optimizer.bin");
    let file = fs::File::open(&opt).map_err(|e| Error::io(&opt, e))?;
    let mut input = BufReader::new(file);
    let gen_opt = AdamState::read_from(&mut input, &generator.params)?;
    let disc_opt = AdamState::read_from(&mut input, &discriminator.params)?;

    let loss_history = parse_history(&dir.join("history.csv"))?;
    if loss_history.len() as u64 != st.step {
        return Err(Error::Format(format!(
            "history has {} rows but state records {} steps",
            loss_history.len(),
            st.step
        )));
    }
    Ok(Checkpoint {
        preprocess,
        train_spec,
        state: TrainState {
            epoch: st.epoch,
            step: st.step,
            generator,
            discriminator,
            gen_opt,
            disc_opt,
            seed: st.rng.seed,
            loss_history,
            epoch_summaries: st.epoch_summaries,
        },
    })
}

pub fn checkpoint_dir(out: &Path, epoch: usize) -> PathBuf {
    out.join(format!("epoch_{epoch}"))
}

/// Where a run's last checkpoint lives.
pub fn final_dir(out: &Path) -> PathBuf {
    out.join("final")
}

/// Trains on the manifest's train split until `spec.epochs` epochs are complete, writing
/// `epoch_N/` every `checkpoint_every` epochs and `final/` at the end. With `resume`, the
/// run continues from that checkpoint; its model, preprocessing and seed take precedence.
pub fn fit(
    manifest: &Manifest,
    model: &ModelSpec,
    prep: &PreprocessConfig,
    spec: &TrainSpec,
    out_dir: &Path,
    resume: Option<&Path>,
    on_epoch: &mut dyn FnMut(&EpochSummary),
) -> Result<TrainState> {
    spec.validate()?;
    prep.validate()?;
    let (mut state, prep) = match resume {
        Some(dir) => {
            let ck = load_checkpoint(dir)?;
            if ck.state.seed != spec.seed {
                return Err(Error::config(
                    "train.seed",
                    format!("{} differs from the checkpoint's seed {}", spec.seed, ck.state.seed),
                ));
            }
            (ck.state, ck.preprocess)
        }
        None => (TrainState::new(model, spec.seed)?, *prep),
    };
    let data = prepare_split(manifest, Split::Train, &prep)?;
    if data.is_empty() {
        return Err(Error::config("manifest", "the train split is empty"));
    }
    let (c, h, w) = data[0].sar.dim();
    state.generator.spec.check_input(c, h, w)?;

    while state.epoch < spec.epochs {
        let summary = train_epoch(&mut state, &data, spec)?;
        on_epoch(&summary);
        if spec.checkpoint_every > 0 && state.epoch % spec.checkpoint_every == 0 {
            save_checkpoint(&checkpoint_dir(out_dir, state.epoch), &state, spec, &prep)?;
        }
    }
    save_checkpoint(&final_dir(out_dir), &state, spec, &prep)?;
    Ok(state)
}
