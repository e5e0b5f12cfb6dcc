//! Cloud scoring of optical tiles and manifest curation.

use std::fs;
use std::path::Path;

use image::imageops::{resize, FilterType};
use image::{ImageBuffer, Rgb};
use ndarray::{s, Array2, Array3, Array4, ArrayView1, ArrayView2, ArrayView4, Ix1, Ix2, Ix4};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, ConvGeom};
use crate::objectives::{sigmoid, softplus};
use crate::optim::{optimizer_step, AdamConfig, AdamState};
use crate::par;
use crate::params::ParameterSet;
use crate::preprocess::DynamicRange;
use crate::tensor::Scalar;
use crate::tile_store::{load_tile_as, Manifest, ManifestEntry, Tile, TileRole};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CloudMethod {
    #[default]
    Heuristic,
    Cnn,
}

impl std::str::FromStr for CloudMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "heuristic" => Ok(Self::Heuristic),
            "cnn" => Ok(Self::Cnn),
            other => Err(Error::config("cloud.method", format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CloudScore {
    pub value: f64,
    pub method: CloudMethod,
}

const BRIGHT: f64 = 0.85;
const GRAY: f64 = 0.15;

/// Fraction of pixels that are both bright and nearly gray.
pub fn heuristic_cloud_score(tile: &Tile) -> Result<CloudScore> {
    if tile.channels() != 3 {
        return Err(Error::Type(format!("cloud scoring needs 3 channels, got {}", tile.channels())));
    }
    let max = DynamicRange::of_dtype(tile.dtype_origin())?.max_value;
    let p = tile.pixels();
    let (_, h, w) = p.dim();
    let mut hits = 0usize;
    for y in 0..h {
        for x in 0..w {
            let v = [p[[0, y, x]], p[[1, y, x]], p[[2, y, x]]];
            let mean = (v[0] + v[1] + v[2]) / 3.0;
            let hi = v[0].max(v[1]).max(v[2]);
            let lo = v[0].min(v[1]).min(v[2]);
            let gray = hi > 0.0 && (hi - lo) / hi < GRAY;
            if mean > BRIGHT * max && gray {
                hits += 1;
            }
        }
    }
    Ok(CloudScore {
        value: hits as f64 / (h * w) as f64,
        method: CloudMethod::Heuristic,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlock {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CloudClassifierSpec {
    /// Each block is conv, ReLU, 2×2 max pool.
    pub conv_blocks: Vec<ConvBlock>,
    pub hidden_units: usize,
    pub input_size: (usize, usize),
    pub threshold: f64,
}

impl Default for CloudClassifierSpec {
    fn default() -> Self {
        let block = |out_channels| ConvBlock {
            out_channels,
            kernel: 3,
            stride: 1,
        };
        Self {
            conv_blocks: vec![block(16), block(32), block(64), block(64)],
            hidden_units: 64,
            input_size: (64, 64),
            threshold: 0.5,
        }
    }
}

impl CloudClassifierSpec {
    pub fn validate(&self) -> Result<()> {
        if self.conv_blocks.is_empty() {
            return Err(Error::config("cloud.classifier.conv_blocks", "at least one block is required"));
        }
        if self
            .conv_blocks
            .iter()
            .any(|b| b.out_channels == 0 || b.kernel == 0 || b.stride == 0)
        {
            return Err(Error::config(
                "cloud.classifier.conv_blocks",
                "channels, kernel and stride must be positive",
            ));
        }
        if self.hidden_units == 0 {
            return Err(Error::config("cloud.classifier.hidden_units", "must be positive"));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::config(
                "cloud.classifier.threshold",
                format!("{} not in (0, 1)", self.threshold),
            ));
        }
        self.flat_features().map(|_| ())
    }

    fn geom(b: &ConvBlock) -> ConvGeom {
        ConvGeom::new(b.kernel, b.stride, b.kernel / 2)
    }

    /// Length of the flattened feature vector after the last block.
    fn flat_features(&self) -> Result<usize> {
        let (mut h, mut w) = self.input_size;
        for b in &self.conv_blocks {
            let g = Self::geom(b);
            h = g.conv_out(h).unwrap_or(0) / 2;
            w = g.conv_out(w).unwrap_or(0) / 2;
            if h == 0 || w == 0 {
                return Err(Error::config(
                    "cloud.classifier.input_size",
                    format!("{:?} vanishes before the last block", self.input_size),
                ));
            }
        }
        Ok(self.conv_blocks.last().expect("validated").out_channels * h * w)
    }

    pub fn layout(&self) -> Result<Vec<(String, Vec<usize>)>> {
        let mut out = Vec::new();
        let mut cin = 3;
        for (j, b) in self.conv_blocks.iter().enumerate() {
            out.push((format!("conv{j}.weight"), vec![b.out_channels, cin, b.kernel, b.kernel]));
            out.push((format!("conv{j}.bias"), vec![b.out_channels]));
            cin = b.out_channels;
        }
        let flat = self.flat_features()?;
        out.push(("hidden.weight".into(), vec![self.hidden_units, flat]));
        out.push(("hidden.bias".into(), vec![self.hidden_units]));
        out.push(("head.weight".into(), vec![1, self.hidden_units]));
        out.push(("head.bias".into(), vec![1]));
        Ok(out)
    }
}

/// He-normal weights, zero biases.
pub fn build_classifier(spec: &CloudClassifierSpec, seed: u64) -> Result<ParameterSet<f32>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = ParameterSet::new(seed);
    for (name, shape) in spec.layout()? {
        let t = if name.ends_with(".weight") {
            let fan_in: usize = shape[1..].iter().product();
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            ndarray::ArrayD::from_shape_simple_fn(shape, || normal.sample(&mut rng) as f32)
        } else {
            ndarray::ArrayD::zeros(shape)
        };
        set.push(name, t)?;
    }
    Ok(set)
}

/// The mini-VGG binary cloud classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct CloudClassifier<F> {
    pub spec: CloudClassifierSpec,
    pub params: ParameterSet<F>,
}

struct BlockCache<F> {
    conv: nn::ConvCache<F>,
    pre: Array4<F>,
    pool: nn::MaxPoolCache,
}

pub struct ClassifierCache<F> {
    blocks: Vec<BlockCache<F>>,
    pooled_dim: (usize, usize, usize, usize),
    flat: Array2<F>,
    hidden_pre: Array2<F>,
    hidden: Array2<F>,
}

const WEIGHTS_DIR: &str = "params";
const SPEC_FILE: &str = "classifier.json";

impl<F: Scalar> CloudClassifier<F> {
    pub fn from_params(spec: CloudClassifierSpec, params: ParameterSet<F>) -> Result<Self> {
        spec.validate()?;
        params.check_layout(&spec.layout()?)?;
        Ok(Self { spec, params })
    }

    fn w4(&self, i: usize) -> ArrayView4<'_, F> {
        self.params.tensor(i).view().into_dimensionality::<Ix4>().expect("4-d")
    }
    fn w2(&self, i: usize) -> ArrayView2<'_, F> {
        self.params.tensor(i).view().into_dimensionality::<Ix2>().expect("2-d")
    }
    fn w1(&self, i: usize) -> ArrayView1<'_, F> {
        self.params.tensor(i).view().into_dimensionality::<Ix1>().expect("1-d")
    }

    /// Logits `(n)` for a normalized batch `(n, 3, H, W)` at the spec's input size.
    pub fn forward(&self, x: &Array4<F>) -> Result<(Vec<F>, ClassifierCache<F>)> {
        let (_, c, h, w) = x.dim();
        if c != 3 || (h, w) != self.spec.input_size {
            return Err(Error::Shape(format!(
                "classifier expects 3x{:?}, got {c}x{h}x{w}",
                self.spec.input_size
            )));
        }
        let mut a = x.clone();
        let mut blocks = Vec::new();
        for (j, b) in self.spec.conv_blocks.iter().enumerate() {
            let (y, conv) = nn::conv2d_forward(&a, self.w4(2 * j), self.w1(2 * j + 1), CloudClassifierSpec::geom(b))?;
            let r = nn::leaky_relu(&y, 0.0);
            let (p, pool) = nn::max_pool2_forward(&r);
            blocks.push(BlockCache { conv, pre: y, pool });
            a = p;
        }
        let pooled_dim = a.dim();
        let n = pooled_dim.0;
        let flat = a
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((n, pooled_dim.1 * pooled_dim.2 * pooled_dim.3))
            .expect("contiguous");
        let k = 2 * self.spec.conv_blocks.len();
        let hidden_pre = nn::linear_forward(flat.view(), self.w2(k), self.w1(k + 1));
        let hidden = hidden_pre.mapv(|v| v.max(F::zero()));
        let logits = nn::linear_forward(hidden.view(), self.w2(k + 2), self.w1(k + 3));
        Ok((
            logits.column(0).to_vec(),
            ClassifierCache {
                blocks,
                pooled_dim,
                flat,
                hidden_pre,
                hidden,
            },
        ))
    }

    pub fn backward(&self, cache: &ClassifierCache<F>, dlogits: &[F]) -> ParameterSet<F> {
        let mut grads = self.params.zeros_like();
        let k = 2 * self.spec.conv_blocks.len();
        let dy = Array2::from_shape_vec((dlogits.len(), 1), dlogits.to_vec()).expect("n x 1");
        let (dh, dw, db) = nn::linear_backward(cache.hidden.view(), self.w2(k + 2), dy.view());
        *grads.tensor_mut(k + 2) += &dw.into_dyn();
        *grads.tensor_mut(k + 3) += &db.into_dyn();
        let dh_pre = ndarray::Zip::from(&dh)
            .and(&cache.hidden_pre)
            .map_collect(|&g, &z| if z > F::zero() { g } else { F::zero() });
        let (dflat, dw, db) = nn::linear_backward(cache.flat.view(), self.w2(k), dh_pre.view());
        *grads.tensor_mut(k) += &dw.into_dyn();
        *grads.tensor_mut(k + 1) += &db.into_dyn();
        let mut da = dflat.into_shape_with_order(cache.pooled_dim).expect("contiguous");
        for (j, b) in cache.blocks.iter().enumerate().rev() {
            let dr = nn::max_pool2_backward(&b.pool, &da);
            let dy = nn::leaky_relu_backward(&b.pre, &dr, 0.0);
            let (dx, dw, db) = nn::conv2d_backward(&b.conv, self.w4(2 * j), &dy);
            *grads.tensor_mut(2 * j) += &dw.into_dyn();
            *grads.tensor_mut(2 * j + 1) += &db.into_dyn();
            da = dx;
        }
        grads
    }
}

impl CloudClassifier<f32> {
    /// Normalizes a raw tile to `[-1, 1]` and resizes it bilinearly to the input size.
    pub fn prepare(&self, tile: &Tile) -> Result<Array3<f32>> {
        if tile.channels() != 3 {
            return Err(Error::Type(format!("cloud scoring needs 3 channels, got {}", tile.channels())));
        }
        let max = DynamicRange::of_dtype(tile.dtype_origin())?.max_value;
        let p = tile.pixels();
        let (_, h, w) = p.dim();
        let img = ImageBuffer::<Rgb<f32>, Vec<f32>>::from_fn(w as u32, h as u32, |x, y| {
            let (x, y) = (x as usize, y as usize);
            Rgb([0, 1, 2].map(|c| (2.0 * p[[c, y, x]] / max - 1.0) as f32))
        });
        let (th, tw) = self.spec.input_size;
        let img = if (th, tw) == (h, w) {
            img
        } else {
            resize(&img, tw as u32, th as u32, FilterType::Triangle)
        };
        Ok(Array3::from_shape_fn((3, th, tw), |(c, y, x)| {
            img.get_pixel(x as u32, y as u32).0[c]
        }))
    }

    pub fn score(&self, tile: &Tile) -> Result<CloudScore> {
        let x = self.prepare(tile)?.insert_axis(ndarray::Axis(0));
        let (logits, _) = self.forward(&x)?;
        Ok(CloudScore {
            value: sigmoid(logits[0] as f64),
            method: CloudMethod::Cnn,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.params.save_dir(&dir.join(WEIGHTS_DIR))?;
        let path = dir.join(SPEC_FILE);
        let text = serde_json::to_string_pretty(&self.spec).expect("spec serializes");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    /// Missing or unreadable weights are a configuration problem, not a data one.
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(SPEC_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::config("cloud.weights", format!("cannot read {}: {e}", path.display())))?;
        let spec: CloudClassifierSpec =
            serde_json::from_str(&text).map_err(|e| Error::config("cloud.weights", format!("{}: {e}", path.display())))?;
        let params = ParameterSet::load_dir(&dir.join(WEIGHTS_DIR)).map_err(|e| Error::config("cloud.weights", e.to_string()))?;
        Self::from_params(spec, params)
    }
}

/// `cnn_cloud_score` with the classifier passed explicitly.
pub fn cnn_cloud_score(tile: &Tile, model: &CloudClassifier<f32>) -> Result<CloudScore> {
    model.score(tile)
}

/// Binary cross-entropy on logits; `1` marks a cloudy tile.
pub fn bce_with_logits(logit: f64, label: f64) -> (f64, f64) {
    (softplus(logit) - label * logit, sigmoid(logit) - label)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifierTraining {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for ClassifierTraining {
    fn default() -> Self {
        Self {
            steps: 200,
            batch_size: 4,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

/// Fits a fresh classifier to labelled tiles (`true` = cloudy) with Adam. Returns the model
/// and the per-step mean loss.
pub fn train_classifier(
    spec: &CloudClassifierSpec,
    samples: &[(Tile, bool)],
    cfg: &ClassifierTraining,
) -> Result<(CloudClassifier<f32>, Vec<f64>)> {
    if samples.is_empty() {
        return Err(Error::config("cloud.training", "no labelled tiles"));
    }
    let mut model = CloudClassifier::from_params(spec.clone(), build_classifier(spec, cfg.seed)?)?;
    let inputs = samples.iter().map(|(t, _)| model.prepare(t)).collect::<Result<Vec<_>>>()?;
    let adam = AdamConfig {
        learning_rate: cfg.learning_rate,
        beta1: 0.9,
        beta2: 0.999,
    };
    let mut state = AdamState::new(&model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut cursor = order.len();
    let mut losses = Vec::with_capacity(cfg.steps);
    let (h, w) = spec.input_size;
    for _ in 0..cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size.min(samples.len()) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }
        let mut x = Array4::zeros((batch.len(), 3, h, w));
        for (i, &k) in batch.iter().enumerate() {
            x.slice_mut(s![i, .., .., ..]).assign(&inputs[k]);
        }
        let (logits, cache) = model.forward(&x)?;
        let n = batch.len() as f64;
        let mut loss = 0.0;
        let mut dl = Vec::with_capacity(batch.len());
        for (&z, &k) in logits.iter().zip(&batch) {
            let (l, g) = bce_with_logits(z as f64, if samples[k].1 { 1.0 } else { 0.0 });
            loss += l / n;
            dl.push((g / n) as f32);
        }
        let grads = model.backward(&cache, &dl);
        optimizer_step(&mut model.params, &grads, &mut state, &adam)?;
        losses.push(loss);
    }
    Ok((model, losses))
}

/// How curation scores tiles.
pub enum Scorer<'a> {
    Heuristic,
    Cnn(&'a CloudClassifier<f32>),
}

impl Scorer<'_> {
    pub fn score(&self, tile: &Tile) -> Result<CloudScore> {
        match self {
            Scorer::Heuristic => heuristic_cloud_score(tile),
            Scorer::Cnn(m) => m.score(tile),
        }
    }
}

/// An entry curation could not score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reject {
    pub pair_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurationOutcome {
    /// Entries scoring at or below the threshold, each with its score recorded.
    pub manifest: Manifest,
    /// Entries scored above the threshold, with their scores.
    pub filtered: Vec<ManifestEntry>,
    pub rejects: Vec<Reject>,
}

/// Scores every optical tile in parallel and keeps entries with `score ≤ threshold`.
pub fn curate(manifest: &Manifest, threshold: f64, scorer: &Scorer<'_>) -> Result<CurationOutcome> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::config("cloud.threshold", format!("{threshold} not in [0, 1]")));
    }
    let scores = par::map_slice(manifest.entries(), |e| {
        load_tile_as(&manifest.resolve(&e.optical_path), TileRole::Optical).and_then(|t| scorer.score(&t))
    });
    let mut kept = Vec::new();
    let mut filtered = Vec::new();
    let mut rejects = Vec::new();
    for (entry, score) in manifest.entries().iter().zip(scores) {
        match score {
            Ok(s) => {
                let e = ManifestEntry {
                    cloud_score: Some(s.value),
                    ..entry.clone()
                };
                if s.value <= threshold {
                    kept.push(e);
                } else {
                    filtered.push(e);
                }
            }
            Err(err) => rejects.push(Reject {
                pair_id: entry.pair_id.clone(),
                reason: err.to_string(),
            }),
        }
    }
    let mut out = Manifest::new(kept, manifest.root.clone())?;
    out.created_at = manifest.created_at;
    out.curation_params = manifest.curation_params.clone();
    out.curation_params.insert("threshold".into(), threshold.into());
    out.curation_params.insert(
        "method".into(),
        match scorer {
            Scorer::Heuristic => "heuristic",
            Scorer::Cnn(_) => "cnn",
        }
        .into(),
    );
    Ok(CurationOutcome {
        manifest: out,
        filtered,
        rejects,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tile_store::{save_tile, BitDepth, DType, Split};

    fn rgb(h: usize, w: usize, f: impl Fn(usize, usize, usize) -> f64, dtype: DType) -> Tile {
        Tile::new(Array3::from_shape_fn((3, h, w), |(c, y, x)| f(c, y, x)), dtype, None).unwrap()
    }

    #[test]
    fn heuristic_examples() {
        let white = rgb(8, 8, |_, _, _| 255.0, DType::U8);
        let black = rgb(8, 8, |_, _, _| 0.0, DType::U8);
        let half = rgb(8, 8, |c, y, _| if y < 4 || c == 0 { 255.0 } else { 0.0 }, DType::U8);
        assert_eq!(heuristic_cloud_score(&white).unwrap().value, 1.0);
        assert_eq!(heuristic_cloud_score(&black).unwrap().value, 0.0);
        assert_eq!(heuristic_cloud_score(&half).unwrap().value, 0.5);
        let sar = Tile::new(Array3::zeros((2, 4, 4)), DType::U8, None).unwrap();
        assert!(matches!(heuristic_cloud_score(&sar), Err(Error::Type(_))));
    }

    #[test]
    fn heuristic_is_invariant_to_channel_order_of_gray_pixels() {
        let t = rgb(6, 6, |c, y, x| [240.0, 245.0, 250.0][(c + x + y) % 3], DType::U8);
        let swapped = rgb(6, 6, |c, y, x| [240.0, 245.0, 250.0][(2 - c + x + y) % 3], DType::U8);
        assert_eq!(heuristic_cloud_score(&t).unwrap(), heuristic_cloud_score(&swapped).unwrap());
    }

    #[test]
    fn zero_head_scores_one_half() {
        let spec = CloudClassifierSpec::default();
        let mut params = build_classifier(&spec, 3).unwrap();
        let n = params.len();
        params.tensor_mut(n - 2).fill(0.0);
        params.tensor_mut(n - 1).fill(0.0);
        let m = CloudClassifier::from_params(spec, params).unwrap();
        let t = rgb(64, 64, |c, y, x| ((c * 7 + y * 3 + x) % 256) as f64, DType::U8);
        assert_eq!(m.score(&t).unwrap().value, 0.5);
    }

    #[test]
    fn score_ignores_storage_depth() {
        let m = CloudClassifier::from_params(CloudClassifierSpec::default(), build_classifier(&Default::default(), 4).unwrap()).unwrap();
        let f = |c: usize, y: usize, x: usize| ((c * 31 + y * 5 + x * 3) % 256) as f64;
        let a = rgb(64, 64, f, DType::U8);
        let b = rgb(64, 64, |c, y, x| f(c, y, x) * 257.0, DType::U16);
        assert!((m.score(&a).unwrap().value - m.score(&b).unwrap().value).abs() < 1e-6);
    }

    #[test]
    fn resize_accepts_other_tile_sizes() {
        let m = CloudClassifier::from_params(CloudClassifierSpec::default(), build_classifier(&Default::default(), 4).unwrap()).unwrap();
        let t = rgb(100, 80, |_, _, _| 128.0, DType::U8);
        let s = m.score(&t).unwrap().value;
        assert!((0.0..=1.0).contains(&s));
    }

    #[test]
    fn missing_weights_are_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(CloudClassifier::load(&dir.path().join("none")), Err(Error::Config { .. })));
    }

    #[test]
    fn weights_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = CloudClassifier::from_params(CloudClassifierSpec::default(), build_classifier(&Default::default(), 4).unwrap()).unwrap();
        m.save(dir.path()).unwrap();
        assert_eq!(CloudClassifier::load(dir.path()).unwrap(), m);
    }

    #[test]
    fn spec_validation() {
        assert!(CloudClassifierSpec::default().validate().is_ok());
        let bad = CloudClassifierSpec {
            threshold: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let empty = CloudClassifierSpec {
            conv_blocks: vec![],
            ..Default::default()
        };
        assert!(empty.validate().is_err());
    }

    fn write_manifest_with_scores(dir: &Path, colors: &[f64]) -> Manifest {
        let mut entries = Vec::new();
        for (i, &v) in colors.iter().enumerate() {
            let id = format!("p{i}");
            let sar = Tile::new(Array3::zeros((2, 4, 4)), DType::U8, None).unwrap();
            // Top `v` fraction of rows white, rest black.
            let rows = (v * 4.0).round() as usize;
            let opt = rgb(4, 4, |_, y, _| if y < rows { 255.0 } else { 0.0 }, DType::U8);
            save_tile(&sar, &dir.join(format!("{id}_s.png")), BitDepth::U8).unwrap();
            save_tile(&opt, &dir.join(format!("{id}_o.png")), BitDepth::U8).unwrap();
            entries.push(ManifestEntry {
                pair_id: id.clone(),
                sar_path: format!("{id}_s.png").into(),
                optical_path: format!("{id}_o.png").into(),
                cloud_score: None,
                split: Split::Train,
            });
        }
        Manifest::new(entries, dir).unwrap()
    }

    #[test]
    fn curation_keeps_entries_at_or_below_threshold() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_manifest_with_scores(dir.path(), &[0.25, 0.75, 0.5]);
        let out = curate(&m, 0.5, &Scorer::Heuristic).unwrap();
        let ids: Vec<_> = out.manifest.entries().iter().map(|e| e.pair_id.as_str()).collect();
        assert_eq!(ids, ["p0", "p2"]);
        assert_eq!(out.filtered.len(), 1);
        let all = curate(&m, 1.0, &Scorer::Heuristic).unwrap();
        assert_eq!(all.manifest.len(), 3);
        assert!(all.manifest.entries().iter().all(|e| e.cloud_score.is_some()));
        let none = curate(&m, 0.0, &Scorer::Heuristic).unwrap();
        assert!(none.manifest.is_empty());
    }

    #[test]
    fn unreadable_tiles_become_rejects() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_manifest_with_scores(dir.path(), &[0.0, 0.0]);
        fs::remove_file(dir.path().join("p1_o.png")).unwrap();
        let out = curate(&m, 1.0, &Scorer::Heuristic).unwrap();
        assert_eq!(out.manifest.len(), 1);
        assert_eq!(out.rejects.len(), 1);
        assert_eq!(out.rejects[0].pair_id, "p1");
    }
}
