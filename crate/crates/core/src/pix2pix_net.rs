//! U-Net generator and conditional patch discriminator.
//!
//! Both networks are plain forward computations over a [`ParameterSet`] with a matching
//! hand-written backward pass. All convolutions are 4×4 with padding 1.

use ndarray::{Array1, Array4, ArrayView1, ArrayView4, Ix1, Ix4, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, ConvGeom, Norm};
use crate::params::ParameterSet;
use crate::tensor::Scalar;

const DOWN: ConvGeom = ConvGeom::new(4, 2, 1);
const FLAT: ConvGeom = ConvGeom::new(4, 1, 1);
pub const LEAK: f64 = 0.2;
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub base_width: usize,
    pub depth: usize,
    /// Decoder levels with dropout, counted from the bottleneck (0) outwards.
    pub dropout_levels: Vec<usize>,
    pub dropout_rate: f64,
    pub norm: Norm,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            in_channels: 2,
            out_channels: 3,
            base_width: 64,
            depth: 8,
            dropout_levels: vec![0, 1, 2],
            dropout_rate: 0.5,
            norm: Norm::Instance,
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 {
            return Err(Error::config("generator.depth", format!("{} < 2", self.depth)));
        }
        if self.in_channels == 0 || self.out_channels == 0 || self.base_width == 0 {
            return Err(Error::config("generator", "channel counts must be positive"));
        }
        if let Some(l) = self.dropout_levels.iter().find(|&&l| l >= self.depth) {
            return Err(Error::config(
                "generator.dropout_levels",
                format!("level {l} outside 0..{}", self.depth),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config(
                "generator.dropout_rate",
                format!("{} not in [0, 1)", self.dropout_rate),
            ));
        }
        Ok(())
    }

    /// Channel width of encoder level `i`: `base·2^i`, capped at `8·base`.
    pub fn encoder_width(&self, i: usize) -> usize {
        self.base_width * (1usize << i.min(3))
    }

    /// `(input, output)` channels of decoder level `k` (0 = innermost).
    pub fn decoder_channels(&self, k: usize) -> (usize, usize) {
        let d = self.depth;
        let cin = if k == 0 {
            self.encoder_width(d - 1)
        } else {
            2 * self.encoder_width(d - 1 - k)
        };
        let cout = if k == d - 1 {
            self.out_channels
        } else {
            self.encoder_width(d - 2 - k)
        };
        (cin, cout)
    }

    /// Encoder levels followed by normalization: all but the outermost and the bottleneck.
    fn encoder_normed(&self, i: usize) -> bool {
        i > 0 && i < self.depth - 1 && self.norm != Norm::None
    }

    fn decoder_normed(&self, k: usize) -> bool {
        k < self.depth - 1 && self.norm != Norm::None
    }

    fn has_dropout(&self, k: usize) -> bool {
        self.dropout_rate > 0.0 && self.dropout_levels.contains(&k)
    }

    pub fn check_input(&self, c: usize, h: usize, w: usize) -> Result<()> {
        if c != self.in_channels {
            return Err(Error::Shape(format!(
                "generator expects {} input channels, got {c}",
                self.in_channels
            )));
        }
        let m = 1usize << self.depth;
        if !h.is_multiple_of(m) || !w.is_multiple_of(m) || h == 0 || w == 0 {
            return Err(Error::Shape(format!("input {h}x{w} is not divisible by 2^{} = {m}", self.depth)));
        }
        Ok(())
    }

    /// Parameter names and shapes in storage order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for i in 0..self.depth {
            let cin = if i == 0 { self.in_channels } else { self.encoder_width(i - 1) };
            let cout = self.encoder_width(i);
            push_conv(
                &mut out,
                &format!("enc{i}"),
                vec![cout, cin, 4, 4],
                cout,
                self.encoder_normed(i) && self.norm == Norm::Batch,
            );
        }
        for k in 0..self.depth {
            let (cin, cout) = self.decoder_channels(k);
            push_conv(
                &mut out,
                &format!("dec{k}"),
                vec![cin, cout, 4, 4],
                cout,
                self.decoder_normed(k) && self.norm == Norm::Batch,
            );
        }
        out
    }
}

fn push_conv(out: &mut Vec<(String, Vec<usize>)>, prefix: &str, wshape: Vec<usize>, cout: usize, affine: bool) {
    out.push((format!("{prefix}.weight"), wshape));
    out.push((format!("{prefix}.bias"), vec![cout]));
    if affine {
        out.push((format!("{prefix}.gamma"), vec![cout]));
        out.push((format!("{prefix}.beta"), vec![cout]));
    }
}

fn init_params(layout: &[(String, Vec<usize>)], seed: u64) -> ParameterSet<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0f64, INIT_STD).expect("valid std");
    let mut set = ParameterSet::new(seed);
    for (name, shape) in layout {
        let t = if name.ends_with(".weight") {
            ndarray::ArrayD::from_shape_simple_fn(IxDyn(shape), || normal.sample(&mut rng) as f32)
        } else if name.ends_with(".gamma") {
            ndarray::ArrayD::from_shape_simple_fn(IxDyn(shape), || 1.0 + normal.sample(&mut rng) as f32)
        } else {
            ndarray::ArrayD::zeros(IxDyn(shape))
        };
        set.push(name.clone(), t).expect("layout names are unique");
    }
    set
}

/// Fresh generator parameters drawn from `N(0, 0.02)` with the given seed.
pub fn build_generator(spec: &GeneratorSpec, seed: u64) -> Result<ParameterSet<f32>> {
    spec.validate()?;
    Ok(init_params(&spec.layout(), seed))
}

/// How the generator treats its dropout layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active, masks drawn from `seed`.
    Train { seed: u64 },
    /// Dropout disabled.
    Eval,
    /// Test-time dropout with masks drawn from `seed`.
    McDropout { seed: u64 },
}

impl Mode {
    fn dropout_seed(self) -> Option<u64> {
        match self {
            Mode::Train { seed } | Mode::McDropout { seed } => Some(seed),
            Mode::Eval => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ConvIdx {
    w: usize,
    b: usize,
    affine: Option<(usize, usize)>,
}

fn conv_indices(layout: &[(String, Vec<usize>)], prefix: &str) -> ConvIdx {
    let find = |s: &str| layout.iter().position(|(n, _)| n == &format!("{prefix}.{s}"));
    ConvIdx {
        w: find("weight").expect("layout has weight"),
        b: find("bias").expect("layout has bias"),
        affine: find("gamma").zip(find("beta")),
    }
}

fn view4<F: Scalar>(p: &ParameterSet<F>, i: usize) -> ArrayView4<'_, F> {
    p.tensor(i).view().into_dimensionality::<Ix4>().expect("4-d weight")
}

fn view1<F: Scalar>(p: &ParameterSet<F>, i: usize) -> ArrayView1<'_, F> {
    p.tensor(i).view().into_dimensionality::<Ix1>().expect("1-d vector")
}

enum NormCache<F> {
    Instance(nn::InstanceNormCache<F>),
    Batch(nn::BatchNormCache<F>),
    None,
}

fn norm_forward<F: Scalar>(x: Array4<F>, norm: Norm, enabled: bool, idx: &ConvIdx, p: &ParameterSet<F>) -> (Array4<F>, NormCache<F>) {
    if !enabled {
        return (x, NormCache::None);
    }
    match norm {
        Norm::Instance => {
            let (y, c) = nn::instance_norm_forward(&x);
            (y, NormCache::Instance(c))
        }
        Norm::Batch => {
            let (g, b) = idx.affine.expect("batch norm has affine params");
            let (y, c) = nn::batch_norm_forward(&x, view1(p, g), view1(p, b));
            (y, NormCache::Batch(c))
        }
        Norm::None => (x, NormCache::None),
    }
}

fn norm_backward<F: Scalar>(
    cache: &NormCache<F>,
    dy: Array4<F>,
    idx: &ConvIdx,
    p: &ParameterSet<F>,
    grads: &mut ParameterSet<F>,
) -> Array4<F> {
    match cache {
        NormCache::None => dy,
        NormCache::Instance(c) => nn::instance_norm_backward(c, &dy),
        NormCache::Batch(c) => {
            let (g, b) = idx.affine.expect("batch norm has affine params");
            let (dx, dg, db) = nn::batch_norm_backward(c, view1(p, g), &dy);
            *grads.tensor_mut(g) += &dg.into_dyn();
            *grads.tensor_mut(b) += &db.into_dyn();
            dx
        }
    }
}

fn add_conv_grads<F: Scalar>(grads: &mut ParameterSet<F>, idx: &ConvIdx, dw: Array4<F>, db: Array1<F>) {
    *grads.tensor_mut(idx.w) += &dw.into_dyn();
    *grads.tensor_mut(idx.b) += &db.into_dyn();
}

/// U-Net generator: parameters plus the spec that shapes them.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator<F> {
    pub spec: GeneratorSpec,
    pub params: ParameterSet<F>,
    enc: Vec<ConvIdx>,
    dec: Vec<ConvIdx>,
}

struct EncCache<F> {
    conv: nn::ConvCache<F>,
    norm: NormCache<F>,
}

struct DecCache<F> {
    z: Array4<F>,
    conv: nn::ConvTransposeCache<F>,
    norm: NormCache<F>,
    mask: Option<Array4<F>>,
}

/// Intermediate values kept by [`Generator::forward`] for the backward pass.
pub struct GeneratorCache<F> {
    enc: Vec<EncCache<F>>,
    /// Encoder outputs `e_i` (pre-activation of the next level).
    enc_out: Vec<Array4<F>>,
    dec: Vec<DecCache<F>>,
    out: Array4<F>,
}

impl<F: Scalar> Generator<F> {
    pub fn from_params(spec: GeneratorSpec, params: ParameterSet<F>) -> Result<Self> {
        spec.validate()?;
        let layout = spec.layout();
        params.check_layout(&layout)?;
        let enc = (0..spec.depth).map(|i| conv_indices(&layout, &format!("enc{i}"))).collect();
        let dec = (0..spec.depth).map(|k| conv_indices(&layout, &format!("dec{k}"))).collect();
        Ok(Self { spec, params, enc, dec })
    }

    /// Runs the network on a `(batch, in_channels, H, W)` batch; output is `tanh`-bounded.
    pub fn forward(&self, x: &Array4<F>, mode: Mode) -> Result<(Array4<F>, GeneratorCache<F>)> {
        let (_, c, h, w) = x.dim();
        self.spec.check_input(c, h, w)?;
        let d = self.spec.depth;
        let p = &self.params;
        let mut rng = mode.dropout_seed().map(ChaCha8Rng::seed_from_u64);

        let mut enc = Vec::with_capacity(d);
        let mut enc_out: Vec<Array4<F>> = Vec::with_capacity(d);
        for i in 0..d {
            let idx = &self.enc[i];
            let a = if i == 0 { x.clone() } else { nn::leaky_relu(&enc_out[i - 1], LEAK) };
            let (c, conv) = nn::conv2d_forward(&a, view4(p, idx.w), view1(p, idx.b), DOWN)?;
            let (e, norm) = norm_forward(c, self.spec.norm, self.spec.encoder_normed(i), idx, p);
            enc.push(EncCache { conv, norm });
            enc_out.push(e);
        }

        let mut dec = Vec::with_capacity(d);
        let mut u: Option<Array4<F>> = None;
        let mut out = None;
        for k in 0..d {
            let idx = &self.dec[k];
            let z = match &u {
                None => enc_out[d - 1].clone(),
                Some(prev) => nn::concat_channels(prev, &enc_out[d - 1 - k])?,
            };
            let r = nn::leaky_relu(&z, 0.0);
            let (t, conv) = nn::conv_transpose2d_forward(&r, view4(p, idx.w), view1(p, idx.b), DOWN)?;
            if k == d - 1 {
                out = Some(nn::tanh_forward(&t));
                dec.push(DecCache {
                    z,
                    conv,
                    norm: NormCache::None,
                    mask: None,
                });
                break;
            }
            let (n, norm) = norm_forward(t, self.spec.norm, self.spec.decoder_normed(k), idx, p);
            let mask = match rng.as_mut() {
                Some(r) if self.spec.has_dropout(k) => Some(nn::dropout_mask(n.dim(), self.spec.dropout_rate, r)),
                _ => None,
            };
            u = Some(match &mask {
                Some(m) => &n * m,
                None => n,
            });
            dec.push(DecCache { z, conv, norm, mask });
        }
        let out = out.expect("depth >= 2 reaches the outermost level");
        Ok((out.clone(), GeneratorCache { enc, enc_out, dec, out }))
    }

    /// Gradients of a scalar loss with respect to all parameters and the input, given
    /// `d loss / d output`.
    pub fn backward(&self, cache: &GeneratorCache<F>, dout: &Array4<F>) -> (ParameterSet<F>, Array4<F>) {
        let d = self.spec.depth;
        let p = &self.params;
        let mut grads = p.zeros_like();
        let mut d_enc: Vec<Array4<F>> = cache.enc_out.iter().map(|e| Array4::zeros(e.dim())).collect();

        let mut du: Option<Array4<F>> = None;
        for k in (0..d).rev() {
            let idx = &self.dec[k];
            let dc = &cache.dec[k];
            let dt = if k == d - 1 {
                nn::tanh_backward(&cache.out, dout)
            } else {
                let mut g = du.take().expect("outer level provides the gradient");
                if let Some(m) = &dc.mask {
                    g = &g * m;
                }
                norm_backward(&dc.norm, g, idx, p, &mut grads)
            };
            let (dr, dw, db) = nn::conv_transpose2d_backward(&dc.conv, view4(p, idx.w), &dt);
            add_conv_grads(&mut grads, idx, dw, db);
            let dz = nn::leaky_relu_backward(&dc.z, &dr, 0.0);
            if k == 0 {
                d_enc[d - 1] += &dz;
            } else {
                let first = self.spec.decoder_channels(k - 1).1;
                let (du_prev, de) = nn::split_channels(&dz, first);
                d_enc[d - 1 - k] += &de;
                du = Some(du_prev);
            }
        }

        let mut dx = None;
        for i in (0..d).rev() {
            let idx = &self.enc[i];
            let ec = &cache.enc[i];
            let de = std::mem::replace(&mut d_enc[i], Array4::zeros((0, 0, 0, 0)));
            let dc = norm_backward(&ec.norm, de, idx, p, &mut grads);
            let (da, dw, db) = nn::conv2d_backward(&ec.conv, view4(p, idx.w), &dc);
            add_conv_grads(&mut grads, idx, dw, db);
            if i == 0 {
                dx = Some(da);
            } else {
                d_enc[i - 1] += &nn::leaky_relu_backward(&cache.enc_out[i - 1], &da, LEAK);
            }
        }
        (grads, dx.expect("encoder level 0 exists"))
    }
}

/// Both network shapes, as stored next to a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    pub generator: GeneratorSpec,
    pub discriminator: DiscriminatorSpec,
}

impl ModelSpec {
    /// Desk-scale preset for 64×64 tiles: depth-4 U-Net of base width 16.
    pub fn tiny() -> Self {
        Self {
            generator: GeneratorSpec {
                base_width: 16,
                depth: 4,
                dropout_levels: vec![0],
                ..GeneratorSpec::default()
            },
            discriminator: DiscriminatorSpec {
                widths: vec![16, 32, 64],
                ..DiscriminatorSpec::default()
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.discriminator.validate()?;
        let want = self.generator.in_channels + self.generator.out_channels;
        if self.discriminator.in_channels != want {
            return Err(Error::config(
                "discriminator.in_channels",
                format!("{} != generator in + out channels {want}", self.discriminator.in_channels),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscriminatorSpec {
    /// SAR channels plus optical channels.
    pub in_channels: usize,
    pub widths: Vec<usize>,
    pub norm: Norm,
}

impl Default for DiscriminatorSpec {
    fn default() -> Self {
        Self {
            in_channels: 5,
            widths: vec![64, 128, 256, 512],
            norm: Norm::Instance,
        }
    }
}

impl DiscriminatorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 {
            return Err(Error::config("discriminator.in_channels", "must be positive"));
        }
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::config("discriminator.widths", "must be a nonempty list of positive widths"));
        }
        let body = &self.widths[..self.widths.len() - 1];
        if body.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config(
                "discriminator.widths",
                format!("{:?} must increase strictly before the final stage", self.widths),
            ));
        }
        Ok(())
    }

    /// Stride of body layer `j`: 2 everywhere except the last of two or more layers.
    pub fn stride(&self, j: usize) -> usize {
        if self.widths.len() > 1 && j == self.widths.len() - 1 {
            1
        } else {
            2
        }
    }

    fn normed(&self, j: usize) -> bool {
        j > 0 && self.norm != Norm::None
    }

    /// Spatial size of the logit map for an `n`-pixel input side.
    pub fn output_size(&self, n: usize) -> Option<usize> {
        let mut s = n;
        for j in 0..self.widths.len() {
            s = ConvGeom::new(4, self.stride(j), 1).conv_out(s)?;
        }
        FLAT.conv_out(s)
    }

    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut cin = self.in_channels;
        for (j, &w) in self.widths.iter().enumerate() {
            push_conv(
                &mut out,
                &format!("disc{j}"),
                vec![w, cin, 4, 4],
                w,
                self.normed(j) && self.norm == Norm::Batch,
            );
            cin = w;
        }
        push_conv(&mut out, "out", vec![1, cin, 4, 4], 1, false);
        out
    }
}

pub fn build_discriminator(spec: &DiscriminatorSpec, seed: u64) -> Result<ParameterSet<f32>> {
    spec.validate()?;
    Ok(init_params(&spec.layout(), seed))
}

/// Conditional patch discriminator over `(sar, optical)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator<F> {
    pub spec: DiscriminatorSpec,
    pub params: ParameterSet<F>,
    body: Vec<ConvIdx>,
    head: ConvIdx,
}

pub struct DiscriminatorCache<F> {
    layers: Vec<(nn::ConvCache<F>, NormCache<F>, Array4<F>)>,
    head: nn::ConvCache<F>,
    sar_channels: usize,
}

impl<F: Scalar> Discriminator<F> {
    pub fn from_params(spec: DiscriminatorSpec, params: ParameterSet<F>) -> Result<Self> {
        spec.validate()?;
        let layout = spec.layout();
        params.check_layout(&layout)?;
        let body = (0..spec.widths.len()).map(|j| conv_indices(&layout, &format!("disc{j}"))).collect();
        let head = conv_indices(&layout, "out");
        Ok(Self { spec, params, body, head })
    }

    /// Raw logit map `(batch, 1, h', w')` for the channel-concatenated pair.
    pub fn forward(&self, sar: &Array4<F>, optical: &Array4<F>) -> Result<(Array4<F>, DiscriminatorCache<F>)> {
        let (sn, sc, sh, sw) = sar.dim();
        let (on, oc, oh, ow) = optical.dim();
        if (sn, sh, sw) != (on, oh, ow) {
            return Err(Error::Shape(format!(
                "SAR batch {:?} and optical batch {:?} disagree",
                sar.dim(),
                optical.dim()
            )));
        }
        if sc + oc != self.spec.in_channels {
            return Err(Error::Shape(format!(
                "discriminator expects {} channels, got {sc}+{oc}",
                self.spec.in_channels
            )));
        }
        let p = &self.params;
        let mut a = nn::concat_channels(sar, optical)?;
        let mut layers = Vec::with_capacity(self.body.len());
        for (j, idx) in self.body.iter().enumerate() {
            let g = ConvGeom::new(4, self.spec.stride(j), 1);
            let (c, conv) = nn::conv2d_forward(&a, view4(p, idx.w), view1(p, idx.b), g)?;
            let (n, norm) = norm_forward(c, self.spec.norm, self.spec.normed(j), idx, p);
            a = nn::leaky_relu(&n, LEAK);
            layers.push((conv, norm, n));
        }
        let (logits, head) = nn::conv2d_forward(&a, view4(p, self.head.w), view1(p, self.head.b), FLAT)?;
        Ok((
            logits,
            DiscriminatorCache {
                layers,
                head,
                sar_channels: sc,
            },
        ))
    }

    /// Parameter gradients plus `(d sar, d optical)` for the given `d loss / d logits`.
    pub fn backward(&self, cache: &DiscriminatorCache<F>, dlogits: &Array4<F>) -> (ParameterSet<F>, Array4<F>, Array4<F>) {
        let p = &self.params;
        let mut grads = p.zeros_like();
        let (mut da, dw, db) = nn::conv2d_backward(&cache.head, view4(p, self.head.w), dlogits);
        add_conv_grads(&mut grads, &self.head, dw, db);
        for (j, idx) in self.body.iter().enumerate().rev() {
            let (conv, norm, pre) = &cache.layers[j];
            let dn = nn::leaky_relu_backward(pre, &da, LEAK);
            let dc = norm_backward(norm, dn, idx, p, &mut grads);
            let (dx, dw, db) = nn::conv2d_backward(conv, view4(p, idx.w), &dc);
            add_conv_grads(&mut grads, idx, dw, db);
            da = dx;
        }
        let (ds, doptical) = nn::split_channels(&da, cache.sar_channels);
        (grads, ds, doptical)
    }
}
