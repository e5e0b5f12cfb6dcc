//! Radiometric transforms between stored integer tiles and the model's `[-1, 1]` domain.

use ndarray::{Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tile_store::{DType, Tile, TileRole};

/// Peak value of a tile's integer encoding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicRange {
    pub max_value: f64,
}

impl DynamicRange {
    pub const U8: DynamicRange = DynamicRange { max_value: 255.0 };
    pub const U16: DynamicRange = DynamicRange { max_value: 65535.0 };

    pub fn new(max_value: f64) -> Result<Self> {
        if !(max_value > 0.0 && max_value.is_finite()) {
            return Err(Error::Validation(format!("dynamic range max {max_value} must be positive")));
        }
        Ok(Self { max_value })
    }

    pub fn of_dtype(dtype: DType) -> Result<Self> {
        dtype
            .max_value()
            .map(|max_value| Self { max_value })
            .ok_or_else(|| Error::Type("floating-point tiles carry no integer dynamic range".into()))
    }

    fn integer_dtype(self) -> DType {
        if self.max_value == 255.0 {
            DType::U8
        } else if self.max_value == 65535.0 {
            DType::U16
        } else {
            DType::F32
        }
    }
}

/// Percentile clip-and-stretch settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CountCutParams {
    pub low_fraction: f64,
    pub high_fraction: f64,
    pub per_channel: bool,
}

impl Default for CountCutParams {
    fn default() -> Self {
        Self {
            low_fraction: 0.02,
            high_fraction: 0.98,
            per_channel: true,
        }
    }
}

impl CountCutParams {
    pub fn new(low_fraction: f64, high_fraction: f64, per_channel: bool) -> Result<Self> {
        let p = Self {
            low_fraction,
            high_fraction,
            per_channel,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = (self.low_fraction, self.high_fraction);
        if !(0.0..1.0).contains(&lo) {
            return Err(Error::config("low_fraction", format!("{lo} not in [0, 1)")));
        }
        if !(hi > 0.0 && hi <= 1.0) {
            return Err(Error::config("high_fraction", format!("{hi} not in (0, 1]")));
        }
        if lo >= hi {
            return Err(Error::config("low_fraction", format!("{lo} must be below high_fraction {hi}")));
        }
        Ok(())
    }
}

/// Maps `[0, max]` onto `[-1, 1]` by `2v/max - 1`.
pub fn normalize(tile: &Tile, range: DynamicRange) -> Result<Tile> {
    let max = range.max_value;
    if let Some(bad) = tile.pixels().iter().find(|v| !(0.0..=max).contains(*v)) {
        return Err(Error::Range(format!("{bad} outside [0, {max}]")));
    }
    tile.with_pixels(tile.pixels().mapv(|v| 2.0 * v / max - 1.0), DType::F32)
}

/// Inverse of [`normalize`]; inputs outside `[-1, 1]` are clamped first.
pub fn denormalize(tile: &Tile, range: DynamicRange) -> Result<Tile> {
    let max = range.max_value;
    let px = tile.pixels().mapv(|v| (v.clamp(-1.0, 1.0) + 1.0) * max / 2.0);
    tile.with_pixels(px, range.integer_dtype())
}

/// 1-based nearest rank `max(1, ceil(fraction·n))`, tolerant of representation error in
/// products such as `0.02 · 100`.
pub fn nearest_rank(fraction: f64, n: usize) -> usize {
    let x = fraction * n as f64;
    let r = x.round();
    let rank = if (x - r).abs() <= 1e-9 * x.abs().max(1.0) { r } else { x.ceil() };
    (rank as usize).clamp(1, n)
}

fn cut_bounds(values: &mut [f64], params: &CountCutParams) -> (f64, f64) {
    let n = values.len();
    let lo_idx = nearest_rank(params.low_fraction, n) - 1;
    let hi_idx = nearest_rank(params.high_fraction, n) - 1;
    let by = |a: &f64, b: &f64| a.total_cmp(b);
    let (_, &mut lo, _) = values.select_nth_unstable_by(lo_idx, by);
    let (_, &mut hi, _) = values.select_nth_unstable_by(hi_idx, by);
    (lo, hi)
}

fn stretch(v: f64, lo: f64, hi: f64, out_max: f64) -> f64 {
    if lo == hi {
        0.0
    } else {
        (v.clamp(lo, hi) - lo) / (hi - lo) * out_max
    }
}

fn count_cut_into(tile: &Tile, params: &CountCutParams, out_max: f64) -> Result<Array3<f64>> {
    params.validate()?;
    let src = tile.pixels();
    let mut out = src.clone();
    if params.per_channel {
        for (ch_in, mut ch_out) in src.axis_iter(Axis(0)).zip(out.axis_iter_mut(Axis(0))) {
            let mut vals: Vec<f64> = ch_in.iter().copied().collect();
            let (lo, hi) = cut_bounds(&mut vals, params);
            ch_out.mapv_inplace(|v| stretch(v, lo, hi, out_max));
        }
    } else {
        let mut vals: Vec<f64> = src.iter().copied().collect();
        let (lo, hi) = cut_bounds(&mut vals, params);
        out.mapv_inplace(|v| stretch(v, lo, hi, out_max));
    }
    Ok(out)
}

/// Clips each channel (or the whole tile) to its nearest-rank `[low, high]` percentiles and
/// stretches the result over the tile's own dynamic range. Values stay real-valued.
pub fn cumulative_count_cut(tile: &Tile, params: &CountCutParams) -> Result<Tile> {
    let range = DynamicRange::of_dtype(tile.dtype_origin())?;
    let px = count_cut_into(tile, params, range.max_value)?;
    tile.with_pixels(px, tile.dtype_origin())
}

/// Count-cuts a 16-bit tile into `[0, 255]` and rounds half up to 8-bit integers.
pub fn convert_u16_to_u8(tile: &Tile, params: &CountCutParams) -> Result<Tile> {
    if tile.dtype_origin() != DType::U16 {
        return Err(Error::Type(format!("expected a u16 tile, got {:?}", tile.dtype_origin())));
    }
    let px = count_cut_into(tile, params, 255.0)?.mapv(|v| (v + 0.5).floor());
    tile.with_pixels(px, DType::U8)
}

/// Which tiles of a pair receive the count cut before normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CutTarget {
    #[default]
    Both,
    Sar,
    Optical,
    None,
}

/// Preprocessing applied to every tile on its way into the model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub count_cut: CountCutParams,
    pub apply_to: CutTarget,
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        self.count_cut.validate().map_err(|e| match e {
            Error::Config { key, message } => Error::config(format!("preprocess.count_cut.{key}"), message),
            other => other,
        })
    }

    fn cuts(&self, role: TileRole) -> bool {
        matches!(
            (self.apply_to, role),
            (CutTarget::Both, _) | (CutTarget::Sar, TileRole::Sar) | (CutTarget::Optical, TileRole::Optical)
        )
    }

    /// Count cut (when configured for `role`) followed by normalization to `[-1, 1]`.
    pub fn to_model_domain(&self, tile: &Tile, role: TileRole) -> Result<Tile> {
        let range = DynamicRange::of_dtype(tile.dtype_origin())?;
        if self.cuts(role) {
            normalize(&cumulative_count_cut(tile, &self.count_cut)?, range)
        } else {
            normalize(tile, range)
        }
    }

    /// The radiometric target a model output is compared against: the optical tile after
    /// the same count cut the model was trained on, still in raw units.
    pub fn reference_optical(&self, tile: &Tile) -> Result<Tile> {
        if self.cuts(TileRole::Optical) {
            cumulative_count_cut(tile, &self.count_cut)
        } else {
            Ok(tile.clone())
        }
    }
}
