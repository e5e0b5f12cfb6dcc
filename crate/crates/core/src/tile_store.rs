//! Image tiles, paired samples and the curated-pair manifest.
//!
//! Tiles are channels-first `f64` arrays holding raw integer magnitudes. PNG (8-bit) and
//! TIFF (8/16-bit) are the only on-disk formats.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use image::{DynamicImage, ExtendedColorType};
use ndarray::Array3;
use serde::{Deserialize, Serialize};
use tiff::encoder::{colortype, TiffEncoder};
use tiff::tags::ExtraSamples;

use crate::error::{Error, Result};

/// Numeric type a tile was decoded from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    U8,
    U16,
    F32,
}

impl DType {
    /// Largest raw value representable, or `None` for floating-point tiles.
    pub fn max_value(self) -> Option<f64> {
        match self {
            DType::U8 => Some(255.0),
            DType::U16 => Some(65535.0),
            DType::F32 => None,
        }
    }
}

/// Integer depth used when writing a tile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BitDepth {
    U8,
    U16,
}

impl BitDepth {
    pub fn max_value(self) -> f64 {
        match self {
            BitDepth::U8 => 255.0,
            BitDepth::U16 => 65535.0,
        }
    }

    pub fn dtype(self) -> DType {
        match self {
            BitDepth::U8 => DType::U8,
            BitDepth::U16 => DType::U16,
        }
    }

    /// Conventional file extension for this depth.
    pub fn extension(self) -> &'static str {
        match self {
            BitDepth::U8 => "png",
            BitDepth::U16 => "tif",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    pixels: Array3<f64>,
    dtype_origin: DType,
    channel_names: Vec<String>,
}

fn default_channel_names(channels: usize) -> Vec<String> {
    let names: &[&str] = match channels {
        2 => &["VV", "VH"],
        3 => &["R", "G", "B"],
        _ => &["B0"],
    };
    names.iter().map(|s| s.to_string()).collect()
}

impl Tile {
    /// Builds a tile, enforcing channel count, nonempty extent and the integer value range.
    pub fn new(pixels: Array3<f64>, dtype_origin: DType, channel_names: Option<Vec<String>>) -> Result<Self> {
        let (c, h, w) = pixels.dim();
        if !(1..=3).contains(&c) {
            return Err(Error::Shape(format!("tiles have 1 to 3 channels, got {c}")));
        }
        if h == 0 || w == 0 {
            return Err(Error::Shape(format!("tile extent {h}x{w} is empty")));
        }
        if let Some(max) = dtype_origin.max_value() {
            if let Some(bad) = pixels.iter().find(|v| !(0.0..=max).contains(*v)) {
                return Err(Error::Range(format!("{bad} outside [0, {max}] for {dtype_origin:?} tile")));
            }
        }
        let channel_names = channel_names.unwrap_or_else(|| default_channel_names(c));
        if channel_names.len() != c {
            return Err(Error::Shape(format!("{} channel names for {c} channels", channel_names.len())));
        }
        Ok(Self {
            pixels,
            dtype_origin,
            channel_names,
        })
    }

    /// Builds a tile without range checks; used for normalized model-domain values.
    pub fn from_real(pixels: Array3<f64>, channel_names: Option<Vec<String>>) -> Result<Self> {
        Self::new(pixels, DType::F32, channel_names)
    }

    pub fn pixels(&self) -> &Array3<f64> {
        &self.pixels
    }

    pub fn into_pixels(self) -> Array3<f64> {
        self.pixels
    }

    pub fn dtype_origin(&self) -> DType {
        self.dtype_origin
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn channels(&self) -> usize {
        self.pixels.dim().0
    }

    pub fn height(&self) -> usize {
        self.pixels.dim().1
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().2
    }

    /// Same channel names, new pixel values and origin.
    pub fn with_pixels(&self, pixels: Array3<f64>, dtype_origin: DType) -> Result<Self> {
        Self::new(pixels, dtype_origin, Some(self.channel_names.clone()))
    }
}

/// Role a tile plays in a pair; fixes the accepted channel count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TileRole {
    Sar,
    Optical,
}

impl TileRole {
    pub fn channels(self) -> usize {
        match self {
            TileRole::Sar => 2,
            TileRole::Optical => 3,
        }
    }
}

fn extension(path: &Path) -> String {
    path.extension().and_then(|e| e.to_str()).unwrap_or_default().to_ascii_lowercase()
}

fn interleaved_to_tile<T: Copy + Into<f64>>(data: &[T], channels: usize, h: usize, w: usize, dtype: DType) -> Result<Tile> {
    if data.len() != channels * h * w {
        return Err(Error::Format(format!(
            "decoded {} samples for a {channels}x{h}x{w} image",
            data.len()
        )));
    }
    let pixels = Array3::from_shape_fn((channels, h, w), |(c, y, x)| data[(y * w + x) * channels + c].into());
    Tile::new(pixels, dtype, None)
}

/// Reads an 8-bit PNG or an 8/16-bit TIFF into a channels-first tile.
pub fn load_tile(path: &Path) -> Result<Tile> {
    match extension(path).as_str() {
        "png" => load_png(path),
        "tif" | "tiff" => load_tiff(path),
        other => Err(Error::Format(format!("{}: unknown extension `{other}`", path.display()))),
    }
}

/// Like [`load_tile`], rejecting tiles whose channel count does not fit `role`.
pub fn load_tile_as(path: &Path, role: TileRole) -> Result<Tile> {
    let tile = load_tile(path)?;
    if tile.channels() != role.channels() {
        return Err(Error::Type(format!(
            "{}: {:?} tiles need {} channels, found {}",
            path.display(),
            role,
            role.channels(),
            tile.channels()
        )));
    }
    Ok(tile)
}

fn load_png(path: &Path) -> Result<Tile> {
    let reader = image::ImageReader::open(path).map_err(|e| Error::io(path, e))?;
    let img = reader.decode().map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma8(b) => interleaved_to_tile(b.as_raw(), 1, h, w, DType::U8),
        DynamicImage::ImageLumaA8(b) => interleaved_to_tile(b.as_raw(), 2, h, w, DType::U8),
        DynamicImage::ImageRgb8(b) => interleaved_to_tile(b.as_raw(), 3, h, w, DType::U8),
        other => Err(Error::Format(format!(
            "{}: PNG color type {:?} is not an 8-bit 1-3 channel image",
            path.display(),
            other.color()
        ))),
    }
}

fn load_tiff(path: &Path) -> Result<Tile> {
    use tiff::decoder::{Decoder, DecodingResult};
    use tiff::ColorType;

    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let tiff_err = |e: tiff::TiffError| match e {
        tiff::TiffError::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    };
    let mut dec = Decoder::new(BufReader::new(file)).map_err(tiff_err)?;
    let (w, h) = dec.dimensions().map_err(tiff_err)?;
    let (channels, bits) = match dec.colortype().map_err(tiff_err)? {
        ColorType::Gray(b) => (1, b),
        ColorType::GrayA(b) => (2, b),
        ColorType::Multiband { bit_depth, num_samples } => (num_samples as usize, bit_depth),
        ColorType::RGB(b) => (3, b),
        other => return Err(Error::Format(format!("{}: TIFF color type {other:?}", path.display()))),
    };
    let (h, w) = (h as usize, w as usize);
    match (dec.read_image().map_err(tiff_err)?, bits) {
        (DecodingResult::U8(data), 8) => interleaved_to_tile(&data, channels, h, w, DType::U8),
        (DecodingResult::U16(data), 16) => interleaved_to_tile(&data, channels, h, w, DType::U16),
        (DecodingResult::F32(data), 32) => interleaved_to_tile(&data, channels, h, w, DType::F32),
        (_, bits) => Err(Error::Format(format!(
            "{}: {bits}-bit samples are not supported (u8, u16 or f32 only)",
            path.display()
        ))),
    }
}

/// Rounds half up and range-checks every pixel for the target depth.
pub fn quantize(tile: &Tile, depth: BitDepth) -> Result<Vec<u16>> {
    let max = depth.max_value();
    let (c, h, w) = tile.pixels.dim();
    let mut out = Vec::with_capacity(c * h * w);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let v = tile.pixels[[ch, y, x]];
                let q = (v + 0.5).floor();
                if !(0.0..=max).contains(&q) {
                    return Err(Error::Range(format!(
                        "pixel value {v} at ({ch},{y},{x}) does not fit {depth:?}; denormalize first"
                    )));
                }
                out.push(q as u16);
            }
        }
    }
    Ok(out)
}

/// Writes a tile as PNG (8-bit only) or TIFF, chosen by the path's extension.
pub fn save_tile(tile: &Tile, path: &Path, depth: BitDepth) -> Result<()> {
    let samples = quantize(tile, depth)?;
    let (c, h, w) = tile.pixels.dim();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    match extension(path).as_str() {
        "png" => {
            if depth != BitDepth::U8 {
                return Err(Error::Format(format!("{}: PNG output is 8-bit only", path.display())));
            }
            let bytes: Vec<u8> = samples.iter().map(|&v| v as u8).collect();
            let color = match c {
                1 => ExtendedColorType::L8,
                2 => ExtendedColorType::La8,
                _ => ExtendedColorType::Rgb8,
            };
            image::save_buffer(path, &bytes, w as u32, h as u32, color).map_err(|e| match e {
                image::ImageError::IoError(io) => Error::io(path, io),
                other => Error::Format(format!("{}: {other}", path.display())),
            })
        }
        "tif" | "tiff" => save_tiff(path, &samples, c, h as u32, w as u32, depth),
        other => Err(Error::Format(format!("{}: unknown extension `{other}`", path.display()))),
    }
}

fn save_tiff(path: &Path, samples: &[u16], c: usize, h: u32, w: u32, depth: BitDepth) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let tiff_err = |e: tiff::TiffError| match e {
        tiff::TiffError::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    };
    let mut enc = TiffEncoder::new(BufWriter::new(file)).map_err(tiff_err)?;
    let extra: &[ExtraSamples] = if c == 2 { &[ExtraSamples::Unspecified] } else { &[] };
    match (depth, c) {
        (BitDepth::U8, 3) => {
            let data: Vec<u8> = samples.iter().map(|&v| v as u8).collect();
            enc.write_image::<colortype::RGB8>(w, h, &data).map_err(tiff_err)
        }
        (BitDepth::U16, 3) => enc.write_image::<colortype::RGB16>(w, h, samples).map_err(tiff_err),
        (BitDepth::U8, _) => {
            let data: Vec<u8> = samples.iter().map(|&v| v as u8).collect();
            let mut img = enc.new_image::<colortype::Gray8>(w, h).map_err(tiff_err)?;
            img.extra_samples(extra).map_err(tiff_err)?;
            img.write_data(&data).map_err(tiff_err)
        }
        (BitDepth::U16, _) => {
            let mut img = enc.new_image::<colortype::Gray16>(w, h).map_err(tiff_err)?;
            img.extra_samples(extra).map_err(tiff_err)?;
            img.write_data(samples).map_err(tiff_err)
        }
    }
}

/// Writes real-valued pixels (such as normalized tiles) as a 32-bit float TIFF.
pub fn save_tile_f32(tile: &Tile, path: &Path) -> Result<()> {
    if !matches!(extension(path).as_str(), "tif" | "tiff") {
        return Err(Error::Format(format!("{}: float tiles are written as TIFF only", path.display())));
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let (c, h, w) = tile.pixels.dim();
    let mut data = Vec::with_capacity(c * h * w);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                data.push(tile.pixels[[ch, y, x]] as f32);
            }
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let tiff_err = |e: tiff::TiffError| match e {
        tiff::TiffError::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    };
    let mut enc = TiffEncoder::new(BufWriter::new(file)).map_err(tiff_err)?;
    let (w, h) = (w as u32, h as u32);
    if c == 3 {
        enc.write_image::<colortype::RGB32Float>(w, h, &data).map_err(tiff_err)
    } else {
        let extra: &[ExtraSamples] = if c == 2 { &[ExtraSamples::Unspecified] } else { &[] };
        let mut img = enc.new_image::<colortype::Gray32Float>(w, h).map_err(tiff_err)?;
        img.extra_samples(extra).map_err(tiff_err)?;
        img.write_data(&data).map_err(tiff_err)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::config("split", format!("`{s}` is not one of train, val, test"))),
        }
    }
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub pair_id: String,
    pub sar_path: PathBuf,
    pub optical_path: PathBuf,
    pub cloud_score: Option<f64>,
    pub split: Split,
}

/// Ordered, duplicate-free list of pair references.
#[derive(Debug, Clone)]
pub struct Manifest {
    entries: Vec<ManifestEntry>,
    pub created_at: DateTime<Utc>,
    pub curation_params: BTreeMap<String, serde_json::Value>,
    /// Directory relative entry paths are resolved against.
    pub root: PathBuf,
}

impl PartialEq for Manifest {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries && self.created_at == other.created_at && self.curation_params == other.curation_params
    }
}

#[derive(Serialize, Deserialize)]
struct ManifestMeta {
    created_at: DateTime<Utc>,
    curation_params: BTreeMap<String, serde_json::Value>,
}

impl Manifest {
    /// Sorts entries by `pair_id` and rejects duplicates.
    pub fn new(mut entries: Vec<ManifestEntry>, root: impl Into<PathBuf>) -> Result<Self> {
        entries.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
        if let Some(dup) = entries.windows(2).find(|w| w[0].pair_id == w[1].pair_id) {
            return Err(Error::Validation(format!("duplicate pair_id `{}`", dup[0].pair_id)));
        }
        for e in &entries {
            if let Some(s) = e.cloud_score {
                if !(0.0..=1.0).contains(&s) {
                    return Err(Error::Validation(format!("cloud_score {s} of `{}` outside [0,1]", e.pair_id)));
                }
            }
        }
        let created_at = DateTime::<Utc>::from_timestamp(Utc::now().timestamp(), 0).expect("valid timestamp");
        Ok(Self {
            entries,
            created_at,
            curation_params: BTreeMap::new(),
            root: root.into(),
        })
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Resolves an entry path against the manifest root.
    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.root.join(path)
        }
    }

    /// Loads both tiles of an entry and checks the pair invariants.
    pub fn load_pair(&self, entry: &ManifestEntry) -> Result<TilePair> {
        let sar = load_tile_as(&self.resolve(&entry.sar_path), TileRole::Sar)?;
        let optical = load_tile_as(&self.resolve(&entry.optical_path), TileRole::Optical)?;
        TilePair::new(entry.pair_id.clone(), sar, optical, entry.cloud_score, entry.split)
    }
}

/// Path of the metadata sidecar written next to a manifest.
pub fn manifest_meta_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    path.with_file_name(name)
}

/// Reads a JSON-lines manifest. Blank lines are skipped; `created_at` and `curation_params`
/// come from the sidecar when present (otherwise the Unix epoch and an empty record).
pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut entries = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        entries.push(entry);
    }
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut manifest = Manifest::new(entries, root)?;
    let meta_path = manifest_meta_path(path);
    if meta_path.exists() {
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: ManifestMeta = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: meta_path.clone(),
            line: e.line(),
            message: e.to_string(),
        })?;
        manifest.created_at = meta.created_at;
        manifest.curation_params = meta.curation_params;
    } else {
        manifest.created_at = DateTime::<Utc>::UNIX_EPOCH;
    }
    Ok(manifest)
}

/// Keeps a relative entry path valid when the manifest is written into `dest`: relative to
/// `dest` if the tile lies below it, absolute otherwise.
fn rebase(manifest: &Manifest, path: &Path, dest: &Path) -> Result<PathBuf> {
    if path.is_absolute() || manifest.root == dest {
        return Ok(path.to_path_buf());
    }
    let abs = |p: &Path| std::path::absolute(p).map_err(|e| Error::io(p, e));
    let tile = abs(&manifest.resolve(path))?;
    let dest = abs(dest)?;
    Ok(tile.strip_prefix(&dest).map(Path::to_path_buf).unwrap_or(tile))
}

pub fn write_manifest(manifest: &Manifest, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let dest = path.parent().unwrap_or(Path::new(""));
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for e in &manifest.entries {
        let e = ManifestEntry {
            sar_path: rebase(manifest, &e.sar_path, dest)?,
            optical_path: rebase(manifest, &e.optical_path, dest)?,
            ..e.clone()
        };
        let line = serde_json::to_string(&e).expect("manifest entries serialize");
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))?;
    let meta = ManifestMeta {
        created_at: manifest.created_at,
        curation_params: manifest.curation_params.clone(),
    };
    let meta_path = manifest_meta_path(path);
    fs::write(&meta_path, serde_json::to_string_pretty(&meta).expect("meta serializes")).map_err(|e| Error::io(&meta_path, e))
}

/// One aligned SAR/optical sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TilePair {
    pub pair_id: String,
    pub sar: Tile,
    pub optical: Tile,
    pub cloud_score: Option<f64>,
    pub split: Split,
}

impl TilePair {
    pub fn new(pair_id: String, sar: Tile, optical: Tile, cloud_score: Option<f64>, split: Split) -> Result<Self> {
        if sar.channels() != 2 || optical.channels() != 3 {
            return Err(Error::Type(format!(
                "pair `{pair_id}` needs 2-channel SAR and 3-channel optical, got {} and {}",
                sar.channels(),
                optical.channels()
            )));
        }
        if (sar.height(), sar.width()) != (optical.height(), optical.width()) {
            return Err(Error::Shape(format!(
                "pair `{pair_id}`: SAR is {}x{} but optical is {}x{}",
                sar.height(),
                sar.width(),
                optical.height(),
                optical.width()
            )));
        }
        Ok(Self {
            pair_id,
            sar,
            optical,
            cloud_score,
            split,
        })
    }
}
