//! Procedural SAR/optical pairs for demos and tests.
//!
//! SAR is a smooth two-band texture stored as 16-bit; optical is a fixed pointwise recoloring
//! of it stored as 8-bit RGB. Cloudy tiles get opaque near-white blobs over most of the tile.

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tile_store::{save_tile, write_manifest, BitDepth, DType, Manifest, ManifestEntry, Split, Tile};
use crate::trainer::derive_seed;

const STREAM_TEXTURE: u64 = 101;
const STREAM_CLOUD: u64 = 102;

/// Cloud pixels, gray and above the brightness cut of the heuristic scorer.
pub const CLOUD_RGB: [f64; 3] = [244.0, 246.0, 250.0];
/// Minimum fraction of a cloudy tile covered by blobs.
pub const CLOUD_COVERAGE: f64 = 0.7;

/// Smooth field in `[0, 1]`: a sum of a few low-frequency plane waves, rescaled.
fn wave_field(rng: &mut ChaCha8Rng, size: usize) -> Array2<f64> {
    let waves: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.gen_range(1..=4) as f64,
                rng.gen_range(-4..=4) as f64,
                rng.gen_range(0.0..TAU),
                rng.gen_range(0.4..1.0),
            )
        })
        .collect();
    let n = size as f64;
    let f = Array2::from_shape_fn((size, size), |(y, x)| {
        waves
            .iter()
            .map(|&(u, v, phase, amp)| amp * (TAU * (u * x as f64 + v * y as f64) / n + phase).sin())
            .sum::<f64>()
    });
    let lo = f.fold(f64::INFINITY, |a, &b| a.min(b));
    let hi = f.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    f.mapv(|v| (v - lo) / (hi - lo))
}

/// Two-band 16-bit SAR texture.
pub fn sar_texture(seed: u64, index: u64, size: usize) -> Tile {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_TEXTURE, index));
    let a = wave_field(&mut rng, size);
    let b = wave_field(&mut rng, size);
    let mut px = Array3::zeros((2, size, size));
    for ((y, x), &va) in a.indexed_iter() {
        let vb = 0.6 * va + 0.4 * b[[y, x]];
        px[[0, y, x]] = (2000.0 + 60000.0 * va).round();
        px[[1, y, x]] = (1000.0 + 50000.0 * vb).round();
    }
    Tile::new(px, DType::U16, None).expect("values inside u16 range")
}

/// The fixed recoloring from SAR bands to 8-bit RGB.
pub fn recolor(sar: &Tile) -> Tile {
    let p = sar.pixels();
    let (_, h, w) = p.dim();
    let px = Array3::from_shape_fn((3, h, w), |(c, y, x)| {
        let a = (p[[0, y, x]] - 2000.0) / 60000.0;
        let b = (p[[1, y, x]] - 1000.0) / 50000.0;
        let v = match c {
            0 => 30.0 + 150.0 * a,
            1 => 50.0 + 120.0 * (1.0 - b),
            _ => 20.0 + 100.0 * (a * b).sqrt(),
        };
        v.round().clamp(0.0, 255.0)
    });
    Tile::new(px, DType::U8, None).expect("values inside u8 range")
}

/// Paints near-white elliptical blobs until at least [`CLOUD_COVERAGE`] of the tile is covered.
pub fn add_clouds(optical: &Tile, seed: u64, index: u64) -> Tile {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_CLOUD, index));
    let mut px = optical.pixels().clone();
    let (_, h, w) = px.dim();
    let mut mask = Array2::<bool>::from_elem((h, w), false);
    let target = (CLOUD_COVERAGE * (h * w) as f64).ceil() as usize;
    while mask.iter().filter(|&&m| m).count() < target {
        let cy = rng.gen_range(0.0..h as f64);
        let cx = rng.gen_range(0.0..w as f64);
        let ry = rng.gen_range(0.25..0.5) * h as f64;
        let rx = rng.gen_range(0.25..0.5) * w as f64;
        for ((y, x), m) in mask.indexed_iter_mut() {
            let dy = (y as f64 - cy) / ry;
            let dx = (x as f64 - cx) / rx;
            if dy * dy + dx * dx <= 1.0 {
                *m = true;
            }
        }
    }
    for ((y, x), &m) in mask.indexed_iter() {
        if m {
            for (c, v) in CLOUD_RGB.iter().enumerate() {
                px[[c, y, x]] = *v;
            }
        }
    }
    optical.with_pixels(px, DType::U8).expect("cloud colors fit u8")
}

/// Layout of a synthetic dataset on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSet {
    pub manifest: Manifest,
    pub cloudy: Vec<String>,
}

pub struct SyntheticLayout<'a> {
    pub pairs: usize,
    pub size: usize,
    /// Indices that receive cloud blobs.
    pub cloudy: &'a [usize],
    /// Indices assigned to the test split; the rest are train.
    pub test: &'a [usize],
}

/// Writes `sar/<id>.tif`, `optical/<id>.png` and `manifest.jsonl` under `root`.
pub fn write_dataset(root: &Path, seed: u64, layout: &SyntheticLayout<'_>) -> Result<SyntheticSet> {
    for sub in ["sar", "optical"] {
        let d = root.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut entries = Vec::new();
    let mut cloudy = Vec::new();
    for i in 0..layout.pairs {
        let id = format!("pair_{i:02}");
        let sar = sar_texture(seed, i as u64, layout.size);
        let mut optical = recolor(&sar);
        if layout.cloudy.contains(&i) {
            optical = add_clouds(&optical, seed, i as u64);
            cloudy.push(id.clone());
        }
        let sar_rel = format!("sar/{id}.tif");
        let opt_rel = format!("optical/{id}.png");
        save_tile(&sar, &root.join(&sar_rel), BitDepth::U16)?;
        save_tile(&optical, &root.join(&opt_rel), BitDepth::U8)?;
        entries.push(ManifestEntry {
            pair_id: id,
            sar_path: sar_rel.into(),
            optical_path: opt_rel.into(),
            cloud_score: None,
            split: if layout.test.contains(&i) { Split::Test } else { Split::Train },
        });
    }
    let manifest = Manifest::new(entries, root)?;
    write_manifest(&manifest, &root.join("manifest.jsonl"))?;
    Ok(SyntheticSet { manifest, cloudy })
}
