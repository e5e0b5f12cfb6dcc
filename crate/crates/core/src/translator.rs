//! Multi-candidate inference: test-time dropout with per-candidate seeds, or one eval-mode
//! candidate per checkpoint.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::cloud_filter::Reject;
use crate::error::{Error, Result};
use crate::par;
use crate::pix2pix_net::{Generator, Mode};
use crate::preprocess::{denormalize, DynamicRange, PreprocessConfig};
use crate::quality_metrics::CandidateSet;
use crate::tile_store::{save_tile, BitDepth, Manifest, Split, Tile, TileRole};
use crate::trainer::load_generator;

/// Where candidates come from.
#[derive(Debug, Clone, PartialEq)]
pub enum Translator {
    /// One generator sampled with dropout active.
    McDropout {
        generator: Generator<f32>,
        preprocess: PreprocessConfig,
    },
    /// Several generators, each run once in eval mode.
    Ensemble {
        generators: Vec<Generator<f32>>,
        preprocess: PreprocessConfig,
    },
}

impl Translator {
    pub fn load(checkpoint: &Path) -> Result<Self> {
        let (generator, preprocess) = load_generator(checkpoint)?;
        Ok(Self::McDropout { generator, preprocess })
    }

    /// Ensemble over checkpoints; they must share preprocessing.
    pub fn load_ensemble(checkpoints: &[&Path]) -> Result<Self> {
        if checkpoints.is_empty() {
            return Err(Error::config("checkpoints", "ensemble needs at least one checkpoint"));
        }
        let mut generators = Vec::new();
        let mut prep = None;
        for dir in checkpoints {
            let (g, p) = load_generator(dir)?;
            if prep.is_some_and(|q| q != p) {
                return Err(Error::config(
                    "checkpoints",
                    format!("{} uses different preprocessing", dir.display()),
                ));
            }
            prep = Some(p);
            generators.push(g);
        }
        Ok(Self::Ensemble {
            generators,
            preprocess: prep.expect("nonempty"),
        })
    }

    fn preprocess(&self) -> &PreprocessConfig {
        match self {
            Self::McDropout { preprocess, .. } | Self::Ensemble { preprocess, .. } => preprocess,
        }
    }

    /// Runs the generator(s) on the normalized SAR tile and returns raw `[-1, 1]` outputs.
    pub fn raw_candidates(&self, sar: &Tile, n: usize, base_seed: u64) -> Result<Vec<(u64, Array3<f32>)>> {
        let x = self
            .preprocess()
            .to_model_domain(sar, TileRole::Sar)?
            .into_pixels()
            .mapv(|v| v as f32)
            .insert_axis(Axis(0));
        let run = |g: &Generator<f32>, mode: Mode| -> Result<Array3<f32>> {
            let (c, h, w) = (x.dim().1, x.dim().2, x.dim().3);
            g.spec.check_input(c, h, w)?;
            Ok(g.forward(&x, mode)?.0.index_axis_move(Axis(0), 0))
        };
        match self {
            Self::McDropout { generator, .. } => {
                if n == 0 {
                    return Err(Error::config("n", "at least one candidate is required"));
                }
                (0..n as u64)
                    .map(|i| {
                        let seed = base_seed.wrapping_add(i);
                        Ok((seed, run(generator, Mode::McDropout { seed })?))
                    })
                    .collect()
            }
            Self::Ensemble { generators, .. } => {
                if n != generators.len() {
                    return Err(Error::config(
                        "n",
                        format!("ensemble mode yields one candidate per checkpoint ({}), not {n}", generators.len()),
                    ));
                }
                generators
                    .iter()
                    .enumerate()
                    .map(|(i, g)| Ok((i as u64, run(g, Mode::Eval)?)))
                    .collect()
            }
        }
    }

    /// `n` candidates for one SAR tile, denormalized and rounded to `depth`.
    pub fn translate(&self, pair_id: &str, sar: &Tile, n: usize, base_seed: u64, depth: BitDepth) -> Result<CandidateSet> {
        let range = DynamicRange::new(depth.max_value())?;
        let mut tiles = Vec::new();
        let mut seeds = Vec::new();
        for (seed, out) in self.raw_candidates(sar, n, base_seed)? {
            let t = Tile::from_real(out.mapv(f64::from), None)?;
            let d = denormalize(&t, range)?;
            let rounded = d.pixels().mapv(|v| (v + 0.5).floor());
            tiles.push(d.with_pixels(rounded, depth.dtype())?);
            seeds.push(seed);
        }
        CandidateSet::new(pair_id.to_string(), tiles, seeds)
    }
}

/// Result of a batch translation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchOutcome {
    /// `pair_id` → candidate file names, relative to the output directory.
    pub index: BTreeMap<String, Vec<String>>,
    pub failures: Vec<Reject>,
}

pub const INDEX_FILE: &str = "index.json";
pub const FAILURES_FILE: &str = "failures.json";

pub fn candidate_file_name(pair_id: &str, i: usize, depth: BitDepth) -> String {
    format!("{pair_id}_cand{i}.{}", depth.extension())
}

/// Translates every entry of `split`, writing `<pair_id>_cand<i>.<ext>`, `index.json` and
/// `failures.json`. Entries are processed in parallel; outputs do not depend on scheduling.
pub fn translate_batch(
    translator: &Translator,
    manifest: &Manifest,
    split: Split,
    n: usize,
    base_seed: u64,
    depth: BitDepth,
    out_dir: &Path,
) -> Result<BatchOutcome> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let entries: Vec<_> = manifest.split(split).collect();
    let results = par::map_slice(&entries, |e| -> Result<Vec<String>> {
        let sar = crate::tile_store::load_tile_as(&manifest.resolve(&e.sar_path), TileRole::Sar)?;
        let set = translator.translate(&e.pair_id, &sar, n, base_seed, depth)?;
        set.candidates
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let name = candidate_file_name(&e.pair_id, i, depth);
                save_tile(t, &out_dir.join(&name), depth)?;
                Ok(name)
            })
            .collect()
    });
    let mut outcome = BatchOutcome {
        index: BTreeMap::new(),
        failures: Vec::new(),
    };
    for (e, r) in entries.iter().zip(results) {
        match r {
            Ok(files) => {
                outcome.index.insert(e.pair_id.clone(), files);
            }
            Err(err @ Error::Config { .. }) => return Err(err),
            Err(err) => outcome.failures.push(Reject {
                pair_id: e.pair_id.clone(),
                reason: err.to_string(),
            }),
        }
    }
    let write = |name: &str, text: String| {
        let p = out_dir.join(name);
        fs::write(&p, text + "\n").map_err(|e| Error::io(&p, e))
    };
    write(INDEX_FILE, serde_json::to_string_pretty(&outcome.index).expect("map serializes"))?;
    write(
        FAILURES_FILE,
        serde_json::to_string_pretty(&outcome.failures).expect("list serializes"),
    )?;
    Ok(outcome)
}
