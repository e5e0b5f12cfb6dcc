//! PSNR, windowed SSIM, the min-over-candidates error score and report assembly.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::preprocess::DynamicRange;
use crate::tile_store::{load_tile, Tile};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum WindowKind {
    Gaussian { sigma: f64 },
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SsimParams {
    pub window_size: usize,
    pub window_kind: WindowKind,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: DynamicRange,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window_size: 11,
            window_kind: WindowKind::Gaussian { sigma: 1.5 },
            k1: 0.01,
            k2: 0.03,
            dynamic_range: DynamicRange::U8,
        }
    }
}

impl SsimParams {
    pub fn validate(&self) -> Result<()> {
        if self.window_size < 3 || self.window_size.is_multiple_of(2) {
            return Err(Error::config(
                "ssim.window_size",
                format!("{} must be odd and at least 3", self.window_size),
            ));
        }
        if self.k1.is_nan() || self.k1 <= 0.0 {
            return Err(Error::config("ssim.k1", "must be positive"));
        }
        if self.k2.is_nan() || self.k2 <= 0.0 {
            return Err(Error::config("ssim.k2", "must be positive"));
        }
        if let WindowKind::Gaussian { sigma } = self.window_kind {
            if sigma.is_nan() || sigma <= 0.0 {
                return Err(Error::config("ssim.window_kind.sigma", "must be positive"));
            }
        }
        DynamicRange::new(self.dynamic_range.max_value).map_err(|e| Error::config("ssim.dynamic_range", e.to_string()))?;
        Ok(())
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range.max_value).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range.max_value).powi(2)
    }

    /// Normalized window weights, summing to one.
    pub fn window(&self) -> Array2<f64> {
        let n = self.window_size;
        let r = (n / 2) as f64;
        let w = match self.window_kind {
            WindowKind::Uniform => Array2::from_elem((n, n), 1.0),
            WindowKind::Gaussian { sigma } => Array2::from_shape_fn((n, n), |(y, x)| {
                let (dy, dx) = (y as f64 - r, x as f64 - r);
                (-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp()
            }),
        };
        let s = w.sum();
        w / s
    }
}

/// Weighted moments of one window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimWindowStats {
    pub mu_x: f64,
    pub mu_y: f64,
    pub sigma_x2: f64,
    pub sigma_y2: f64,
    pub sigma_xy: f64,
}

impl SsimWindowStats {
    pub fn ssim(&self, c1: f64, c2: f64) -> f64 {
        let num = (2.0 * self.mu_x * self.mu_y + c1) * (2.0 * self.sigma_xy + c2);
        let den = (self.mu_x * self.mu_x + self.mu_y * self.mu_y + c1) * (self.sigma_x2 + self.sigma_y2 + c2);
        num / den
    }
}

fn check_same(a: &Tile, b: &Tile) -> Result<()> {
    if a.pixels().dim() != b.pixels().dim() {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.pixels().dim(), b.pixels().dim())));
    }
    Ok(())
}

/// PSNR in dB; `None` when the images are identical (infinite PSNR).
pub fn psnr(a: &Tile, b: &Tile, range: DynamicRange) -> Result<Option<f64>> {
    check_same(a, b)?;
    let n = a.pixels().len() as f64;
    let mse = a.pixels().iter().zip(b.pixels()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n;
    if mse == 0.0 {
        return Ok(None);
    }
    Ok(Some(10.0 * (range.max_value * range.max_value / mse).log10()))
}

/// Per-position SSIM of one channel over valid window positions, in row-major order.
fn ssim_map(x: ArrayView2<f64>, y: ArrayView2<f64>, win: &Array2<f64>, c1: f64, c2: f64) -> Vec<f64> {
    let (h, w) = x.dim();
    let n = win.nrows();
    let (ho, wo) = (h - n + 1, w - n + 1);
    par::map_range(ho, |oy| {
        (0..wo)
            .map(|ox| {
                let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for ((i, j), &g) in win.indexed_iter() {
                    let a = x[[oy + i, ox + j]];
                    let b = y[[oy + i, ox + j]];
                    mx += g * a;
                    my += g * b;
                    xx += g * a * a;
                    yy += g * b * b;
                    xy += g * a * b;
                }
                SsimWindowStats {
                    mu_x: mx,
                    mu_y: my,
                    sigma_x2: (xx - mx * mx).max(0.0),
                    sigma_y2: (yy - my * my).max(0.0),
                    sigma_xy: xy - mx * my,
                }
                .ssim(c1, c2)
            })
            .collect::<Vec<_>>()
    })
    .into_iter()
    .flatten()
    .collect()
}

/// Mean SSIM over valid window positions, averaged over channels.
pub fn ssim(a: &Tile, b: &Tile, params: &SsimParams) -> Result<f64> {
    params.validate()?;
    check_same(a, b)?;
    let n = params.window_size;
    if a.height() < n || a.width() < n {
        return Err(Error::Shape(format!(
            "{}x{} tile is smaller than the {n}x{n} window",
            a.height(),
            a.width()
        )));
    }
    let win = params.window();
    let (c1, c2) = (params.c1(), params.c2());
    let per_channel: Vec<f64> = a
        .pixels()
        .axis_iter(Axis(0))
        .zip(b.pixels().axis_iter(Axis(0)))
        .map(|(x, y)| {
            let m = ssim_map(x, y, &win, c1, c2);
            m.iter().sum::<f64>() / m.len() as f64
        })
        .collect();
    Ok(per_channel.iter().sum::<f64>() / per_channel.len() as f64)
}

/// Mean absolute difference of two tiles after scaling both to `[0, 1]`.
pub fn unit_mae(a: &Tile, b: &Tile, range: DynamicRange) -> Result<f64> {
    check_same(a, b)?;
    let n = a.pixels().len() as f64;
    Ok(a.pixels().iter().zip(b.pixels()).map(|(x, y)| (x - y).abs()).sum::<f64>() / (n * range.max_value))
}

/// Candidate images for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub pair_id: String,
    pub candidates: Vec<Tile>,
    pub generation_seeds: Vec<u64>,
}

impl CandidateSet {
    pub fn new(pair_id: String, candidates: Vec<Tile>, generation_seeds: Vec<u64>) -> Result<Self> {
        if candidates.is_empty() || candidates.len() != generation_seeds.len() {
            return Err(Error::Validation(format!(
                "{} candidates with {} seeds",
                candidates.len(),
                generation_seeds.len()
            )));
        }
        let dim = candidates[0].pixels().dim();
        if candidates.iter().any(|c| c.pixels().dim() != dim) {
            return Err(Error::Shape("candidates differ in shape".into()));
        }
        Ok(Self {
            pair_id,
            candidates,
            generation_seeds,
        })
    }

    pub fn count(&self) -> usize {
        self.candidates.len()
    }
}

/// Minimum-error term for one truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairError {
    pub pair_id: String,
    pub per_candidate_errors: Vec<f64>,
    pub min_error: f64,
    pub best_candidate: usize,
}

/// Errors of each candidate against `truth` and the minimum.
pub fn pair_error(set: &CandidateSet, truth: &Tile, range: DynamicRange) -> Result<PairError> {
    let errs = set
        .candidates
        .iter()
        .map(|c| unit_mae(c, truth, range))
        .collect::<Result<Vec<_>>>()?;
    let (best, &min) = errs
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .ok_or_else(|| Error::Validation("empty candidate set".into()))?;
    Ok(PairError {
        pair_id: set.pair_id.clone(),
        per_candidate_errors: errs,
        min_error: min,
        best_candidate: best,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorScore {
    pub mean: f64,
    pub sum: f64,
    pub rows: Vec<PairError>,
    /// Truths without a candidate set.
    pub missing: Vec<String>,
}

/// `Σ_j min_i |f(x)_i − y_j|` with the norm taken as `[0, 1]`-scaled MAE, reported both as
/// the sum and as the mean over scored truths. Missing sets fail under `strict`.
pub fn error_score(candidates: &[CandidateSet], truths: &BTreeMap<String, Tile>, range: DynamicRange, strict: bool) -> Result<ErrorScore> {
    let by_id: BTreeMap<&str, &CandidateSet> = candidates.iter().map(|c| (c.pair_id.as_str(), c)).collect();
    let mut rows = Vec::new();
    let mut missing = Vec::new();
    for (id, truth) in truths {
        match by_id.get(id.as_str()) {
            Some(set) => rows.push(pair_error(set, truth, range)?),
            None if strict => return Err(Error::Validation(format!("no candidates for `{id}`"))),
            None => missing.push(id.clone()),
        }
    }
    if rows.is_empty() {
        return Err(Error::config("evaluate", "no truth has a candidate set"));
    }
    let sum: f64 = rows.iter().map(|r| r.min_error).sum();
    Ok(ErrorScore {
        mean: sum / rows.len() as f64,
        sum,
        rows,
        missing,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub pair_id: String,
    /// `null` when the best candidate equals the truth.
    pub psnr: Option<f64>,
    pub psnr_infinite: bool,
    pub ssim: f64,
    pub per_candidate_errors: Vec<f64>,
    pub min_error: f64,
    pub best_candidate: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    /// Mean over pairs with finite PSNR; `null` if there are none.
    pub mean_psnr: Option<f64>,
    pub mean_ssim: f64,
    pub error_score_mean: f64,
    pub error_score_sum: f64,
    pub pairs_scored: usize,
    pub infinite_psnr_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub aggregate: Aggregate,
    pub pairs: Vec<PairReport>,
    #[serde(default)]
    pub missing: Vec<String>,
}

impl MetricReport {
    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

/// Scores candidate sets against truths: error score over all candidates, PSNR and SSIM on
/// the min-error candidate of each pair.
pub fn build_report(
    candidates: &[CandidateSet],
    truths: &BTreeMap<String, Tile>,
    params: &SsimParams,
    strict: bool,
) -> Result<MetricReport> {
    params.validate()?;
    let range = params.dynamic_range;
    let score = error_score(candidates, truths, range, strict)?;
    let by_id: BTreeMap<&str, &CandidateSet> = candidates.iter().map(|c| (c.pair_id.as_str(), c)).collect();
    let pairs = par::map_slice(&score.rows, |row| -> Result<PairReport> {
        let best = &by_id[row.pair_id.as_str()].candidates[row.best_candidate];
        let truth = &truths[&row.pair_id];
        let p = psnr(best, truth, range)?;
        Ok(PairReport {
            pair_id: row.pair_id.clone(),
            psnr: p,
            psnr_infinite: p.is_none(),
            ssim: ssim(best, truth, params)?,
            per_candidate_errors: row.per_candidate_errors.clone(),
            min_error: row.min_error,
            best_candidate: row.best_candidate,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let finite: Vec<f64> = pairs.iter().filter_map(|p| p.psnr).collect();
    Ok(MetricReport {
        aggregate: Aggregate {
            mean_psnr: (!finite.is_empty()).then(|| finite.iter().sum::<f64>() / finite.len() as f64),
            mean_ssim: pairs.iter().map(|p| p.ssim).sum::<f64>() / pairs.len() as f64,
            error_score_mean: score.mean,
            error_score_sum: score.sum,
            pairs_scored: pairs.len(),
            infinite_psnr_pairs: pairs.len() - finite.len(),
        },
        pairs,
        missing: score.missing,
    })
}

const IMAGE_EXTS: [&str; 3] = ["png", "tif", "tiff"];

fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for e in rd {
        let p = e.map_err(|e| Error::io(dir, e))?.path();
        let ext = p.extension().and_then(|x| x.to_str()).map(str::to_ascii_lowercase);
        if ext.is_some_and(|x| IMAGE_EXTS.contains(&x.as_str())) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

fn stem(p: &Path) -> String {
    p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string()
}

/// Splits `<pair_id>_cand<i>` into its parts.
pub fn parse_candidate_name(stem: &str) -> Option<(&str, usize)> {
    let (id, i) = stem.rsplit_once("_cand")?;
    Some((id, i.parse().ok()?))
}

/// Loads `<pair_id>_cand<i>` images from `pred_dir`, grouped and ordered by index.
pub fn load_candidates(pred_dir: &Path) -> Result<Vec<CandidateSet>> {
    let mut groups: BTreeMap<String, BTreeMap<usize, Tile>> = BTreeMap::new();
    for p in image_files(pred_dir)? {
        let s = stem(&p);
        if let Some((id, i)) = parse_candidate_name(&s) {
            groups.entry(id.to_string()).or_default().insert(i, load_tile(&p)?);
        }
    }
    groups
        .into_iter()
        .map(|(id, m)| {
            let seeds = m.keys().map(|&i| i as u64).collect();
            CandidateSet::new(id, m.into_values().collect(), seeds)
        })
        .collect()
}

/// Loads `<pair_id>.png|tif` truths from `truth_dir`.
pub fn load_truths(truth_dir: &Path) -> Result<BTreeMap<String, Tile>> {
    image_files(truth_dir)?
        .into_iter()
        .map(|p| Ok((stem(&p), load_tile(&p)?)))
        .collect()
}

/// Reads predictions and truths from disk and builds the report. Only pairs present on both
/// sides are scored unless `strict`, which requires every truth to have predictions.
pub fn evaluate(pred_dir: &Path, truth_dir: &Path, params: &SsimParams, strict: bool) -> Result<MetricReport> {
    let candidates = load_candidates(pred_dir)?;
    let truths = load_truths(truth_dir)?;
    let ids: Vec<&String> = truths.keys().filter(|id| candidates.iter().any(|c| &c.pair_id == *id)).collect();
    if ids.is_empty() {
        return Err(Error::config(
            "evaluate",
            format!("no pair ids shared by {} and {}", pred_dir.display(), truth_dir.display()),
        ));
    }
    build_report(&candidates, &truths, params, strict)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tile_store::DType;
    use ndarray::Array3;
    use proptest::prelude::*;

    fn constant(c: usize, n: usize, v: f64) -> Tile {
        Tile::new(Array3::from_elem((c, n, n), v), DType::U8, None).unwrap()
    }

    #[test]
    fn psnr_closed_forms() {
        let black = constant(3, 8, 0.0);
        let white = constant(3, 8, 255.0);
        assert_eq!(psnr(&black, &black, DynamicRange::U8).unwrap(), None);
        assert!(psnr(&black, &white, DynamicRange::U8).unwrap().unwrap().abs() < 1e-12);
        let g = psnr(&constant(3, 8, 100.0), &constant(3, 8, 116.0), DynamicRange::U8)
            .unwrap()
            .unwrap();
        assert!((g - 10.0 * (65025.0f64 / 256.0).log10()).abs() < 1e-9);
        assert!((g - 24.048).abs() < 1e-3);
        assert!(matches!(psnr(&black, &constant(3, 4, 0.0), DynamicRange::U8), Err(Error::Shape(_))));
    }

    #[test]
    fn ssim_closed_forms() {
        let p = SsimParams::default();
        let a = constant(1, 16, 0.0);
        let b = constant(1, 16, 255.0);
        let c1 = p.c1();
        assert!((ssim(&a, &b, &p).unwrap() - c1 / (65025.0 + c1)).abs() < 1e-15);
        assert_eq!(ssim(&a, &a, &p).unwrap(), 1.0);
        assert!(matches!(ssim(&constant(1, 8, 0.0), &constant(1, 8, 0.0), &p), Err(Error::Shape(_))));
    }

    #[test]
    fn windows_sum_to_one() {
        for kind in [WindowKind::Uniform, WindowKind::Gaussian { sigma: 1.5 }] {
            let p = SsimParams {
                window_kind: kind,
                ..SsimParams::default()
            };
            assert!((p.window().sum() - 1.0).abs() < 1e-12);
        }
    }

    fn set(id: &str, errs: &[f64]) -> CandidateSet {
        // Candidate k is the zero truth shifted by errs[k]·255.
        let c = errs.iter().map(|e| constant(1, 2, e * 255.0)).collect();
        CandidateSet::new(id.into(), c, (0..errs.len() as u64).collect()).unwrap()
    }

    #[test]
    fn error_score_examples() {
        let truths: BTreeMap<_, _> = [("a".to_string(), constant(1, 2, 0.0)), ("b".to_string(), constant(1, 2, 0.0))].into();
        let s = error_score(&[set("a", &[0.2, 0.4]), set("b", &[0.3, 0.1])], &truths, DynamicRange::U8, true).unwrap();
        assert!((s.mean - 0.15).abs() < 1e-12);
        assert!((s.sum - 0.3).abs() < 1e-12);
        let one: BTreeMap<_, _> = [("a".to_string(), constant(1, 2, 0.0))].into();
        let s = error_score(&[set("a", &[0.3, 0.1, 0.2])], &one, DynamicRange::U8, true).unwrap();
        assert!((s.mean - 0.1).abs() < 1e-12);
        assert_eq!(s.rows[0].best_candidate, 1);
    }

    #[test]
    fn missing_sets_respect_strictness() {
        let truths: BTreeMap<_, _> = [("a".to_string(), constant(1, 2, 0.0)), ("b".to_string(), constant(1, 2, 0.0))].into();
        let lax = error_score(&[set("a", &[0.2])], &truths, DynamicRange::U8, false).unwrap();
        assert_eq!(lax.missing, vec!["b".to_string()]);
        assert!(error_score(&[set("a", &[0.2])], &truths, DynamicRange::U8, true).is_err());
    }

    #[test]
    fn candidate_names_parse() {
        assert_eq!(parse_candidate_name("pair_01_cand2"), Some(("pair_01", 2)));
        assert_eq!(parse_candidate_name("pair_01"), None);
    }

    proptest! {
        #[test]
        fn ssim_is_symmetric_and_bounded(seed in 0u64..500) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut t = || Tile::new(Array3::from_shape_simple_fn((2, 13, 13), || rng.gen_range(0..256) as f64), DType::U8, None).unwrap();
            let (a, b) = (t(), t());
            let p = SsimParams::default();
            let ab = ssim(&a, &b, &p).unwrap();
            prop_assert!((ab - ssim(&b, &a, &p).unwrap()).abs() < 1e-12);
            prop_assert!(ab > -1.0 && ab <= 1.0);
        }

        #[test]
        fn psnr_decreases_with_error(d1 in 1u32..120, extra in 1u32..100) {
            let base = constant(1, 4, 10.0);
            let p1 = psnr(&base, &constant(1, 4, 10.0 + d1 as f64), DynamicRange::U8).unwrap().unwrap();
            let p2 = psnr(&base, &constant(1, 4, 10.0 + (d1 + extra) as f64), DynamicRange::U8).unwrap().unwrap();
            prop_assert!(p2 < p1);
        }
    }
}
