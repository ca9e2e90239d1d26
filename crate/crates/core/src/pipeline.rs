//! End-to-end reconstruction `decode ∘ predict ∘ filter`, the comparison against
//! regularized baselines, latent-space visualizations and stability probes.

use std::fs;
use std::path::Path;
use std::time::Instant;

use diffkit::{derive_seed, fill_gaussian, seeded_rng};
use log::info;
use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::{LambdaChoice, TikhonovConfig, TvConfig, DEFAULT_TV_SEARCH_STEPS};
use crate::blob;
use crate::dataset::{Dataset, Split};
use crate::error::{check_len, invalid, EitError, Result};
use crate::filter::BoundaryFilter;
use crate::frame::MeasurementFrame;
use crate::geometry::GridSize;
use crate::metrics::{component_count, evaluate, ImageMetrics};
use crate::phantom::{render, sample_phantom, Family, LungPhantomParams};
use crate::picture::Mosaic;
use crate::regressor::RegressorModel;
use crate::vae::VaeModel;
use crate::workbench::Workbench;

/// Normalized phantom values lie in `[-1, 0]`; the upper end allows decoder overshoot.
pub const PHANTOM_RANGE: (f64, f64) = (-1.0, 0.05);
pub const LATENT_BOX: (f64, f64) = (-3.0, 3.0);
pub const DEFAULT_GRID_RESOLUTION: usize = 9;
pub const INTERPOLATION_TS: [f64; 3] = [0.25, 0.5, 0.75];

/// Walk offsets `−6, …, 6`.
pub fn default_deltas() -> Vec<f64> {
    (-6..=6).map(f64::from).collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineHashes {
    pub workbench: String,
    pub dataset: String,
    pub vae: String,
    pub regressor: String,
}

#[derive(Clone, Debug)]
pub struct ReconPipeline {
    filter: BoundaryFilter,
    vae: VaeModel,
    regressor: RegressorModel,
    grid: GridSize,
    electrodes: usize,
    hashes: PipelineHashes,
}

fn mismatch(artifact: &str, expected: impl ToString, found: impl ToString) -> EitError {
    EitError::Incompatible {
        artifact: artifact.into(),
        expected: expected.to_string(),
        found: found.to_string(),
    }
}

impl ReconPipeline {
    /// Checks that both models were trained against `wb` and against each other.
    pub fn new(wb: &Workbench, vae: VaeModel, regressor: RegressorModel) -> Result<Self> {
        wb.check_fingerprint("vae workbench", vae.workbench_fingerprint())?;
        let vae_hash = vae.hash();
        if regressor.vae_hash() != vae_hash {
            return Err(mismatch("regressor vae", &vae_hash, regressor.vae_hash()));
        }
        if regressor.config().latent_dim != vae.latent_dim() {
            return Err(mismatch("regressor latent dimension", vae.latent_dim(), regressor.config().latent_dim));
        }
        if regressor.config().electrodes != wb.electrodes() {
            return Err(mismatch("regressor electrodes", wb.electrodes(), regressor.config().electrodes));
        }
        let grid = wb.grid().size();
        if grid.width != vae.config().grid || grid.height != vae.config().grid {
            return Err(mismatch("vae grid", format!("{}x{}", grid.width, grid.height), vae.config().grid));
        }
        let hashes = PipelineHashes {
            workbench: wb.fingerprint(),
            dataset: vae.dataset_hash().to_string(),
            vae: vae_hash,
            regressor: regressor.hash(),
        };
        Ok(Self {
            filter: wb.filter().clone(),
            vae,
            regressor,
            grid,
            electrodes: wb.electrodes(),
            hashes,
        })
    }

    pub fn load(wb: &Workbench, vae_dir: &Path, regressor_dir: &Path) -> Result<Self> {
        Self::new(wb, VaeModel::load(vae_dir)?, RegressorModel::load(regressor_dir)?)
    }

    pub fn vae(&self) -> &VaeModel {
        &self.vae
    }

    pub fn regressor(&self) -> &RegressorModel {
        &self.regressor
    }

    pub fn filter(&self) -> &BoundaryFilter {
        &self.filter
    }

    pub fn c_norm(&self) -> f64 {
        self.vae.c_norm()
    }

    pub fn grid(&self) -> GridSize {
        self.grid
    }

    pub fn hashes(&self) -> &PipelineHashes {
        &self.hashes
    }

    fn check_frame(&self, raw: &MeasurementFrame) -> Result<()> {
        if raw.electrodes() != self.electrodes {
            return Err(mismatch("frame electrodes", self.electrodes, raw.electrodes()));
        }
        Ok(())
    }

    /// Latent prediction for a raw (unfiltered) difference frame.
    pub fn latent(&self, raw: &MeasurementFrame) -> Result<Vec<f32>> {
        self.check_frame(raw)?;
        self.regressor.predict(self.filter.apply(raw)?.values())
    }

    /// Image in conductivity units on the pixel grid.
    pub fn reconstruct(&self, raw: &MeasurementFrame) -> Result<Vec<f64>> {
        let h = self.latent(raw)?;
        Ok(self.vae.decode(&h)?.iter().map(|&v| v as f64 * self.c_norm()).collect())
    }

    pub fn reconstruct_batch(&self, raw: &[MeasurementFrame]) -> Result<Vec<Vec<f64>>> {
        raw.par_iter().map(|f| self.reconstruct(f)).collect()
    }
}

/// `‖S · elements(image) − V̇‖ / ‖V̇‖` with the image sampled back onto the mesh.
pub fn data_residual(wb: &Workbench, image: &[f64], raw: &MeasurementFrame) -> Result<f64> {
    let gd = wb.grid().sample_to_elements(image)?;
    let fit = wb.linear().apply(&gd);
    check_len("frame", fit.len(), raw.len())?;
    let num: f64 = fit.iter().zip(raw.values()).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(num.sqrt() / raw.norm())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Proposed,
    Tikhonov,
    Tv,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Proposed => "proposed",
            Method::Tikhonov => "tikhonov",
            Method::Tv => "tv",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonConfig {
    pub normal: usize,
    pub obese: usize,
    pub noise_level: f64,
    pub seed: u64,
    /// TV runs on the first this-many cases of each family.
    pub tv_cases: usize,
    pub tv_steps: usize,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        Self {
            normal: 30,
            obese: 30,
            noise_level: 0.05,
            seed: 7,
            tv_cases: 3,
            tv_steps: DEFAULT_TV_SEARCH_STEPS,
        }
    }
}

/// A fresh phantom and its noisy raw difference frame.
#[derive(Clone, Debug)]
pub struct TestCase {
    pub family: Family,
    pub index: usize,
    pub phantom: LungPhantomParams,
    pub elements: Vec<f64>,
    pub truth: Vec<f64>,
    pub frame: MeasurementFrame,
}

/// Test phantoms come from their own seed stream, separate from any dataset's.
pub fn test_cases(wb: &Workbench, family: Family, count: usize, noise_level: f64, seed: u64) -> Result<Vec<TestCase>> {
    let tag = format!("compare-{family}");
    let noise_tag = format!("compare-noise-{family}");
    (0..count)
        .into_par_iter()
        .map(|i| {
            let phantom = sample_phantom(family, &wb.domain(), derive_seed(seed, &tag, i as u64));
            let elements = render(&phantom, wb.mesh());
            let frame = wb.simulate(&elements)?.with_noise(noise_level, derive_seed(seed, &noise_tag, i as u64))?;
            Ok(TestCase {
                family,
                index: i,
                phantom,
                truth: wb.rasterize(&elements)?,
                elements,
                frame,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: Method,
    pub metrics: ImageMetrics,
    pub lambda: Option<LambdaChoice>,
    pub seconds: f64,
    #[serde(skip)]
    pub image: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub family: Family,
    pub index: usize,
    pub phantom: LungPhantomParams,
    pub truth_components: usize,
    /// Linearized data residual of the proposed reconstruction.
    pub data_residual: f64,
    pub results: Vec<MethodResult>,
    #[serde(skip)]
    pub truth: Vec<f64>,
}

impl CaseReport {
    pub fn result(&self, method: Method) -> Option<&MethodResult> {
        self.results.iter().find(|r| r.method == method)
    }

    pub fn stem(&self) -> String {
        format!("{}_{:03}", self.family, self.index)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilySummary {
    pub family: Family,
    pub cases: usize,
    pub proposed_beats_tikhonov: usize,
    pub proposed_two_components: usize,
    pub tikhonov_merged: usize,
    pub median_rel_l2_proposed: f64,
    pub median_rel_l2_tikhonov: f64,
    pub median_rel_l2_tv: Option<f64>,
    pub mean_dice_proposed: f64,
    pub mean_dice_tikhonov: f64,
    pub median_data_residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ComparisonConfig,
    pub hashes: PipelineHashes,
    pub grid: GridSize,
    pub c_norm: f64,
    pub cases: Vec<CaseReport>,
    pub summary: Vec<FamilySummary>,
    pub seconds: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let t = Instant::now();
    let out = f()?;
    Ok((out, t.elapsed().as_secs_f64()))
}

fn run_case(pipeline: &ReconPipeline, wb: &Workbench, case: &TestCase, cfg: &ComparisonConfig, with_tv: bool) -> Result<CaseReport> {
    let size = wb.grid().size();
    let v = case.frame.values();
    let mut results = Vec::new();
    let (image, seconds) = timed(|| pipeline.reconstruct(&case.frame))?;
    results.push(MethodResult {
        method: Method::Proposed,
        metrics: evaluate(&image, &case.truth, size)?,
        lambda: None,
        seconds,
        image,
    });
    let data_residual = data_residual(wb, &results[0].image, &case.frame)?;
    let ((choice, image), seconds) = timed(|| {
        let choice = wb.linear().tikhonov_discrepancy(v, cfg.noise_level)?;
        let gd = wb.linear().tikhonov(v, &TikhonovConfig { lambda: choice.lambda })?;
        Ok((choice, wb.rasterize(&gd)?))
    })?;
    results.push(MethodResult {
        method: Method::Tikhonov,
        metrics: evaluate(&image, &case.truth, size)?,
        lambda: Some(choice),
        seconds,
        image,
    });
    if with_tv {
        let ((choice, image), seconds) = timed(|| {
            let base = TvConfig::new(1.0);
            let (choice, sol) = wb.linear().tv_discrepancy(wb.gradient(), v, cfg.noise_level, &base, cfg.tv_steps)?;
            Ok((choice, wb.rasterize(&sol.gamma)?))
        })?;
        results.push(MethodResult {
            method: Method::Tv,
            metrics: evaluate(&image, &case.truth, size)?,
            lambda: Some(choice),
            seconds,
            image,
        });
    }
    Ok(CaseReport {
        family: case.family,
        index: case.index,
        phantom: case.phantom,
        truth_components: component_count(&case.truth, size)?,
        data_residual,
        results,
        truth: case.truth.clone(),
    })
}

fn summarize(family: Family, cases: &[&CaseReport]) -> FamilySummary {
    let metric = |m: Method, f: fn(&ImageMetrics) -> f64| -> Vec<f64> { cases.iter().filter_map(|c| c.result(m)).map(|r| f(&r.metrics)).collect() };
    let rel = |m: &ImageMetrics| m.relative_l2;
    let dice = |m: &ImageMetrics| m.dice;
    let mean = |v: Vec<f64>| if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
    let count = |pred: &dyn Fn(&CaseReport) -> bool| cases.iter().filter(|c| pred(c)).count();
    let comps = |c: &CaseReport, m: Method| c.result(m).map_or(0, |r| r.metrics.components);
    let tv = metric(Method::Tv, rel);
    FamilySummary {
        family,
        cases: cases.len(),
        proposed_beats_tikhonov: count(&|c| match (c.result(Method::Proposed), c.result(Method::Tikhonov)) {
            (Some(p), Some(t)) => p.metrics.relative_l2 < t.metrics.relative_l2,
            _ => false,
        }),
        proposed_two_components: count(&|c| comps(c, Method::Proposed) == 2),
        tikhonov_merged: count(&|c| comps(c, Method::Tikhonov) == 1),
        median_rel_l2_proposed: median(metric(Method::Proposed, rel)),
        median_rel_l2_tikhonov: median(metric(Method::Tikhonov, rel)),
        median_rel_l2_tv: if tv.is_empty() { None } else { Some(median(tv)) },
        mean_dice_proposed: mean(metric(Method::Proposed, dice)),
        mean_dice_tikhonov: mean(metric(Method::Tikhonov, dice)),
        median_data_residual: median(cases.iter().map(|c| c.data_residual).collect()),
    }
}

/// Reconstructs fresh normal and obese cases with every method and scores them.
pub fn run_comparison(pipeline: &ReconPipeline, wb: &Workbench, cfg: &ComparisonConfig) -> Result<ExperimentReport> {
    if !(cfg.noise_level > 0.0) {
        return Err(invalid("comparison noise level", format!("must be positive, got {}", cfg.noise_level)));
    }
    let start = Instant::now();
    let mut cases = Vec::new();
    let mut summary = Vec::new();
    for (family, count) in [(Family::Normal, cfg.normal), (Family::Obese, cfg.obese)] {
        if count == 0 {
            continue;
        }
        let tests = test_cases(wb, family, count, cfg.noise_level, cfg.seed)?;
        let reports: Vec<CaseReport> = tests.par_iter().map(|c| run_case(pipeline, wb, c, cfg, c.index < cfg.tv_cases)).collect::<Result<_>>()?;
        let s = summarize(family, &reports.iter().collect::<Vec<_>>());
        info!(
            "{family}: proposed beats tikhonov {}/{}, proposed two components {}, tikhonov merged {}",
            s.proposed_beats_tikhonov, s.cases, s.proposed_two_components, s.tikhonov_merged
        );
        summary.push(s);
        cases.extend(reports);
    }
    Ok(ExperimentReport {
        config: *cfg,
        hashes: pipeline.hashes().clone(),
        grid: wb.grid().size(),
        c_norm: pipeline.c_norm(),
        cases,
        summary,
        seconds: start.elapsed().as_secs_f64(),
    })
}

impl ExperimentReport {
    pub fn summary_for(&self, family: Family) -> Option<&FamilySummary> {
        self.summary.iter().find(|s| s.family == family)
    }

    /// `report.json`, one f64 blob per image under `cases/`, one PNG mosaic per family
    /// (columns: truth, proposed, Tikhonov, TV).
    pub fn write(&self, dir: &Path) -> Result<()> {
        let cases_dir = dir.join("cases");
        fs::create_dir_all(&cases_dir)?;
        fs::write(dir.join("report.json"), serde_json::to_string_pretty(self)?)?;
        for c in &self.cases {
            blob::write_f64(&cases_dir.join(format!("{}_truth.f64", c.stem())), &c.truth)?;
            for r in &c.results {
                blob::write_f64(&cases_dir.join(format!("{}_{}.f64", c.stem(), r.method.name())), &r.image)?;
            }
        }
        for s in &self.summary {
            let mut m = Mosaic::new(self.grid, 4)?;
            for c in self.cases.iter().filter(|c| c.family == s.family) {
                m.push(&c.truth)?;
                for method in [Method::Proposed, Method::Tikhonov, Method::Tv] {
                    match c.result(method) {
                        Some(r) => m.push(&r.image)?,
                        None => m.push_blank(),
                    }
                }
            }
            m.write_png(&dir.join(format!("comparison_{}.png", s.family)))?;
        }
        Ok(())
    }

    /// Reads a written report back, with images restored from the blobs.
    pub fn read(dir: &Path) -> Result<Self> {
        let mut report: Self = serde_json::from_slice(&fs::read(dir.join("report.json"))?)?;
        let n = report.grid.width * report.grid.height;
        let cases_dir = dir.join("cases");
        for c in &mut report.cases {
            let stem = c.stem();
            c.truth = blob::read_f64(&cases_dir.join(format!("{stem}_truth.f64")), Some(n))?;
            for r in &mut c.results {
                r.image = blob::read_f64(&cases_dir.join(format!("{stem}_{}.f64", r.method.name())), Some(n))?;
            }
        }
        Ok(report)
    }
}

/// Decoded images on an inclusive `resolution × resolution` grid over a 2-D latent box.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentGrid {
    pub resolution: usize,
    pub range: (f64, f64),
    /// Tile `(i, j)` at index `i * resolution + j` decodes `(coords[i], coords[j])`.
    pub coords: Vec<f64>,
    pub images: Vec<Vec<f32>>,
}

pub fn latent_grid_images(vae: &VaeModel, range: (f64, f64), resolution: usize) -> Result<LatentGrid> {
    if vae.latent_dim() != 2 {
        return Err(invalid("latent grid", format!("needs a 2-dimensional latent space, got {}", vae.latent_dim())));
    }
    if resolution == 0 || !(range.0 <= range.1) {
        return Err(invalid("latent grid", format!("needs resolution ≥ 1 and an ordered range, got {resolution} over {range:?}")));
    }
    let coords: Vec<f64> = (0..resolution)
        .map(|i| if resolution == 1 { range.0 } else { range.0 + (range.1 - range.0) * i as f64 / (resolution - 1) as f64 })
        .collect();
    let latents: Vec<f32> = coords.iter().flat_map(|&a| coords.iter().flat_map(move |&b| [a as f32, b as f32])).collect();
    let flat = vae.decode(&latents)?;
    Ok(LatentGrid {
        resolution,
        range,
        coords,
        images: flat.chunks(vae.image_len()).map(<[f32]>::to_vec).collect(),
    })
}

fn mean_square_diff(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| ((x - y) as f64).powi(2)).sum::<f64>() / a.len() as f64
}

impl LatentGrid {
    pub fn tile(&self, i: usize, j: usize) -> &[f32] {
        &self.images[i * self.resolution + j]
    }

    /// Mean-square difference averaged over 4-adjacent tile pairs and over all other pairs.
    pub fn continuity(&self) -> (f64, f64) {
        let r = self.resolution;
        let (mut near, mut n_near, mut far, mut n_far) = (0.0, 0usize, 0.0, 0usize);
        for a in 0..r * r {
            for b in a + 1..r * r {
                let (ia, ja, ib, jb) = (a / r, a % r, b / r, b % r);
                let d = mean_square_diff(&self.images[a], &self.images[b]);
                if ia.abs_diff(ib) + ja.abs_diff(jb) == 1 {
                    near += d;
                    n_near += 1;
                } else {
                    far += d;
                    n_far += 1;
                }
            }
        }
        (near / n_near.max(1) as f64, far / n_far.max(1) as f64)
    }

    pub fn mosaic(&self, size: GridSize) -> Result<Mosaic> {
        let mut m = Mosaic::new(size, self.resolution)?;
        for img in &self.images {
            m.push_f32(img)?;
        }
        Ok(m)
    }
}

/// Decodes `δ_j e_axis` for each offset, with consecutive differences as tangents.
#[derive(Clone, Debug, PartialEq)]
pub struct AxisWalk {
    pub axis: usize,
    pub deltas: Vec<f64>,
    pub images: Vec<Vec<f32>>,
    /// `images[j + 1] − images[j]`, exact in f64.
    pub tangents: Vec<Vec<f64>>,
}

pub fn latent_axis_walk(vae: &VaeModel, axis: usize, deltas: &[f64]) -> Result<AxisWalk> {
    let k = vae.latent_dim();
    if axis >= k {
        return Err(invalid("walk axis", format!("must be below the latent dimension {k}, got {axis}")));
    }
    if deltas.len() < 2 {
        return Err(invalid("walk offsets", "need at least two"));
    }
    let mut latents = vec![0.0f32; deltas.len() * k];
    for (j, &d) in deltas.iter().enumerate() {
        latents[j * k + axis] = d as f32;
    }
    let images: Vec<Vec<f32>> = vae.decode(&latents)?.chunks(vae.image_len()).map(<[f32]>::to_vec).collect();
    let tangents = images
        .windows(2)
        .map(|w| w[1].iter().zip(&w[0]).map(|(&b, &a)| b as f64 - a as f64).collect())
        .collect();
    Ok(AxisWalk {
        axis,
        deltas: deltas.to_vec(),
        images,
        tangents,
    })
}

pub fn axis_walks(vae: &VaeModel, deltas: &[f64]) -> Result<Vec<AxisWalk>> {
    (0..vae.latent_dim()).map(|i| latent_axis_walk(vae, i, deltas)).collect()
}

/// Two mosaic rows per axis: decoded images, then tangents.
pub fn walks_mosaic(walks: &[AxisWalk], size: GridSize) -> Result<Mosaic> {
    let cols = walks.first().map_or(1, |w| w.images.len());
    let mut m = Mosaic::new(size, cols)?;
    for w in walks {
        for img in &w.images {
            m.push_f32(img)?;
        }
        m.end_row();
        for t in &w.tangents {
            m.push(t)?;
        }
        m.end_row();
    }
    Ok(m)
}

/// True when every pixel is finite and inside `[lo, hi]`.
pub fn in_range(image: &[f32], lo: f64, hi: f64) -> bool {
    image.iter().all(|&v| v.is_finite() && (v as f64) >= lo && (v as f64) <= hi)
}

/// `Ψ((1 − t) μ(a) + t μ(b))` for each `t`.
pub fn latent_interpolation(vae: &VaeModel, a: &[f32], b: &[f32], ts: &[f64]) -> Result<Vec<Vec<f32>>> {
    let n = vae.image_len();
    check_len("image", n, a.len())?;
    check_len("image", n, b.len())?;
    let mut both = a.to_vec();
    both.extend_from_slice(b);
    let mu = vae.encode_mean(&both)?;
    let k = vae.latent_dim();
    let (ha, hb) = mu.split_at(k);
    let latents: Vec<f32> = ts.iter().flat_map(|&t| ha.iter().zip(hb).map(move |(&x, &y)| ((1.0 - t) * x as f64 + t * y as f64) as f32)).collect();
    Ok(vae.decode(&latents)?.chunks(n).map(<[f32]>::to_vec).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterpolationRow {
    pub a: usize,
    pub b: usize,
    pub t: f64,
    pub in_range_fraction: f64,
    pub components: usize,
}

impl InterpolationRow {
    /// At least 99% of pixels in the phantom range and one or two support components.
    pub fn passes(&self) -> bool {
        self.in_range_fraction >= 0.99 && (1..=2).contains(&self.components)
    }
}

/// Interpolates `pairs` random pairs of distinct held-out base images.
pub fn interpolation_study(vae: &VaeModel, ds: &Dataset, pairs: usize, ts: &[f64], seed: u64) -> Result<Vec<InterpolationRow>> {
    let bases = ds.bases(Split::Test);
    if bases.len() < 2 {
        return Err(invalid("interpolation study", "needs at least two held-out images"));
    }
    let g = ds.manifest().grid;
    let mut rows = Vec::new();
    for p in 0..pairs {
        let pick = sample(&mut seeded_rng(derive_seed(seed, "interpolation", p as u64)), bases.len(), 2);
        let (a, b) = (bases[pick.index(0)], bases[pick.index(1)]);
        for (img, &t) in latent_interpolation(vae, ds.image(a), ds.image(b), ts)?.iter().zip(ts) {
            let inside = img.iter().filter(|&&v| (v as f64) >= PHANTOM_RANGE.0 && (v as f64) <= PHANTOM_RANGE.1).count();
            let values: Vec<f64> = img.iter().map(|&v| v as f64).collect();
            rows.push(InterpolationRow {
                a,
                b,
                t,
                in_range_fraction: inside as f64 / img.len() as f64,
                components: component_count(&values, g)?,
            });
        }
    }
    Ok(rows)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityRow {
    pub data_distance: f64,
    pub recon_distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityTable {
    pub rows: Vec<StabilityRow>,
    /// `(δ, max ε over rows with data distance ≤ δ)`, sorted by δ.
    pub envelope: Vec<[f64; 2]>,
}

/// Pairs `(A, A blended toward C by t)` with `t` evenly spaced over `[0, 1]`, so the
/// first pair is identical and distances span small to large.
pub fn stability_pairs(wb: &Workbench, count: usize, seed: u64) -> Vec<(LungPhantomParams, LungPhantomParams)> {
    (0..count)
        .map(|i| {
            let a = sample_phantom(Family::Normal, &wb.domain(), derive_seed(seed, "stability-a", i as u64));
            let c = sample_phantom(Family::Normal, &wb.domain(), derive_seed(seed, "stability-c", i as u64));
            let t = if count > 1 { i as f64 / (count - 1) as f64 } else { 0.0 };
            (a, a.lerp(&c, t))
        })
        .collect()
}

/// Noise-free data distance against reconstruction distance for each pair.
pub fn stability_probe(pipeline: &ReconPipeline, wb: &Workbench, pairs: &[(LungPhantomParams, LungPhantomParams)]) -> Result<StabilityTable> {
    let rows: Vec<StabilityRow> = pairs
        .par_iter()
        .map(|(p, q)| {
            let va = wb.simulate(&render(p, wb.mesh()))?;
            let vb = wb.simulate(&render(q, wb.mesh()))?;
            let (ra, rb) = (pipeline.reconstruct(&va)?, pipeline.reconstruct(&vb)?);
            let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            Ok(StabilityRow {
                data_distance: dist(va.values(), vb.values()),
                recon_distance: dist(&ra, &rb),
            })
        })
        .collect::<Result<_>>()?;
    let mut sorted = rows.clone();
    sorted.sort_by(|a, b| a.data_distance.total_cmp(&b.data_distance));
    let mut top = 0.0f64;
    let envelope = sorted
        .iter()
        .map(|r| {
            top = top.max(r.recon_distance);
            [r.data_distance, top]
        })
        .collect();
    Ok(StabilityTable { rows, envelope })
}

/// Latent-prediction stability over one split of a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentStability {
    /// RMS distance of predictions to their mean.
    pub spread: f64,
    /// Fraction of frames whose prediction moves by less than a quarter of the spread
    /// under a random perturbation of relative size `perturbation`.
    pub stable_fraction: f64,
    pub perturbation: f64,
    /// RMS spread of per-base mean predictions over the RMS spread of noise replicates
    /// around their base mean.
    pub separation_ratio: f64,
}

pub fn latent_stability(regressor: &RegressorModel, ds: &Dataset, split: Split, perturbation: f64, seed: u64) -> Result<LatentStability> {
    let pairs = ds.pairs_in(split);
    if pairs.is_empty() {
        return Err(invalid("latent stability", format!("split {split:?} is empty")));
    }
    let k = regressor.config().latent_dim;
    let frames: Vec<f32> = pairs.iter().flat_map(|&n| ds.frame(n).iter().copied()).collect();
    let pred = regressor.predict_batch(&frames)?;
    let rms_about = |rows: &[Vec<f64>]| -> (Vec<f64>, f64) {
        let mut mean = vec![0.0; k];
        for r in rows {
            mean.iter_mut().zip(r).for_each(|(m, v)| *m += v / rows.len() as f64);
        }
        let ms = rows.iter().map(|r| r.iter().zip(&mean).map(|(v, m)| (v - m).powi(2)).sum::<f64>()).sum::<f64>() / rows.len() as f64;
        (mean, ms.sqrt())
    };
    let all: Vec<Vec<f64>> = pred.chunks(k).map(|r| r.iter().map(|&v| v as f64).collect()).collect();
    let (_, spread) = rms_about(&all);
    let stable = pairs
        .iter()
        .enumerate()
        .map(|(i, &n)| -> Result<bool> {
            let f = ds.frame(n);
            let norm = f.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
            let mut z = vec![0.0f64; f.len()];
            fill_gaussian(&mut seeded_rng(derive_seed(seed, "latent-perturbation", n as u64)), &mut z);
            let zn = z.iter().map(|v| v * v).sum::<f64>().sqrt();
            let moved: Vec<f32> = f.iter().zip(&z).map(|(&v, d)| (v as f64 + perturbation * norm * d / zn) as f32).collect();
            let p = regressor.predict_batch(&moved)?;
            let shift = p.iter().zip(&all[i]).map(|(&a, b)| (a as f64 - b).powi(2)).sum::<f64>().sqrt();
            Ok(shift < 0.25 * spread)
        })
        .collect::<Result<Vec<bool>>>()?;
    let stable_fraction = stable.iter().filter(|&&s| s).count() as f64 / stable.len() as f64;
    let mut within = 0.0;
    let mut means = Vec::new();
    for base in ds.bases(split) {
        let rows: Vec<Vec<f64>> = pairs.iter().zip(&all).filter(|(&n, _)| ds.base_of(n) == *base).map(|(_, r)| r.clone()).collect();
        let (mean, s) = rms_about(&rows);
        within += s * s / ds.bases(split).len() as f64;
        means.push(mean);
    }
    let (_, across) = rms_about(&means);
    Ok(LatentStability {
        spread,
        stable_fraction,
        perturbation,
        separation_ratio: across / within.sqrt(),
    })
}
