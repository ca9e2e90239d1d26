//! One driver per subcommand. Each writes its resolved config and its outputs to a
//! single directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use diffkit::derive_seed;
use eit_manifold::baseline::{TikhonovConfig, TvConfig};
use eit_manifold::blob;
use eit_manifold::dataset::{build_dataset, Dataset, DatasetManifest, Split};
use eit_manifold::frame::{load_frames, save_frames, MeasurementFrame};
use eit_manifold::geometry::{save_mesh, GridSize};
use eit_manifold::metrics::relative_l2;
use eit_manifold::phantom::{render, sample_phantom};
use eit_manifold::picture::Mosaic;
use eit_manifold::pipeline::{
    axis_walks, interpolation_study, latent_grid_images, latent_stability, run_comparison, stability_pairs, stability_probe, walks_mosaic,
    ReconPipeline, INTERPOLATION_TS,
};
use eit_manifold::regressor::{build_targets, train_stage2, RegressorConfig, RegressorModel};
use eit_manifold::vae::{train_stage1, VaeConfig, VaeModel};
use eit_manifold::verify;
use eit_manifold::workbench::{Workbench, WorkbenchConfig};
use log::info;
use serde::Serialize;
use serde_json::{json, Value};

use crate::args::*;
use crate::config::{read_file, resolve};
use crate::{CliError, DEFAULT_OUTPUT_ROOT, OUTPUT_ROOT_ENV};

const WORKBENCH_FILE: &str = "workbench.json";
const MOSAIC_COLUMNS: usize = 8;

/// Output directory: `--out`, else `<root>/<command>` where root comes from the
/// environment. Report-style commands get a timestamp suffix so reruns do not collide.
pub fn output_dir(out: Option<&Path>, command: &str) -> PathBuf {
    if let Some(out) = out {
        return out.to_path_buf();
    }
    let root = std::env::var_os(OUTPUT_ROOT_ENV).map_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT), PathBuf::from);
    match command {
        "compare" | "visualize-manifold" | "stability-probe" => {
            let secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
            root.join(format!("{command}-{secs}"))
        }
        _ => root.join(command),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

/// Parses flags and config, then runs the chosen subcommand.
pub fn run(cli: Cli) -> Result<PathBuf, CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        // Only fails if a pool already exists, which means the caller configured one.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let file = cli.config.as_deref().map(read_file).transpose()?;
    let file = file.as_ref();
    let name = cli.command.name();
    let out = output_dir(cli.out.as_deref(), name);
    fs::create_dir_all(&out)?;
    let record = |cfg: &dyn erased::Config| -> Result<(), CliError> {
        let resolved = json!({ "command": name, "threads": cli.threads, "config": cfg.value()? });
        write_json(&out.join("config.json"), &resolved)
    };
    match &cli.command {
        Command::MeshGen(f) => {
            let c: MeshParams = resolve(file, f)?;
            record(&c)?;
            mesh_gen(&c, &out)
        }
        Command::Simulate(f) => {
            let c: SimulateConfig = resolve(file, f)?;
            record(&c)?;
            simulate(&c, &out)
        }
        Command::MakeDataset(f) => {
            let c: DatasetRunConfig = resolve(file, f)?;
            record(&c)?;
            make_dataset(&c, &out)
        }
        Command::TrainVae(f) => {
            let c: TrainVaeConfig = resolve(file, f)?;
            record(&c)?;
            train_vae(&c, &out)
        }
        Command::TrainRegressor(f) => {
            let c: TrainRegressorConfig = resolve(file, f)?;
            record(&c)?;
            train_regressor(&c, &out)
        }
        Command::Reconstruct(f) => {
            let c: ReconstructConfig = resolve(file, f)?;
            record(&c)?;
            reconstruct(&c, &out)
        }
        Command::Baseline(f) => {
            let c: BaselineConfig = resolve(file, f)?;
            record(&c)?;
            baseline(&c, &out)
        }
        Command::Compare(f) => {
            let c: CompareConfig = resolve(file, f)?;
            record(&c)?;
            compare(&c, &out)
        }
        Command::VisualizeManifold(f) => {
            let c: ManifoldConfig = resolve(file, f)?;
            record(&c)?;
            visualize_manifold(&c, &out)
        }
        Command::StabilityProbe(f) => {
            let c: StabilityConfig = resolve(file, f)?;
            record(&c)?;
            stability(&c, &out)
        }
        Command::Verify(f) => {
            let c: MeshParams = resolve(file, f)?;
            record(&c)?;
            run_verify(&c, &out)
        }
    }?;
    Ok(out)
}

mod erased {
    use serde::Serialize;
    use serde_json::Value;

    use crate::CliError;

    pub trait Config {
        fn value(&self) -> Result<Value, CliError>;
    }

    impl<T: Serialize> Config for T {
        fn value(&self) -> Result<Value, CliError> {
            Ok(serde_json::to_value(self)?)
        }
    }
}

fn build_workbench(cfg: WorkbenchConfig, out: &Path) -> Result<Workbench, CliError> {
    let wb = Workbench::build(cfg)?;
    write_json(&out.join(WORKBENCH_FILE), wb.config())?;
    Ok(wb)
}

/// Rebuilds the setup recorded in a dataset, mesh-gen or simulate directory.
pub fn load_workbench(dir: &Path) -> Result<Workbench, CliError> {
    let own = dir.join(WORKBENCH_FILE);
    let cfg: WorkbenchConfig = if own.exists() {
        serde_json::from_str(&fs::read_to_string(own)?)?
    } else {
        let m: DatasetManifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
        m.workbench
    };
    Ok(Workbench::build(cfg)?)
}

fn load_dataset(path: &Option<PathBuf>) -> Result<(Dataset, Workbench), CliError> {
    let dir = required(path, "dataset")?;
    let ds = Dataset::load(dir)?;
    let wb = Workbench::build(ds.manifest().workbench)?;
    Ok((ds, wb))
}

fn mosaic_of<'a>(images: impl IntoIterator<Item = &'a [f64]>, size: GridSize) -> Result<Mosaic, CliError> {
    let mut m = Mosaic::new(size, MOSAIC_COLUMNS)?;
    for img in images {
        m.push(img)?;
    }
    Ok(m)
}

fn mesh_gen(c: &MeshParams, out: &Path) -> Result<(), CliError> {
    let wb = build_workbench(c.workbench()?, out)?;
    let manifest = save_mesh(&out.join("mesh"), &wb.config().mesh, wb.mesh(), wb.layout(), wb.grid().size())?;
    let mask: Vec<f64> = wb.grid().mask().iter().map(|&m| if m { -1.0 } else { 0.0 }).collect();
    eit_manifold::picture::write_image_png(&out.join("mask.png"), &mask, wb.grid().size())?;
    println!(
        "mesh: {} nodes, {} elements, min angle {:.1} deg, coverage {:.3}, hash {}",
        manifest.nodes, manifest.elements, manifest.min_angle_degrees, manifest.realized_coverage, manifest.mesh_hash
    );
    Ok(())
}

fn simulate(c: &SimulateConfig, out: &Path) -> Result<(), CliError> {
    let family = c.family()?;
    if c.count == 0 {
        return Err(CliError::Usage("count must be at least 1".into()));
    }
    let wb = build_workbench(c.mesh.workbench()?, out)?;
    let mut phantoms = Vec::new();
    let mut truth = Vec::new();
    let mut raw = Vec::new();
    let mut filtered = Vec::new();
    for i in 0..c.count as u64 {
        let p = sample_phantom(family, &wb.domain(), derive_seed(c.seed, "simulate", i));
        let elements = render(&p, wb.mesh());
        let mut frame = wb.simulate(&elements)?;
        if c.noise_level > 0.0 {
            frame = frame.with_noise(c.noise_level, derive_seed(c.seed, "simulate-noise", i))?;
        }
        filtered.push(wb.filter().apply(&frame)?);
        raw.push(frame);
        truth.push(wb.rasterize(&elements)?);
        phantoms.push(p);
    }
    write_json(&out.join("phantoms.json"), &phantoms)?;
    blob::write_f64(&out.join("truth.f64"), &truth.concat())?;
    mosaic_of(truth.iter().map(Vec::as_slice), wb.grid().size())?.write_png(&out.join("truth.png"))?;
    save_frames(out, "raw", &raw)?;
    save_frames(out, "filtered", &filtered)?;
    println!("simulated {} {family} frames of length {}", raw.len(), wb.frame_len());
    Ok(())
}

fn make_dataset(c: &DatasetRunConfig, out: &Path) -> Result<(), CliError> {
    let cfg = c.dataset()?;
    let wb = build_workbench(c.mesh.workbench()?, out)?;
    let ds = build_dataset(&wb, &cfg)?;
    ds.save(out)?;
    println!("dataset: {} pairs ({} x {}), c_norm {:.6e}, hash {}", ds.len(), ds.n_base(), ds.n_noise(), ds.c_norm(), ds.hash());
    Ok(())
}

/// Mean relative L2 of `reconstruct(image)` against the image over one split.
fn vae_error(vae: &VaeModel, ds: &Dataset, split: Split) -> Result<f64, CliError> {
    let bases = ds.bases(split);
    let mut total = 0.0;
    for &b in bases {
        let x: Vec<f64> = ds.image(b).iter().map(|&v| v as f64).collect();
        let r: Vec<f64> = vae.reconstruct(ds.image(b))?.iter().map(|&v| v as f64).collect();
        total += relative_l2(&r, &x)?;
    }
    Ok(total / bases.len().max(1) as f64)
}

fn train_vae(c: &TrainVaeConfig, out: &Path) -> Result<(), CliError> {
    let (ds, wb) = load_dataset(&c.dataset)?;
    let cfg = VaeConfig {
        kl_formula: c.kl_formula()?,
        init_seed: c.init_seed,
        ..VaeConfig::new(c.latent_dim, wb.config().grid, wb.electrodes())
    };
    let mut vae = VaeModel::new(cfg, &wb.grid().mask())?;
    let report = train_stage1(&mut vae, &ds, &c.train())?;
    vae.save(out)?;
    let metrics = json!({
        "final_loss": report.loss.last(),
        "train_rel_l2": vae_error(&vae, &ds, Split::Train)?,
        "test_rel_l2": vae_error(&vae, &ds, Split::Test)?,
        "hash": vae.hash(),
    });
    write_json(&out.join("metrics.json"), &metrics)?;
    println!("vae: {}", metrics);
    Ok(())
}

fn train_regressor(c: &TrainRegressorConfig, out: &Path) -> Result<(), CliError> {
    let (ds, wb) = load_dataset(&c.dataset)?;
    let vae = VaeModel::load(required(&c.vae, "vae")?)?;
    let set = build_targets(&vae, &ds)?;
    let cfg = RegressorConfig {
        hidden: c.hidden.clone(),
        init_seed: c.init_seed,
        ..RegressorConfig::new(wb.electrodes(), vae.latent_dim())
    };
    let mut model = RegressorModel::new(cfg)?;
    let report = train_stage2(&mut model, &set, &ds, &c.train())?;
    model.save(out)?;
    let pairs = ds.pairs_in(Split::Test);
    let frames: Vec<f32> = pairs.iter().flat_map(|&n| ds.frame(n).iter().copied()).collect();
    let pred = model.predict_batch(&frames)?;
    let k = vae.latent_dim();
    let mut err = 0.0;
    for (row, &n) in pred.chunks(k).zip(&pairs) {
        let a: Vec<f64> = row.iter().map(|&v| v as f64).collect();
        let b: Vec<f64> = set.target(n).iter().map(|&v| v as f64).collect();
        err += relative_l2(&a, &b)?;
    }
    let metrics = json!({
        "final_loss": report.loss.last(),
        "test_latent_rel_l2": err / pairs.len().max(1) as f64,
        "hash": model.hash(),
    });
    write_json(&out.join("metrics.json"), &metrics)?;
    println!("regressor: {}", metrics);
    Ok(())
}

fn load_input_frames(dir: &Option<PathBuf>, stem: &str) -> Result<Vec<MeasurementFrame>, CliError> {
    let frames = load_frames(required(dir, "frames")?, stem)?;
    if frames.is_empty() {
        return Err(CliError::Usage("no frames to process".into()));
    }
    Ok(frames)
}

fn write_images(out: &Path, images: &[Vec<f64>], size: GridSize) -> Result<(), CliError> {
    blob::write_f64(&out.join("images.f64"), &images.concat())?;
    mosaic_of(images.iter().map(Vec::as_slice), size)?.write_png(&out.join("images.png"))?;
    Ok(())
}

fn reconstruct(c: &ReconstructConfig, out: &Path) -> Result<(), CliError> {
    let wb = load_workbench(required(&c.workbench, "workbench")?)?;
    let pipeline = ReconPipeline::load(&wb, required(&c.vae, "vae")?, required(&c.regressor, "regressor")?)?;
    let frames = load_input_frames(&c.frames, &c.stem)?;
    let images = pipeline.reconstruct_batch(&frames)?;
    let latents = frames.iter().map(|f| pipeline.latent(f)).collect::<Result<Vec<_>, _>>()?;
    write_images(out, &images, wb.grid().size())?;
    write_json(&out.join("latents.json"), &json!({ "hashes": pipeline.hashes(), "latents": latents }))?;
    println!("reconstructed {} frames", images.len());
    Ok(())
}

fn baseline(c: &BaselineConfig, out: &Path) -> Result<(), CliError> {
    let wb = load_workbench(required(&c.workbench, "workbench")?)?;
    let frames = load_input_frames(&c.frames, &c.stem)?;
    let lin = wb.linear();
    let mut images = Vec::new();
    let mut choices: Vec<Value> = Vec::new();
    for f in &frames {
        let v = f.values();
        let (gamma, choice) = match (c.method.as_str(), c.lambda) {
            ("tikhonov", Some(lambda)) => (lin.tikhonov(v, &TikhonovConfig { lambda })?, json!({ "lambda": lambda })),
            ("tikhonov", None) => {
                let ch = lin.tikhonov_discrepancy(v, c.noise_level)?;
                (lin.tikhonov(v, &TikhonovConfig { lambda: ch.lambda })?, serde_json::to_value(ch)?)
            }
            ("tv", Some(lambda)) => {
                let sol = lin.total_variation(wb.gradient(), v, &TvConfig::new(lambda), None)?;
                let info = json!({ "lambda": lambda, "iterations": sol.iterations, "converged": sol.converged });
                (sol.gamma, info)
            }
            ("tv", None) => {
                let (ch, sol) = lin.tv_discrepancy(wb.gradient(), v, c.noise_level, &TvConfig::new(1.0), c.tv_steps)?;
                let info = json!({ "choice": ch, "iterations": sol.iterations, "converged": sol.converged });
                (sol.gamma, info)
            }
            (other, _) => return Err(CliError::Usage(format!("method must be tikhonov or tv, got {other:?}"))),
        };
        info!("baseline frame {}: {choice}", images.len());
        images.push(wb.rasterize(&gamma)?);
        choices.push(choice);
    }
    write_images(out, &images, wb.grid().size())?;
    write_json(&out.join("lambdas.json"), &choices)?;
    println!("{} reconstructed {} frames", c.method, images.len());
    Ok(())
}

fn load_pipeline(m_dataset: &Option<PathBuf>, vae: &Option<PathBuf>, reg: &Option<PathBuf>) -> Result<(Dataset, Workbench, ReconPipeline), CliError> {
    let (ds, wb) = load_dataset(m_dataset)?;
    let pipeline = ReconPipeline::load(&wb, required(vae, "vae")?, required(reg, "regressor")?)?;
    Ok((ds, wb, pipeline))
}

fn compare(c: &CompareConfig, out: &Path) -> Result<(), CliError> {
    let cfg = c.comparison()?;
    let (_, wb, pipeline) = load_pipeline(&c.dataset, &c.vae, &c.regressor)?;
    let report = run_comparison(&pipeline, &wb, &cfg)?;
    report.write(out)?;
    for s in &report.summary {
        println!(
            "{}: {} cases, proposed beats tikhonov {}, proposed two components {}, tikhonov merged {}, median rel-L2 {:.3} vs {:.3}",
            s.family,
            s.cases,
            s.proposed_beats_tikhonov,
            s.proposed_two_components,
            s.tikhonov_merged,
            s.median_rel_l2_proposed,
            s.median_rel_l2_tikhonov
        );
    }
    Ok(())
}

/// Pixels that are NaN or outside the decoder's `[-1, 1]` range.
fn bad_pixels<'a>(images: impl IntoIterator<Item = &'a Vec<f32>>) -> usize {
    images.into_iter().flatten().filter(|v| !v.is_finite() || v.abs() > 1.0).count()
}

fn visualize_manifold(c: &ManifoldConfig, out: &Path) -> Result<(), CliError> {
    let vae = VaeModel::load(required(&c.vae, "vae")?)?;
    let ds = Dataset::load(required(&c.dataset, "dataset")?)?;
    let size = ds.manifest().grid;
    if !(c.range > 0.0) || c.max_delta < 0 {
        return Err(CliError::Usage("range must be positive and max-delta non-negative".into()));
    }
    let mut summary = serde_json::Map::new();
    if vae.latent_dim() == 2 {
        let grid = latent_grid_images(&vae, (-c.range, c.range), c.resolution)?;
        grid.mosaic(size)?.write_png(&out.join("latent_grid.png"))?;
        let (adjacent, far) = grid.continuity();
        summary.insert("grid".into(), json!({ "bad_pixels": bad_pixels(&grid.images), "adjacent": adjacent, "far": far }));
    } else {
        info!("latent grid skipped: needs a two-dimensional latent space, found {}", vae.latent_dim());
    }
    let deltas: Vec<f64> = (-c.max_delta..=c.max_delta).map(f64::from).collect();
    let walks = axis_walks(&vae, &deltas)?;
    walks_mosaic(&walks, size)?.write_png(&out.join("axis_walks.png"))?;
    let telescopes = walks.iter().all(|w| {
        let last = w.images.len() - 1;
        (0..vae.image_len()).all(|p| w.tangents.iter().fold(0.0f64, |s, t| s + t[p]) == w.images[last][p] as f64 - w.images[0][p] as f64)
    });
    summary.insert(
        "walks".into(),
        json!({ "axes": walks.len(), "bad_pixels": bad_pixels(walks.iter().flat_map(|w| &w.images)), "telescopes": telescopes }),
    );
    if c.pairs > 0 {
        let rows = interpolation_study(&vae, &ds, c.pairs, &INTERPOLATION_TS, c.seed)?;
        let passing = rows.iter().filter(|r| r.passes()).count();
        summary.insert("interpolation".into(), json!({ "rows": rows, "passing": passing }));
    }
    write_json(&out.join("manifold.json"), &summary)?;
    println!("manifold: {}", Value::Object(summary.into_iter().filter(|(k, _)| k != "interpolation").collect()));
    Ok(())
}

fn stability(c: &StabilityConfig, out: &Path) -> Result<(), CliError> {
    let (ds, wb, pipeline) = load_pipeline(&c.dataset, &c.vae, &c.regressor)?;
    let pairs = stability_pairs(&wb, c.pairs, c.seed);
    let table = stability_probe(&pipeline, &wb, &pairs)?;
    let latent = latent_stability(pipeline.regressor(), &ds, Split::Test, c.perturbation, c.seed)?;
    write_json(&out.join("stability.json"), &json!({ "table": table, "latent": latent }))?;
    if let Some(last) = table.envelope.last() {
        println!("stability: {} pairs, largest data distance {:.3e}, largest reconstruction distance {:.3e}", table.rows.len(), last[0], last[1]);
    }
    println!("latent: spread {:.3}, stable fraction {:.3}, separation ratio {:.3}", latent.spread, latent.stable_fraction, latent.separation_ratio);
    Ok(())
}

fn run_verify(c: &MeshParams, out: &Path) -> Result<(), CliError> {
    let wb = build_workbench(c.workbench()?, out)?;
    let report = verify::run_with(&wb);
    write_json(&out.join("verify.json"), &report)?;
    for check in &report.checks {
        println!("{} {}: {} ({:.1}s)", if check.passed { "PASS" } else { "FAIL" }, check.name, check.detail, check.seconds);
    }
    if report.passed() {
        Ok(())
    } else {
        let names: Vec<&str> = report.failures().iter().map(|c| c.name.as_str()).collect();
        Err(CliError::Verification(names.join(", ")))
    }
}
