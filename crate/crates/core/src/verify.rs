//! Self-contained property suite: dimensions, forward physics, Jacobian, gradients,
//! KL identities, baseline optimality and the boundary filter.

use std::time::Instant;

use diffkit::gradcheck::{check_params, layer_suite};
use diffkit::{derive_seed, sample_gaussian, seeded_rng, ParameterSet};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::baseline::{TikhonovConfig, TvConfig};
use crate::error::Result;
use crate::fem::ForwardSolver;
use crate::filter::BoundaryFilter;
use crate::frame::{frame_len, measurement_pairs, MeasurementFrame};
use crate::geometry::build_disk_mesh;
use crate::phantom::{render, sample_phantom, Family};
use crate::regressor::{RegressorConfig, RegressorModel};
use crate::sensitivity::DEFAULT_RANK_TOLERANCE;
use crate::vae::{kl_loss, KlFormula, LatentDistribution, VaeConfig, VaeModel};
use crate::workbench::{Workbench, WorkbenchConfig};

pub const GRADIENT_TOL: f64 = 1e-4;
pub const JACOBIAN_TOL: f64 = 1e-3;
pub const JACOBIAN_STEP: f64 = 1e-4;
pub const PHYSICS_TOL: f64 = 1e-8;
pub const NORMAL_EQUATION_TOL: f64 = 1e-6;
pub const KL_SAMPLES: usize = 1_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }
}

fn run(name: &str, f: impl FnOnce() -> Result<(bool, String)>) -> Check {
    let t = Instant::now();
    let (passed, detail) = match f() {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    Check {
        name: name.into(),
        passed,
        detail,
        seconds: t.elapsed().as_secs_f64(),
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn random_conductivity(d: usize, seed: u64) -> Vec<f64> {
    sample_gaussian::<f64>(&[d], seed).data().iter().map(|v| (0.4 * v).exp()).collect()
}

/// Worst relative reciprocity gap `|V_jk − V_kj| / max(|V_jk|, |V_kj|)`.
pub fn reciprocity_gap(frame: &MeasurementFrame) -> f64 {
    measurement_pairs(frame.electrodes())
        .into_iter()
        .map(|(j, k)| {
            let (a, b) = (frame.get(j, k).unwrap_or(f64::NAN), frame.get(k, j).unwrap_or(f64::NAN));
            (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
        })
        .fold(0.0, f64::max)
}

/// Frame length 208 for 16 electrodes and sensitivity rank at most 104.
pub fn dimension_check(wb: &Workbench) -> Check {
    run("dimensions", || {
        let rank = wb.sensitivity().numerical_rank(DEFAULT_RANK_TOLERANCE)?;
        let len = wb.frame_len();
        let half = frame_len(wb.electrodes()) / 2;
        Ok((len == frame_len(wb.electrodes()) && rank <= half, format!("frame length {len}, rank {rank} (bound {half})")))
    })
}

/// Reciprocity on homogeneous and random media, rotation invariance on the disk,
/// and linearity in the drive amplitude.
pub fn forward_physics(wb: &Workbench) -> Check {
    run("forward physics", || {
        let (mesh, layout) = build_disk_mesh(1.0, 800, wb.electrodes(), wb.config().mesh.coverage)?;
        let disk = ForwardSolver::new(&mesh, &layout)?;
        let d = mesh.element_count();
        let homogeneous = disk.measure(&vec![1.0; d], 1.0)?;
        let mut recip = reciprocity_gap(&homogeneous).max(reciprocity_gap(&disk.measure(&random_conductivity(d, 3), 1.0)?));
        let dt = wb.mesh().element_count();
        let random = random_conductivity(dt, 4);
        let one = wb.solver().measure(&random, 1.0)?;
        recip = recip.max(reciprocity_gap(&one)).max(reciprocity_gap(&wb.solver().measure(&vec![1.0; dt], 1.0)?));
        let e = wb.electrodes();
        let scale = max_abs(homogeneous.values());
        let rotation = measurement_pairs(e)
            .into_iter()
            .map(|(j, k)| {
                let a = homogeneous.get(j, k).unwrap_or(f64::NAN);
                let b = homogeneous.get((j + 1) % e, (k + 1) % e).unwrap_or(f64::NAN);
                (a - b).abs() / scale
            })
            .fold(0.0, f64::max);
        let two = wb.solver().measure(&random, 2.0)?;
        let linearity = one.values().iter().zip(two.values()).map(|(a, b)| (2.0 * a - b).abs()).fold(0.0, f64::max) / max_abs(one.values());
        let ok = recip < PHYSICS_TOL && rotation < PHYSICS_TOL && linearity < PHYSICS_TOL;
        Ok((ok, format!("reciprocity {recip:.2e}, rotation {rotation:.2e}, amplitude linearity {linearity:.2e}")))
    })
}

/// Sensitivity columns against central differences of the forward map at 10 elements.
pub fn jacobian_check(wb: &Workbench) -> Check {
    run("jacobian", || {
        let d = wb.mesh().element_count();
        let mut worst = 0.0f64;
        for m in sample(&mut seeded_rng(17), d, 10).into_vec() {
            let (mut up, mut down) = (vec![1.0; d], vec![1.0; d]);
            up[m] += JACOBIAN_STEP;
            down[m] -= JACOBIAN_STEP;
            let (a, b) = (wb.solver().measure(&up, 1.0)?, wb.solver().measure(&down, 1.0)?);
            let fd: Vec<f64> = a.values().iter().zip(b.values()).map(|(x, y)| (x - y) / (2.0 * JACOBIAN_STEP)).collect();
            let col = wb.sensitivity().column(m);
            let err = fd.iter().zip(&col).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            let norm = fd.iter().map(|x| x * x).sum::<f64>().sqrt();
            worst = worst.max(err / norm);
        }
        Ok((worst < JACOBIAN_TOL, format!("worst column error {worst:.2e}")))
    })
}

/// Every layer kind plus the full VAE objective and regressor loss in f64.
pub fn gradient_gate(wb: &Workbench) -> Check {
    run("gradients", || {
        let mut worst: (f64, String) = (0.0, String::new());
        let mut note = |name: String, err: f64| {
            if err > worst.0 || !err.is_finite() {
                worst = (err, name);
            }
        };
        for (name, c) in layer_suite(11)? {
            note(format!("{name}/{}", c.name), c.rel_err);
        }
        let e = wb.electrodes();
        let mask: Vec<bool> = (0..256).map(|i| i % 16 > 1 && i / 16 > 0).collect();
        for formula in [KlFormula::Standard, KlFormula::LogSigma] {
            let model = VaeModel::new(VaeConfig { kl_formula: formula, ..VaeConfig::new(3, 16, e) }, &mask)?;
            let params: ParameterSet<f64> = model.params().cast();
            let x = sample_gaussian::<f64>(&[4, 1, 16, 16], 5).map(|v| (0.5 * v).tanh());
            let z = sample_gaussian::<f64>(&[4, 3], 6);
            let (_, grads) = model.loss_and_gradients(&params, &x, &z)?;
            let loss = |p: &ParameterSet<f64>| model.loss_and_gradients(p, &x, &z).map_or(f64::NAN, |r| r.0.total);
            for c in check_params(&params, &grads, loss, 12, 7) {
                note(format!("vae/{}", c.name), c.rel_err);
            }
        }
        let reg = RegressorModel::new(RegressorConfig { hidden: vec![16, 16], ..RegressorConfig::new(e, 3) })?;
        let params: ParameterSet<f64> = reg.params().cast();
        let frames = sample_gaussian::<f64>(&[3, frame_len(e)], 8);
        let targets = sample_gaussian::<f64>(&[3, 3], 9);
        let (_, grads) = reg.loss_and_gradients(&params, frames.data(), targets.data())?;
        let loss = |p: &ParameterSet<f64>| reg.loss_and_gradients(p, frames.data(), targets.data()).map_or(f64::NAN, |r| r.0);
        for c in check_params(&params, &grads, loss, 16, 10) {
            note(format!("regressor/{}", c.name), c.rel_err);
        }
        Ok((worst.0 < GRADIENT_TOL, format!("worst relative error {:.2e} at {}", worst.0, worst.1)))
    })
}

/// Closed-form KL values and agreement with a sampled estimate.
pub fn kl_identities() -> Check {
    run("kl identities", || {
        let unit = LatentDistribution { mu: vec![0.0; 16], sigma: vec![1.0; 16] };
        let zero = kl_loss(&unit, KlFormula::Standard)?;
        let mut shifted = unit.clone();
        shifted.mu[0] = 1.0;
        let half = kl_loss(&shifted, KlFormula::Standard)?;
        let d = LatentDistribution {
            mu: vec![0.8, -0.3, 1.5, 0.0],
            sigma: vec![0.5, 1.7, 0.9, 0.3],
        };
        let z = sample_gaussian::<f64>(&[KL_SAMPLES, 4], 17);
        let mut sum = 0.0;
        for row in z.data().chunks(4) {
            for i in 0..4 {
                let h = d.mu[i] + d.sigma[i] * row[i];
                sum += -0.5 * row[i] * row[i] - d.sigma[i].ln() + 0.5 * h * h;
            }
        }
        let mc = sum / KL_SAMPLES as f64;
        let exact = kl_loss(&d, KlFormula::Standard)?;
        let rel = (mc - exact).abs() / exact;
        let ok = zero == 0.0 && (half - 0.5).abs() < 1e-15 && rel < 0.01;
        Ok((ok, format!("kl(0,1) = {zero}, kl(e1,1) = {half}, sampled vs closed form {rel:.2e}")))
    })
}

fn phantom_frames(wb: &Workbench, n: usize, seed: u64) -> Result<Vec<MeasurementFrame>> {
    (0..n)
        .map(|i| {
            let p = sample_phantom(Family::Mixed, &wb.domain(), derive_seed(seed, "verify-phantom", i as u64));
            wb.simulate(&render(&p, wb.mesh()))?.with_noise(0.05, derive_seed(seed, "verify-noise", i as u64))
        })
        .collect()
}

/// Tikhonov normal-equation residual and monotone TV objective on 5 frames.
pub fn baseline_optimality(wb: &Workbench) -> Check {
    run("baseline optimality", || {
        let lin = wb.linear();
        let mut worst = 0.0f64;
        let mut monotone = true;
        for frame in phantom_frames(wb, 5, 3)? {
            let v = frame.values();
            let lambda = lin.tikhonov_discrepancy(v, 0.05)?.lambda;
            let gamma = lin.tikhonov(v, &TikhonovConfig { lambda })?;
            worst = worst.max(lin.normal_equation_residual(&gamma, v, lambda)?);
            let cfg = TvConfig { max_iters: 15, ..TvConfig::new(lambda) };
            let sol = lin.total_variation(wb.gradient(), v, &cfg, None)?;
            monotone &= sol.objective.windows(2).all(|w| w[1] <= w[0]);
        }
        Ok((worst < NORMAL_EQUATION_TOL && monotone, format!("normal-equation residual {worst:.2e}, tv monotone {monotone}")))
    })
}

/// Boundary suppression, interior retention and projection idempotence.
pub fn filter_checks(wb: &Workbench) -> Check {
    run("boundary filter", || {
        let mesh = wb.mesh();
        let d = mesh.element_count();
        let f = wb.filter();
        let mut boundary = vec![0.0; d];
        for &m in f.boundary_elements() {
            if mesh.centroid(m)[0] > 0.3 {
                boundary[m] = 0.1;
            }
        }
        let v = wb.simulate(&boundary)?;
        let boundary_kept = f.apply(&v)?.norm() / v.norm();
        let interior: Vec<f64> = (0..d).map(|m| if mesh.centroid(m)[0].hypot(mesh.centroid(m)[1]) < 0.3 { -0.1 } else { 0.0 }).collect();
        let v = wb.simulate(&interior)?;
        let interior_kept = f.apply(&v)?.norm() / v.norm();
        let p = BoundaryFilter::projection(wb.sensitivity(), mesh)?;
        let x = phantom_frames(wb, 1, 5)?.remove(0);
        let once = p.apply(&x)?;
        let idem = p.apply(&once)?.difference(&once)?.norm() / x.norm();
        let ok = boundary_kept <= 0.1 && interior_kept >= 0.5 && idem <= 1e-8;
        Ok((ok, format!("boundary kept {boundary_kept:.3}, interior kept {interior_kept:.3}, projection idempotence {idem:.2e}")))
    })
}

/// Runs every check on the default workbench.
pub fn run_all() -> Result<VerifyReport> {
    let wb = Workbench::build(WorkbenchConfig::default())?;
    Ok(run_with(&wb))
}

pub fn run_with(wb: &Workbench) -> VerifyReport {
    VerifyReport {
        checks: vec![
            dimension_check(wb),
            forward_physics(wb),
            jacobian_check(wb),
            gradient_gate(wb),
            kl_identities(),
            baseline_optimality(wb),
            filter_checks(wb),
        ],
    }
}
