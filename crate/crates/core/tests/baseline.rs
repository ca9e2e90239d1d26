use std::sync::OnceLock;

use eit_manifold::baseline::{discrete_gradient, LinearModel, TikhonovConfig, TvConfig, DEFAULT_NOISE_LEVEL, DEFAULT_TV_SEARCH_STEPS};
use eit_manifold::fem::ForwardSolver;
use eit_manifold::geometry::{build_thorax_mesh, Mesh};
use eit_manifold::sensitivity::assemble;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

struct Setup {
    mesh: Mesh,
    solver: ForwardSolver,
    model: LinearModel,
    dense: DMatrix<f64>,
}

fn setup() -> &'static Setup {
    static CELL: OnceLock<Setup> = OnceLock::new();
    CELL.get_or_init(|| {
        let (mesh, layout) = build_thorax_mesh(1.4, 1200, 16, 0.5).unwrap();
        let solver = ForwardSolver::new(&mesh, &layout).unwrap();
        let s = assemble(&solver, &vec![1.0; mesh.element_count()], 1.0).unwrap();
        Setup {
            model: LinearModel::new(&s),
            dense: s.to_dmatrix(),
            mesh,
            solver,
        }
    })
}

fn lungs(mesh: &Mesh, shift: f64) -> Vec<f64> {
    (0..mesh.element_count())
        .map(|m| {
            let [x, y] = mesh.centroid(m);
            let inside = |cx: f64| ((x - cx) / 0.3).powi(2) + (y / 0.55).powi(2) < 1.0;
            if inside(0.55 - shift) || inside(-0.55 + shift) {
                -0.5
            } else {
                0.0
            }
        })
        .collect()
}

fn simulated(st: &Setup, gd: &[f64]) -> Vec<f64> {
    let d = st.mesh.element_count();
    let base = st.solver.measure(&vec![1.0; d], 1.0).unwrap();
    let gamma: Vec<f64> = gd.iter().map(|g| 1.0 + g).collect();
    st.solver.measure(&gamma, 1.0).unwrap().difference(&base).unwrap().into_values()
}

fn random_frame(seed: u64) -> Vec<f64> {
    let st = setup();
    let x: Vec<f64> = diffkit::sample_gaussian::<f64>(&[st.mesh.element_count()], seed).data().to_vec();
    let mut v = st.model.apply(&x);
    let noise = diffkit::sample_gaussian::<f64>(&[v.len()], seed + 1000);
    let scale = v.iter().map(|a| a * a).sum::<f64>().sqrt() / (v.len() as f64).sqrt() * 0.05;
    v.iter_mut().zip(noise.data()).for_each(|(a, n)| *a += scale * n);
    v
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[test]
fn gradient_annihilates_constants_and_counts_shared_edges() {
    let mesh = &setup().mesh;
    let d = discrete_gradient(mesh);
    let edges_total = 3 * mesh.element_count();
    assert_eq!(d.rows(), (edges_total - mesh.boundary_edges().len()) / 2);
    assert!(d.apply(&vec![2.5; mesh.element_count()]).unwrap().iter().all(|&v| v == 0.0));
    let target = mesh.element_count() / 2;
    let mut ind = vec![0.0; mesh.element_count()];
    ind[target] = 1.0;
    let out = d.apply(&ind).unwrap();
    let mut touched = 0;
    for (row, &[a, b]) in d.pairs().iter().enumerate() {
        if a == target || b == target {
            assert_eq!(out[row].abs(), 1.0);
            touched += 1;
        } else {
            assert_eq!(out[row], 0.0);
        }
    }
    assert_eq!(touched, mesh.neighbors(target).len());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn gradient_transpose_is_adjoint(seed in 0u64..10_000) {
        let d = discrete_gradient(&setup().mesh);
        let x = diffkit::sample_gaussian::<f64>(&[d.cols()], seed).data().to_vec();
        let y = diffkit::sample_gaussian::<f64>(&[d.rows()], seed + 1).data().to_vec();
        let lhs: f64 = d.apply(&x).unwrap().iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = d.apply_transpose(&y).unwrap().iter().zip(&x).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
    }
}

#[test]
fn tikhonov_matches_primal_cholesky() {
    let st = setup();
    let v = random_frame(3);
    let lambda = 1e-3 * st.model.largest_eigenvalue();
    let dual = st.model.tikhonov(&v, &TikhonovConfig { lambda }).unwrap();
    let d = st.dense.ncols();
    let a = st.dense.transpose() * &st.dense + DMatrix::identity(d, d) * lambda;
    let b = st.dense.transpose() * DVector::from_column_slice(&v);
    let primal = a.cholesky().unwrap().solve(&b);
    let diff: f64 = dual.iter().zip(primal.iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    assert!(diff < 1e-8 * primal.norm(), "dual vs primal {}", diff / primal.norm());
}

#[test]
fn tikhonov_zero_data_and_lambda_monotonicity() {
    let st = setup();
    let zero = st.model.tikhonov(&vec![0.0; st.model.rows()], &TikhonovConfig { lambda: 1.0 }).unwrap();
    assert!(zero.iter().all(|&x| x == 0.0));
    assert!(st.model.tikhonov(&zero[..st.model.rows()], &TikhonovConfig { lambda: 0.0 }).is_err());
    let v = random_frame(5);
    let top = st.model.largest_eigenvalue();
    let mut last = f64::INFINITY;
    for p in -10..=6 {
        let n = norm(&st.model.tikhonov(&v, &TikhonovConfig { lambda: top * 10f64.powi(p) }).unwrap());
        assert!(n <= last * (1.0 + 1e-12), "norm grew at 1e{p}");
        last = n;
    }
    assert!(last < 1e-5 * norm(&st.model.tikhonov(&v, &TikhonovConfig { lambda: top * 1e-10 }).unwrap()));
}

#[test]
fn tikhonov_fits_noiseless_linear_data() {
    let st = setup();
    let truth = lungs(&st.mesh, 0.0);
    let v = st.model.apply(&truth);
    let g = st.model.tikhonov(&v, &TikhonovConfig { lambda: 1e-8 }).unwrap();
    let fit = st.model.apply(&g);
    let err: f64 = fit.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    assert!(err < 1e-3 * norm(&v), "relative misfit {}", err / norm(&v));
}

#[test]
fn discrepancy_lambda_hits_target_and_satisfies_normal_equations() {
    let st = setup();
    for seed in 0..5 {
        let v = random_frame(100 + seed);
        let choice = st.model.tikhonov_discrepancy(&v, DEFAULT_NOISE_LEVEL).unwrap();
        assert!(!choice.clamped);
        assert!((choice.residual - choice.target).abs() < 1e-6 * choice.target);
        let g = st.model.tikhonov(&v, &TikhonovConfig { lambda: choice.lambda }).unwrap();
        let res = st.model.normal_equation_residual(&g, &v, choice.lambda).unwrap();
        assert!(res < 1e-6, "normal-equation residual {res:e}");
        let r: Vec<f64> = v.iter().zip(st.model.apply(&g)).map(|(a, b)| a - b).collect();
        assert!((st.model.range_norm(&r).unwrap() - choice.residual).abs() < 1e-8 * choice.target);
    }
}

#[test]
fn tv_zero_data_gives_zero() {
    let st = setup();
    let d = discrete_gradient(&st.mesh);
    let sol = st.model.total_variation(&d, &vec![0.0; st.model.rows()], &TvConfig::new(1e-3), None).unwrap();
    assert!(sol.gamma.iter().all(|&x| x == 0.0));
    assert!(sol.converged);
}

#[test]
fn tv_objective_never_increases() {
    let st = setup();
    let d = discrete_gradient(&st.mesh);
    let top = st.model.largest_eigenvalue();
    for seed in 0..5 {
        let v = random_frame(200 + seed);
        let cfg = TvConfig::new(top * 10f64.powi(-(seed as i32) - 1));
        let sol = st.model.total_variation(&d, &v, &cfg, None).unwrap();
        assert!(sol.objective.len() >= 2);
        for w in sol.objective.windows(2) {
            assert!(w[1] <= w[0], "objective rose {} -> {}", w[0], w[1]);
        }
        let f = st.model.tv_objective(&d, &v, &sol.gamma, &cfg).unwrap();
        assert_eq!(f, *sol.objective.last().unwrap());
    }
}

#[test]
fn tv_is_blockier_than_tikhonov_at_matched_fit() {
    let st = setup();
    let d = discrete_gradient(&st.mesh);
    let v = simulated(st, &lungs(&st.mesh, 0.0));
    let t0 = std::time::Instant::now();
    let (choice, sol) = st.model.tv_discrepancy(&d, &v, DEFAULT_NOISE_LEVEL, &TvConfig::new(1.0), DEFAULT_TV_SEARCH_STEPS).unwrap();
    eprintln!("tv discrepancy {:?} in {:?}, {} iterations", choice, t0.elapsed(), sol.iterations);
    let r: Vec<f64> = v.iter().zip(st.model.apply(&sol.gamma)).map(|(a, b)| a - b).collect();
    let tv_fit = st.model.range_norm(&r).unwrap();
    let (mut lo, mut hi) = ((st.model.largest_eigenvalue() * 1e-12).ln(), (st.model.largest_eigenvalue() * 1e6).ln());
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if st.model.tikhonov_residual(&v, mid.exp()).unwrap() > tv_fit {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let tik = st.model.tikhonov(&v, &TikhonovConfig { lambda: (0.5 * (lo + hi)).exp() }).unwrap();
    let (tv_a, tv_b) = (d.total_variation(&sol.gamma).unwrap(), d.total_variation(&tik).unwrap());
    eprintln!("total variation: tv {tv_a:.4} tikhonov {tv_b:.4}");
    assert!(tv_a < tv_b);
}
