use std::f64::consts::PI;

use eit_manifold::fem::{ForwardSolver, DEFAULT_AMPLITUDE};
use eit_manifold::frame::{frame_len, load_frames, measurement_pairs, pair_index, save_frames, MeasurementFrame};
use eit_manifold::geometry::{build_disk_mesh, build_thorax_mesh, Mesh, START_ANGLE};

fn random_gamma(d: usize, seed: u64) -> Vec<f64> {
    let z: diffkit::Tensor<f64> = diffkit::sample_gaussian(&[d], seed);
    z.data().iter().map(|v| (0.4 * v).exp()).collect()
}

fn assert_reciprocal(frame: &MeasurementFrame) {
    let e = frame.electrodes();
    for (j, k) in measurement_pairs(e) {
        let (a, b) = (frame.get(j, k).unwrap(), frame.get(k, j).unwrap());
        assert!((a - b).abs() <= 1e-8 * a.abs().max(b.abs()), "V[{j},{k}]={a} V[{k},{j}]={b}");
    }
}

#[test]
fn frame_length_is_e_times_e_minus_three() {
    let (mesh, layout) = build_disk_mesh(1.0, 400, 16, 0.5).unwrap();
    let solver = ForwardSolver::new(&mesh, &layout).unwrap();
    let frame = solver.measure(&vec![1.0; mesh.element_count()], DEFAULT_AMPLITUDE).unwrap();
    assert_eq!(frame.len(), 208);
    assert_eq!(frame_len(8), 40);
}

#[test]
fn reciprocity_holds_for_homogeneous_and_random_media() {
    for (mesh, layout) in [
        build_disk_mesh(1.0, 800, 16, 0.5).unwrap(),
        build_thorax_mesh(1.4, 1200, 16, 0.5).unwrap(),
    ] {
        let solver = ForwardSolver::new(&mesh, &layout).unwrap();
        let d = mesh.element_count();
        assert_reciprocal(&solver.measure(&vec![1.0; d], 1.0).unwrap());
        assert_reciprocal(&solver.measure(&random_gamma(d, 3), 1.0).unwrap());
    }
}

#[test]
fn homogeneous_disk_frame_is_rotation_invariant() {
    let (mesh, layout) = build_disk_mesh(1.0, 800, 16, 0.5).unwrap();
    let solver = ForwardSolver::new(&mesh, &layout).unwrap();
    let frame = solver.measure(&vec![1.0; mesh.element_count()], 1.0).unwrap();
    let scale = frame.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (j, k) in measurement_pairs(16) {
        let a = frame.get(j, k).unwrap();
        let b = frame.get((j + 1) % 16, (k + 1) % 16).unwrap();
        assert!((a - b).abs() <= 1e-8 * scale, "shift changes V[{j},{k}]: {a} vs {b}");
    }
}

fn mirror_map(mesh: &Mesh, axis: f64) -> Vec<usize> {
    let (c, s) = ((2.0 * axis).cos(), (2.0 * axis).sin());
    let key = |p: [f64; 2]| ((p[0] * 1e8).round() as i64, (p[1] * 1e8).round() as i64);
    let index: std::collections::HashMap<_, _> = mesh.nodes().iter().enumerate().map(|(i, &p)| (key(p), i)).collect();
    mesh.nodes()
        .iter()
        .map(|p| index[&key([c * p[0] + s * p[1], s * p[0] - c * p[1]])])
        .collect()
}

#[test]
fn first_drive_potential_is_antisymmetric_under_electrode_swap() {
    let (mesh, layout) = build_disk_mesh(1.0, 800, 16, 0.5).unwrap();
    let solver = ForwardSolver::new(&mesh, &layout).unwrap();
    let pot = solver.solve_all(&vec![1.0; mesh.element_count()], 1.0).unwrap();
    let mirror = mirror_map(&mesh, START_ANGLE + PI / 16.0);
    let u = &pot[0].nodal;
    let scale = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (v, &w) in mirror.iter().enumerate() {
        assert!((u[v] + u[w]).abs() < 1e-9 * scale, "node {v}: {} vs {}", u[v], u[w]);
    }
}

#[test]
fn doubling_conductivity_halves_potential() {
    let (mesh, layout) = build_thorax_mesh(1.4, 800, 16, 0.5).unwrap();
    let solver = ForwardSolver::new(&mesh, &layout).unwrap();
    let g = random_gamma(mesh.element_count(), 9);
    let g2: Vec<f64> = g.iter().map(|v| 2.0 * v).collect();
    let (a, b) = (solver.solve_all(&g, 1.0).unwrap(), solver.solve_all(&g2, 1.0).unwrap());
    for (pa, pb) in a.iter().zip(&b) {
        for (x, y) in pa.nodal.iter().zip(&pb.nodal) {
            assert!((x - 2.0 * y).abs() < 1e-10 * (1.0 + x.abs()));
        }
    }
}

#[test]
fn drive_amplitude_is_linear() {
    let (mesh, layout) = build_thorax_mesh(1.4, 800, 16, 0.5).unwrap();
    let solver = ForwardSolver::new(&mesh, &layout).unwrap();
    let g = random_gamma(mesh.element_count(), 4);
    let one = solver.measure(&g, 1.0).unwrap();
    let two = solver.measure(&g, 2.0).unwrap();
    let scale = one.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (a, b) in one.values().iter().zip(two.values()) {
        assert!((2.0 * a - b).abs() <= 1e-12 * scale);
    }
}

#[test]
fn electrode_currents_balance() {
    let (mesh, layout) = build_thorax_mesh(1.4, 1200, 16, 0.5).unwrap();
    let solver = ForwardSolver::new(&mesh, &layout).unwrap();
    let g = random_gamma(mesh.element_count(), 5);
    for p in solver.solve_all(&g, 1.0).unwrap() {
        let (currents, off) = solver.electrode_currents(&g, &p.nodal).unwrap();
        for (i, c) in currents.iter().enumerate() {
            let want = if i == p.drive {
                1.0
            } else if i == (p.drive + 1) % 16 {
                -1.0
            } else {
                0.0
            };
            assert!((c - want).abs() < 1e-10, "drive {} electrode {i}: {c}", p.drive);
        }
        assert!(off < 1e-10, "interior imbalance {off}");
        assert!(p.residual < 1e-10);
        let sum: f64 = p.electrode.iter().sum();
        assert!(sum.abs() < 1e-12);
        for i in 0..16 {
            for v in layout.nodes(&mesh, i) {
                assert_eq!(p.nodal[v], p.electrode[i]);
            }
        }
    }
}

#[test]
fn nonpositive_conductivity_is_rejected() {
    let (mesh, layout) = build_disk_mesh(1.0, 400, 16, 0.5).unwrap();
    let solver = ForwardSolver::new(&mesh, &layout).unwrap();
    let mut g = vec![1.0; mesh.element_count()];
    g[7] = 0.0;
    assert!(solver.measure(&g, 1.0).is_err());
    assert!(solver.measure(&[1.0; 3], 1.0).is_err());
}

#[test]
fn difference_frame_identities() {
    let (mesh, layout) = build_disk_mesh(1.0, 400, 16, 0.5).unwrap();
    let solver = ForwardSolver::new(&mesh, &layout).unwrap();
    let d = mesh.element_count();
    let a = solver.measure(&random_gamma(d, 1), 1.0).unwrap();
    let b = solver.measure(&random_gamma(d, 2), 1.0).unwrap();
    assert!(a.difference(&a).unwrap().values().iter().all(|&v| v == 0.0));
    let ab = a.difference(&b).unwrap();
    let ba = b.difference(&a).unwrap();
    for (x, y) in ab.values().iter().zip(ba.values()) {
        assert_eq!(*x, -*y);
    }
    assert!(a.difference(&MeasurementFrame::zeros(8, 1.0)).is_err());
    assert!(a.difference(&a.scaled(1.0).with_noise(0.0, 1).unwrap()).is_ok());
}

#[test]
fn noise_statistics() {
    let base = MeasurementFrame::new(4, 1.0, vec![1.0, -2.0, 0.5, 3.0]).unwrap();
    assert_eq!(base.with_noise(0.0, 3).unwrap(), base);
    assert_eq!(base.with_noise(0.05, 3).unwrap(), base.with_noise(0.05, 3).unwrap());
    assert_ne!(base.with_noise(0.05, 3).unwrap(), base.with_noise(0.05, 4).unwrap());
    let sigma = 0.05 * base.rms();
    let n = 10_000;
    for comp in 0..4 {
        let samples: Vec<f64> = (0..n)
            .map(|s| base.with_noise(0.05, s as u64).unwrap().values()[comp] - base.values()[comp])
            .collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let std = (samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        assert!((std / sigma - 1.0).abs() < 0.05, "component {comp}: std {std} vs {sigma}");
    }
    assert!(base.with_noise(-0.1, 1).is_err());
}

#[test]
fn frames_round_trip() {
    let a = MeasurementFrame::new(5, 1.0, (0..10).map(|i| i as f64 * 0.25).collect()).unwrap();
    let b = a.scaled(-2.0);
    let dir = tempfile::tempdir().unwrap();
    save_frames(dir.path(), "frames", &[a.clone(), b.clone()]).unwrap();
    let back = load_frames(dir.path(), "frames").unwrap();
    assert_eq!(back, vec![a, b]);
    assert_eq!(pair_index(5, 0, 2), Some(0));
}
