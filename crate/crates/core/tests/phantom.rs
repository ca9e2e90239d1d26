use std::f64::consts::PI;

use eit_manifold::geometry::{build_thorax_mesh, DomainShape, GridSize, Mesh};
use eit_manifold::metrics::{component_count, dice, label_components, relative_l2, support};
use eit_manifold::phantom::{render, sample_phantom, Family, Lung, LungPhantomParams};
use proptest::prelude::*;

const THORAX: DomainShape = DomainShape::Thorax { aspect: 1.4, radius: 1.0 };

fn mesh() -> Mesh {
    build_thorax_mesh(1.4, 2400, 16, 0.5).unwrap().0
}

fn flood_components(mesh: &Mesh, values: &[f64]) -> usize {
    let mut seen = vec![false; values.len()];
    let mut count = 0;
    for start in 0..values.len() {
        if values[start] == 0.0 || seen[start] {
            continue;
        }
        count += 1;
        let mut queue = std::collections::VecDeque::from([start]);
        seen[start] = true;
        while let Some(e) = queue.pop_front() {
            for &f in mesh.neighbors(e) {
                if values[f] != 0.0 && !seen[f] {
                    seen[f] = true;
                    queue.push_back(f);
                }
            }
        }
    }
    count
}

#[test]
fn sampling_is_deterministic_and_family_names_round_trip() {
    for f in [Family::Normal, Family::Obese, Family::Mixed] {
        assert_eq!(sample_phantom(f, &THORAX, 42), sample_phantom(f, &THORAX, 42));
        assert_eq!(f.to_string().parse::<Family>().unwrap(), f);
    }
    assert_ne!(sample_phantom(Family::Normal, &THORAX, 1), sample_phantom(Family::Normal, &THORAX, 2));
    assert!("thin".parse::<Family>().is_err());
}

#[test]
fn mixed_family_draws_both_kinds() {
    let obese = (0..200).filter(|&s| sample_phantom(Family::Mixed, &THORAX, s).depth_offset > 0.0).count();
    assert!((70..=130).contains(&obese), "{obese} obese of 200");
}

#[test]
fn obese_lungs_sit_farther_from_the_boundary() {
    let mesh = mesh();
    for seed in 0..100 {
        let normal = sample_phantom(Family::Normal, &THORAX, seed);
        let obese = sample_phantom(Family::Obese, &THORAX, seed);
        normal.validate().unwrap();
        obese.validate().unwrap();
        let (a, b) = (normal.boundary_clearance(&mesh), obese.boundary_clearance(&mesh));
        assert!(a > 0.0, "seed {seed}: normal lung touches the boundary");
        assert!(b > a, "seed {seed}: obese clearance {b} not above normal {a}");
    }
}

#[test]
fn zero_phase_renders_nothing() {
    let mesh = mesh();
    let mut p = sample_phantom(Family::Normal, &THORAX, 3);
    p.ventilation_phase = 0.0;
    assert!(render(&p, &mesh).iter().all(|&v| v == 0.0));
}

#[test]
fn rendered_lungs_are_two_components_with_ellipse_area() {
    let mesh = mesh();
    let h = (2.0 * mesh.areas().iter().sum::<f64>() / mesh.element_count() as f64).sqrt();
    for seed in 0..20 {
        let p = sample_phantom(Family::Mixed, &THORAX, seed);
        let g = render(&p, &mesh);
        assert_eq!(flood_components(&mesh, &g), 2, "seed {seed}");
        assert!(g.iter().all(|&v| v <= 0.0 && v > -0.9));
        let area: f64 = (0..g.len()).filter(|&m| g[m] != 0.0).map(|m| mesh.area(m)).sum();
        let lungs = p.lungs();
        let exact: f64 = lungs.iter().map(Lung::area).sum();
        let perimeter: f64 = lungs
            .iter()
            .map(|l| {
                (0..512)
                    .map(|i| {
                        let (a, b) = (l.outline(2.0 * PI * i as f64 / 512.0), l.outline(2.0 * PI * (i + 1) as f64 / 512.0));
                        (a[0] - b[0]).hypot(a[1] - b[1])
                    })
                    .sum::<f64>()
            })
            .sum();
        assert!((area - exact).abs() <= perimeter * h, "seed {seed}: area {area} vs {exact}");
    }
}

#[test]
fn invalid_params_are_rejected() {
    let mut p: LungPhantomParams = sample_phantom(Family::Normal, &THORAX, 9);
    p.left.amplitude = -0.95;
    assert!(p.validate().is_err());
    p.left.amplitude = 0.1;
    assert!(p.validate().is_err());
}

#[test]
fn metric_self_checks() {
    let size = GridSize { width: 6, height: 4 };
    #[rustfmt::skip]
    let img = vec![
        0.0, -1.0, -1.0, 0.0, 0.0, 0.0,
        0.0, -1.0,  0.0, 0.0, -0.8, 0.0,
        0.0,  0.0,  0.0, 0.0, -0.9, 0.0,
        -0.6, 0.0,  0.0, 0.0, 0.0, -0.2,
    ];
    assert_eq!(component_count(&img, size).unwrap(), 3);
    let (n, labels) = label_components(&support(&img, 0.5), size).unwrap();
    assert_eq!(n, 3);
    assert_eq!(labels[1], labels[7]);
    assert_ne!(labels[1], labels[10]);
    assert_eq!(labels[23], 0);
    assert_eq!(component_count(&vec![0.0; 24], size).unwrap(), 0);
    assert_eq!(dice(&img, &img).unwrap(), 1.0);
    assert_eq!(relative_l2(&img, &img).unwrap(), 0.0);
    assert!(relative_l2(&img, &vec![0.0; 24]).is_err());
    let shifted: Vec<f64> = (0..24).map(|i| if i % 6 == 0 { 0.0 } else { img[i - 1] }).collect();
    let d = dice(&shifted, &img).unwrap();
    assert!(d > 0.0 && d < 1.0);
}

proptest! {
    #[test]
    fn diagonal_neighbours_are_separate_components(w in 2usize..12, h in 2usize..12) {
        let size = GridSize { width: w, height: h };
        let img: Vec<f64> = (0..w * h).map(|i| if (i % w + i / w) % 2 == 0 { 1.0 } else { 0.0 }).collect();
        let expected = img.iter().filter(|&&v| v > 0.0).count();
        prop_assert_eq!(component_count(&img, size).unwrap(), expected);
    }

    #[test]
    fn relative_error_is_scale_invariant(seed in 0u64..1000, s in 0.1f64..10.0) {
        let a = diffkit::sample_gaussian::<f64>(&[50], seed).data().to_vec();
        let b = diffkit::sample_gaussian::<f64>(&[50], seed + 1).data().to_vec();
        let e1 = relative_l2(&a, &b).unwrap();
        let sa: Vec<f64> = a.iter().map(|x| x * s).collect();
        let sb: Vec<f64> = b.iter().map(|x| x * s).collect();
        prop_assert!((relative_l2(&sa, &sb).unwrap() - e1).abs() < 1e-12 * e1.max(1.0));
    }
}
