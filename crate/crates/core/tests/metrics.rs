use eit_manifold::geometry::GridSize;
use eit_manifold::metrics::{component_count, dice, evaluate, label_components, relative_l2, support};
use eit_manifold::picture::{gray_levels, write_image_png, Mosaic};
use proptest::prelude::*;

const SIZE: GridSize = GridSize { width: 6, height: 4 };

fn image(rows: [&str; 4]) -> Vec<f64> {
    rows.iter().flat_map(|r| r.chars().map(|c| if c == '#' { -1.0 } else if c == '+' { -0.4 } else { 0.0 })).collect()
}

#[test]
fn two_disjoint_lungs_are_two_components() {
    let img = image(["##..##", "##..##", "#....#", "......"]);
    assert_eq!(component_count(&img, SIZE).unwrap(), 2);
    let merged = image(["##..##", "######", "#....#", "......"]);
    assert_eq!(component_count(&merged, SIZE).unwrap(), 1);
    let diagonal = image(["#.....", ".#....", "......", "......"]);
    assert_eq!(component_count(&diagonal, SIZE).unwrap(), 2);
    let (n, labels) = label_components(&support(&img, 0.5), SIZE).unwrap();
    assert_eq!(n, 2);
    assert_eq!(labels[0], labels[6]);
    assert_ne!(labels[0], labels[4]);
    assert_eq!(labels[2], 0);
}

#[test]
fn support_threshold_is_half_the_maximum() {
    let img = image(["#+....", "......", "......", "......"]);
    assert_eq!(component_count(&img, SIZE).unwrap(), 1);
    let s = support(&img, 0.5);
    assert!(s[0] && !s[1]);
    assert_eq!(component_count(&vec![0.0; 24], SIZE).unwrap(), 0);
}

#[test]
fn relative_error_and_dice_by_hand() {
    let truth = vec![3.0, 4.0, 0.0];
    assert_eq!(relative_l2(&[3.0, 4.0, 0.0], &truth).unwrap(), 0.0);
    assert!((relative_l2(&[0.0, 0.0, 0.0], &truth).unwrap() - 1.0).abs() < 1e-15);
    assert!((relative_l2(&[3.0, 4.0, 5.0], &truth).unwrap() - 1.0).abs() < 1e-15);
    assert!(relative_l2(&[1.0], &[0.0]).is_err());
    assert!(relative_l2(&[1.0, 2.0], &truth).is_err());
    let a = [-1.0, -1.0, 0.0, 0.0];
    let b = [-1.0, 0.0, -1.0, 0.0];
    assert_eq!(dice(&a, &b).unwrap(), 0.5);
    assert_eq!(dice(&a, &a).unwrap(), 1.0);
    assert_eq!(dice(&[0.0; 4], &[0.0; 4]).unwrap(), 1.0);
    let m = evaluate(&image(["##..##", "##..##", "#....#", "......"]), &image(["##..##", "##..##", "#....#", "......"]), SIZE).unwrap();
    assert_eq!((m.relative_l2, m.dice, m.components), (0.0, 1.0, 2));
}

#[test]
fn gray_levels_scale_each_tile_by_its_maximum() {
    assert_eq!(gray_levels(&[-2.0, 0.0, 2.0, 1.0]), vec![0, 128, 255, 191]);
    assert_eq!(gray_levels(&[0.0, 0.0]), vec![128, 128]);
    assert_eq!(gray_levels(&[-0.5, 0.0]), gray_levels(&[-5.0, 0.0]));
}

#[test]
fn mosaic_layout_and_png_round_trip() {
    let tile = GridSize { width: 3, height: 2 };
    let mut m = Mosaic::new(tile, 2).unwrap();
    m.push(&[-1.0, 0.0, 1.0, 0.0, 0.0, 0.0]).unwrap();
    m.end_row();
    m.push_blank();
    assert_eq!(m.rows(), 2);
    assert_eq!(m.dimensions(), (7, 5));
    let px = m.render();
    assert_eq!(&px[0..4], &[0, 128, 255, 255]);
    assert_eq!(px[2 * 7], 255);
    assert_eq!(px[3 * 7], 128);
    assert!(m.push(&[0.0; 5]).is_err());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.png");
    m.write_png(&path).unwrap();
    let decoder = png::Decoder::new(std::io::BufReader::new(std::fs::File::open(&path).unwrap()));
    let mut reader = decoder.read_info().unwrap();
    let mut buf = vec![0; reader.output_buffer_size().unwrap()];
    let info = reader.next_frame(&mut buf).unwrap();
    assert_eq!((info.width, info.height), (7, 5));
    assert_eq!(&buf[..info.buffer_size()], &px[..]);
    write_image_png(&dir.path().join("one.png"), &[0.0; 6], tile).unwrap();
}

proptest! {
    #[test]
    fn components_never_exceed_support_size(bits in prop::collection::vec(any::<bool>(), 24)) {
        let img: Vec<f64> = bits.iter().map(|&b| if b { -1.0 } else { 0.0 }).collect();
        let n = component_count(&img, SIZE).unwrap();
        let on = bits.iter().filter(|&&b| b).count();
        prop_assert!(n <= on);
        prop_assert_eq!(n == 0, on == 0);
    }

    #[test]
    fn relative_error_is_scale_invariant(v in prop::collection::vec(-5.0f64..5.0, 8), w in prop::collection::vec(-5.0f64..5.0, 8), s in 0.1f64..10.0) {
        prop_assume!(v.iter().any(|x| x.abs() > 1e-3));
        let a = relative_l2(&w, &v).unwrap();
        let ws: Vec<f64> = w.iter().map(|x| x * s).collect();
        let vs: Vec<f64> = v.iter().map(|x| x * s).collect();
        prop_assert!((relative_l2(&ws, &vs).unwrap() - a).abs() <= 1e-12 * a.max(1.0));
    }
}
