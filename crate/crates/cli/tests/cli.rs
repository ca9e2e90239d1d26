use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use eit_manifold::dataset::Dataset;
use eit_manifold::pipeline::ExperimentReport;
use serde_json::Value;

const SMALL: [&str; 4] = ["--elements", "800", "--grid", "16"];

fn eitm(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eitm"))
        .args(args)
        .env("EITM_OUTPUT_ROOT", root)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn ok(root: &Path, args: &[&str]) -> String {
    let out = eitm(root, args);
    assert_eq!(out.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn with<'a>(base: &[&'a str], extra: &[&'a str]) -> Vec<&'a str> {
    base.iter().chain(extra).copied().collect()
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    assert_eq!(eitm(root, &["no-such-command"]).status.code(), Some(1));
    assert_eq!(eitm(root, &["make-dataset", "--n-base", "many"]).status.code(), Some(1));
    assert_eq!(eitm(root, &["train-vae"]).status.code(), Some(1));
    assert_eq!(eitm(root, &["mesh-gen", "--shape", "square"]).status.code(), Some(1));
    let cfg = root.join("bad.json");
    fs::write(&cfg, r#"{"n_bases": 3}"#).unwrap();
    assert_eq!(eitm(root, &["make-dataset", "--config", cfg.to_str().unwrap()]).status.code(), Some(1));
    assert_eq!(eitm(root, &["--help"]).status.code(), Some(0));
}

#[test]
fn flags_override_the_config_file_and_the_resolution_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = root.join("run.json");
    fs::write(&cfg, r#"{"n_base": 12, "n_noise": 4, "elements": 800, "grid": 16, "seed": 9}"#).unwrap();
    let stdout = ok(root, &["make-dataset", "--config", cfg.to_str().unwrap(), "--n-noise", "2"]);
    assert!(stdout.contains("24 pairs"), "{stdout}");
    let out = root.join("make-dataset");
    let resolved = json(&out.join("config.json"));
    assert_eq!(resolved["command"], "make-dataset");
    let c = &resolved["config"];
    assert_eq!((c["n_base"].as_u64(), c["n_noise"].as_u64(), c["seed"].as_u64()), (Some(12), Some(2), Some(9)));
    assert_eq!(c["family"], "mixed");
    assert_eq!(c["shape"], "thorax");
    let ds = Dataset::load(&out).unwrap();
    assert_eq!(ds.len(), 24);
    assert_eq!(ds.manifest().config.seed, 9);
}

#[test]
fn dataset_reruns_are_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let args = with(&SMALL, &["--n-base", "10", "--n-noise", "3", "--threads", "1"]);
    let a = root.join("a");
    let b = root.join("b");
    ok(root, &with(&["make-dataset", "--out", a.to_str().unwrap()], &args));
    ok(root, &with(&["make-dataset", "--out", b.to_str().unwrap()], &args));
    for f in ["images.f32", "frames.f32", "manifest.json", "phantoms.json", "config.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn verify_passes_on_the_default_setup() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(dir.path(), &["verify"]);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS")).count(), 7, "{stdout}");
    let report = json(&dir.path().join("verify/verify.json"));
    assert_eq!(report["checks"].as_array().unwrap().len(), 7);
}

#[test]
fn stages_chain_through_the_output_directories() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let p = |s: &str| root.join(s).to_str().unwrap().to_string();
    ok(root, &with(&["make-dataset", "--n-base", "20", "--n-noise", "3"], &SMALL));
    ok(root, &with(&["simulate", "--count", "3", "--family", "obese"], &SMALL));
    let (ds, sim) = (p("make-dataset"), p("simulate"));
    ok(root, &["train-vae", "--dataset", &ds, "--latent-dim", "2", "--epochs", "2", "--batch", "8"]);
    let vae = p("train-vae");
    ok(root, &["train-regressor", "--dataset", &ds, "--vae", &vae, "--hidden", "16,16", "--epochs", "2", "--batch", "8"]);
    let reg = p("train-regressor");
    assert_eq!(json(&root.join("train-regressor/config.json"))["config"]["hidden"], serde_json::json!([16, 16]));

    ok(root, &["reconstruct", "--workbench", &ds, "--vae", &vae, "--regressor", &reg, "--frames", &sim]);
    assert_eq!(fs::metadata(root.join("reconstruct/images.f64")).unwrap().len(), 3 * 256 * 8);
    assert!(root.join("reconstruct/images.png").exists());
    ok(root, &["baseline", "--workbench", &sim, "--frames", &sim, "--lambda", "1e-3"]);
    assert_eq!(fs::metadata(root.join("baseline/images.f64")).unwrap().len(), 3 * 256 * 8);

    let cmp = p("cmp");
    let stdout = ok(root, &["compare", "--dataset", &ds, "--vae", &vae, "--regressor", &reg, "--cases", "obese", "--count", "2", "--tv-cases", "0", "--out", &cmp]);
    assert!(stdout.contains("obese: 2 cases"), "{stdout}");
    let report = ExperimentReport::read(Path::new(&cmp)).unwrap();
    assert_eq!(report.cases.len(), 2);
    let raw = json(&root.join("cmp/report.json"));
    for case in raw["cases"].as_array().unwrap() {
        for r in case["results"].as_array().unwrap() {
            assert!(r["metrics"]["components"].is_u64());
        }
    }

    let man = p("man");
    ok(root, &["visualize-manifold", "--dataset", &ds, "--vae", &vae, "--pairs", "2", "--resolution", "3", "--out", &man]);
    let summary = json(&root.join("man/manifold.json"));
    assert_eq!(summary["walks"]["telescopes"], true);
    assert_eq!(summary["grid"]["bad_pixels"], 0);
    assert!(root.join("man/latent_grid.png").exists() && root.join("man/axis_walks.png").exists());

    let st = p("st");
    ok(root, &["stability-probe", "--dataset", &ds, "--vae", &vae, "--regressor", &reg, "--pairs", "3", "--out", &st]);
    assert_eq!(json(&root.join("st/stability.json"))["table"]["rows"].as_array().unwrap().len(), 3);

    let other = p("other");
    ok(root, &["make-dataset", "--elements", "700", "--grid", "16", "--n-base", "10", "--n-noise", "2", "--out", &other]);
    let out = eitm(root, &["reconstruct", "--workbench", &other, "--vae", &vae, "--regressor", &reg, "--frames", &sim]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("mismatch"));

    let out = eitm(root, &["train-vae", "--dataset", &ds, "--latent-dim", "2", "--epochs", "2", "--batch", "8", "--lr", "1e12", "--out", &p("div")]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
