use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "synthetic_count = 200\ntest_size = 40\nvalidation_size = 40\nlatent_dim = 6\n\
conv_channels = [8, 8]\npooling_hidden = 8\ndecoder_hidden = [16]\nepochs = 1\nn_samples = 20\n";

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_graphvae"))
        .current_dir(dir)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn trained(extra: &[&str]) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), TINY).unwrap();
    let mut args = vec!["--config", "c.toml", "--out-dir", "out"];
    args.extend_from_slice(extra);
    args.push("train");
    let o = run(dir.path(), &args);
    assert!(o.status.success(), "{}", stderr(&o));
    dir
}

#[test]
fn train_then_every_reporting_command() {
    let dir = trained(&[]);
    let d = dir.path();
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(d.join("out/train-manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["epochs"].as_array().unwrap().len(), 1);
    assert_eq!(manifest["dataset"]["test"], 40);

    let ckpt = ["--checkpoint", "out/model.ckpt"];
    for (cmd, artifact) in [
        ("sample", "quality.csv"),
        ("plane", "plane.csv"),
        ("interpolate", "interpolation.csv"),
        ("eval-elbo", "elbo.json"),
    ] {
        let mut args = vec!["--out-dir", "out", cmd];
        args.extend_from_slice(&ckpt);
        let o = run(d, &args);
        assert!(o.status.success(), "{cmd}: {}", stderr(&o));
        assert!(d.join("out").join(artifact).exists(), "{cmd} wrote no {artifact}");
    }
    let samples: Vec<graphvae::graph::DiscreteGraph> =
        serde_json::from_slice(&std::fs::read(d.join("out/samples.json")).unwrap()).unwrap();
    assert_eq!(samples.len(), 20);
    let elbo: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("out/elbo.json")).unwrap()).unwrap();
    assert_eq!(elbo["graphs"], 40);
    assert!(elbo["elbo"].as_f64().unwrap() < 0.0);
}

#[test]
fn zero_samples_give_an_empty_report() {
    let dir = trained(&[]);
    let o = run(dir.path(), &["--out-dir", "out", "sample", "--checkpoint", "out/model.ckpt", "--n-samples", "0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("out/quality.csv")).unwrap();
    assert!(csv.ends_with("all,1,0,0,0,0\n"), "{csv}");
}

#[test]
fn label_flags_must_match_the_model() {
    let plain = trained(&[]);
    let o = run(plain.path(), &["sample", "--checkpoint", "out/model.ckpt", "--label", "3-1-0-0"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("conditional"));

    let cond = trained(&["--conditional"]);
    let o = run(cond.path(), &["plane", "--checkpoint", "out/model.ckpt", "--grid", "2"]);
    assert!(!o.status.success());
    let o = run(
        cond.path(),
        &["--out-dir", "out", "plane", "--checkpoint", "out/model.ckpt", "--grid", "2", "--label", "4-1-1-0"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn bad_inputs_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "nonsense = 1\n").unwrap();
    let o = run(dir.path(), &["--config", "bad.toml", "train"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("nonsense"));

    let o = run(dir.path(), &["sample", "--checkpoint", "missing.ckpt"]);
    assert!(!o.status.success());

    std::fs::write(dir.path().join("small.toml"), "synthetic_count = 50\n").unwrap();
    let o = run(dir.path(), &["--config", "small.toml", "train"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("records"));
}
