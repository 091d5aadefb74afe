use std::path::Path;
use std::process::{Command, Output};

use smallarea::model::AreaGrouped;
use smallarea::sim::{simulate, SimDesign, WeightScheme};
use smallarea::ModelParams;
use smallarea_cli::ingest::{ingest_big, ingest_small, read_column};

fn smallarea(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smallarea"))
        .current_dir(dir)
        .args(args)
        .env("SMALLAREA_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = smallarea(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn design() -> SimDesign {
    let mut d = SimDesign::standard(
        vec![6, 0, 9, 3, 0, 12, 5, 8],
        vec![40; 8],
        ModelParams::new(vec![-0.4, 0.7, 0.2], 0.3),
        0,
    );
    d.weights = WeightScheme::LogNormal { sigma: 0.5 };
    d
}

fn simulated(dir: &Path, seed: &str) -> SimDesign {
    let mut d = design();
    std::fs::write(dir.join("design.json"), serde_json::to_string(&d).unwrap()).unwrap();
    ok(
        dir,
        &["simulate", "--design", "design.json", "--seed", seed, "--out", "."],
    );
    d.seed = seed.parse().unwrap();
    d
}

#[test]
fn simulated_files_ingest_to_the_generated_world() {
    let tmp = tempfile::tempdir().unwrap();
    let d = simulated(tmp.path(), "41");
    let world = simulate(&d).unwrap();
    let small = ingest_small(&tmp.path().join("small.csv")).unwrap();
    let big = ingest_big(&tmp.path().join("big.csv")).unwrap();
    assert_eq!(small.sample, world.small);
    assert_eq!(big.sample.records(), world.big.records());
    assert_eq!(small.covariates, vec!["x1", "x2", "x3"]);
    let truths: Vec<f64> = read_column(&tmp.path().join("truth.csv"), "truth")
        .unwrap()
        .into_iter()
        .map(|(_, v)| v.unwrap())
        .collect();
    assert_eq!(truths, world.truths);
}

#[test]
fn pipeline_reports_direct_estimates_only_for_sampled_areas() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    simulated(dir, "42");
    ok(
        dir,
        &["fit", "--small", "small.csv", "--seed", "1", "--out", "fit.json"],
    );
    ok(
        dir,
        &[
            "predict",
            "--small",
            "small.csv",
            "--big",
            "big.csv",
            "--fit",
            "fit.json",
            "--truth",
            "truth.csv",
            "--format",
            "csv",
            "--out",
            "predict.csv",
        ],
    );
    ok(
        dir,
        &[
            "bootstrap",
            "--small",
            "small.csv",
            "--big",
            "big.csv",
            "--fit",
            "fit.json",
            "--seed",
            "2",
            "--b-replicates",
            "10",
            "--format",
            "csv",
            "--out",
            "boot.csv",
        ],
    );

    let direct = read_column(&dir.join("predict.csv"), "direct").unwrap();
    let ebp = read_column(&dir.join("predict.csv"), "ebp").unwrap();
    assert_eq!(direct.len(), 8);
    for ((area, d), (_, e)) in direct.iter().zip(&ebp) {
        let unsampled = area == "A002" || area == "A005";
        assert_eq!(d.is_none(), unsampled, "{area}");
        let e = e.unwrap();
        assert!(e > 0.0 && e < 1.0);
    }
    for (area, m) in read_column(&dir.join("boot.csv"), "mspe").unwrap() {
        assert!(m.unwrap() >= 0.0, "{area}");
    }

    let fit: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.join("fit.json")).unwrap()).unwrap();
    let keys: Vec<&str> = fit.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(keys, ["command", "config", "presentation", "result", "seed"]);
    assert_eq!(fit["seed"], 1);
}

#[test]
fn evaluating_truths_against_themselves_gives_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    simulated(dir, "43");
    let out = ok(
        dir,
        &[
            "evaluate",
            "--estimates",
            "truth.csv",
            "--truth",
            "truth.csv",
            "--column",
            "truth",
        ],
    );
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    for key in ["asd", "rasd", "aad"] {
        assert_eq!(v["result"]["report"][key], 0.0, "{key}");
    }
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    simulated(dir, "44");
    let args = [
        "bootstrap",
        "--small",
        "small.csv",
        "--big",
        "big.csv",
        "--seed",
        "3",
        "--b-replicates",
        "6",
    ];
    let a = ok(dir, &args).stdout;
    let b = ok(dir, &args).stdout;
    assert_eq!(a, b);
}

#[test]
fn exit_codes_follow_the_error_class() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let code = |args: &[&str]| smallarea(dir, args).status.code().unwrap();

    assert_eq!(code(&["fit", "--small", "missing.csv", "--seed", "1"]), 3);

    std::fs::write(dir.join("bad.csv"), "area,y,x1\nA,1,0\nA,7,0\n").unwrap();
    assert_eq!(code(&["fit", "--small", "bad.csv", "--seed", "1"]), 4);

    std::fs::write(dir.join("ones.csv"), "area,y,x1\nA,1,1\nA,1,1\nB,1,1\nB,1,1\n").unwrap();
    assert_eq!(code(&["fit", "--small", "ones.csv", "--seed", "1"]), 5);

    simulated(dir, "45");
    assert_eq!(code(&["predict", "--small", "small.csv", "--big", "big.csv"]), 2);
    assert_eq!(code(&["fit", "--small", "small.csv", "--seed", "1", "--tol", "-1"]), 2);
    assert_eq!(code(&["fit", "--small", "small.csv"]), 2);
    assert_eq!(
        code(&[
            "evaluate",
            "--estimates",
            "truth.csv",
            "--truth",
            "truth.csv",
            "--column",
            "nope"
        ]),
        4
    );

    let out = smallarea(dir, &["fit", "--small", "bad.csv", "--seed", "1"]);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("bad.csv, line 3"), "{stderr}");
}
