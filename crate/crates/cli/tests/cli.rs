use std::path::Path;
use std::process::{Command, Output};

use gcascade::complexity::{count_flops, count_params, FlopConvention};
use gcascade::decoder::DecoderConfig;
use gcascade::{build_knn_graph, Shape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn gcascade(args: &[&str], precision: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_gcascade"));
    cmd.args(args).env_remove("GCASCADE_PRECISION");
    if let Some(p) = precision {
        cmd.env("GCASCADE_PRECISION", p);
    }
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    assert!(
        o.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn value_of(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")))
        .unwrap_or_else(|| panic!("no {key} in {text}"))
        .trim()
        .parse()
        .unwrap()
}

#[test]
fn count_totals_match_library() {
    let out = stdout(&gcascade(
        &["count", "--variant", "mr", "--input-size", "224", "--csv"],
        None,
    ));
    let root: Vec<u64> = out
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .skip(1)
        .map(|v| v.parse().unwrap())
        .collect();
    let cfg = DecoderConfig::default();
    assert_eq!(root[0], count_params(&cfg).total_params());
    assert_eq!(
        root[1],
        count_flops(&cfg, (224, 224), FlopConvention::MACS).total_flops()
    );

    let table = stdout(&gcascade(&["count", "--variant", "mr"], None));
    assert!(table.starts_with("# input 224x224, FLOP convention: macs"));
    assert!(table.lines().last().unwrap().starts_with("total"));
}

#[test]
fn count_rejects_bad_arguments() {
    assert!(!gcascade(&["count", "--variant", "nope"], None)
        .status
        .success());
    assert!(!gcascade(&["count", "--input-size", "100"], None)
        .status
        .success());
    assert!(!gcascade(&["count"], Some("f16")).status.success());
}

fn write_config(dir: &Path) -> String {
    let path = dir.join("cfg.txt");
    std::fs::write(
        &path,
        "image_size = 32\ntrain_samples = 8\nval_samples = 4\nbatch_size = 4\nepochs = 2\n",
    )
    .unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn train_then_eval_reproduces_logged_dice() {
    for precision in ["f32", "f64"] {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_config(dir.path());
        let data = dir.path().join("data");
        let ck = dir.path().join("ck");
        let (data, ck) = (data.to_str().unwrap(), ck.to_str().unwrap());
        stdout(&gcascade(
            &["--config", &cfg, "--seed", "4", "synth", "--out", data],
            Some(precision),
        ));
        let trained = stdout(&gcascade(
            &[
                "--config", &cfg, "--seed", "4", "train", "--data", data, "--out", ck,
            ],
            Some(precision),
        ));
        let logged = value_of(&trained, "val_dice");
        let log = std::fs::read_to_string(Path::new(ck).join("train_log.csv")).unwrap();
        assert_eq!(log.lines().count(), 3);

        let eval = stdout(&gcascade(
            &["eval", "--checkpoint", ck, "--data", data],
            None,
        ));
        assert!(
            (value_of(&eval, "val_dice") - logged).abs() <= 1e-6,
            "{precision}: {eval}"
        );
        // the in-memory split generated from the manifest is the same data
        let regenerated = stdout(&gcascade(&["eval", "--checkpoint", ck], None));
        assert!((value_of(&regenerated, "val_dice") - logged).abs() <= 1e-6);
    }
}

#[test]
fn eval_writes_per_sample_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let ck = dir.path().join("ck");
    let csv = dir.path().join("eval.csv");
    let (ck, csv_s) = (ck.to_str().unwrap(), csv.to_str().unwrap());
    stdout(&gcascade(
        &["--config", &cfg, "train", "--out", ck, "--epochs", "1"],
        None,
    ));
    stdout(&gcascade(
        &["eval", "--checkpoint", ck, "--csv", csv_s],
        None,
    ));
    let text = std::fs::read_to_string(csv).unwrap();
    assert_eq!(text.lines().next().unwrap(), "sample,class,dice,iou,hd95");
    // 4 samples x 3 classes plus the header and the mean row
    assert_eq!(text.lines().count(), 14);
}

#[test]
fn graph_dump_matches_library_graph() {
    let out = stdout(&gcascade(
        &[
            "--seed",
            "9",
            "graph-dump",
            "--height",
            "5",
            "--width",
            "6",
            "--k",
            "4",
            "--dilation",
            "2",
        ],
        None,
    ));
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = Tensor::<f32>::randn(Shape::new(1, 4, 5, 6), 1.0, &mut rng);
    assert_eq!(out, build_knn_graph(&x, 4, 2, 1).unwrap().to_csv());
    assert_eq!(out.lines().count(), 1 + 30 * 4);
    assert!(!gcascade(
        &["graph-dump", "--height", "2", "--width", "2", "--k", "5"],
        None
    )
    .status
    .success());
}
