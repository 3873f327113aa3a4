use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fabric-motif"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn field(stdout: &str, key: &str) -> String {
    stdout
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key}: ")))
        .unwrap_or_else(|| panic!("no {key} in {stdout}"))
        .trim()
        .to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, name: &str, defect: &str, seed: u64) -> (PathBuf, PathBuf) {
    let img = dir.join(format!("{name}.png"));
    let truth = dir.join(format!("{name}_truth.png"));
    let seed = seed.to_string();
    ok(&[
        "synth", "--period", "12", "--size", "96", "--defect", defect, "--seed", &seed,
        "--out", s(&img), "--truth", s(&truth),
    ]);
    (img, truth)
}

#[test]
fn exit_codes() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["train", "--out", "x.json"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.png");
    let out = run(&["period", "--input", s(&missing)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    let (img, _) = synth(dir.path(), "ref", "none", 0);
    let model = dir.path().join("m.json");
    let out = run(&["train", "--input", s(&img), "--out", s(&model), "--threshold", "1.5"]);
    assert_eq!(out.status.code(), Some(1));
    let flat = dir.path().join("flat.pgm");
    std::fs::write(&flat, [b"P5\n8 8\n255\n".as_slice(), &[7u8; 64]].concat()).unwrap();
    assert_eq!(run(&["period", "--input", s(&flat)]).status.code(), Some(2));
}

#[test]
fn train_detect_segment_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (reference, _) = synth(d, "ref", "none", 0);
    let (test, truth) = synth(d, "hole", "hole", 3);

    let period = ok(&["period", "--input", s(&reference)]);
    assert_eq!(field(&period, "row_period"), "12");
    assert_eq!(field(&period, "col_period"), "12");
    assert_eq!(field(&period, "filter_size"), "13");

    let model = d.join("model.json");
    let train = ok(&["train", "--input", s(&reference), "--out", s(&model)]);
    let features: usize = field(&train, "features").parse().unwrap();
    let p: usize = field(&train, "filter_size").parse().unwrap();
    let params: usize = field(&train, "parameters").parse().unwrap();
    assert!(features > 0);
    assert_eq!(params, features * p * p);

    let map = d.join("map.png");
    let detect = ok(&["detect", "--model", s(&model), "--input", s(&test), "--map", s(&map)]);
    assert!(field(&detect, "map_max").parse::<f64>().unwrap() > 0.0);

    let mask = d.join("mask.png");
    ok(&["segment", "--map", s(&map), "--out", s(&mask)]);
    let csv = d.join("eval.csv");
    ok(&["evaluate", "--pred", s(&mask), "--truth", s(&truth), "--out", s(&csv)]);
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("tp,tn,fp,fn,tpr,tnr,fnr,fpr,ppv,acc,f1"));
    let tp: u64 = lines.next().unwrap().split(',').next().unwrap().parse().unwrap();
    assert!(tp > 0);

    // The reference itself must come back clean.
    let clean = ok(&[
        "detect", "--model", s(&model), "--input", s(&reference), "--map", s(&map), "--mask", s(&mask),
    ]);
    assert_eq!(field(&clean, "map_max"), "0");
    assert_eq!(field(&clean, "defective_pixels"), "0");
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (reference, _) = synth(d, "ref", "none", 0);
    let cfg = d.join("run.cfg");
    std::fs::write(&cfg, "seed = 5\nsimilarity_threshold = 0.8\n").unwrap();
    let model = d.join("m.json");
    ok(&["train", "--input", s(&reference), "--out", s(&model), "--config", s(&cfg), "--seed", "7"]);
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&model).unwrap()).unwrap();
    assert_eq!(json["preprocessing"]["seed"], 7);
    assert_eq!(json["similarity_threshold"], 0.8);
}

fn dataset(root: &Path) {
    let fabric = root.join("dots");
    std::fs::create_dir_all(fabric.join("test")).unwrap();
    std::fs::create_dir_all(fabric.join("truth")).unwrap();
    let (r, _) = synth(root, "r", "none", 0);
    std::fs::rename(r, fabric.join("reference.png")).unwrap();
    for (name, defect, seed) in [("hole_1", "hole", 11), ("bar_1", "bar", 12), ("good_1", "none", 13)] {
        let (img, truth) = synth(root, name, defect, seed);
        std::fs::rename(img, fabric.join("test").join(format!("{name}.png"))).unwrap();
        if defect != "none" {
            std::fs::rename(truth, fabric.join("truth").join(format!("{name}.png"))).unwrap();
        }
    }
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn pipeline_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    dataset(d);
    let (a, b) = (d.join("out_a"), d.join("out_b"));
    let stdout = ok(&["pipeline", "--dataset", s(&d.join("dots")), "--out", s(&a)]);
    assert!(stdout.contains("overall"));
    ok(&["pipeline", "--dataset", s(&d.join("dots")), "--out", s(&b)]);
    let (ta, tb) = (tree(&a), tree(&b));
    assert!(ta.iter().any(|(p, _)| p == Path::new("summary.csv")));
    assert!(ta.iter().any(|(p, _)| p == Path::new("masks/hole_1.png")));
    assert_eq!(ta.len(), tb.len());
    for ((pa, ca), (pb, cb)) in ta.iter().zip(&tb) {
        assert_eq!(pa, pb);
        assert!(ca == cb, "{} differs between runs", pa.display());
    }
}
