use std::path::Path;
use std::process::{Command, Output};

use vfl_lab::harness::{ExperimentConfig, ExperimentRecord};

const SMALL: &[&str] = &[
    "--classes",
    "4",
    "--dims",
    "6",
    "--samples",
    "300",
    "--attack-samples",
    "5",
    "--gia-iters",
    "100",
    "--gia-restarts",
    "1",
];

fn vfl_lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vfl-lab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn with_small<'a>(head: &[&'a str]) -> Vec<&'a str> {
    head.iter().copied().chain(SMALL.iter().copied()).collect()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn attack_requires_seed() {
    let out = vfl_lab(&with_small(&["attack"]));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--seed"));
    let out = vfl_lab(&["ablate", "--out", "x.csv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn attack_writes_record() {
    let dir = tempfile::tempdir().unwrap();
    let rec = dir.path().join("rec.json");
    let out = vfl_lab(&with_small(&[
        "attack",
        "--seed",
        "3",
        "--out",
        path_str(&rec),
    ]));
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let r = ExperimentRecord::load(&rec).unwrap();
    assert_eq!(r.seed, 3);
    assert_eq!(r.delta_accuracy, 0.0);
    assert!(r.delta_is_consistent());

    // stdout when no output path is configured
    let out = vfl_lab(&with_small(&["attack", "--seed", "3"]));
    assert!(out.status.success());
    let printed = ExperimentRecord::from_json(&String::from_utf8_lossy(&out.stdout)).unwrap();
    assert_eq!(printed.mse_with_defense, r.mse_with_defense);
    assert_eq!(printed.mse_no_defense, r.mse_no_defense);
    assert_eq!(printed.config.output, None);
}

#[test]
fn train_then_attack_from_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("model.json");
    let out = vfl_lab(&with_small(&[
        "train",
        "--seed",
        "3",
        "--out",
        path_str(&ckpt),
    ]));
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(ckpt.exists());
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    let out = vfl_lab(&with_small(&[
        "attack",
        "--seed",
        "3",
        "--out",
        path_str(&a),
    ]));
    assert!(out.status.success());
    let out = vfl_lab(&with_small(&[
        "attack",
        "--seed",
        "3",
        "--model",
        path_str(&ckpt),
        "--out",
        path_str(&b),
    ]));
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let (a, b) = (
        ExperimentRecord::load(&a).unwrap(),
        ExperimentRecord::load(&b).unwrap(),
    );
    assert_eq!(a.mse_with_defense, b.mse_with_defense);
    assert_eq!(a.accuracy_no_defense, b.accuracy_no_defense);
}

#[test]
fn bench_emits_csv_and_chart() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bench.csv");
    let svg = dir.path().join("bench.svg");
    let out = vfl_lab(&[
        "bench",
        "--defenses",
        "privee-dp,round",
        "--classes",
        "10,100",
        "--out",
        path_str(&csv),
        "--plot",
        path_str(&svg),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(std::fs::read_to_string(&svg).unwrap().starts_with("<svg"));

    let out = vfl_lab(&["bench", "--classes", "100,10", "--out", path_str(&csv)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn ablate_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("ablate.csv");
    let svg = dir.path().join("ablate.svg");
    let mut args = with_small(&[
        "ablate",
        "--seed",
        "1",
        "--epsilons",
        "0.05,0.5",
        "--clients",
        "2,3",
    ]);
    args.extend(["--out", path_str(&csv), "--plot", path_str(&svg)]);
    let out = vfl_lab(&args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(svg.exists());

    let r1 = dir.path().join("r1.json");
    let r2 = dir.path().join("r2.json");
    for (seed, path) in [("1", &r1), ("2", &r2)] {
        let out = vfl_lab(&with_small(&[
            "attack",
            "--seed",
            seed,
            "--out",
            path_str(path),
        ]));
        assert!(out.status.success());
    }
    let out = vfl_lab(&["report", path_str(&r1), path_str(&r2)]);
    assert!(out.status.success());
    let table = String::from_utf8_lossy(&out.stdout);
    assert_eq!(table.lines().count(), 3);
    assert!(table.starts_with("defense,attack,epsilon"));
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("exp.toml");
    let mut cfg = ExperimentConfig::standard();
    cfg.n_parties = 3;
    std::fs::write(&cfg_path, cfg.to_toml_string().unwrap()).unwrap();
    let rec = dir.path().join("rec.json");
    let mut args = with_small(&[
        "attack",
        "--config",
        path_str(&cfg_path),
        "--seed",
        "5",
        "--n-parties",
        "4",
    ]);
    args.extend(["--out", path_str(&rec)]);
    let out = vfl_lab(&args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(ExperimentRecord::load(&rec).unwrap().config.n_parties, 4);
}

#[test]
fn failure_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "n_parties = \"many\"\n").unwrap();
    let out = vfl_lab(&["attack", "--config", path_str(&bad), "--seed", "1"]);
    assert_eq!(out.status.code(), Some(2));

    let out = vfl_lab(&["attack", "--seed", "1", "--attack-strength", "1.5"]);
    assert_eq!(out.status.code(), Some(2));

    let missing = dir.path().join("missing.csv");
    let out = vfl_lab(&["attack", "--seed", "1", "--data-csv", path_str(&missing)]);
    assert_eq!(out.status.code(), Some(4));

    let mut args = with_small(&[
        "train",
        "--seed",
        "1",
        "--architecture",
        "nn",
        "--learning-rate",
        "1e300",
    ]);
    let ckpt = dir.path().join("m.json");
    args.extend(["--out", path_str(&ckpt)]);
    let out = vfl_lab(&args);
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let out = vfl_lab(&["report", path_str(&missing)]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn csv_dataset_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    let mut text = String::from("a,b,c,d,label\n");
    for i in 0..120 {
        let l = i % 3;
        let base = l as f64 * 2.0;
        let j = (i % 7) as f64 / 10.0;
        text.push_str(&format!(
            "{},{},{},{},{l}\n",
            base + j,
            base - j,
            1.0 + base * j,
            j
        ));
    }
    std::fs::write(&data, text).unwrap();
    let rec = dir.path().join("rec.json");
    let out = vfl_lab(&[
        "attack",
        "--seed",
        "2",
        "--data-csv",
        path_str(&data),
        "--attack-samples",
        "5",
        "--gia-iters",
        "50",
        "--out",
        path_str(&rec),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(ExperimentRecord::load(&rec).unwrap().delta_accuracy, 0.0);

    std::fs::write(&data, "a,label\n1.0,0\nnope,1\n").unwrap();
    let out = vfl_lab(&["attack", "--seed", "2", "--data-csv", path_str(&data)]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("row 2"));
}
