use std::path::Path;
use std::process::{Command, Output};

fn lapsr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lapsr"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn make_corpus(dir: &Path) {
    let out = lapsr(&[
        "make-corpus",
        "--out",
        s(dir),
        "--count",
        "3",
        "--train",
        "2",
        "--width",
        "64",
        "--height",
        "64",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn usage_errors_exit_1_and_help_exits_0() {
    assert_eq!(code(&lapsr(&[])), 1);
    assert_eq!(code(&lapsr(&["frobnicate"])), 1);
    assert_eq!(code(&lapsr(&["--help"])), 0);
    assert_eq!(code(&lapsr(&["train", "--help"])), 0);
    assert_eq!(code(&lapsr(&["--version"])), 0);
    let out = lapsr(&[
        "sr",
        "--checkpoint",
        "a",
        "--input",
        "b",
        "--output",
        "c",
        "--scale",
        "3",
    ]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("scale 3"));
}

#[test]
fn runtime_failures_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.lpsr");
    let out = lapsr(&[
        "sr",
        "--checkpoint",
        s(&missing),
        "--input",
        "x.png",
        "--output",
        "y.png",
        "--scale",
        "2",
    ]);
    assert_eq!(code(&out), 2);
    let out = lapsr(&[
        "eval",
        "--method",
        "bicubic",
        "--manifest",
        s(dir.path()),
        "--scale",
        "2",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn bad_configuration_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    make_corpus(dir.path());
    let run = dir.path().join("run");
    for bad in [
        &["--set", "no_such_key=1"][..],
        &["--set", "lr"],
        &["--patch", "30"],
        &["--lr", "-1"],
    ] {
        let mut args = vec![
            "train",
            "--manifest",
            s(dir.path()),
            "--out",
            s(&run),
            "--scale",
            "4",
        ];
        args.extend_from_slice(bad);
        assert_eq!(code(&lapsr(&args)), 1, "{bad:?}");
    }
    assert!(!run.exists());
}

#[test]
fn corpus_train_sr_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    make_corpus(&corpus);
    assert!(corpus.join("manifest.tsv").is_file());
    assert!(corpus.join("corpus_config.txt").is_file());

    // File, then flags, then --set: later sources win.
    let cfg = dir.path().join("train.txt");
    std::fs::write(
        &cfg,
        "scale = 2\ndepth = 1\nfeatures = 4\nbatch = 1\nlr = 1e-3\n",
    )
    .unwrap();
    let run = dir.path().join("run");
    let out = lapsr(&[
        "train",
        "--manifest",
        s(&corpus),
        "--out",
        s(&run),
        "--config",
        s(&cfg),
        "--epochs",
        "2",
        "--iters-per-epoch",
        "2",
        "--patch",
        "32",
        "--batch",
        "2",
        "--set",
        "lr=2e-4",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let echo = std::fs::read_to_string(run.join("config.txt")).unwrap();
    for line in [
        "scale = 2",
        "features = 4",
        "batch = 2",
        "lr = 0.0002",
        "epochs = 2",
    ] {
        assert!(echo.contains(line), "missing `{line}` in\n{echo}");
    }
    let log = std::fs::read_to_string(run.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 5);
    let model = run.join("model.lpsr");
    assert!(model.is_file());

    let input = corpus.join("synth_0000.png");
    let sr = dir.path().join("sr.png");
    let out = lapsr(&[
        "sr",
        "--checkpoint",
        s(&model),
        "--input",
        s(&input),
        "--scale",
        "2",
        "--output",
        s(&sr),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let img = lapsr_core::imaging::load_image(&sr).unwrap();
    assert_eq!((img.width(), img.height()), (128, 128));
    assert!(dir.path().join("sr.png.config.txt").is_file());

    // A ×2 model cannot serve ×4.
    let out = lapsr(&[
        "sr",
        "--checkpoint",
        s(&model),
        "--input",
        s(&input),
        "--scale",
        "4",
        "--output",
        s(&sr),
    ]);
    assert_eq!(code(&out), 2);

    let eval = dir.path().join("eval");
    let out = lapsr(&[
        "eval",
        "--method",
        s(&model),
        "--manifest",
        s(&corpus),
        "--scale",
        "2",
        "--out",
        s(&eval),
        "--save-images",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(eval.join("eval.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("path,scale,psnr,ssim,ifc"));
    assert_eq!(csv.lines().count(), 2);
    assert!(eval.join("eval.json").is_file());
    assert!(eval.join("config.txt").is_file());
    assert!(eval.join("images").join("synth_0002.png").is_file());

    // Resuming past the end trains nothing new but succeeds.
    let out = lapsr(&[
        "train",
        "--manifest",
        s(&corpus),
        "--out",
        s(&run),
        "--config",
        s(&echo_path(&run)),
        "--resume",
        s(&model),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

fn echo_path(run: &Path) -> std::path::PathBuf {
    let copy = run.with_extension("echo.txt");
    std::fs::copy(run.join("config.txt"), &copy).unwrap();
    copy
}

#[test]
fn sweep_with_explicit_lambdas() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    make_corpus(&corpus);
    let out_dir = dir.path().join("sweep");
    let out = lapsr(&[
        "sweep",
        "--manifest",
        s(&corpus),
        "--out",
        s(&out_dir),
        "--lambdas",
        "0,0.5",
        "--scale",
        "2",
        "--depth",
        "1",
        "--features",
        "4",
        "--epochs",
        "1",
        "--iters-per-epoch",
        "2",
        "--batch",
        "1",
        "--patch",
        "32",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let table = std::fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows[0], "lambda,lr_range,psnr,ssim,ifc");
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("0,") && rows[2].starts_with("0.5,"));
    assert!(out_dir.join("lambda_0.5").join("eval.csv").is_file());
    assert_eq!(
        code(&lapsr(&[
            "sweep",
            "--manifest",
            s(&corpus),
            "--out",
            s(&out_dir),
            "--lambdas",
            "x"
        ])),
        1
    );
}

#[test]
fn gradcheck_reports_every_operation() {
    let out = lapsr(&[
        "gradcheck",
        "--precision",
        "double",
        "--instances",
        "2",
        "--seed",
        "3",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    for op in lapsr_core::gradcheck::OPS {
        assert!(
            text.lines()
                .any(|l| l.trim_start().starts_with(op) && l.ends_with("ok")),
            "{op}\n{text}"
        );
    }
    assert_eq!(code(&lapsr(&["gradcheck", "--precision", "half"])), 1);
}
