use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn rdm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rdm")).args(args).output().expect("spawn rdm")
}

fn ok(args: &[&str]) -> String {
    let out = rdm(args);
    assert!(out.status.success(), "rdm {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).expect("utf-8 stdout")
}

fn fails(args: &[&str]) -> String {
    let out = rdm(args);
    assert!(!out.status.success(), "rdm {args:?} unexpectedly succeeded");
    let err = String::from_utf8(out.stderr).expect("utf-8 stderr");
    assert_eq!(err.trim_end().lines().count(), 1, "diagnostic should be one line: {err:?}");
    err
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

struct Workspace {
    _dir: TempDir,
    root: PathBuf,
}

impl Workspace {
    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}

/// Small corpus, entropy model and denoiser shared by the tests below.
fn trained() -> Workspace {
    let dir = TempDir::new().expect("tempdir");
    let root = dir.path().to_path_buf();
    let ws = Workspace { _dir: dir, root };
    let corpus = ws.path("corpus");
    ok(&["generate", "--out", s(&corpus), "--count", "6", "--size", "24", "--seed", "3"]);
    let model = ws.path("model.rdme");
    let id = ok(&["train-entropy", "--corpus", s(&corpus), "--out", s(&model), "--epochs", "2"]);
    assert_eq!(id.trim().len(), 16);
    let den = ws.path("den.ck");
    ok(&[
        "train-denoiser", "--corpus", s(&corpus), "--model", s(&model), "--out", s(&den), "--steps", "30",
        "--hidden", "16", "--save-every", "10",
    ]);
    ws
}

#[test]
fn help_is_available_for_every_command() {
    for cmd in ["generate", "train-entropy", "train-denoiser", "encode", "decode", "rd-sweep", "eval-sampler"] {
        let out = ok(&[cmd, "--help"]);
        assert!(out.contains("Usage"), "{cmd}: {out}");
    }
}

#[test]
fn encode_decode_round_trip_and_determinism() {
    let ws = trained();
    let img = ws.path("corpus/0.pgm");
    let model = ws.path("model.rdme");
    let den = ws.path("den.ck");
    let bits_a = ws.path("a.rdmb");
    let bits_b = ws.path("b.rdmb");
    let report = ok(&["encode", s(&img), "-o", s(&bits_a), "--model", s(&model), "--q", "0.5"]);
    ok(&["encode", s(&img), "-o", s(&bits_b), "--model", s(&model), "--q", "0.5"]);
    let bytes = fs::read(&bits_a).unwrap();
    assert_eq!(bytes, fs::read(&bits_b).unwrap());
    assert_eq!(&bytes[..4], b"RDMB");
    assert!(report.starts_with(&format!("{} bits", 8 * bytes.len())), "{report}");

    let plain = ws.path("plain.pgm");
    ok(&["decode", s(&bits_a), "-o", s(&plain), "--model", s(&model), "--steps", "0"]);
    assert!(fs::read(&plain).unwrap().starts_with(b"P5"));

    let runs: Vec<Vec<u8>> = (0..2)
        .map(|i| {
            let out = ws.path(&format!("noisy{i}.pgm"));
            ok(&[
                "decode", s(&bits_a), "-o", s(&out), "--model", s(&model), "--denoiser", s(&den), "--steps", "2",
                "--beta", "0.2", "--noise", "uniform", "--seed", "9",
            ]);
            fs::read(out).unwrap()
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn resumed_training_matches_uninterrupted_run() {
    let ws = trained();
    let corpus = ws.path("corpus");
    let model = ws.path("model.rdme");
    let common = |out: &Path| {
        vec![
            "train-denoiser".to_string(), "--corpus".into(), s(&corpus).into(), "--model".into(), s(&model).into(),
            "--out".into(), s(out).into(), "--steps".into(), "30".into(), "--hidden".into(), "16".into(),
        ]
    };
    let resumed = ws.path("resumed.ck");
    let mut first = common(&resumed);
    first.extend(["--stop-at".into(), "13".into()]);
    ok(&first.iter().map(String::as_str).collect::<Vec<_>>());
    let mut second = common(&resumed);
    second.extend(["--resume".into(), s(&resumed).into()]);
    ok(&second.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(fs::read(&resumed).unwrap(), fs::read(ws.path("den.ck")).unwrap());
}

#[test]
fn rd_sweep_writes_csv_and_svg() {
    let ws = trained();
    let csv = ws.path("rd.csv");
    let svg = ws.path("rd.svg");
    ok(&[
        "rd-sweep", "--corpus", s(&ws.path("corpus")), "--model", s(&ws.path("model.rdme")), "--denoiser",
        s(&ws.path("den.ck")), "--q", "0.3,0.9", "--out", s(&csv), "--svg", s(&svg),
    ]);
    let text = fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("image,q0,steps,beta,noise,bits,pixels,bpp,mse,psnr"));
    // 6 images x 2 scales x (N = 0, N = 2)
    assert_eq!(lines.count(), 24);
    assert!(fs::read_to_string(&svg).unwrap().starts_with("<svg"));
}

#[test]
fn eval_sampler_on_points_and_gmm() {
    let dir = TempDir::new().unwrap();
    for dist in ["points:-1,1", "gmm:-1,1:0.3"] {
        let out = dir.path().join("ablation.csv");
        ok(&[
            "eval-sampler", "--dist", dist, "--q0", "0.7", "--betas", "0,0.1", "--noise", "gaussian,uniform",
            "--samples", "300", "--directions", "4", "--out", s(&out),
        ]);
        let text = fs::read_to_string(&out).unwrap();
        let rows: Vec<&str> = text.lines().collect();
        assert_eq!(rows[0], "beta,noise,steps,q0,status,sliced_w1,mse");
        assert_eq!(rows.len(), 5);
        // beta = 0 rows do not depend on the noise form
        assert_eq!(rows[1].split_once(',').unwrap().1.replace("gaussian", "uniform"), rows[2].split_once(',').unwrap().1);
    }
}

#[test]
fn failures_exit_nonzero_with_one_line() {
    let ws = trained();
    let bits = ws.path("x.rdmb");
    let model = s(&ws.path("model.rdme")).to_string();
    ok(&["encode", s(&ws.path("corpus/1.pgm")), "-o", s(&bits), "--model", &model, "--q", "0.4"]);
    let err = fails(&["decode", s(&bits), "-o", s(&ws.path("y.pgm")), "--model", &model]);
    assert!(err.contains("--denoiser"), "{err}");
    let err = fails(&["encode", s(&ws.path("missing.pgm")), "-o", s(&bits), "--model", &model, "--q", "0.4"]);
    assert!(err.starts_with("error:"), "{err}");
    let err = fails(&["encode", s(&ws.path("corpus/1.pgm")), "-o", s(&bits), "--model", &model, "--q", "9"]);
    assert!(err.contains("outside supported range"), "{err}");
    fails(&["eval-sampler", "--dist", "cubes:1", "--out", s(&ws.path("z.csv"))]);
    let mut truncated = fs::read(&bits).unwrap();
    truncated.truncate(truncated.len() - 1);
    fs::write(&bits, truncated).unwrap();
    fails(&["decode", s(&bits), "-o", s(&ws.path("y.pgm")), "--model", &model, "--steps", "0"]);
}
