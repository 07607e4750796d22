use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use noisevec::map_model::read_prior;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn run(args: &[&str]) -> Output {
    run_env(args, &[])
}

fn run_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_noisevec"));
    cmd.args(args);
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn extract_offline_and_mle_lines() {
    let feats = fixture("tiny.txt");
    let labels = fixture("tiny.lab");
    let want = "tiny\t3.0000000000000000e0\t1.0000000000000000e0\t2\t1\n";
    for mode in ["offline", "mle"] {
        let o = run(&["extract", "--feats", s(&feats), "--labels", s(&labels), "--mode", mode]);
        assert_eq!(stdout(&o), want, "mode {mode}");
    }
}

#[test]
fn train_prior_on_hand_checked_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("prior.txt");
    let manifest = fixture("prior1d/manifest.tsv");
    let args = [
        "train-prior",
        "--manifest",
        s(&manifest),
        "--ridge",
        "0",
        "--min-class-frames",
        "1",
        "--out",
        s(&out),
    ];
    let o = run(&args);
    assert!(stdout(&o).is_empty());
    let p = read_prior(&out).unwrap();
    approx::assert_relative_eq!(p.lambda_s()[(0, 0)], 2.0, max_relative = 1e-12);
    approx::assert_relative_eq!(p.lambda_n()[(0, 0)], 0.375, max_relative = 1e-12);
    approx::assert_relative_eq!(p.b()[(0, 0)], 0.25, max_relative = 1e-12);
    approx::assert_relative_eq!(p.a()[0], 1.5, max_relative = 1e-12);

    let first = fs::read(&out).unwrap();
    stdout(&run(&args));
    assert_eq!(fs::read(&out).unwrap(), first);

    let o = run(&["train-prior", "--manifest", s(&manifest), "--min-class-frames", "5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("0 of 3"));
}

#[test]
fn map_on_empty_utterance_returns_prior_mean() {
    let dir = tempfile::tempdir().unwrap();
    let prior = dir.path().join("prior.txt");
    let manifest = fixture("prior1d/manifest.tsv");
    stdout(&run(&[
        "train-prior",
        "--manifest",
        s(&manifest),
        "--ridge",
        "0",
        "--min-class-frames",
        "1",
        "--out",
        s(&prior),
    ]));
    let empty = dir.path().join("empty.txt");
    fs::write(&empty, "#frames=0 dim=1\n").unwrap();
    let o = run(&[
        "extract",
        "--feats",
        s(&empty),
        "--labels",
        s(&fixture("empty.lab")),
        "--mode",
        "map",
        "--prior",
        s(&prior),
    ]);
    let line = stdout(&o);
    let fields: Vec<&str> = line.trim_end().split('\t').collect();
    assert_eq!(fields[0], "empty");
    let p = read_prior(&prior).unwrap();
    let mean = p.joint_mean();
    for (i, f) in fields[1..3].iter().enumerate() {
        approx::assert_relative_eq!(f.parse::<f64>().unwrap(), mean[i], max_relative = 1e-12);
    }
    assert_eq!(&fields[3..], ["0", "0"]);
}

#[test]
fn cmn_baseline() {
    let o = run(&["baseline", "--feats", s(&fixture("pair.txt")), "--method", "cmn"]);
    let text = stdout(&o);
    let values: Vec<f64> = text.lines().skip(1).map(|l| l.parse().unwrap()).collect();
    assert_eq!(values, [-1.0, 1.0]);
}

#[test]
fn synth_is_reproducible_and_eval_rows_agree() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        stdout(&run(&[
            "synth",
            "--out-dir",
            s(dir.path()),
            "--dim",
            "2",
            "--num-utts",
            "6",
            "--frames",
            "80",
        ]));
    }
    let mut names = vec![PathBuf::from("manifest.tsv"), PathBuf::from("truth.tsv")];
    for i in 0..6 {
        names.push(format!("feats/utt{i:06}.nvf").into());
        names.push(format!("labels/utt{i:06}.lab").into());
    }
    for n in &names {
        assert_eq!(
            fs::read(a.path().join(n)).unwrap(),
            fs::read(b.path().join(n)).unwrap(),
            "{n:?}"
        );
    }

    let manifest = a.path().join("manifest.tsv");
    let prior = a.path().join("prior.txt");
    stdout(&run(&[
        "train-prior",
        "--manifest",
        s(&manifest),
        "--min-class-frames",
        "1",
        "--out",
        s(&prior),
    ]));
    let report = stdout(&run(&["eval", "--manifest", s(&manifest), "--prior", s(&prior)]));
    let row = |name: &str| -> Vec<String> {
        let line = report.lines().find(|l| l.split('\t').next() == Some(name)).unwrap();
        line.split('\t').skip(1).map(str::to_string).collect()
    };
    assert_eq!(row("mle-100%"), row("offline"));
}

#[test]
fn exit_codes() {
    assert_eq!(run(&["extract", "--bogus"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    let tiny = fixture("tiny.txt");
    let o = run(&["extract", "--feats", s(&tiny), "--mode", "map"]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(&["extract", "--feats", "/nonexistent/x.txt"]);
    assert_eq!(o.status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.txt");
    fs::write(
        &bad,
        "NVPRIOR1\n[meta] dim=1 r_s=1 r_n=1\n[mu_n]\n0\n[a]\n0\n[B]\n0\n[lambda_s]\n-1\n[lambda_n]\n1\n",
    )
    .unwrap();
    let o = run(&[
        "extract",
        "--feats",
        s(&tiny),
        "--labels",
        s(&fixture("tiny.lab")),
        "--mode",
        "map",
        "--prior",
        s(&bad),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn env_override_matches_flag() {
    let tiny = fixture("tiny.txt");
    let by_flag = stdout(&run(&[
        "sad",
        "--feats",
        s(&tiny),
        "--sad-window",
        "1",
        "--sad-quantile",
        "0.5",
    ]));
    let by_env = stdout(&run_env(
        &["sad", "--feats", s(&tiny)],
        &[("NV_SAD_WINDOW", "1"), ("NV_SAD_QUANTILE", "0.5")],
    ));
    assert_eq!(by_flag, by_env);
    assert_eq!(by_flag, "NSN\n");
}

#[test]
fn out_flag_keeps_stdout_empty() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("v.tsv");
    let o = run(&[
        "extract",
        "--feats",
        s(&fixture("tiny.txt")),
        "--labels",
        s(&fixture("tiny.lab")),
        "--out",
        s(&out),
    ]);
    assert!(stdout(&o).is_empty());
    assert!(fs::read_to_string(&out).unwrap().starts_with("tiny\t"));
}
