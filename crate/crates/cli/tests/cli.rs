use std::path::Path;
use std::process::{Command, Output};

fn ppa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ppa"))
        .args(args)
        .output()
        .expect("spawn ppa")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn render_ascii_golden() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("mask.txt");
    let o = ppa(&[
        "render",
        "--length",
        "8",
        "--p",
        "0.5",
        "--window",
        "2",
        "--out",
        path_str(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().last().unwrap(), "....S.WW");
    assert_eq!(text.lines().nth(3).unwrap(), "S.WW....");
}

#[test]
fn render_pgm_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.pgm");
    let b = dir.path().join("b.pgm");
    for out in [&a, &b] {
        let o = ppa(&[
            "render",
            "--length",
            "100",
            "--p",
            "0.375",
            "--format",
            "pgm",
            "--out",
            path_str(out),
        ]);
        assert!(o.status.success());
    }
    let bytes = std::fs::read(&a).unwrap();
    assert_eq!(bytes, std::fs::read(&b).unwrap());
    assert!(bytes.starts_with(b"P5\n100 100\n255\n"));
}

#[test]
fn render_size_cap_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = ppa(&[
        "render",
        "--length",
        "600",
        "--out",
        path_str(&dir.path().join("x")),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sweep_counts_without_timing_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for out in [&a, &b] {
        let o = ppa(&[
            "sweep-counts",
            "--window",
            "1",
            "--length",
            "256,1024,4096",
            "--no-timing",
            "--out",
            path_str(out),
        ]);
        assert!(o.status.success());
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    assert_eq!(text.lines().count(), 1 + 9 * 3);
    assert!(text.contains("\n1,4096,8390656,"));
}

#[test]
fn check_kernels_exit_codes() {
    let small = [
        "check-kernels",
        "--length",
        "16",
        "--dim",
        "4",
        "--p-grid",
        "0,0.5,1",
        "--seeds",
        "2",
        "--grad-seeds",
        "2",
    ];
    let o = ppa(&small);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stdout)
    );

    let mut faulty = small.to_vec();
    faulty.push("--inject-fault");
    let o = ppa(&faulty);
    assert_eq!(o.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("kernel L=16 d=4 p=0 seed=0"), "{stderr}");

    let o = ppa(&["check-kernels", "--p-grid", ""]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_sweep_config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.conf");
    std::fs::write(&cfg, "steps = 10\nlearning_rate = 1\n").unwrap();
    let o = ppa(&[
        "train-sweep",
        "--config",
        path_str(&cfg),
        "--out",
        path_str(&dir.path().join("o.csv")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
}

#[test]
fn train_sweep_small_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.conf");
    std::fs::write(
        &cfg,
        "length = 12\ndistance = 3\nsteps = 4\nbatch_size = 2\neval_examples = 8\n",
    )
    .unwrap();
    let out = dir.path().join("o.csv");
    let o = ppa(&[
        "train-sweep",
        "--config",
        path_str(&cfg),
        "--p-grid",
        "0.5",
        "--seed",
        "3",
        "--out",
        path_str(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("p,steps,final_loss,eval_accuracy,attended_entries_per_token")
    );
    assert!(lines.next().unwrap().starts_with("0.5,4,"));
}

#[test]
fn shipped_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["far_recall.conf", "local_recall.conf"] {
        ppa_cli::config::SweepConfig::load(&root.join(name)).unwrap();
    }
    let far = ppa_cli::config::SweepConfig::load(&root.join("far_recall.conf")).unwrap();
    assert_eq!(far, ppa_cli::config::SweepConfig::default());
}
