use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn magnifier(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_magnifier"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn unknown_flag_fails_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = magnifier(
        &["synth-data", "--out", "data", "--tile-size", "32"],
        dir.path(),
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--tile-size"));
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn help_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let out = magnifier(&["--help"], dir.path());
    assert!(out.status.success());
    for sub in [
        "train",
        "cross-validate",
        "evaluate",
        "transfer",
        "segment-index",
        "synth-data",
        "report",
    ] {
        assert!(stdout(&out).contains(sub), "help lacks {sub}");
    }
}

#[test]
fn end_to_end_on_a_tiny_set() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let run = |args: &[&str]| {
        let o = magnifier(args, d);
        assert!(
            o.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
        stdout(&o)
    };
    run(&[
        "synth-data",
        "--out",
        "scenes",
        "--samples",
        "9",
        "--tile",
        "32",
        "--seed",
        "1",
    ]);
    run(&[
        "synth-data",
        "--out",
        "shifted",
        "--samples",
        "3",
        "--tile",
        "32",
        "--band-shift",
        "0.5",
    ]);
    run(&[
        "synth-data",
        "--out",
        "landsat",
        "--samples",
        "3",
        "--tile",
        "32",
        "--channels",
        "8",
    ]);

    fs::write(
        d.join("run.toml"),
        "[model]\npatch = 16\n[train]\nepochs = 1\nlearning_rate = 0.003\n[data]\nmanifest = \"scenes/manifest.json\"\nk = 3\n",
    )
    .unwrap();
    let trained = run(&[
        "train", "--config", "run.toml", "--out", "m.ckpt", "--log", "log.json", "--fold", "1",
    ]);
    assert!(trained.contains("test fold 1"));
    assert!(d.join("m.ckpt").exists() && d.join("log.json").exists());

    run(&[
        "evaluate",
        "--checkpoint",
        "m.ckpt",
        "--manifest",
        "scenes",
        "--k",
        "3",
        "--fold",
        "2",
        "--masks-out",
        "png",
        "--out",
        "eval.json",
    ]);
    let pngs: Vec<_> = fs::read_dir(d.join("png"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    assert_eq!(pngs.len(), 3);
    let mask = image::open(&pngs[0]).unwrap().to_luma8();
    assert!(mask.pixels().all(|p| p.0[0] == 0 || p.0[0] == 255));

    run(&[
        "transfer",
        "--checkpoint",
        "m.ckpt",
        "--manifest",
        "shifted",
    ]);
    let mismatch = magnifier(
        &[
            "transfer",
            "--checkpoint",
            "m.ckpt",
            "--manifest",
            "landsat",
        ],
        d,
    );
    assert!(!mismatch.status.success());
    assert!(String::from_utf8_lossy(&mismatch.stderr).contains("12 channels"));

    let idx = run(&[
        "segment-index",
        "--manifest",
        "scenes",
        "--index",
        "nbr2",
        "--profile",
        "s2",
        "--k",
        "3",
    ]);
    assert!(idx.contains("mean"));
    let no_band = magnifier(
        &[
            "segment-index",
            "--manifest",
            "landsat",
            "--index",
            "bais2",
            "--profile",
            "l8",
        ],
        d,
    );
    assert!(!no_band.status.success());

    run(&[
        "cross-validate",
        "--config",
        "run.toml",
        "--out",
        "cv.json",
        "--checkpoint-dir",
        "ckpts",
    ]);
    assert_eq!(fs::read_dir(d.join("ckpts")).unwrap().count(), 3);
    run(&[
        "cross-validate",
        "--config",
        "run.toml",
        "--architecture",
        "single",
        "--out",
        "cv-single.json",
    ]);
    let report = run(&[
        "report",
        "--records",
        "cv.json",
        "cv-single.json",
        "--out-csv",
        "table.csv",
    ]);
    assert!(report.contains("magnifier-compact-cnn-small-deep-lab"));
    assert!(report.contains("single-compact-cnn-small-deep-lab"));
    assert!(report.contains("scenes/IoU"));
    let again = run(&["report", "--scores", "table.csv", "--ties", "min"]);
    assert_eq!(again.lines().count(), 3);
}
