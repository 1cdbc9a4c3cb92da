//! End-to-end CLI checks through the compiled binary.

use std::fs;
use std::path::PathBuf;
use std::process::Command;

fn binary() -> &'static str {
    env!("CARGO_BIN_EXE_gibbs-prune")
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("gibbs-cli-{}-{tag}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_tiny_config(dir: &std::path::Path) -> PathBuf {
    let path = dir.join("tiny.cfg");
    fs::write(
        &path,
        format!(
            "model=toy-cnn\ndataset=synthetic:8\nepochs=1\nanneal_epochs=1\nbatch_size=16\nseed=1\np=0.5\noutput_dir={}\n",
            dir.join("runs").display()
        ),
    )
    .unwrap();
    path
}

#[test]
fn run_then_report_then_export_mask() {
    let dir = temp_dir("pipeline");
    let cfg = write_tiny_config(&dir);

    let out = Command::new(binary())
        .args(["run", "--config"])
        .arg(&cfg)
        .args(["--seed", "1,2", "--jobs", "2"])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "run failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(
        stdout.lines().count(),
        2,
        "one line per experiment: {stdout}"
    );

    // Aggregate the two seeds.
    let summary = dir.join("summary.csv");
    let out = Command::new(binary())
        .args(["report", "--dir"])
        .arg(dir.join("runs"))
        .args(["--out"])
        .arg(&summary)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "report failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = fs::read_to_string(&summary).unwrap();
    assert!(
        text.lines().count() == 2,
        "header plus one experiment row: {text}"
    );
    assert!(text.contains(",2,"), "two runs aggregated: {text}");

    // Masks can be pulled back out of the checkpoint.
    let run_dirs: Vec<PathBuf> = fs::read_dir(dir.join("runs"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    let ckpt = fs::read_dir(&run_dirs[0])
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.is_dir())
        .map(|seed_dir| seed_dir.join("final.ckpt"))
        .unwrap();
    let mask_out = dir.join("exported.txt");
    let out = Command::new(binary())
        .args(["export-mask", "--checkpoint"])
        .arg(&ckpt)
        .args(["--out"])
        .arg(&mask_out)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "export failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = fs::read_to_string(&mask_out).unwrap();
    assert!(text.starts_with("GIBBS-MASK 1"));
    assert!(text.contains("layer conv2"));

    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn sample_demo_writes_csv() {
    let dir = temp_dir("demo");
    let cfg = write_tiny_config(&dir);
    let out = Command::new(binary())
        .args(["sample-demo", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "demo failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("sample_demo.csv"), "{stdout}");
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn bad_config_fails_with_nonzero_exit() {
    let dir = temp_dir("bad");
    let cfg = dir.join("bad.cfg");
    fs::write(&cfg, "p=1.5\n").unwrap();
    let out = Command::new(binary())
        .args(["run", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("outside [0, 1]"));
    fs::remove_dir_all(&dir).unwrap();
}
