use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use planmae_cli::RunConfig;
use planmae_core::dataset::{list_pngs, SplitCounts};
use planmae_core::{MaskPlan, Mode, PatchGrid, Raster};
use sha2::{Digest, Sha256};

fn planmae(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_planmae"))
        .args(args)
        .current_dir(cwd)
        .env_remove("PLANMAE_CONFIG")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn ok(out: Output) -> Output {
    assert_eq!(code(&out), 0, "stderr:\n{}", String::from_utf8_lossy(&out.stderr));
    out
}

fn sha(path: impl AsRef<Path>) -> String {
    hex::encode(Sha256::digest(std::fs::read(path).unwrap()))
}

fn corpus(dir: &Path) -> PathBuf {
    ok(planmae(
        &[
            "generate-data",
            "--out",
            "d",
            "--train",
            "10",
            "--val",
            "2",
            "--test",
            "3",
            "--seed",
            "7",
            "--mode",
            "line",
        ],
        dir,
    ));
    dir.join("d")
}

fn train(dir: &Path, out: &str, extra: &[&str]) -> PathBuf {
    let mut args = vec![
        "train",
        "--data",
        "d",
        "--out",
        out,
        "--batch-size",
        "4",
        "--seed",
        "1",
    ];
    args.extend_from_slice(extra);
    ok(planmae(&args, dir));
    dir.join(out)
}

#[test]
fn generate_data_writes_counted_pngs_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(planmae(
        &[
            "generate-data",
            "--out",
            "d",
            "--train",
            "10",
            "--val",
            "2",
            "--test",
            "2",
            "--seed",
            "7",
            "--mode",
            "line",
        ],
        dir.path(),
    ));
    let root = dir.path().join("d");
    let n: usize = ["train", "val", "test"]
        .iter()
        .map(|s| list_pngs(root.join(s)).unwrap().len())
        .sum();
    assert_eq!(n, 14);
    assert!(root.join("manifest.json").is_file());
    assert!(String::from_utf8(out.stdout)
        .unwrap()
        .trim()
        .ends_with("manifest.json"));
}

#[test]
fn default_split_counts() {
    let r = RunConfig::resolve(None, &RunConfig::default()).unwrap();
    assert_eq!(
        r.counts,
        SplitCounts {
            train: 7000,
            val: 500,
            test: 500
        }
    );
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&planmae(&["generate-data", "--train", "3"], dir.path())), 2);
    assert_eq!(code(&planmae(&["frobnicate"], dir.path())), 2);
    assert_eq!(code(&planmae(&["train", "--steps", "ten"], dir.path())), 2);

    std::fs::write(dir.path().join("bad.json"), r#"{"training": {"stepz": 3}}"#).unwrap();
    let out = planmae(
        &["--config", "bad.json", "generate-data", "--out", "x"],
        dir.path(),
    );
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("stepz"));

    let out = planmae(&["generate-data", "--out", "x", "--resolution", "0"], dir.path());
    assert_eq!(code(&out), 2);
    assert!(!dir.path().join("x").exists(), "nothing runs before validation");
}

#[test]
fn runtime_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = planmae(
        &["train", "--data", "missing", "--out", "o", "--steps", "2"],
        dir.path(),
    );
    assert_eq!(code(&out), 1);
    let out = planmae(
        &["evaluate", "--checkpoint", "missing.pmae", "--data", "d"],
        dir.path(),
    );
    assert_eq!(code(&out), 1);
    let out = planmae(
        &["serve", "--checkpoint", "missing.pmae", "--port", "0"],
        dir.path(),
    );
    assert_eq!(code(&out), 1);

    corpus(dir.path());
    std::fs::write(dir.path().join("junk.pmae"), b"PMAE but not really").unwrap();
    let out = planmae(
        &[
            "train",
            "--data",
            "d",
            "--out",
            "o",
            "--steps",
            "2",
            "--resume",
            "junk.pmae",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("checkpoint"));
}

#[test]
fn config_file_from_env_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path());
    std::fs::write(
        dir.path().join("c.json"),
        r#"{"training": {"steps": 3, "batch_size": 2, "learning_rate": 0.001}, "dataset": {"root": "d"}}"#,
    )
    .unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_planmae"))
        .args(["train", "--out", "o", "--batch-size", "3"])
        .current_dir(dir.path())
        .env("PLANMAE_CONFIG", "c.json")
        .output()
        .unwrap();
    ok(out);
    let dumped: RunConfig =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("o/config.json")).unwrap()).unwrap();
    assert_eq!(dumped.training.steps, Some(3));
    assert_eq!(dumped.training.batch_size, Some(3));
    assert_eq!(dumped.training.learning_rate, Some(0.001));
    assert_eq!(dumped.model.enc_dim, Some(64));
    let csv = std::fs::read_to_string(dir.path().join("o/loss.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn training_is_deterministic_and_resumable() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path());
    let a = train(dir.path(), "a", &["--steps", "10", "--checkpoint-every", "5"]);
    let b = train(dir.path(), "b", &["--steps", "10"]);
    assert_eq!(sha(a.join("final.pmae")), sha(b.join("final.pmae")));
    assert!(a.join("checkpoint_step000005.pmae").is_file());

    let r = train(
        dir.path(),
        "r",
        &["--steps", "10", "--resume", "a/checkpoint_step000005.pmae"],
    );
    assert_eq!(sha(r.join("final.pmae")), sha(a.join("final.pmae")));

    // Replaying from the dumped config reproduces the run.
    ok(planmae(
        &["--config", "a/config.json", "train", "--out", "c"],
        dir.path(),
    ));
    assert_eq!(sha(dir.path().join("c/final.pmae")), sha(a.join("final.pmae")));

    let other = train(dir.path(), "s2", &["--steps", "10", "--init-seed", "2"]);
    assert_ne!(sha(other.join("final.pmae")), sha(a.join("final.pmae")));
}

fn read_gray(path: impl AsRef<Path>) -> Raster {
    Raster::load_png(path, Mode::LineDrawing, None, false).unwrap()
}

#[test]
fn reconstruct_outputs_and_plans() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path());
    train(dir.path(), "o", &["--steps", "2"]);
    let input = "d/test/000000.png";
    let original = read_gray(dir.path().join(input));

    ok(planmae(
        &[
            "reconstruct",
            "--checkpoint",
            "o/final.pmae",
            "--input",
            input,
            "--out",
            "r0",
            "--strategy",
            "random",
            "--ratio",
            "0",
        ],
        dir.path(),
    ));
    assert_eq!(read_gray(dir.path().join("r0/reconstruction.png")), original);
    assert_eq!(read_gray(dir.path().join("r0/masked.png")), original);

    // An explicit plan: the gray patches in masked.png are exactly its set.
    let grid = PatchGrid::new(64, 64, 8).unwrap();
    let chosen = [0, 9, 18, 27, 36, 45, 63];
    let plan = MaskPlan::explicit(grid, &chosen).unwrap();
    std::fs::write(dir.path().join("plan.json"), plan.to_json()).unwrap();
    ok(planmae(
        &[
            "reconstruct",
            "--checkpoint",
            "o/final.pmae",
            "--input",
            input,
            "--out",
            "rp",
            "--plan",
            "plan.json",
        ],
        dir.path(),
    ));
    let masked = read_gray(dir.path().join("rp/masked.png"));
    let gray = (0.5f32 * 255.0).round() / 255.0;
    let mut gray_cells = Vec::new();
    for i in 0..grid.num_patches() {
        let (r, c) = grid.cell(i);
        let all_gray = (r * 8..r * 8 + 8).all(|y| (c * 8..c * 8 + 8).all(|x| masked.get(y, x, 0) == gray));
        if all_gray {
            gray_cells.push(i);
        }
    }
    assert_eq!(gray_cells, chosen);
    let written: MaskPlan =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("rp/plan.json")).unwrap()).unwrap();
    assert_eq!(written, plan);

    ok(planmae(
        &[
            "reconstruct",
            "--checkpoint",
            "o/final.pmae",
            "--input",
            input,
            "--out",
            "rc",
            "--strategy",
            "corner",
            "--ratio",
            "0.75",
        ],
        dir.path(),
    ));
    let written: MaskPlan =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("rc/plan.json")).unwrap()).unwrap();
    assert_eq!(written.num_masked(), 48);

    Raster::filled(32, 32, Mode::LineDrawing, 1.0)
        .save_png(dir.path().join("small.png"))
        .unwrap();
    let out = planmae(
        &[
            "reconstruct",
            "--checkpoint",
            "o/final.pmae",
            "--input",
            "small.png",
            "--out",
            "rs",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("geometry"));
}

#[test]
fn evaluate_reports() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path());
    train(dir.path(), "o", &["--steps", "2"]);
    let out = ok(planmae(
        &[
            "evaluate",
            "--checkpoint",
            "o/final.pmae",
            "--data",
            "d",
            "--out",
            "all",
        ],
        dir.path(),
    ));
    let table = String::from_utf8(out.stdout).unwrap();
    for label in [
        "Random Masking",
        "Center Masking",
        "Perimeter Masking",
        "One-sided Masking",
        "Corner Masking",
    ] {
        assert!(table.contains(label), "{table}");
    }
    let csv = std::fs::read_to_string(dir.path().join("all/report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6);

    ok(planmae(
        &[
            "evaluate",
            "--checkpoint",
            "o/final.pmae",
            "--data",
            "d",
            "--strategies",
            "one_sided:0.3",
            "--out",
            "one",
        ],
        dir.path(),
    ));
    let csv = std::fs::read_to_string(dir.path().join("one/report.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("One-sided Masking,Line Drawing,n/a,"));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("one/report.json")).unwrap()).unwrap();
    assert_eq!(json["rows"][0]["n_images"], 3);
}
