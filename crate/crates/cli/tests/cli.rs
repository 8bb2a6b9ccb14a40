use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hres::model::{ModelConfig, Network};

const TINY: &str =
    "[model]\nnum_residual_blocks = 1\nkernel_size = 3\nstage_widths = [4]\nstem_width = 4\n\
[train]\nmax_epochs = 3\npatience = 2\nbatch_size = 8\nseed = 2\n";

fn hres(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hres"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn setup(per_class: usize) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    let n = per_class.to_string();
    let o = hres(
        dir.path(),
        &["synth", "--output", "raw", "--per-class", &n, "--seed", "5"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    dir
}

fn train_tiny(dir: &Path, out: &str) -> Output {
    hres(
        dir,
        &[
            "--config",
            "tiny.toml",
            "train",
            "--data",
            "raw",
            "--out",
            out,
        ],
    )
}

fn files_in(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    v.sort();
    v
}

#[test]
fn preprocess_writes_one_tensor_per_patch_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let o = hres(
        dir.path(),
        &["synth", "--output", "raw", "--per-class", "3"],
    );
    assert!(o.status.success());
    fs::remove_file(dir.path().join("raw/1/syn_00002.png")).unwrap();

    let o = hres(
        dir.path(),
        &["preprocess", "--input", "raw", "--output", "a"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("preprocessed 5 of 5 patches: normal 3, affected 2"));
    assert!(stderr(&o).contains("# resolved configuration"));
    let written: Vec<_> = ["a/0", "a/1"]
        .iter()
        .flat_map(|d| files_in(&dir.path().join(d)))
        .collect();
    assert_eq!(written.len(), 5);
    assert!(written.iter().all(|p| p.extension().unwrap() == "hres"));

    hres(
        dir.path(),
        &["preprocess", "--input", "raw", "--output", "b"],
    );
    for p in &written {
        let rel = p.strip_prefix(dir.path().join("a")).unwrap();
        assert_eq!(
            fs::read(p).unwrap(),
            fs::read(dir.path().join("b").join(rel)).unwrap()
        );
    }
}

#[test]
fn preprocess_reports_bad_png_and_continues() {
    let dir = tempfile::tempdir().unwrap();
    hres(
        dir.path(),
        &["synth", "--output", "raw", "--per-class", "2"],
    );
    fs::write(dir.path().join("raw/0/broken.png"), b"not a png").unwrap();
    let o = hres(
        dir.path(),
        &["preprocess", "--input", "raw", "--output", "out"],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("broken.png"));
    assert!(stdout(&o).contains("preprocessed 4 of 5 patches"));
    assert_eq!(files_in(&dir.path().join("out/1")).len(), 2);
}

#[test]
fn train_eval_gradcam_round_trip() {
    let dir = setup(10);
    let d = dir.path();
    let o = train_tiny(d, "w.bin");
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(
        out.contains("split: train 14, validation 2, test 4"),
        "{out}"
    );
    let history = fs::read_to_string(d.join("w.bin.history.csv")).unwrap();
    let lines: Vec<&str> = history.lines().collect();
    assert_eq!(lines[0], "epoch,train_loss,train_acc,val_loss,val_acc");
    let epochs: usize = out
        .split("trained ")
        .nth(1)
        .and_then(|s| s.split(' ').next())
        .and_then(|s| s.parse().ok())
        .unwrap();
    assert_eq!(lines.len() - 1, epochs);
    assert!(d.join("w.bin.config.toml").exists());

    let again = train_tiny(d, "w2.bin");
    assert!(again.status.success());
    assert_eq!(
        history,
        fs::read_to_string(d.join("w2.bin.history.csv")).unwrap()
    );
    assert_eq!(
        fs::read(d.join("w.bin")).unwrap(),
        fs::read(d.join("w2.bin")).unwrap()
    );

    let o = hres(
        d,
        &[
            "--config",
            "tiny.toml",
            "eval",
            "--weights",
            "w.bin",
            "--data",
            "raw",
            "--all",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("evaluated 20 samples (all)"));
    assert!(
        out.contains("accuracy precision    recall specificity        f1"),
        "{out}"
    );
    assert!(out.contains("AUROC "));
    let roc = fs::read_to_string(d.join("w.bin.roc.csv")).unwrap();
    let rows: Vec<&str> = roc.lines().collect();
    assert_eq!(rows[0], "fpr,tpr,threshold");
    assert!(rows[1].starts_with("0,0,"));
    assert!(rows[rows.len() - 1].starts_with("1,1,"));

    let images = [
        "raw/0/syn_00000.png",
        "raw/0/syn_00001.png",
        "raw/1/syn_00000.png",
        "raw/1/syn_00003.png",
    ];
    let mut args = vec![
        "--config",
        "tiny.toml",
        "gradcam",
        "--weights",
        "w.bin",
        "--out",
        "cam",
    ];
    args.extend(images);
    let o = hres(d, &args);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("layer: block1.conv3"));
    assert_eq!(stdout(&o).matches("predicted").count(), 4);
    let written = files_in(&d.join("cam"));
    assert_eq!(written.len(), 8);
    assert!(d.join("cam/0_syn_00000.heat.png").exists());
    assert!(d.join("cam/1_syn_00000.overlay.png").exists());
    assert!(d.join("cam/syn_00003.heat.png").exists());

    let o = hres(
        d,
        &[
            "--config",
            "tiny.toml",
            "gradcam",
            "--weights",
            "w.bin",
            "--out",
            "cam",
            "--layer",
            "head",
            images[0],
        ],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("block1.shortcut"));
}

#[test]
fn gradcam_fans_out_two_images_per_input() {
    let dir = setup(4);
    let d = dir.path();
    assert!(train_tiny(d, "w.bin").status.success());
    let mut args = vec![
        "--config",
        "tiny.toml",
        "gradcam",
        "--weights",
        "w.bin",
        "--out",
        "cam",
    ];
    let inputs = [
        "raw/0/syn_00000.png",
        "raw/0/syn_00001.png",
        "raw/0/syn_00002.png",
        "raw/1/syn_00003.png",
    ];
    args.extend(inputs);
    let o = hres(d, &args);
    assert!(o.status.success(), "{}", stderr(&o));
    let names: Vec<String> = files_in(&d.join("cam"))
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    assert_eq!(names.len(), 8, "{names:?}");
    assert!(names
        .iter()
        .all(|n| n.ends_with(".heat.png") || n.ends_with(".overlay.png")));
}

#[test]
fn eval_rejects_mismatched_model_config() {
    let dir = setup(4);
    let d = dir.path();
    assert!(train_tiny(d, "w.bin").status.success());
    fs::write(
        d.join("other.toml"),
        TINY.replace("kernel_size = 3", "kernel_size = 5"),
    )
    .unwrap();
    let o = hres(
        d,
        &[
            "--config",
            "other.toml",
            "eval",
            "--weights",
            "w.bin",
            "--data",
            "raw",
        ],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("stem.weight"), "{}", stderr(&o));
}

#[test]
fn divergent_training_exits_with_numeric_code() {
    let dir = setup(4);
    let d = dir.path();
    fs::write(d.join("wild.toml"), format!("{TINY}learning_rate = 1e30\n")).unwrap();
    let o = hres(
        d,
        &[
            "--config",
            "wild.toml",
            "train",
            "--data",
            "raw",
            "--out",
            "w.bin",
        ],
    );
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("non-finite"), "{}", stderr(&o));
}

#[test]
fn config_errors_exit_one() {
    let dir = setup(2);
    let d = dir.path();
    for (name, text) in [
        ("p0.toml", "[train]\npatience = 0\n"),
        ("unknown.toml", "[train]\nmomentum = 0.5\n"),
        ("section.toml", "[optimizer]\nlr = 1\n"),
    ] {
        fs::write(d.join(name), text).unwrap();
        let o = hres(
            d,
            &["--config", name, "train", "--data", "raw", "--out", "w.bin"],
        );
        assert_eq!(o.status.code(), Some(1), "{name}");
        assert!(!d.join("w.bin").exists());
    }
    let o = hres(d, &["train", "--data", "missing", "--out", "w.bin"]);
    assert_eq!(o.status.code(), Some(1));
    let o = hres(d, &["train", "--bogus-flag"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn summary_table_and_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let o = hres(dir.path(), &["summary", "--csv"]);
    assert!(o.status.success());
    let csv = stdout(&o);
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    for line in csv.lines().skip(1).filter(|l| !l.starts_with("total")) {
        let f: Vec<u64> = line
            .split(',')
            .skip(1)
            .map(|v| v.parse().unwrap())
            .collect();
        let at = |name: &str| f[col(name) - 1];
        assert_eq!(
            at("rho"),
            at("k") * at("k") * at("f_in") * at("f_out"),
            "{line}"
        );
    }

    let o = hres(dir.path(), &["summary", "--sweep", "--csv"]);
    let grid = stdout(&o);
    let rows: Vec<&str> = grid.lines().collect();
    assert_eq!(rows.len(), 7);
    assert_eq!(rows[0].split(',').count(), 6);
    for (i, row) in rows[1..].iter().enumerate() {
        let k = i + 2;
        for (j, cell) in row.split(',').skip(1).enumerate() {
            let expected = Network::zeros(&ModelConfig::default().with_shape(j + 1, k))
                .unwrap()
                .parameter_count();
            assert_eq!(cell.parse::<usize>().unwrap(), expected);
        }
    }
}
