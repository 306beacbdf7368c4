use std::path::Path;
use std::process::{Command, Output};

use mbcnn::io::{load_checkpoint, read_image};

fn mbcnn(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mbcnn"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

const CONFIG: &str = r#"{
  "preset": "tiny",
  "loss": {"variant": "l1+asl", "lambda": 0.25},
  "train": {"lr": 0.001, "batch": 2, "patch": 16, "epochs_max": 1, "seed": 0, "stage2": false},
  "data": {"train_dir": "data/train", "val_dir": "data/val", "procedural": {"n": 3, "val_n": 2, "size": 24, "seed": 7}},
  "out_dir": "run"
}"#;

#[test]
fn end_to_end_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("c.json"), CONFIG).unwrap();

    let o = mbcnn(&["synth", "--config", "c.json"], d);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(d.join("data/train/0002_moire.png").exists());
    assert!(d.join("data/val/manifest.csv").exists());

    let o = mbcnn(&["train", "--config", "c.json"], d);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let ckpt = d.join("run/best.mbck");
    assert!(load_checkpoint(&ckpt).is_ok());

    let input = d.join("data/val/0000_moire.png");
    let before = std::fs::read(&input).unwrap();
    for extra in [&[][..], &["--self-ensemble", "--ablate", "no-mtrb"][..]] {
        let mut args = vec![
            "infer",
            "--ckpt",
            "run/best.mbck",
            "--in",
            "data/val/0000_moire.png",
            "--out",
            "out.png",
        ];
        args.extend_from_slice(extra);
        let o = mbcnn(&args, d);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        assert_eq!(
            read_image(&d.join("out.png")).unwrap().shape(),
            [1, 24, 24, 3]
        );
    }
    assert_eq!(std::fs::read(&input).unwrap(), before);

    let o = mbcnn(
        &[
            "eval",
            "--ckpt",
            "run/best.mbck",
            "--data",
            "data/val",
            "--csv",
            "eval.csv",
        ],
        d,
    );
    assert_eq!(code(&o), 0);
    let csv = std::fs::read_to_string(d.join("eval.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[0], "id,psnr,ssim");
    assert!(
        lines[1].starts_with("0000,")
            && lines[2].starts_with("0001,")
            && lines[3].starts_with("mean,")
    );

    let o = mbcnn(
        &["export-passbands", "--ckpt", "run/best.mbck", "--out", "pb"],
        d,
    );
    assert_eq!(code(&o), 0);
    for b in [
        "branch1_mtrb1",
        "branch1_mtrb2",
        "branch2_mtrb1",
        "branch2_mtrb2",
        "branch3_mtrb1",
    ] {
        assert!(
            d.join(format!("pb/{b}.png")).exists() && d.join(format!("pb/{b}.csv")).exists(),
            "{b}"
        );
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&mbcnn(&[], d)), 2);
    assert_eq!(code(&mbcnn(&["infer", "--ckpt", "x"], d)), 2);
    assert_eq!(
        code(&mbcnn(
            &["infer", "--ckpt", "a", "--in", "b", "--out", "c", "--ablate", "no-dct"],
            d
        )),
        2
    );
    assert_eq!(code(&mbcnn(&["--help"], d)), 0);
    assert_eq!(
        code(&mbcnn(
            &[
                "infer",
                "--ckpt",
                "missing.mbck",
                "--in",
                "b.png",
                "--out",
                "c.png"
            ],
            d
        )),
        1
    );

    std::fs::write(
        d.join("typo.json"),
        CONFIG.replace("\"out_dir\"", "\"outdir\": 1, \"out_dir\""),
    )
    .unwrap();
    let o = mbcnn(&["train", "--config", "typo.json"], d);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("outdir"));
}

#[test]
fn gradcheck_passes_on_a_fresh_build() {
    let dir = tempfile::tempdir().unwrap();
    let o = mbcnn(&["gradcheck"], dir.path());
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(code(&o), 0, "{stdout}");
    assert!(stdout.contains("0 failed"));
}
