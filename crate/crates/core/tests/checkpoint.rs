mod common;

use common::{golden_model, golden_output_hash, golden_path, random_unit, GOLDEN_OUTPUT_SHA256};
use mbcnn::io::checkpoint::{from_bytes, to_bytes, MAGIC};
use mbcnn::io::{load_checkpoint, load_checkpoint_for, read_image, save_checkpoint, write_image};
use mbcnn::net::{Ablation, ArchConfig, Model};
use mbcnn::{Error, Tensor};

#[test]
fn golden_checkpoint_is_stable() {
    let path = golden_path();
    if std::env::var_os("MBCNN_BLESS").is_some() {
        save_checkpoint(&golden_model(), &path).unwrap();
        println!("{}", golden_output_hash(&golden_model()));
    }
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), to_bytes(&golden_model()));
    assert_eq!(golden_output_hash(&loaded), GOLDEN_OUTPUT_SHA256);
}

#[test]
fn round_trip_reproduces_outputs_bitwise() {
    let m = golden_model();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested/m.mbck");
    save_checkpoint(&m, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back.params, m.params);
    let x = random_unit([2, 16, 24, 3], 1);
    assert_eq!(back.forward(&x).unwrap(), m.forward(&x).unwrap());

    let ablated = m.ablate(Ablation::NoLp);
    let back = from_bytes(&to_bytes(&ablated)).unwrap();
    assert!(back.frozen.is_empty());
    assert_eq!(back.params, ablated.params);
}

#[test]
fn corrupt_files_are_rejected() {
    let bytes = to_bytes(&golden_model());
    assert_eq!(&bytes[..4], MAGIC);
    for cut in [0, 3, 10, bytes.len() / 2, bytes.len() - 1] {
        assert!(
            matches!(from_bytes(&bytes[..cut]), Err(Error::CorruptCheckpoint(_))),
            "cut {cut}"
        );
    }
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(matches!(
        from_bytes(&magic),
        Err(Error::CorruptCheckpoint(_))
    ));
    let mut version = bytes.clone();
    version[4] = 9;
    assert!(matches!(
        from_bytes(&version),
        Err(Error::CorruptCheckpoint(_))
    ));
    let mut trailing = bytes;
    trailing.push(0);
    assert!(matches!(
        from_bytes(&trailing),
        Err(Error::CorruptCheckpoint(_))
    ));
}

#[test]
fn architecture_mismatch_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("light.mbck");
    let light = ArchConfig::preset("mbcnn-light").unwrap();
    save_checkpoint(&Model::build(&light, 0).unwrap(), &path).unwrap();
    assert!(load_checkpoint_for(&path, &light).is_ok());
    let err = load_checkpoint_for(&path, &ArchConfig::preset("mbcnn").unwrap()).unwrap_err();
    match err {
        Error::ParamMismatch { wrong_shape, .. } => assert!(!wrong_shape.is_empty()),
        other => panic!("unexpected {other}"),
    }
    let err = load_checkpoint_for(&path, &ArchConfig::preset("tiny").unwrap()).unwrap_err();
    match err {
        Error::ParamMismatch {
            missing,
            unexpected,
            ..
        } => assert!(!missing.is_empty() || !unexpected.is_empty()),
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn image_round_trip_is_within_quantization() {
    let dir = tempfile::tempdir().unwrap();
    let img = random_unit([1, 9, 7, 3], 2);
    for ext in ["png", "ppm"] {
        let path = dir.path().join(format!("x.{ext}"));
        write_image(&img, &path).unwrap();
        let back = read_image(&path).unwrap();
        assert!(back.max_abs_diff(&img) <= 0.5 / 255.0 + 1e-6, "{ext}");
    }
    let black = dir.path().join("black.png");
    write_image(&Tensor::zeros([1, 4, 4, 3]), &black).unwrap();
    assert!(read_image(&black).unwrap().data().iter().all(|&v| v == 0.0));
    let over = Tensor::from_fn([1, 1, 2, 3], |_, _, x, _| if x == 0 { -0.5 } else { 1.5 });
    write_image(&over, &black).unwrap();
    assert_eq!(
        read_image(&black).unwrap().data(),
        &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0]
    );
}

#[test]
fn sixteen_bit_images_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("deep.png");
    image::ImageBuffer::<image::Rgb<u16>, _>::from_raw(2, 2, vec![1000u16; 12])
        .unwrap()
        .save(&path)
        .unwrap();
    let err = read_image(&path).unwrap_err();
    assert!(err.to_string().contains("8-bit"), "{err}");
    assert!(read_image(&dir.path().join("missing.png")).is_err());
}
