use std::fs;

use ntk_attn::{manifest, mtxt, IoError};
use ntk_attn_core::feature_map::{FeatureMapSpec, ScaleMode};
use ntk_attn_core::stylized::{Dataset, StylizedModel, TargetKind};
use ntk_attn_core::{compress_prefix, DenseMatrix, PrefixModel, SeededRng};

#[test]
fn mtxt_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = SeededRng::new(5);
    let mut m = rng.uniform_matrix(4, 3, 1e3);
    m.data_mut()[0] = 1e-300;
    m.data_mut()[1] = -0.0;
    let path = dir.path().join("m.mtxt");
    mtxt::write(&path, &m).unwrap();
    let back = mtxt::read(&path).unwrap();
    assert_eq!(back.shape(), (4, 3));
    for (a, b) in m.data().iter().zip(back.data()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn mtxt_errors_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.mtxt");
    fs::write(&path, "mtxt 2 2\n1 2\n3 nan\n").unwrap();
    match mtxt::read(&path) {
        Err(IoError::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("{other:?}"),
    }
    fs::write(&path, "mtxt 2 2\n1 2\n").unwrap();
    assert!(matches!(mtxt::read(&path), Err(IoError::Parse { .. })));
}

#[test]
fn prefix_manifest_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = SeededRng::new(6);
    let model = PrefixModel::new(
        rng.uniform_matrix(3, 3, 1.0),
        rng.uniform_matrix(3, 3, 1.0),
        rng.uniform_matrix(3, 3, 1.0),
        rng.uniform_matrix(9, 3, 1.0),
    )
    .unwrap();
    let path = manifest::save_prefix_model(dir.path(), "p", &model).unwrap();
    assert_eq!(manifest::load_prefix_model(&path).unwrap(), model);
}

#[test]
fn ntk_manifest_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = SeededRng::new(7);
    let prefix = PrefixModel::new(
        DenseMatrix::identity(3),
        DenseMatrix::identity(3),
        DenseMatrix::identity(3),
        rng.uniform_matrix(5, 3, 1.0),
    )
    .unwrap();
    let model = compress_prefix(&prefix, &FeatureMapSpec::taylor(3, 2, ScaleMode::InvD)).unwrap();
    let path = manifest::save_ntk_model(dir.path(), "n", &model).unwrap();
    let back = manifest::load_ntk_model(&path).unwrap();
    assert_eq!(back, model);
}

#[test]
fn stylized_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = SeededRng::new(8);
    let model = StylizedModel::init(3, 10, 0.1, &mut rng).unwrap();
    let data = Dataset::generate(4, 3, TargetKind::RandomUnit, &mut rng).unwrap();
    let mp = manifest::save_stylized_model(dir.path(), "model", &model).unwrap();
    let dp = manifest::save_dataset(dir.path(), "data", &data).unwrap();
    assert_eq!(manifest::load_stylized_model(&mp).unwrap(), model);
    assert_eq!(manifest::load_dataset(&dp).unwrap(), data);
}

#[test]
fn manifest_rejects_unknown_fields() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    fs::write(&path, r#"{"d": 2, "m": 1, "extra": true, "files": {}}"#).unwrap();
    assert!(manifest::load_prefix_model(&path).is_err());
}
