use std::fs;

use hydramix::data::{generate, Dataset, DatasetSpec, Split, MANIFEST};
use hydramix::HydraError;

fn spec() -> DatasetSpec {
    DatasetSpec {
        n_train: 6,
        n_test: 3,
        seed: 21,
        ..Default::default()
    }
}

#[test]
fn six_records_two_per_class() {
    let dir = tempfile::tempdir().unwrap();
    let summary = generate(&spec(), dir.path()).unwrap();
    let pngs = fs::read_dir(dir.path().join("images")).unwrap().count();
    assert_eq!(pngs, 9);
    for name in ["tumour", "lymphocyte", "background"] {
        assert_eq!(summary.counts[&Split::Train][name], 2);
        assert_eq!(summary.counts[&Split::Test][name], 1);
    }
}

#[test]
fn round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    generate(&spec(), dir.path()).unwrap();
    let loaded = Dataset::load(dir.path()).unwrap();
    assert_eq!(loaded, Dataset::render(&spec()).unwrap());
}

#[test]
fn same_seed_same_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let sa = generate(&spec(), a.path()).unwrap();
    let sb = generate(&spec(), b.path()).unwrap();
    assert_eq!(sa.checksum, sb.checksum);
    assert_eq!(
        fs::read(a.path().join(MANIFEST)).unwrap(),
        fs::read(b.path().join(MANIFEST)).unwrap()
    );
    let other = tempfile::tempdir().unwrap();
    let sc = generate(&DatasetSpec { seed: 22, ..spec() }, other.path()).unwrap();
    assert_ne!(sa.checksum, sc.checksum);
}

#[test]
fn out_of_range_centroid_rejected_by_field() {
    let dir = tempfile::tempdir().unwrap();
    generate(&spec(), dir.path()).unwrap();
    let path = dir.path().join(MANIFEST);
    let mut doc: serde_json::Value = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
    doc["records"][2]["cx"] = serde_json::json!(1.5);
    fs::write(&path, serde_json::to_vec(&doc).unwrap()).unwrap();
    match Dataset::load(dir.path()) {
        Err(HydraError::Parse { field, .. }) => assert_eq!(field, "records[2].cx"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn truncated_png_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    generate(&spec(), dir.path()).unwrap();
    let victim = dir.path().join("images/train-000004.png");
    let bytes = fs::read(&victim).unwrap();
    fs::write(&victim, &bytes[..bytes.len() / 2]).unwrap();
    match Dataset::load(dir.path()) {
        Err(e @ HydraError::Io { .. }) => assert!(e.to_string().contains("train-000004.png"), "{e}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn missing_dir_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        Dataset::load(&dir.path().join("nope")),
        Err(HydraError::Io { .. })
    ));
}
