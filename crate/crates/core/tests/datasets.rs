use dpsgd_core::harness::{load_dataset, save_csv, Dataset, DatasetFormat};
use dpsgd_core::losses::Example;
use proptest::prelude::*;

fn examples() -> impl Strategy<Value = Vec<Example>> {
    (1usize..6).prop_flat_map(|d| {
        prop::collection::vec(
            (prop::collection::vec(-1e6f64..1e6, d), -1e3f64..1e3).prop_map(|(x, y)| Example::new(x, y)),
            1..40,
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn csv_round_trip(ex in examples()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let original = Dataset::new(ex, path.display().to_string()).unwrap();
        save_csv(&original, &path).unwrap();
        let loaded = load_dataset(&path, DatasetFormat::Csv).unwrap();
        prop_assert_eq!(loaded, original);
    }
}

#[test]
fn loads_libsvm_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.svm");
    std::fs::write(&path, "-1 2:3.0\n1 3:1.5\n").unwrap();
    let d = load_dataset(&path, DatasetFormat::Libsvm).unwrap();
    assert_eq!(d.d, 3);
    assert_eq!(d.examples[0].features, vec![0.0, 3.0, 0.0]);
    assert_eq!(d.feature_bound, 3.0);
}

#[test]
fn empty_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.csv");
    std::fs::write(&path, "").unwrap();
    let err = load_dataset(&path, DatasetFormat::Csv).unwrap_err();
    assert_eq!(err.to_string(), "empty dataset");
}
