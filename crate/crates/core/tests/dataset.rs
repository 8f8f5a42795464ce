use std::fs;

use bendflow::dataset::{compute_stats, generate_dataset, Dataset, GenerationConfig, Split, SplitCounts, CONTAINER_FILE, MANIFEST_FILE};
use bendflow::Error;

fn config(train: usize, val: usize, test: usize, n: usize) -> GenerationConfig {
    GenerationConfig { counts: SplitCounts { train, val, test }, seed: 42, n, ..GenerationConfig::default() }
}

#[test]
fn generation_is_byte_reproducible() {
    let cfg = config(1, 1, 1, 32);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = generate_dataset(a.path(), &cfg).unwrap();
    let mb = generate_dataset(b.path(), &cfg).unwrap();
    assert_eq!(ma, mb);
    for f in [CONTAINER_FILE, MANIFEST_FILE] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap());
    }
}

#[test]
fn stored_samples_round_trip_and_obey_invariants() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate_dataset(dir.path(), &config(3, 2, 12, 32)).unwrap();
    assert_eq!(manifest.counts, SplitCounts { train: 3, val: 2, test: 12 });

    let ds = Dataset::open(dir.path()).unwrap();
    assert_eq!(ds.manifest, manifest);
    let mut total = 0;
    for split in Split::ALL {
        let samples = ds.load_split(split).unwrap();
        assert_eq!(samples.len(), manifest.counts.get(split));
        for s in &samples {
            s.validate().unwrap();
            assert_eq!(s.split, split);
            assert!(s.mean_speed() > 0.0);
            assert_eq!(s.binary.grid, manifest.grid);
        }
        total += samples.len();
    }
    assert_eq!(total, 17);

    // statistics come from the training records alone
    let train = ds.load_split(Split::Train).unwrap();
    assert_eq!(compute_stats(&train), manifest.stats);

    let report = ds.restricted_region_report().unwrap();
    assert_eq!((report.train, report.val), (0, 0));
    assert!(report.test > 0, "{report:?}");

    let ids: Vec<usize> = ds.load_batches(Split::Test, 5, 3, 0).unwrap().flat_map(|b| b.unwrap()).map(|s| s.id).collect();
    let mut sorted = ids.clone();
    sorted.sort_unstable();
    assert_eq!(sorted, manifest.split_ids(Split::Test));
    let again: Vec<usize> = ds.load_batches(Split::Test, 5, 3, 0).unwrap().flat_map(|b| b.unwrap()).map(|s| s.id).collect();
    assert_eq!(ids, again);
    assert_eq!(ds.load_batches(Split::Val, 64, 0, 0).unwrap().count(), 1);
}

#[test]
fn missing_and_corrupt_records_name_the_id() {
    let dir = tempfile::tempdir().unwrap();
    generate_dataset(dir.path(), &config(1, 1, 1, 16)).unwrap();
    let ds = Dataset::open(dir.path()).unwrap();
    assert!(matches!(ds.read_sample(99), Err(Error::Record { id: 99, .. })));
    let path = dir.path().join(CONTAINER_FILE);
    let bytes = fs::read(&path).unwrap();
    fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    assert!(matches!(ds.read_sample(2), Err(Error::Record { id: 2, .. })));
}

#[test]
fn empty_split_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    assert!(generate_dataset(dir.path(), &config(1, 0, 1, 16)).is_err());
}
