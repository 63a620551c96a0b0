use efdls::dataio::{self, LoadOptions};
use efdls::extractor::ArchSpec;
use efdls::federation::{run_federation, DatasetEntry, FederationConfig};
use efdls::strategies::StrategyKind;

const SETS: [&str; 4] = ["Chinatown", "ECG200", "SonyAIBORobotSur.1", "CBF"];

/// Writes registry-shaped stand-ins in archive layout under `root`.
fn write_archive(root: &std::path::Path) {
    for (i, name) in SETS.iter().enumerate() {
        let meta = dataio::lookup(name).unwrap();
        let mut ds = dataio::standin(meta, i as u64);
        ds.name = meta.archive.to_string();
        dataio::write_dataset(root, &ds).unwrap();
    }
}

#[test]
fn archive_layout_loads_with_registry_checks() {
    let root = tempfile::tempdir().unwrap();
    write_archive(root.path());
    for name in SETS {
        let meta = dataio::lookup(name).unwrap();
        let ds = dataio::load_ucr_tsv(root.path(), name, LoadOptions::default()).unwrap();
        assert_eq!((ds.train.len(), ds.test.len(), ds.num_classes), (meta.train, meta.test, meta.classes));
        // every loaded instance is z-normalized
        let len = ds.series_length();
        for row in ds.train.x.data().chunks(len) {
            let mean = row.iter().sum::<f64>() / len as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / len as f64;
            assert!(mean.abs() < 1e-9 && (var - 1.0).abs() < 1e-6, "{name}: mean {mean} var {var}");
        }
    }
}

#[test]
fn federation_over_archive_files() {
    let root = tempfile::tempdir().unwrap();
    write_archive(root.path());
    for strategy in StrategyKind::ALL {
        let cfg = FederationConfig {
            strategy,
            n_tot: 4,
            fles: 2,
            seed: 4,
            arch: ArchSpec::tiny(),
            data_root: Some(root.path().to_path_buf()),
            datasets: SETS.iter().map(|n| DatasetEntry::named(n)).collect(),
            ..FederationConfig::default()
        };
        let out = run_federation(&cfg).unwrap();
        let names: Vec<&str> = out.users.iter().map(|u| u.dataset.as_str()).collect();
        assert_eq!(names, SETS);
        assert_eq!(out.report.table.datasets.len(), 4);
        let exchanged = out.ledger.total_bytes() > 0;
        assert_eq!(exchanged, strategy.communicates(), "{strategy}");
        assert_eq!(out.users.iter().all(|u| u.teacher_loaded), strategy.load_target().is_some_and(|t| t == efdls::strategies::LoadTarget::Teacher));
    }
}

#[test]
fn missing_archive_is_a_dataset_error() {
    let root = tempfile::tempdir().unwrap();
    let cfg = FederationConfig {
        data_root: Some(root.path().to_path_buf()),
        datasets: vec![DatasetEntry::named("Chinatown")],
        ..FederationConfig::default()
    };
    let err = run_federation(&cfg).unwrap_err().to_string();
    assert!(err.contains("Chinatown"), "{err}");
}
