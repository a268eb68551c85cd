use std::fs;
use std::io::Write;
use std::path::Path;

use flate2::write::GzEncoder;

use stochres_core::data::{encode_images, encode_labels};
use stochres_core::harness::with_jobs;
use stochres_core::report::{parse_sweep_csv, sweep_csv, sweep_records};
use stochres_core::{
    evaluate, run_ablation, run_seqlen_study, run_sweep, Condition, EnsembleStore, ImageSet,
    MnistFiles, NoiseKind, Split, TrainConfig, EMPTY_CLASS, ENSEMBLE_SIZE,
};

/// Ten horizontal-bar classes, bar row depends on the label.
fn bars(count: usize) -> (ImageSet, Vec<u8>) {
    let mut pixels = vec![0.0f32; count * 784];
    let labels: Vec<u8> = (0..count).map(|i| (i % 10) as u8).collect();
    for (i, &l) in labels.iter().enumerate() {
        let row = 2 + 2 * usize::from(l);
        for r in row..row + 5 {
            for c in 3 + i % 4..22 + i % 4 {
                pixels[i * 784 + r * 28 + c] = 0.7 + 0.3 * ((r + c + i) % 4) as f32 / 3.0;
            }
        }
    }
    let set = ImageSet {
        count,
        rows: 28,
        cols: 28,
        pixels,
    };
    (set, labels)
}

fn gz(bytes: &[u8]) -> Vec<u8> {
    let mut enc = GzEncoder::new(Vec::new(), flate2::Compression::fast());
    enc.write_all(bytes).unwrap();
    enc.finish().unwrap()
}

/// Training files gzipped, validation files raw.
fn write_mnist(dir: &Path) {
    let (train, train_labels) = bars(200);
    let (val, val_labels) = bars(60);
    fs::write(
        dir.join("train-images-idx3-ubyte.gz"),
        gz(&encode_images(&train)),
    )
    .unwrap();
    fs::write(
        dir.join("train-labels-idx1-ubyte.gz"),
        gz(&encode_labels(&train_labels)),
    )
    .unwrap();
    fs::write(dir.join("t10k-images-idx3-ubyte"), encode_images(&val)).unwrap();
    fs::write(
        dir.join("t10k-labels-idx1-ubyte"),
        encode_labels(&val_labels),
    )
    .unwrap();
}

fn quick(include_empty: bool) -> TrainConfig {
    TrainConfig {
        include_empty,
        epochs: 3,
        batch_size: 16,
        lr: 1e-2,
        empty_count_train: 20,
        empty_count_val: 10,
        ..TrainConfig::default()
    }
}

#[test]
fn mixed_gzip_and_raw_files_load_with_blank_class() {
    let dir = tempfile::tempdir().unwrap();
    write_mnist(dir.path());
    let files = MnistFiles::in_dir(dir.path());
    assert!(files.first_missing().is_none());
    assert!(files.train_images.extension().is_some_and(|e| e == "gz"));

    let train = files.load(Split::Train, true, 20, 1).unwrap();
    assert_eq!(train.len(), 220);
    assert_eq!(train.num_classes(), 11);
    assert_eq!(
        train.labels().iter().filter(|&&l| l == EMPTY_CLASS).count(),
        20
    );

    let val = files.load(Split::Validation, false, 10, 1).unwrap();
    assert_eq!(val.len(), 60);
    assert_eq!(val.num_classes(), 10);
}

#[test]
fn train_cache_sweep_and_csv_round_trip() {
    let data = tempfile::tempdir().unwrap();
    write_mnist(data.path());
    let files = MnistFiles::in_dir(data.path());
    let config = quick(true);
    let val = files
        .load(Split::Validation, true, config.empty_count_val, 2)
        .unwrap();

    let cache = tempfile::tempdir().unwrap();
    let store = EnsembleStore::new(cache.path());
    let trained = store
        .load_or_train(&config, false, || {
            Ok(files.load(Split::Train, true, 20, 1)?)
        })
        .unwrap();
    assert_eq!(trained.len(), ENSEMBLE_SIZE);
    assert!(store.dir_for(&config).join("train_log.csv").is_file());

    let cached = store
        .load_or_train(&config, false, || {
            panic!("cached ensemble should be reused")
        })
        .unwrap();
    for (a, b) in trained.iter().zip(&cached) {
        assert_eq!(a.as_slice(), b.as_slice());
    }

    let clean = evaluate(&cached, &val, &Condition::clean(1), 3).unwrap();
    assert!(
        clean.mean_accuracy > 0.8,
        "toy bars should be learnable: {}",
        clean.mean_accuracy
    );
    assert!(clean.mean_detection_rate.unwrap() > 0.8);

    let table = run_sweep(
        &cached,
        &val,
        &[1.0, 0.3],
        NoiseKind::Gaussian,
        &[0.0, 0.05],
        1,
        3,
    )
    .unwrap();
    assert_eq!(table.rows.len(), 4);
    let text = sweep_csv(&table).unwrap();
    let parsed = parse_sweep_csv(&text).unwrap();
    for (a, b) in parsed.iter().zip(sweep_records(&table)) {
        assert!(a.approx_eq(&b), "{a:?} vs {b:?}");
    }
    assert!(parsed.iter().all(|r| r.noise_kind == NoiseKind::Gaussian));
}

#[test]
fn evaluation_does_not_depend_on_thread_count() {
    let data = tempfile::tempdir().unwrap();
    write_mnist(data.path());
    let files = MnistFiles::in_dir(data.path());
    let config = TrainConfig {
        epochs: 1,
        ..quick(true)
    };
    let train = files.load(Split::Train, true, 20, 1).unwrap();
    let val = files.load(Split::Validation, true, 10, 2).unwrap();
    let models: Vec<_> = with_jobs(1, || stochres_core::train_ensemble(&train, &config))
        .unwrap()
        .into_iter()
        .map(|m| m.params)
        .collect();
    let retrained: Vec<_> = with_jobs(3, || stochres_core::train_ensemble(&train, &config))
        .unwrap()
        .into_iter()
        .map(|m| m.params)
        .collect();
    assert_eq!(models, retrained);

    let cond = Condition::new(0.3, NoiseKind::Uniform, 0.1, 2).unwrap();
    let one = with_jobs(1, || evaluate(&models, &val, &cond, 9)).unwrap();
    let three = with_jobs(3, || evaluate(&models, &val, &cond, 9)).unwrap();
    assert_eq!(one, three);
}

#[test]
fn ablation_and_length_study_shapes() {
    let data = tempfile::tempdir().unwrap();
    write_mnist(data.path());
    let files = MnistFiles::in_dir(data.path());
    let config = TrainConfig {
        epochs: 1,
        ..quick(false)
    };
    let train = files.load(Split::Train, false, 0, 1).unwrap();
    let val = files.load(Split::Validation, false, 0, 2).unwrap();
    let models: Vec<_> = stochres_core::train_ensemble(&train, &config)
        .unwrap()
        .into_iter()
        .map(|m| m.params)
        .collect();

    let table = run_ablation(&models, &val, &[0.2], NoiseKind::Uniform, &[0.0, 0.1], 1, 4).unwrap();
    assert!(table.rows.iter().all(|r| r.mean_detection_rate.is_none()));

    let template = Condition::new(0.5, NoiseKind::Uniform, 0.05, 1).unwrap();
    let mut requested = Vec::new();
    let study = run_seqlen_study(&val, &[1, 3], &template, 4, |len| {
        requested.push(len);
        Ok(models.clone())
    })
    .unwrap();
    assert_eq!(requested, vec![1, 3]);
    let lengths: Vec<usize> = study.rows.iter().map(|r| r.condition.seq_len).collect();
    assert_eq!(lengths, vec![1, 3]);
}
