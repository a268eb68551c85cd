use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde_json::json;
use thiserror::Error;

use stochres_core::harness::{evaluate, with_jobs};
use stochres_core::nn::{gradient_check, random_problem};
use stochres_core::report::{self, ReportError};
use stochres_core::rng::derive_seed;
use stochres_core::{
    run_ablation, run_seqlen_study, run_sweep, Condition, Dataset, Dims, EnsembleStore,
    HarnessError, LstmParams, MnistFiles, NoiseKind, Split, SweepTable, TrainConfig,
    DEFAULT_NOISE_LEVELS, DEFAULT_SEQ_LENGTHS, DEFAULT_T_FACTORS,
};

use crate::config::{FileConfig, Settings};
use crate::{Command, CommonArgs, ExamplesArgs, GradcheckArgs, SeqlenArgs, SweepArgs, TrainArgs};

const TRAIN_SPLIT_TAG: u64 = 1;
const VAL_SPLIT_TAG: u64 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("missing data file: {}", .0.display())]
    MissingData(PathBuf),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("gradient check failed: max relative error {0:e}")]
    GradientCheck(f64),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Harness(HarnessError::InvalidConfig(_)) => 2,
            _ => 1,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Train(args) => train(args),
        Command::Sweep(args) => sweep(args, false),
        Command::Ablation(args) => sweep(args, true),
        Command::Seqlen(args) => seqlen(args),
        Command::Examples(args) => examples(args),
        Command::Gradcheck(args) => gradcheck(args),
    }
}

fn resolve(common: &CommonArgs) -> Result<(Settings, FileConfig)> {
    let file = match &common.config {
        Some(path) => FileConfig::load(path).map_err(CliError::Usage)?,
        None => FileConfig::default(),
    };
    let defaults = TrainConfig::default();
    let out_dir = common
        .out
        .clone()
        .or(file.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs"));
    let model_dir = common
        .model_dir
        .clone()
        .or(file.model_dir.clone())
        .unwrap_or_else(|| out_dir.join("models"));
    let jobs = common
        .jobs
        .or(file.jobs)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, usize::from));
    if jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let settings = Settings {
        data_dir: common
            .data_dir
            .clone()
            .or(file.data_dir.clone())
            .unwrap_or_else(|| PathBuf::from("data/mnist")),
        out_dir,
        model_dir,
        seed: common.seed.or(file.seed).unwrap_or(defaults.master_seed),
        epochs: common.epochs.or(file.epochs).unwrap_or(defaults.epochs),
        batch_size: common
            .batch_size
            .or(file.batch_size)
            .unwrap_or(defaults.batch_size),
        lr: common.lr.or(file.lr).unwrap_or(defaults.lr),
        empty_train: common
            .empty_train
            .or(file.empty_train)
            .unwrap_or(defaults.empty_count_train),
        empty_val: common
            .empty_val
            .or(file.empty_val)
            .unwrap_or(defaults.empty_count_val),
        jobs,
        retrain: common.retrain,
    };
    Ok((settings, file))
}

fn data_files(settings: &Settings) -> Result<MnistFiles> {
    let files = MnistFiles::in_dir(&settings.data_dir);
    match files.first_missing() {
        Some(path) => Err(CliError::MissingData(path.to_path_buf())),
        None => Ok(files),
    }
}

fn load_split(
    files: &MnistFiles,
    settings: &Settings,
    split: Split,
    include_empty: bool,
) -> Result<Dataset> {
    let (tag, empties) = match split {
        Split::Train => (TRAIN_SPLIT_TAG, settings.empty_train),
        Split::Validation => (VAL_SPLIT_TAG, settings.empty_val),
    };
    let data = files
        .load(
            split,
            include_empty,
            empties,
            derive_seed(&[settings.seed, tag]),
        )
        .map_err(HarnessError::from)?;
    info!(
        "loaded {:?} split: {} examples, {} classes",
        split,
        data.len(),
        data.num_classes()
    );
    Ok(data)
}

fn ensemble(
    files: &MnistFiles,
    settings: &Settings,
    config: &TrainConfig,
) -> std::result::Result<Vec<LstmParams<f32>>, HarnessError> {
    config.validate()?;
    let store = EnsembleStore::new(&settings.model_dir);
    store.load_or_train(config, settings.retrain, || {
        files
            .load(
                Split::Train,
                config.include_empty,
                settings.empty_train,
                derive_seed(&[settings.seed, TRAIN_SPLIT_TAG]),
            )
            .map_err(HarnessError::from)
    })
}

fn out_dir(settings: &Settings) -> Result<&Path> {
    let dir = settings.out_dir.as_path();
    fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    Ok(dir)
}

fn write_provenance(
    settings: &Settings,
    name: &str,
    options: serde_json::Value,
    outputs: &[&str],
) -> Result<()> {
    let path = out_dir(settings)?.join(format!("{name}.run.json"));
    let doc = json!({
        "tool": "stochres",
        "version": env!("CARGO_PKG_VERSION"),
        "command": name,
        "seed": settings.seed,
        "settings": settings,
        "options": options,
        "outputs": outputs,
    });
    let text = serde_json::to_string_pretty(&doc).expect("provenance serializes") + "\n";
    fs::write(&path, text).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn print_table(title: &str, table: &SweepTable) {
    println!("{title}");
    for r in report::sweep_records(table) {
        let det = r
            .mean_detection
            .map_or_else(|| "-".to_string(), |d| format!("{d:.4}"));
        println!(
            "  t={:<5} {}={:<6} L={} acc={:.4} std={:.4} det={}",
            r.t_factor as f32,
            r.noise_kind,
            r.noise_level as f32,
            r.seq_len,
            r.mean_acc,
            r.std_acc,
            det
        );
    }
}

fn train(args: TrainArgs) -> Result<()> {
    let (settings, file) = resolve(&args.common)?;
    let seq_len = args.seq_len.or(file.seq_len).unwrap_or(1);
    let include_empty = !args.no_empty;
    let config = settings.train_config(seq_len, include_empty);
    config.validate()?;
    let files = data_files(&settings)?;
    with_jobs(settings.jobs, || -> Result<()> {
        let models = ensemble(&files, &settings, &config)?;
        let valset = load_split(&files, &settings, Split::Validation, include_empty)?;
        let stats = evaluate(&models, &valset, &Condition::clean(seq_len), settings.seed)?;
        println!(
            "clean accuracy {:.4} (std {:.4}) over {} models; cached in {}",
            stats.mean_accuracy,
            stats.std_accuracy,
            stats.n_models(),
            EnsembleStore::new(&settings.model_dir)
                .dir_for(&config)
                .display()
        );
        Ok(())
    })?;
    write_provenance(&settings, "train", json!({ "train": config }), &[])
}

fn sweep(args: SweepArgs, ablation: bool) -> Result<()> {
    let (settings, file) = resolve(&args.common)?;
    let kind = NoiseKind::from(args.noise);
    let seq_len = args.seq_len.or(file.seq_len).unwrap_or(1);
    let t_factors = args
        .t_factors
        .or(file.t_factors)
        .unwrap_or_else(|| DEFAULT_T_FACTORS.to_vec());
    let levels = args
        .noise_levels
        .or(file.noise_levels)
        .unwrap_or_else(|| DEFAULT_NOISE_LEVELS.to_vec());
    let include_empty = !ablation;
    let config = settings.train_config(seq_len, include_empty);
    config.validate()?;
    let files = data_files(&settings)?;

    let table = with_jobs(settings.jobs, || -> Result<SweepTable> {
        let models = ensemble(&files, &settings, &config)?;
        let valset = load_split(&files, &settings, Split::Validation, include_empty)?;
        let table = if ablation {
            run_ablation(
                &models,
                &valset,
                &t_factors,
                kind,
                &levels,
                seq_len,
                settings.seed,
            )?
        } else {
            run_sweep(
                &models,
                &valset,
                &t_factors,
                kind,
                &levels,
                seq_len,
                settings.seed,
            )?
        };
        Ok(table)
    })?;

    let name = format!("{}_{kind}", if ablation { "ablation" } else { "sweep" });
    let csv_name = format!("{name}.csv");
    report::write_csv(&table, &out_dir(&settings)?.join(&csv_name))?;
    print_table(&name, &table);
    write_provenance(
        &settings,
        &name,
        json!({ "train": config, "noise": kind, "t_factors": t_factors, "noise_levels": levels }),
        &[&csv_name],
    )
}

fn seqlen(args: SeqlenArgs) -> Result<()> {
    let (settings, file) = resolve(&args.common)?;
    let kind = NoiseKind::from(args.noise);
    let lengths = args
        .lengths
        .or(file.seq_lengths)
        .unwrap_or_else(|| DEFAULT_SEQ_LENGTHS.to_vec());
    let t = args.t_factor.or(file.seqlen_t_factor).unwrap_or(0.15);
    let level = args
        .noise_level
        .or(file.seqlen_noise_level)
        .unwrap_or(0.075);
    let template = Condition::new(t, kind, level, 1).map_err(HarnessError::from)?;
    for &len in &lengths {
        settings.train_config(len, true).validate()?;
    }
    let files = data_files(&settings)?;

    let table = with_jobs(settings.jobs, || -> Result<SweepTable> {
        let valset = load_split(&files, &settings, Split::Validation, true)?;
        let table = run_seqlen_study(&valset, &lengths, &template, settings.seed, |len| {
            ensemble(&files, &settings, &settings.train_config(len, true))
        })?;
        Ok(table)
    })?;

    let csv_name = "seqlen.csv";
    report::write_csv(&table, &out_dir(&settings)?.join(csv_name))?;
    print_table("seqlen", &table);
    write_provenance(
        &settings,
        "seqlen",
        json!({ "noise": kind, "t_factor": t, "noise_level": level, "lengths": lengths }),
        &[csv_name],
    )
}

fn examples(args: ExamplesArgs) -> Result<()> {
    let (settings, file) = resolve(&args.common)?;
    let kind = NoiseKind::from(args.noise);
    let count = args.count.or(file.examples_count).unwrap_or(10);
    let t = args.t_factor.or(file.examples_t_factor).unwrap_or(0.2);
    let level = args
        .noise_level
        .or(file.examples_noise_level)
        .unwrap_or(0.05);
    let seq_len = file.seq_len.unwrap_or(1);
    let cond = Condition::new(t, kind, level, seq_len).map_err(HarnessError::from)?;
    let config = settings.train_config(seq_len, true);
    config.validate()?;
    let files = data_files(&settings)?;
    let outdir = out_dir(&settings)?.join("examples");

    let triplets = with_jobs(settings.jobs, || -> Result<_> {
        let models = ensemble(&files, &settings, &config)?;
        let model = models.get(args.model).ok_or_else(|| {
            CliError::Usage(format!(
                "--model {} out of range ({} models)",
                args.model,
                models.len()
            ))
        })?;
        let valset = load_split(&files, &settings, Split::Validation, true)?;
        Ok(report::render_examples(
            model,
            &valset,
            &cond,
            count,
            &outdir,
            settings.seed,
        )?)
    })?;

    let recovered = triplets.iter().filter(|t| t.shows_recovery()).count();
    println!(
        "wrote {} triplets to {} ({recovered} lost at low contrast and recovered with noise)",
        triplets.len(),
        outdir.display()
    );
    write_provenance(
        &settings,
        "examples",
        json!({ "train": config, "condition": cond, "count": count, "model": args.model }),
        &["examples/manifest.csv"],
    )
}

fn gradcheck(args: GradcheckArgs) -> Result<()> {
    let mut worst = 0.0f64;
    for (case, (steps, classes)) in [(1, 10), (1, 11), (4, 10), (4, 11)].into_iter().enumerate() {
        let dims = Dims::new(3, 5, classes);
        let (params, batch) =
            random_problem(dims, steps, 4, derive_seed(&[args.seed, case as u64]));
        let err = gradient_check(&params, &batch, args.epsilon).map_err(HarnessError::from)?;
        println!("L={steps} K={classes}: max relative error {err:.3e}");
        worst = worst.max(err);
    }
    if worst < args.tolerance {
        println!(
            "gradient check passed (max {worst:.3e} < {:e})",
            args.tolerance
        );
        Ok(())
    } else {
        Err(CliError::GradientCheck(worst))
    }
}
