//! Sweep tables as CSV, and qualitative example images as binary PGM.
//!
//! Sweep CSV columns:
//!
//! ```text
//! noise_kind,t_factor,noise_level,seq_len,mean_acc,std_acc,mean_detection,n_models
//! ```
//!
//! Rows are sorted by `t_factor` descending, then `noise_level` and `seq_len`
//! ascending; floats carry six decimals. `mean_acc` is measured over every
//! validation example, no-signal images included. `mean_detection` is empty
//! for ten-class models.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Dataset, EMPTY_CLASS, IMAGE_PIXELS, IMAGE_SIDE};
use crate::harness::{HarnessError, SweepTable};
use crate::nn::{predict, LstmParams, Scratch};
use crate::perturb::{apply_contrast, noisy_step_into, Condition, NoiseKind, PerturbError};
use crate::rng::{derive_seed, seeded, NoiseStreams};

pub const SWEEP_HEADER: [&str; 8] = [
    "noise_kind",
    "t_factor",
    "noise_level",
    "seq_len",
    "mean_acc",
    "std_acc",
    "mean_detection",
    "n_models",
];

pub const MANIFEST_HEADER: [&str; 8] = [
    "index",
    "true_label",
    "pred_orig",
    "pred_contrast",
    "pred_noised",
    "file_orig",
    "file_contrast",
    "file_noised",
];

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed csv: {0}")]
    Malformed(String),
    #[error("malformed PGM: {0}")]
    Pgm(String),
    #[error("table has no rows")]
    EmptyTable,
    #[error("requested {requested} examples but only {available} digit images are available")]
    TooManyExamples { requested: usize, available: usize },
    #[error("example rendering needs a model with the no-signal class")]
    NeedsEmptyClass,
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Perturb(#[from] PerturbError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub noise_kind: NoiseKind,
    pub t_factor: f64,
    pub noise_level: f64,
    pub seq_len: usize,
    pub mean_acc: f64,
    pub std_acc: f64,
    pub mean_detection: Option<f64>,
    pub n_models: usize,
}

impl SweepRecord {
    /// Equal up to the six printed decimals.
    pub fn approx_eq(&self, other: &Self) -> bool {
        let close = |a: f64, b: f64| (a - b).abs() <= 5.000_001e-7;
        self.noise_kind == other.noise_kind
            && self.seq_len == other.seq_len
            && self.n_models == other.n_models
            && close(self.t_factor, other.t_factor)
            && close(self.noise_level, other.noise_level)
            && close(self.mean_acc, other.mean_acc)
            && close(self.std_acc, other.std_acc)
            && match (self.mean_detection, other.mean_detection) {
                (Some(a), Some(b)) => close(a, b),
                (None, None) => true,
                _ => false,
            }
    }
}

/// Records in CSV order.
pub fn sweep_records(table: &SweepTable) -> Vec<SweepRecord> {
    let mut records: Vec<SweepRecord> = table
        .rows
        .iter()
        .map(|r| SweepRecord {
            noise_kind: r.condition.noise_kind,
            t_factor: f64::from(r.condition.t_factor),
            noise_level: f64::from(r.condition.noise_level),
            seq_len: r.condition.seq_len,
            mean_acc: r.mean_accuracy,
            std_acc: r.std_accuracy,
            mean_detection: r.mean_detection_rate,
            n_models: r.n_models(),
        })
        .collect();
    records.sort_by(|a, b| {
        b.t_factor
            .total_cmp(&a.t_factor)
            .then(a.noise_level.total_cmp(&b.noise_level))
            .then(a.seq_len.cmp(&b.seq_len))
    });
    records
}

pub fn sweep_csv(table: &SweepTable) -> Result<String, ReportError> {
    if table.rows.is_empty() {
        return Err(ReportError::EmptyTable);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SWEEP_HEADER)?;
    for r in sweep_records(table) {
        w.write_record([
            r.noise_kind.to_string(),
            format!("{:.6}", r.t_factor),
            format!("{:.6}", r.noise_level),
            r.seq_len.to_string(),
            format!("{:.6}", r.mean_acc),
            format!("{:.6}", r.std_acc),
            r.mean_detection
                .map(|d| format!("{d:.6}"))
                .unwrap_or_default(),
            r.n_models.to_string(),
        ])?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| ReportError::Malformed(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is ASCII"))
}

pub fn write_csv(table: &SweepTable, path: &Path) -> Result<(), ReportError> {
    let text = sweep_csv(table)?;
    fs::write(path, text).map_err(io_err(path))
}

pub fn parse_sweep_csv(text: &str) -> Result<Vec<SweepRecord>, ReportError> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != SWEEP_HEADER {
        return Err(ReportError::Malformed(format!(
            "unexpected header {header:?}"
        )));
    }
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        let field = |i: usize| record.get(i).unwrap_or_default();
        let num = |i: usize| -> Result<f64, ReportError> {
            field(i).parse().map_err(|_| {
                ReportError::Malformed(format!(
                    "bad number {:?} in column {}",
                    field(i),
                    SWEEP_HEADER[i]
                ))
            })
        };
        let int = |i: usize| -> Result<usize, ReportError> {
            field(i).parse().map_err(|_| {
                ReportError::Malformed(format!(
                    "bad integer {:?} in column {}",
                    field(i),
                    SWEEP_HEADER[i]
                ))
            })
        };
        out.push(SweepRecord {
            noise_kind: field(0).parse()?,
            t_factor: num(1)?,
            noise_level: num(2)?,
            seq_len: int(3)?,
            mean_acc: num(4)?,
            std_acc: num(5)?,
            mean_detection: if field(6).is_empty() {
                None
            } else {
                Some(num(6)?)
            },
            n_models: int(7)?,
        });
    }
    Ok(out)
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRecord>, ReportError> {
    parse_sweep_csv(&fs::read_to_string(path).map_err(io_err(path))?)
}

/// Binary PGM (P5, maxval 255); pixel bytes are `round(255 * p)`.
pub fn encode_pgm(pixels: &[f32], width: usize, height: usize) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(pixels.iter().map(|&p| crate::data::quantize(p)));
    out
}

/// Parses a P5 file into `(width, height, bytes)`.
pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>), ReportError> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(ReportError::Pgm("truncated header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(ReportError::Pgm(format!("magic {:?}", fields[0])));
    }
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| ReportError::Pgm(format!("bad number {s:?}")))
    };
    let (width, height, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval != 255 {
        return Err(ReportError::Pgm(format!("unsupported maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    let data = bytes
        .get(pos + 1..pos + 1 + width * height)
        .ok_or_else(|| ReportError::Pgm("truncated raster".into()))?;
    Ok((width, height, data.to_vec()))
}

pub fn write_pgm(path: &Path, pixels: &[f32]) -> Result<(), ReportError> {
    fs::write(path, encode_pgm(pixels, IMAGE_SIDE, IMAGE_SIDE)).map_err(io_err(path))
}

/// Original, contrast-reduced and noised versions of one validation image
/// with the model's prediction for each.
#[derive(Debug, Clone, PartialEq)]
pub struct ExampleTriplet {
    pub index: usize,
    pub true_label: u8,
    pub original: Vec<f32>,
    pub contrasted: Vec<f32>,
    /// First step of the noised sequence.
    pub noised: Vec<f32>,
    /// Predictions for original, contrasted and noised inputs.
    pub predictions: [usize; 3],
}

impl ExampleTriplet {
    /// Digit seen, lost under low contrast, found again with noise.
    pub fn shows_recovery(&self) -> bool {
        let [orig, contrast, noised] = self.predictions;
        orig == usize::from(self.true_label)
            && contrast == usize::from(EMPTY_CLASS)
            && noised != usize::from(EMPTY_CLASS)
    }
}

/// Builds `n` triplets from randomly chosen digit images of `valset`.
pub fn example_triplets(
    model: &LstmParams<f32>,
    valset: &Dataset,
    cond: &Condition,
    n: usize,
    seed: u64,
) -> Result<Vec<ExampleTriplet>, ReportError> {
    cond.validate()?;
    if model.dims().classes <= usize::from(EMPTY_CLASS) {
        return Err(ReportError::NeedsEmptyClass);
    }
    let mut digits: Vec<usize> = (0..valset.len())
        .filter(|&i| valset.label(i) != EMPTY_CLASS)
        .collect();
    if n > digits.len() {
        return Err(ReportError::TooManyExamples {
            requested: n,
            available: digits.len(),
        });
    }
    digits.shuffle(&mut seeded(derive_seed(&[seed, 0xE7A3])));
    digits.truncate(n);

    let streams = NoiseStreams::new(seed, 0, cond.key());
    let mut scratch = Scratch::new(model.dims());
    let mut run = |seq: &[&[f32]]| predict(model, seq, &mut scratch).map_err(HarnessError::from);
    digits
        .into_iter()
        .map(|index| {
            let example = valset.example(index);
            let original = example.image.to_vec();
            let contrasted = apply_contrast(&original, cond.t_factor)?;
            let mut steps = vec![vec![0.0; IMAGE_PIXELS]; cond.seq_len];
            for (s, buf) in steps.iter_mut().enumerate() {
                noisy_step_into(
                    &contrasted,
                    cond,
                    &mut streams.stream(index as u64, s as u64),
                    buf,
                )?;
            }
            let pred_orig = run(&vec![original.as_slice(); cond.seq_len])?;
            let pred_contrast = run(&vec![contrasted.as_slice(); cond.seq_len])?;
            let pred_noised = run(&steps.iter().map(Vec::as_slice).collect::<Vec<_>>())?;
            Ok(ExampleTriplet {
                index,
                true_label: example.label,
                original,
                contrasted,
                noised: steps.swap_remove(0),
                predictions: [pred_orig, pred_contrast, pred_noised],
            })
        })
        .collect()
}

/// Writes three PGM panels per triplet plus `manifest.csv` into `outdir`.
pub fn render_examples(
    model: &LstmParams<f32>,
    valset: &Dataset,
    cond: &Condition,
    n: usize,
    outdir: &Path,
    seed: u64,
) -> Result<Vec<ExampleTriplet>, ReportError> {
    let triplets = example_triplets(model, valset, cond, n, seed)?;
    fs::create_dir_all(outdir).map_err(io_err(outdir))?;
    let manifest_path = outdir.join("manifest.csv");
    let mut manifest = csv::Writer::from_path(&manifest_path)?;
    manifest.write_record(MANIFEST_HEADER)?;
    for (k, t) in triplets.iter().enumerate() {
        let names = ["orig", "contrast", "noised"].map(|kind| format!("example_{k:03}_{kind}.pgm"));
        for (name, pixels) in names.iter().zip([&t.original, &t.contrasted, &t.noised]) {
            write_pgm(&outdir.join(name), pixels)?;
        }
        let [a, b, c] = t.predictions;
        manifest.write_record([
            t.index.to_string(),
            t.true_label.to_string(),
            a.to_string(),
            b.to_string(),
            c.to_string(),
            names[0].clone(),
            names[1].clone(),
            names[2].clone(),
        ])?;
    }
    manifest.flush().map_err(io_err(&manifest_path))?;
    Ok(triplets)
}

/// `(index, true_label, predictions, files)` of one manifest row.
pub type ManifestRow = (usize, u8, [usize; 3], [PathBuf; 3]);

/// Reads `manifest.csv`, resolving file names against its directory.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>, ReportError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut reader = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let r = record?;
        let get = |i: usize| r.get(i).unwrap_or_default();
        let num = |i: usize| {
            get(i)
                .parse::<usize>()
                .map_err(|_| ReportError::Malformed(format!("bad manifest field {:?}", get(i))))
        };
        rows.push((
            num(0)?,
            num(1)? as u8,
            [num(2)?, num(3)?, num(4)?],
            [dir.join(get(5)), dir.join(get(6)), dir.join(get(7))],
        ));
    }
    Ok(rows)
}
