//! Orchestration behind the `bendflow` binary: configuration, the ablation
//! table, timing, evaluation and image output.

pub mod ablation;
pub mod bench;
pub mod config;
pub mod evaluate;
pub mod maps;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::Path;

use bendflow::dataset::{Dataset, Split};
use bendflow::nn::{load_checkpoint, save_checkpoint, train, Model, TrainOutcome};

pub use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Runtime(#[from] bendflow::Error),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl CliError {
    /// 1 for configuration problems, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Opens the dataset of `cfg` and checks it matches the model grid.
pub fn open_dataset(cfg: &RunConfig) -> CliResult<Dataset> {
    let ds = Dataset::open(&cfg.data_dir)?;
    if ds.manifest.grid.n != cfg.model.n {
        return Err(CliError::Config(format!(
            "dataset grid {} does not match model grid {}",
            ds.manifest.grid.n, cfg.model.n
        )));
    }
    Ok(ds)
}

/// Trains on the train split, validating on the val split.
pub fn train_on(ds: &Dataset, cfg: &RunConfig) -> CliResult<TrainOutcome> {
    let tr = ds.load_split(Split::Train)?;
    let va = ds.load_split(Split::Val)?;
    Ok(train(&cfg.model, &tr, &va, &ds.manifest.stats, &cfg.train)?)
}

pub fn write_checkpoint(path: &Path, model: &Model) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    save_checkpoint(BufWriter::new(File::create(path)?), model)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> CliResult<Model> {
    Ok(load_checkpoint(BufReader::new(File::open(path)?))?)
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    match v.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => v[n / 2],
        n => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}
