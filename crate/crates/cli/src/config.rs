//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::PathBuf;

use bendflow::augment::AugmentConfig;
use bendflow::dataset::{GenerationConfig, SplitCounts};
use bendflow::nn::{ModelConfig, TrainConfig};
use bendflow::raster::FieldKind;

use crate::CliError;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub generation: GenerationConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Geometries timed by `bench`.
    pub bench_k: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let generation = GenerationConfig::default();
        Self {
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
            model: ModelConfig::default_for(generation.n),
            generation,
            train: TrainConfig::default(),
            bench_k: 10,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value.parse().map_err(|_| CliError::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, CliError> {
    match value {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(CliError::Config(format!("{key}: expected a boolean, got {value:?}"))),
    }
}

impl RunConfig {
    /// Applies one override. Changing `n` rebuilds the default model ladder
    /// for the new size, keeping the model switches already set.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let (key, value) = (key.trim(), value.trim());
        if let Some(k) = key.strip_prefix("solver.") {
            return self.generation.solver.set(k, value).map_err(|e| CliError::Config(e.to_string()));
        }
        match key {
            "data_dir" => self.data_dir = PathBuf::from(value),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "seed" => self.generation.seed = parse(key, value)?,
            "n" => {
                let n = parse(key, value)?;
                self.generation.n = n;
                self.model = ModelConfig {
                    input_kind: self.model.input_kind,
                    use_residual: self.model.use_residual,
                    init_seed: self.model.init_seed,
                    bottleneck: self.model.bottleneck,
                    ..ModelConfig::default_for(n)
                };
            }
            "counts.train" => self.generation.counts.train = parse(key, value)?,
            "counts.val" => self.generation.counts.val = parse(key, value)?,
            "counts.test" => self.generation.counts.test = parse(key, value)?,
            "counts" => {
                self.generation.counts = match value {
                    "desk" => SplitCounts::DESK,
                    "full" => SplitCounts::FULL,
                    _ => return Err(CliError::Config(format!("counts: expected desk or full, got {value:?}"))),
                }
            }
            "width" => self.generation.bounds.width = parse(key, value)?,
            "leg_length" => self.generation.bounds.leg_length = parse(key, value)?,
            "max_distortion" => self.generation.bounds.max_distortion = parse(key, value)?,
            "model.input" => {
                self.model.input_kind = match value {
                    "sdf" => FieldKind::Sdf,
                    "binary" => FieldKind::Binary,
                    _ => return Err(CliError::Config(format!("model.input: expected sdf or binary, got {value:?}"))),
                }
            }
            "model.bottleneck" => self.model.bottleneck = parse(key, value)?,
            "model.residual" => self.model.use_residual = parse_bool(key, value)?,
            "model.init_seed" => self.model.init_seed = parse(key, value)?,
            "train.epochs" => self.train.epochs = parse(key, value)?,
            "train.batch_size" => self.train.batch_size = parse(key, value)?,
            "train.lr" => self.train.learning_rate = parse(key, value)?,
            "train.seed" => self.train.seed = parse(key, value)?,
            "train.augment" => self.train.augment.enabled = parse_bool(key, value)?,
            "train.p_rotate" => self.train.augment.p_rotate = parse(key, value)?,
            "train.p_flip" => self.train.augment.p_flip = parse(key, value)?,
            "bench.k" => self.bench_k = parse(key, value)?,
            _ => return Err(CliError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", i + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn apply_override(&mut self, kv: &str) -> Result<(), CliError> {
        let (k, v) = kv.split_once('=').ok_or_else(|| CliError::Config(format!("override {kv:?} is not key=value")))?;
        self.set(k, v)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let cfg = |e: bendflow::Error| CliError::Config(e.to_string());
        self.generation.bounds.validate().map_err(cfg)?;
        self.generation.solver.validate().map_err(cfg)?;
        self.generation.grid().map_err(cfg)?;
        self.model.layer_shapes().map_err(cfg)?;
        self.train.augment.validate().map_err(cfg)?;
        if self.model.n != self.generation.n {
            return Err(CliError::Config(format!("model grid {} differs from data grid {}", self.model.n, self.generation.n)));
        }
        if self.train.batch_size == 0 || !(self.train.learning_rate > 0.0) {
            return Err(CliError::Config("train.batch_size and train.lr must be positive".into()));
        }
        if self.bench_k == 0 {
            return Err(CliError::Config("bench.k must be positive".into()));
        }
        Ok(())
    }

    /// Every resolved setting, in a form [`RunConfig::apply_text`] accepts.
    pub fn to_text(&self) -> String {
        let g = &self.generation;
        let mut s = String::new();
        let _ = writeln!(s, "data_dir = {}", self.data_dir.display());
        let _ = writeln!(s, "out_dir = {}", self.out_dir.display());
        let _ = writeln!(s, "seed = {}", g.seed);
        let _ = writeln!(s, "n = {}", g.n);
        let _ = writeln!(s, "counts.train = {}", g.counts.train);
        let _ = writeln!(s, "counts.val = {}", g.counts.val);
        let _ = writeln!(s, "counts.test = {}", g.counts.test);
        let _ = writeln!(s, "width = {}", g.bounds.width);
        let _ = writeln!(s, "leg_length = {}", g.bounds.leg_length);
        let _ = writeln!(s, "max_distortion = {}", g.bounds.max_distortion);
        for line in g.solver.to_text().lines() {
            let _ = writeln!(s, "solver.{line}");
        }
        let _ = writeln!(s, "model.input = {}", self.model.input_kind);
        let _ = writeln!(s, "model.bottleneck = {}", self.model.bottleneck);
        let _ = writeln!(s, "model.residual = {}", self.model.use_residual);
        let _ = writeln!(s, "model.init_seed = {}", self.model.init_seed);
        let _ = writeln!(s, "train.epochs = {}", self.train.epochs);
        let _ = writeln!(s, "train.batch_size = {}", self.train.batch_size);
        let _ = writeln!(s, "train.lr = {}", self.train.learning_rate);
        let _ = writeln!(s, "train.seed = {}", self.train.seed);
        let _ = writeln!(s, "train.augment = {}", self.train.augment.enabled);
        let _ = writeln!(s, "train.p_rotate = {}", self.train.augment.p_rotate);
        let _ = writeln!(s, "train.p_flip = {}", self.train.augment.p_flip);
        let _ = writeln!(s, "bench.k = {}", self.bench_k);
        s
    }

    pub fn with_variant(&self, input: FieldKind, residual: bool, augment: bool) -> RunConfig {
        let mut c = self.clone();
        c.model.input_kind = input;
        c.model.use_residual = residual;
        c.train.augment = AugmentConfig { enabled: augment, ..self.train.augment };
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::default();
        c.apply_text("n = 128 # bigger\nmodel.input = binary\ntrain.augment = off\nsolver.effective_reynolds = 150\n").unwrap();
        assert_eq!(c.model.n, 128);
        assert_eq!(c.model.input_kind, FieldKind::Binary);
        let mut d = RunConfig::default();
        d.apply_text(&c.to_text()).unwrap();
        assert_eq!(c, d);
        c.validate().unwrap();
    }

    #[test]
    fn bad_input_is_a_config_error() {
        let mut c = RunConfig::default();
        assert!(matches!(c.apply_override("train.lr"), Err(CliError::Config(_))));
        assert!(matches!(c.apply_override("train.lr=fast"), Err(CliError::Config(_))));
        assert!(matches!(c.apply_override("colour=red"), Err(CliError::Config(_))));
        c.apply_override("max_distortion=1.0").unwrap();
        assert!(matches!(c.validate(), Err(CliError::Config(_))));
    }
}
