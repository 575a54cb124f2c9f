//! Run configuration: a flat `key = value` text file, with command-line
//! flags overriding file values. Defaults reproduce the reference
//! experiment (50 epochs, batch 32, lr 0.01, 70/15/15 split, augmentation
//! with rotation factor 0.2).

use std::path::{Path, PathBuf};

use crate::data::SplitSpec;
use crate::error::{Error, Result};
use crate::train::TrainConfig;

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub dataset_root: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub augment: bool,
    pub train_fraction: f64,
    pub validation_fraction: f64,
    pub test_fraction: f64,
    pub deterministic: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset_root: None,
            output_dir: PathBuf::from("."),
            epochs: 50,
            batch_size: 32,
            learning_rate: 0.01,
            seed: 42,
            augment: true,
            train_fraction: 0.70,
            validation_fraction: 0.15,
            test_fraction: 0.15,
            deterministic: false,
        }
    }
}

impl RunConfig {
    /// Parse a config file over the defaults. Lines are `key = value`;
    /// blank lines and `#` comments are skipped; unknown keys are errors.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "{}:{}: expected `key = value`, got `{raw}`",
                    path.display(),
                    lineno + 1
                ))
            })?;
            cfg.set(key.trim(), value.trim()).map_err(|e| {
                Error::Config(format!("{}:{}: {e}", path.display(), lineno + 1))
            })?;
        }
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("invalid value `{value}` for {key}")))
        }
        match key {
            "dataset_root" => self.dataset_root = Some(PathBuf::from(value)),
            "output_dir" => self.output_dir = PathBuf::from(value),
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "augment" => self.augment = parse(key, value)?,
            "train_fraction" => self.train_fraction = parse(key, value)?,
            "validation_fraction" => self.validation_fraction = parse(key, value)?,
            "test_fraction" => self.test_fraction = parse(key, value)?,
            "deterministic" => self.deterministic = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn split_spec(&self) -> Result<SplitSpec> {
        SplitSpec::new(
            self.train_fraction,
            self.validation_fraction,
            self.test_fraction,
            self.seed,
        )
        .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed: self.seed,
            augment: self.augment,
            cache: true,
            prefetch: true,
            deterministic: self.deterministic,
            stop_at_train_accuracy: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.split_spec()?;
        self.train_config()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_config(text: &str) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(text.as_bytes()).unwrap();
        (dir, path)
    }

    #[test]
    fn defaults_are_reference_experiment() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.epochs, 50);
        assert_eq!(cfg.batch_size, 32);
        assert_eq!(cfg.learning_rate, 0.01);
        assert_eq!(
            (cfg.train_fraction, cfg.validation_fraction, cfg.test_fraction),
            (0.70, 0.15, 0.15)
        );
        assert!(cfg.augment);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn file_overrides_and_comments() {
        let (_dir, path) = write_config(
            "# experiment\nepochs = 5\nbatch_size=8\nlearning_rate = 0.001\n\nseed = 7\naugment = false\ndataset_root = /data/leaves\n",
        );
        let cfg = RunConfig::from_file(&path).unwrap();
        assert_eq!(cfg.epochs, 5);
        assert_eq!(cfg.batch_size, 8);
        assert_eq!(cfg.learning_rate, 0.001);
        assert_eq!(cfg.seed, 7);
        assert!(!cfg.augment);
        assert_eq!(cfg.dataset_root.as_deref(), Some(Path::new("/data/leaves")));
        // untouched keys keep defaults
        assert_eq!(cfg.train_fraction, 0.70);
    }

    #[test]
    fn unknown_key_is_config_error_with_line() {
        let (_dir, path) = write_config("epochs = 5\nbatchsize = 8\n");
        match RunConfig::from_file(&path) {
            Err(Error::Config(msg)) => assert!(msg.contains(":2:"), "{msg}"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn bad_value_is_config_error() {
        let (_dir, path) = write_config("epochs = many\n");
        assert!(matches!(RunConfig::from_file(&path), Err(Error::Config(_))));
    }

    #[test]
    fn bad_fractions_fail_validation() {
        let (_dir, path) = write_config("train_fraction = 0.9\n");
        let cfg = RunConfig::from_file(&path).unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
