//! Run configuration: built-in defaults, overridden by a `key = value`
//! config file, overridden by command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use crate::dataset::RepairPolicy;
use crate::error::{Error, Result};
use crate::eval::Averaging;
use crate::model::ModelConfig;
use crate::optim::{AdamConfig, OptimizerKind};
use crate::train::{EarlyStop, TrainConfig};

pub const DEFAULT_OUT_DIR: &str = "har_out";
pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_WINDOW_LEN: usize = 200;
pub const DEFAULT_STRIDE: usize = 100;
pub const DEFAULT_SPLIT_RATIO: f64 = 0.7;
pub const DEFAULT_BATCH_SIZE: usize = 200;
pub const DEFAULT_EPOCHS: usize = 1000;
pub const DEFAULT_LEARNING_RATE: f64 = 1e-4;
pub const DEFAULT_L2_LAMBDA: f64 = 1e-4;

/// Fully resolved settings for one command invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub threads: Option<usize>,
    pub window_len: usize,
    pub stride: usize,
    pub repair: RepairPolicy,
    pub split_ratio: f64,
    pub conv1_kernel: usize,
    pub conv1_channels: usize,
    pub pool_window: usize,
    pub pool_stride: usize,
    pub conv2_kernel: usize,
    pub conv2_channels: usize,
    pub fc_units: usize,
    pub l2_lambda: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub early_stop_patience: Option<usize>,
    pub early_stop_min_delta: f64,
    pub averaging: Averaging,
}

impl Default for RunConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        RunConfig {
            data_dir: None,
            out_dir: PathBuf::from(DEFAULT_OUT_DIR),
            seed: DEFAULT_SEED,
            threads: None,
            window_len: DEFAULT_WINDOW_LEN,
            stride: DEFAULT_STRIDE,
            repair: RepairPolicy::HoldLastValue,
            split_ratio: DEFAULT_SPLIT_RATIO,
            conv1_kernel: 60,
            conv1_channels: 60,
            pool_window: 20,
            pool_stride: 2,
            conv2_kernel: 6,
            conv2_channels: 60,
            fc_units: 1000,
            l2_lambda: DEFAULT_L2_LAMBDA,
            batch_size: DEFAULT_BATCH_SIZE,
            epochs: DEFAULT_EPOCHS,
            learning_rate: DEFAULT_LEARNING_RATE,
            optimizer: OptimizerKind::Adam,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            early_stop_patience: None,
            early_stop_min_delta: 0.0,
            averaging: Averaging::Weighted,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("invalid value {value:?} for {key}")))
}

impl RunConfig {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "data_dir" => self.data_dir = Some(PathBuf::from(value)),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "seed" => self.seed = parse_num(key, value)?,
            "threads" => {
                self.threads =
                    if value == "auto" { None } else { Some(parse_num(key, value)?) }
            }
            "window_len" => self.window_len = parse_num(key, value)?,
            "stride" => self.stride = parse_num(key, value)?,
            "repair" => self.repair = RepairPolicy::parse(value)?,
            "split_ratio" => self.split_ratio = parse_num(key, value)?,
            "conv1_kernel" => self.conv1_kernel = parse_num(key, value)?,
            "conv1_channels" => self.conv1_channels = parse_num(key, value)?,
            "pool_window" => self.pool_window = parse_num(key, value)?,
            "pool_stride" => self.pool_stride = parse_num(key, value)?,
            "conv2_kernel" => self.conv2_kernel = parse_num(key, value)?,
            "conv2_channels" => self.conv2_channels = parse_num(key, value)?,
            "fc_units" => self.fc_units = parse_num(key, value)?,
            "l2_lambda" => self.l2_lambda = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "epochs" => self.epochs = parse_num(key, value)?,
            "learning_rate" => self.learning_rate = parse_num(key, value)?,
            "optimizer" => self.optimizer = OptimizerKind::parse(value)?,
            "beta1" => self.beta1 = parse_num(key, value)?,
            "beta2" => self.beta2 = parse_num(key, value)?,
            "epsilon" => self.epsilon = parse_num(key, value)?,
            "early_stop_patience" => {
                self.early_stop_patience =
                    if value == "none" { None } else { Some(parse_num(key, value)?) }
            }
            "early_stop_min_delta" => self.early_stop_min_delta = parse_num(key, value)?,
            "averaging" => self.averaging = Averaging::parse(value)?,
            other => return Err(Error::InvalidConfig(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Applies a config file: one `key = value` per line, `#` comments.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (line_no, raw) in body.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "{}:{}: expected `key = value`, got {raw:?}",
                    path.display(),
                    line_no + 1
                ))
            })?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    /// The full configuration as `key = value` lines, loadable via
    /// `apply_file`.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        if let Some(d) = &self.data_dir {
            out.push_str(&format!("data_dir = {}\n", d.display()));
        }
        out.push_str(&format!("out_dir = {}\n", self.out_dir.display()));
        out.push_str(&format!("seed = {}\n", self.seed));
        out.push_str(&format!(
            "threads = {}\n",
            self.threads.map_or("auto".to_string(), |t| t.to_string())
        ));
        out.push_str(&format!("window_len = {}\n", self.window_len));
        out.push_str(&format!("stride = {}\n", self.stride));
        out.push_str(&format!("repair = {}\n", self.repair.as_str()));
        out.push_str(&format!("split_ratio = {}\n", self.split_ratio));
        out.push_str(&format!("conv1_kernel = {}\n", self.conv1_kernel));
        out.push_str(&format!("conv1_channels = {}\n", self.conv1_channels));
        out.push_str(&format!("pool_window = {}\n", self.pool_window));
        out.push_str(&format!("pool_stride = {}\n", self.pool_stride));
        out.push_str(&format!("conv2_kernel = {}\n", self.conv2_kernel));
        out.push_str(&format!("conv2_channels = {}\n", self.conv2_channels));
        out.push_str(&format!("fc_units = {}\n", self.fc_units));
        out.push_str(&format!("l2_lambda = {}\n", self.l2_lambda));
        out.push_str(&format!("batch_size = {}\n", self.batch_size));
        out.push_str(&format!("epochs = {}\n", self.epochs));
        out.push_str(&format!("learning_rate = {}\n", self.learning_rate));
        out.push_str(&format!("optimizer = {}\n", self.optimizer.as_str()));
        out.push_str(&format!("beta1 = {}\n", self.beta1));
        out.push_str(&format!("beta2 = {}\n", self.beta2));
        out.push_str(&format!("epsilon = {}\n", self.epsilon));
        out.push_str(&format!(
            "early_stop_patience = {}\n",
            self.early_stop_patience.map_or("none".to_string(), |p| p.to_string())
        ));
        out.push_str(&format!("early_stop_min_delta = {}\n", self.early_stop_min_delta));
        out.push_str(&format!("averaging = {}\n", self.averaging.as_str()));
        out
    }

    /// Model geometry for data with the given channel and class counts.
    pub fn model_config(&self, channels: usize, num_classes: usize) -> ModelConfig {
        ModelConfig {
            input_len: self.window_len,
            channels,
            num_classes,
            conv1_kernel: self.conv1_kernel,
            conv1_channels: self.conv1_channels,
            pool_window: self.pool_window,
            pool_stride: self.pool_stride,
            conv2_kernel: self.conv2_kernel,
            conv2_channels: self.conv2_channels,
            fc_units: self.fc_units,
            l2_lambda: self.l2_lambda,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            optimizer: self.optimizer,
            adam: AdamConfig { beta1: self.beta1, beta2: self.beta2, epsilon: self.epsilon },
            early_stop: self
                .early_stop_patience
                .map(|patience| EarlyStop { patience, min_delta: self.early_stop_min_delta }),
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_documented_values() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.batch_size, 200);
        assert_eq!(cfg.epochs, 1000);
        assert_eq!(cfg.learning_rate, 1e-4);
        assert_eq!(cfg.window_len, 200);
        assert_eq!(cfg.stride, 100);
        assert_eq!(cfg.split_ratio, 0.7);
        assert_eq!(cfg.optimizer, OptimizerKind::Adam);
        assert_eq!(cfg.conv1_kernel, 60);
        assert_eq!(cfg.conv1_channels, 60);
        assert_eq!(cfg.pool_window, 20);
        assert_eq!(cfg.pool_stride, 2);
        assert_eq!(cfg.conv2_kernel, 6);
        assert_eq!(cfg.fc_units, 1000);
    }

    #[test]
    fn echo_round_trips_through_apply_file() {
        let mut cfg = RunConfig::default();
        cfg.set("data_dir", "/tmp/data").unwrap();
        cfg.set("epochs", "77").unwrap();
        cfg.set("optimizer", "sgd").unwrap();
        cfg.set("early_stop_patience", "9").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.txt");
        fs::write(&path, cfg.echo()).unwrap();
        let mut back = RunConfig::default();
        back.apply_file(&path).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn file_values_parse_with_comments() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.txt");
        fs::write(&path, "# comment\nbatch_size = 32\n\nlearning_rate = 0.001\n").unwrap();
        let mut cfg = RunConfig::default();
        cfg.apply_file(&path).unwrap();
        assert_eq!(cfg.batch_size, 32);
        assert_eq!(cfg.learning_rate, 0.001);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let mut cfg = RunConfig::default();
        assert!(matches!(cfg.set("bogus", "1"), Err(Error::InvalidConfig(_))));
        assert!(matches!(cfg.set("epochs", "not-a-number"), Err(Error::InvalidConfig(_))));
    }
}
