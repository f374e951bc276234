use std::path::{Path, PathBuf};

use roiskip::energy::CalibrationTarget;
use roiskip::mgn::{MgnConfig, TrainConfig};
use roiskip::scenes::SceneSpec;
use roiskip::sensor::{ReadoutMode, SensorConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

/// Environment variable naming the config file used when `--config` is absent.
pub const CONFIG_ENV: &str = "ROISKIP_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub skips: Vec<f64>,
    pub periods: Vec<usize>,
    pub modes: Vec<ReadoutMode>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            skips: (1..=9).map(|i| f64::from(i) / 10.0).collect(),
            periods: vec![4, 24, 160],
            modes: vec![ReadoutMode::RowSkip, ReadoutMode::RegionSkip],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub sensor: SensorConfig,
    pub mgn: MgnConfig,
    pub train: TrainConfig,
    /// Scene template; `gen` writes `train_clips` clips for training and
    /// `eval_clips` clips (seeded from `scene.seed + 1`) for evaluation.
    pub scene: SceneSpec,
    pub train_clips: usize,
    pub eval_clips: usize,
    pub t_reg: f64,
    pub t_row: f64,
    pub period: usize,
    /// Energy parameter JSON; the reference calibration is used when absent.
    pub energy_params: Option<PathBuf>,
    /// Existing training sequence; defaults to `<output_dir>/dataset`.
    pub dataset: Option<PathBuf>,
    /// Existing evaluation sequence; defaults to `<output_dir>/heldout`.
    pub eval_dataset: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// MGN weight initialization seed.
    pub seed: u64,
    pub sweep: SweepGrid,
    pub targets: Vec<CalibrationTarget>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            sensor: SensorConfig {
                rows: 128,
                cols: 128,
                bit_depth: 10,
                patch: 16,
                mode: ReadoutMode::RowSkip,
            },
            mgn: MgnConfig::reduced(),
            train: TrainConfig::default(),
            scene: SceneSpec {
                length: 4,
                ..SceneSpec::default()
            },
            train_clips: 50,
            eval_clips: 10,
            t_reg: 0.5,
            t_row: 0.0,
            period: 24,
            energy_params: None,
            dataset: None,
            eval_dataset: None,
            output_dir: PathBuf::from("out"),
            seed: 0,
            sweep: SweepGrid::default(),
            targets: roiskip::energy::paper_targets(),
        }
    }
}

fn config_err(msg: impl Into<String>) -> CliError {
    roiskip::Error::Config(msg.into()).into()
}

impl RunConfig {
    /// Loads `path`, or the file named by [`CONFIG_ENV`], or the defaults.
    pub fn resolve(path: Option<&Path>) -> Result<Self, CliError> {
        let env = std::env::var_os(CONFIG_ENV).map(PathBuf::from);
        match path.map(Path::to_path_buf).or(env) {
            Some(p) => Ok(roiskip::io::read_json(&p)?),
            None => Ok(Self::default()),
        }
    }

    /// Applies `key=value` overrides; dotted keys reach nested fields and
    /// values are parsed as JSON, falling back to a plain string.
    pub fn with_overrides(self, sets: &[String]) -> Result<Self, CliError> {
        if sets.is_empty() {
            return Ok(self);
        }
        let mut tree = serde_json::to_value(&self).expect("config serializes");
        for set in sets {
            let (key, raw) = set
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("override `{set}` is not key=value")))?;
            let value =
                serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            let mut node = &mut tree;
            for part in key.split('.') {
                node = node
                    .as_object_mut()
                    .and_then(|o| o.get_mut(part))
                    .ok_or_else(|| CliError::Usage(format!("unknown config key `{key}`")))?;
            }
            *node = value;
        }
        serde_json::from_value(tree).map_err(|e| config_err(format!("override rejected: {e}")))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.sensor.validate()?;
        self.mgn.validate()?;
        self.scene.validate()?;
        if self.mgn.channels != 1 {
            return Err(config_err(
                "the sensor is monochrome; mgn.channels must be 1",
            ));
        }
        if (self.scene.rows, self.scene.cols) != (self.sensor.rows, self.sensor.cols) {
            return Err(config_err(format!(
                "scene {}x{} does not match sensor {}x{}",
                self.scene.rows, self.scene.cols, self.sensor.rows, self.sensor.cols
            )));
        }
        if self.mgn.grid_h() > self.sensor.rows || self.mgn.grid_w() > self.sensor.cols {
            return Err(config_err("MGN patch grid is finer than the sensor"));
        }
        if !(self.t_reg > 0.0 && self.t_reg < 1.0) {
            return Err(roiskip::Error::Range(format!(
                "t_reg must lie in (0, 1), got {}",
                self.t_reg
            ))
            .into());
        }
        if !(0.0..1.0).contains(&self.t_row) {
            return Err(roiskip::Error::Range(format!(
                "t_row must lie in [0, 1), got {}",
                self.t_row
            ))
            .into());
        }
        if self.period == 0 {
            return Err(roiskip::Error::Range("period must be at least 1".into()).into());
        }
        if self.train_clips == 0 || self.eval_clips == 0 {
            return Err(config_err("train_clips and eval_clips must be positive"));
        }
        if self.train.batch == 0 || self.train.lr.is_nan() || self.train.lr < 0.0 {
            return Err(config_err(
                "train.batch must be positive and train.lr non-negative",
            ));
        }
        for p in [&self.energy_params, &self.dataset, &self.eval_dataset]
            .into_iter()
            .flatten()
        {
            if !p.exists() {
                return Err(roiskip::Error::Config(format!(
                    "referenced path {} does not exist",
                    p.display()
                ))
                .into());
            }
        }
        Ok(())
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.dataset
            .clone()
            .unwrap_or_else(|| self.output_dir.join("dataset"))
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.eval_dataset
            .clone()
            .unwrap_or_else(|| self.output_dir.join("heldout"))
    }

    pub fn weights_path(&self) -> PathBuf {
        self.output_dir.join("mgn.weights")
    }

    pub fn masks_dir(&self) -> PathBuf {
        self.output_dir.join("masks")
    }

    pub fn readout_dir(&self) -> PathBuf {
        self.output_dir.join("readout")
    }
}
