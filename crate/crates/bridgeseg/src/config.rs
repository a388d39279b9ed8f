//! Run configuration: a flat key=value file with CLI-flag overrides.
//!
//! Unknown keys are rejected; the effective configuration is echoed into
//! the output directory of each run for provenance.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::packing::TaskMode;
use crate::schedule::{build_schedule, NoiseSchedule};

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub schedule_n_steps: usize,
    pub schedule_beta_max: f64,
    pub schedule_beta_min: f64,
    pub train_lr: f64,
    pub train_iters: usize,
    pub train_batch: usize,
    pub train_seed: u64,
    pub train_ema_decay: f64,
    pub train_task: TaskMode,
    pub data_dir: Option<PathBuf>,
    pub model_width: usize,
    pub model_depth: usize,
    /// Dump every k-th intermediate inference state; `None` disables dumps.
    pub infer_dump_every: Option<usize>,
    pub eval_radius: f64,
    pub eval_iou: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schedule_n_steps: 50,
            schedule_beta_max: 0.3,
            schedule_beta_min: 1e-4,
            train_lr: 5e-5,
            train_iters: 5000,
            train_batch: 8,
            train_seed: 0,
            train_ema_decay: 0.999,
            train_task: TaskMode::Multi,
            data_dir: None,
            model_width: 32,
            model_depth: 3,
            infer_dump_every: None,
            eval_radius: 12.0,
            eval_iou: 0.5,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::config(key, format!("cannot parse '{value}'")))
}

impl RunConfig {
    /// Applies one key=value assignment; unknown keys are rejected.
    pub fn set_key(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "schedule.n_steps" => self.schedule_n_steps = parse_num(key, value)?,
            "schedule.beta_max" => self.schedule_beta_max = parse_num(key, value)?,
            "schedule.beta_min" => self.schedule_beta_min = parse_num(key, value)?,
            "train.lr" => self.train_lr = parse_num(key, value)?,
            "train.iters" => self.train_iters = parse_num(key, value)?,
            "train.batch" => self.train_batch = parse_num(key, value)?,
            "train.seed" => self.train_seed = parse_num(key, value)?,
            "train.ema_decay" => self.train_ema_decay = parse_num(key, value)?,
            "train.task" => self.train_task = TaskMode::parse(value.trim())?,
            "data.dir" => self.data_dir = Some(PathBuf::from(value.trim())),
            "model.width" => self.model_width = parse_num(key, value)?,
            "model.depth" => self.model_depth = parse_num(key, value)?,
            "infer.dump_every" => {
                let n: usize = parse_num(key, value)?;
                self.infer_dump_every = (n > 0).then_some(n);
            }
            "eval.radius" => self.eval_radius = parse_num(key, value)?,
            "eval.iou" => self.eval_iou = parse_num(key, value)?,
            other => {
                return Err(Error::config(
                    other,
                    "unknown configuration key".to_string(),
                ))
            }
        }
        Ok(())
    }

    /// Loads assignments from a key=value file over the current values.
    /// Lines starting with `#` and blank lines are ignored.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(
                    "config file",
                    format!("{}:{}: expected key=value, got '{line}'", path.display(), lineno + 1),
                )
            })?;
            self.set_key(key.trim(), value)?;
        }
        Ok(())
    }

    /// Serializes the effective configuration, one sorted key per line.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        if let Some(dir) = &self.data_dir {
            let _ = writeln!(out, "data.dir={}", dir.display());
        }
        let _ = writeln!(out, "eval.iou={}", self.eval_iou);
        let _ = writeln!(out, "eval.radius={}", self.eval_radius);
        let _ = writeln!(
            out,
            "infer.dump_every={}",
            self.infer_dump_every.unwrap_or(0)
        );
        let _ = writeln!(out, "model.depth={}", self.model_depth);
        let _ = writeln!(out, "model.width={}", self.model_width);
        let _ = writeln!(out, "schedule.beta_max={}", self.schedule_beta_max);
        let _ = writeln!(out, "schedule.beta_min={}", self.schedule_beta_min);
        let _ = writeln!(out, "schedule.n_steps={}", self.schedule_n_steps);
        let _ = writeln!(out, "train.batch={}", self.train_batch);
        let _ = writeln!(out, "train.ema_decay={}", self.train_ema_decay);
        let _ = writeln!(out, "train.iters={}", self.train_iters);
        let _ = writeln!(out, "train.lr={}", self.train_lr);
        let _ = writeln!(out, "train.seed={}", self.train_seed);
        let _ = writeln!(out, "train.task={}", self.train_task.as_str());
        out
    }

    /// Builds the noise schedule from the schedule keys.
    pub fn schedule(&self) -> Result<NoiseSchedule> {
        build_schedule(
            self.schedule_n_steps,
            self.schedule_beta_max,
            self.schedule_beta_min,
        )
    }

    /// Checks everything a training run needs.
    pub fn validate_for_train(&self) -> Result<()> {
        self.schedule()?;
        if self.data_dir.is_none() {
            return Err(Error::config("data.dir", "required for training"));
        }
        if self.train_batch == 0 {
            return Err(Error::config("train.batch", "must be at least 1"));
        }
        if !self.train_lr.is_finite() || self.train_lr <= 0.0 {
            return Err(Error::config(
                "train.lr",
                format!("must be a positive finite real, got {}", self.train_lr),
            ));
        }
        if !(0.0..=1.0).contains(&self.train_ema_decay) {
            return Err(Error::config(
                "train.ema_decay",
                format!("must lie in [0, 1], got {}", self.train_ema_decay),
            ));
        }
        if self.model_width == 0 {
            return Err(Error::config("model.width", "must be positive"));
        }
        if self.model_depth == 0 {
            return Err(Error::config("model.depth", "must be positive"));
        }
        Ok(())
    }

    /// Checks the evaluation keys. The IoU threshold must stay at or above
    /// 0.5 so panoptic matching remains one-to-one.
    pub fn validate_for_eval(&self) -> Result<()> {
        if !self.eval_radius.is_finite() || self.eval_radius <= 0.0 {
            return Err(Error::config(
                "eval.radius",
                format!("must be a positive finite real, got {}", self.eval_radius),
            ));
        }
        if !(0.5..1.0).contains(&self.eval_iou) {
            return Err(Error::config(
                "eval.iou",
                format!("must lie in [0.5, 1), got {}", self.eval_iou),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_documented_values() {
        let c = RunConfig::default();
        assert_eq!(c.schedule_n_steps, 50);
        assert_eq!(c.schedule_beta_max, 0.3);
        assert_eq!(c.train_lr, 5e-5);
        assert_eq!(c.train_ema_decay, 0.999);
        assert_eq!(c.eval_radius, 12.0);
        assert_eq!(c.eval_iou, 0.5);
        assert!(c.validate_for_eval().is_ok());
    }

    #[test]
    fn unknown_key_rejected() {
        let mut c = RunConfig::default();
        let err = c.set_key("train.momentum", "0.9").unwrap_err();
        assert!(err.is_usage());
        assert!(err.to_string().contains("unknown"));
    }

    #[test]
    fn bad_value_rejected() {
        let mut c = RunConfig::default();
        assert!(c.set_key("train.iters", "many").is_err());
        assert!(c.set_key("train.task", "both").is_err());
    }

    #[test]
    fn dump_every_zero_means_disabled() {
        let mut c = RunConfig::default();
        c.set_key("infer.dump_every", "0").unwrap();
        assert_eq!(c.infer_dump_every, None);
        c.set_key("infer.dump_every", "5").unwrap();
        assert_eq!(c.infer_dump_every, Some(5));
    }

    #[test]
    fn echo_parses_back_identically() {
        let mut c = RunConfig::default();
        c.set_key("train.task", "rvdist").unwrap();
        c.set_key("data.dir", "/tmp/d").unwrap();
        c.set_key("train.lr", "0.00005").unwrap();
        let echo = c.echo();
        let mut back = RunConfig::default();
        for line in echo.lines() {
            let (k, v) = line.split_once('=').unwrap();
            back.set_key(k, v).unwrap();
        }
        assert_eq!(back.echo(), echo);
    }

    #[test]
    fn train_validation_requires_data_dir() {
        let c = RunConfig::default();
        let err = c.validate_for_train().unwrap_err();
        assert!(err.to_string().contains("data.dir"));
    }

    #[test]
    fn eval_validation_bounds_iou() {
        let mut c = RunConfig::default();
        c.eval_iou = 0.4;
        assert!(c.validate_for_eval().is_err());
        c.eval_iou = 1.0;
        assert!(c.validate_for_eval().is_err());
        c.eval_iou = 0.6;
        assert!(c.validate_for_eval().is_ok());
    }
}
