//! Flat key=value configuration with round-trippable emit/parse.
//!
//! Defaults follow the system parameter table: the 3D data weight and
//! truncation band are coupled to the voxel size (0.8 / 1.0 m at 10 cm
//! voxels, 0.4 / 1.6 m at 20 cm); explicit keys always win.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::fusion::{CameraModel, FusionError, FusionParams};
use crate::regularizer::RegParams;
use crate::stereo::StereoParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config line {0}: expected key = value, got {1:?}")]
    BadLine(usize, String),
    #[error("config line {0}: unknown key {1:?}")]
    UnknownKey(usize, String),
    #[error("config line {0}: bad value for {1}: {2}")]
    BadValue(usize, String, String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub voxel_size: f64,
    /// 3D data-term weight; `None` derives it from the voxel size.
    pub lambda_3d: Option<f64>,
    /// Truncation distance in meters; `None` derives it from the voxel size.
    pub mu_3d: Option<f64>,
    pub sigma_p: f64,
    pub tau: f64,
    pub theta: f64,
    pub iters_3d: usize,
    pub lambda_2d: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta: f64,
    pub gamma: f64,
    pub iters_2d: usize,
    pub census_window: usize,
    pub d_min: i32,
    pub d_max: i32,
    pub max_weight: f32,
    pub max_range: f64,
    pub min_weight: f32,
    // Camera intrinsics.
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub baseline: f64,
    /// Optional hash table size override for the block map.
    pub table_size: Option<usize>,
    /// Optional memory budget in bytes for the block map.
    pub memory_budget: Option<u64>,
    // Optional dataset paths, usable instead of CLI arguments.
    pub depth_dir: Option<String>,
    pub poses: Option<String>,
    pub output_dir: Option<String>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            voxel_size: 0.10,
            lambda_3d: None,
            mu_3d: None,
            sigma_p: 0.5,
            tau: 1.0 / 6.0,
            theta: 1.0,
            iters_3d: 200,
            lambda_2d: 0.5,
            alpha1: 1.0,
            alpha2: 5.0,
            beta: 1.0,
            gamma: 4.0,
            iters_2d: 80,
            census_window: 5,
            d_min: 0,
            d_max: 128,
            max_weight: 100.0,
            max_range: 25.0,
            min_weight: 1.0,
            fx: 277.0,
            fy: 277.0,
            cx: 159.5,
            cy: 119.5,
            width: 320,
            height: 240,
            baseline: 0.54,
            table_size: None,
            memory_budget: None,
            depth_dir: None,
            poses: None,
            output_dir: None,
        }
    }
}

impl Config {
    /// Effective 3D data weight: table value for the two tabulated voxel
    /// sizes, otherwise the 10 cm value unless overridden.
    pub fn effective_lambda_3d(&self) -> f64 {
        self.lambda_3d.unwrap_or_else(|| {
            if (self.voxel_size - 0.20).abs() < 1e-9 {
                0.4
            } else {
                0.8
            }
        })
    }

    /// Effective truncation distance: tabulated for 10/20 cm voxels,
    /// otherwise 10 voxels unless overridden.
    pub fn effective_mu_3d(&self) -> f64 {
        self.mu_3d.unwrap_or_else(|| {
            if (self.voxel_size - 0.20).abs() < 1e-9 {
                1.6
            } else if (self.voxel_size - 0.10).abs() < 1e-9 {
                1.0
            } else {
                10.0 * self.voxel_size
            }
        })
    }

    pub fn fusion_params(&self) -> FusionParams {
        FusionParams {
            mu: self.effective_mu_3d(),
            max_weight: self.max_weight,
            max_range: self.max_range,
        }
    }

    pub fn reg_params(&self) -> RegParams {
        RegParams {
            lambda: self.effective_lambda_3d(),
            sigma_p: self.sigma_p,
            tau: self.tau,
            theta: self.theta,
            iterations: self.iters_3d,
            ..Default::default()
        }
    }

    pub fn stereo_params(&self) -> StereoParams {
        StereoParams {
            lambda_2d: self.lambda_2d,
            alpha1: self.alpha1,
            alpha2: self.alpha2,
            beta: self.beta,
            gamma: self.gamma,
            census_window: self.census_window,
            d_min: self.d_min,
            d_max: self.d_max,
            iterations: self.iters_2d,
            ..Default::default()
        }
    }

    pub fn camera(&self) -> Result<CameraModel, FusionError> {
        CameraModel::new(
            self.fx,
            self.fy,
            self.cx,
            self.cy,
            self.width,
            self.height,
            self.baseline,
        )
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.voxel_size > 0.0) {
            return Err(ConfigError::Invalid(format!(
                "voxel_size must be positive, got {}",
                self.voxel_size
            )));
        }
        self.camera()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.fusion_params()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.stereo_params()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    /// Canonical key=value rendering; `parse(emit(c)) == c`.
    pub fn emit(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("voxel_size", self.voxel_size.to_string());
        if let Some(v) = self.lambda_3d {
            kv("lambda_3d", v.to_string());
        }
        if let Some(v) = self.mu_3d {
            kv("mu_3d", v.to_string());
        }
        kv("sigma_p", self.sigma_p.to_string());
        kv("tau", self.tau.to_string());
        kv("theta", self.theta.to_string());
        kv("iters_3d", self.iters_3d.to_string());
        kv("lambda_2d", self.lambda_2d.to_string());
        kv("alpha1", self.alpha1.to_string());
        kv("alpha2", self.alpha2.to_string());
        kv("beta", self.beta.to_string());
        kv("gamma", self.gamma.to_string());
        kv("iters_2d", self.iters_2d.to_string());
        kv("census_window", self.census_window.to_string());
        kv("d_min", self.d_min.to_string());
        kv("d_max", self.d_max.to_string());
        kv("max_weight", self.max_weight.to_string());
        kv("max_range", self.max_range.to_string());
        kv("min_weight", self.min_weight.to_string());
        kv("fx", self.fx.to_string());
        kv("fy", self.fy.to_string());
        kv("cx", self.cx.to_string());
        kv("cy", self.cy.to_string());
        kv("width", self.width.to_string());
        kv("height", self.height.to_string());
        kv("baseline", self.baseline.to_string());
        if let Some(v) = self.table_size {
            kv("table_size", v.to_string());
        }
        if let Some(v) = self.memory_budget {
            kv("memory_budget", v.to_string());
        }
        if let Some(v) = &self.depth_dir {
            kv("depth_dir", v.clone());
        }
        if let Some(v) = &self.poses {
            kv("poses", v.clone());
        }
        if let Some(v) = &self.output_dir {
            kv("output_dir", v.clone());
        }
        s
    }

    pub fn parse(text: &str) -> Result<Config, ConfigError> {
        let mut cfg = Config::default();
        for (i, raw) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::BadLine(lineno, raw.to_string()))?;
            let (key, value) = (key.trim(), value.trim());
            cfg.apply(key, value)
                .map_err(|msg| match msg {
                    ApplyError::Unknown => ConfigError::UnknownKey(lineno, key.to_string()),
                    ApplyError::Bad(e) => ConfigError::BadValue(lineno, key.to_string(), e),
                })?;
        }
        Ok(cfg)
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Config, ConfigError> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<(), ConfigError> {
        Ok(fs::write(path, self.emit())?)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<(), ApplyError> {
        fn num<T: std::str::FromStr>(v: &str) -> Result<T, ApplyError>
        where
            T::Err: std::fmt::Display,
        {
            v.parse().map_err(|e: T::Err| ApplyError::Bad(e.to_string()))
        }
        match key {
            "voxel_size" => self.voxel_size = num(value)?,
            "lambda_3d" => self.lambda_3d = Some(num(value)?),
            "mu_3d" => self.mu_3d = Some(num(value)?),
            "sigma_p" => self.sigma_p = num(value)?,
            "tau" => self.tau = num(value)?,
            "theta" => self.theta = num(value)?,
            "iters_3d" => self.iters_3d = num(value)?,
            "lambda_2d" => self.lambda_2d = num(value)?,
            "alpha1" => self.alpha1 = num(value)?,
            "alpha2" => self.alpha2 = num(value)?,
            "beta" => self.beta = num(value)?,
            "gamma" => self.gamma = num(value)?,
            "iters_2d" => self.iters_2d = num(value)?,
            "census_window" => self.census_window = num(value)?,
            "d_min" => self.d_min = num(value)?,
            "d_max" => self.d_max = num(value)?,
            "max_weight" => self.max_weight = num(value)?,
            "max_range" => self.max_range = num(value)?,
            "min_weight" => self.min_weight = num(value)?,
            "fx" => self.fx = num(value)?,
            "fy" => self.fy = num(value)?,
            "cx" => self.cx = num(value)?,
            "cy" => self.cy = num(value)?,
            "width" => self.width = num(value)?,
            "height" => self.height = num(value)?,
            "baseline" => self.baseline = num(value)?,
            "table_size" => self.table_size = Some(num(value)?),
            "memory_budget" => self.memory_budget = Some(num(value)?),
            "depth_dir" => self.depth_dir = Some(value.to_string()),
            "poses" => self.poses = Some(value.to_string()),
            "output_dir" => self.output_dir = Some(value.to_string()),
            _ => return Err(ApplyError::Unknown),
        }
        Ok(())
    }
}

enum ApplyError {
    Unknown,
    Bad(String),
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn defaults_follow_voxel_size_coupling() {
        let c = Config::default();
        assert_relative_eq!(c.effective_lambda_3d(), 0.8);
        assert_relative_eq!(c.effective_mu_3d(), 1.0);

        let c20 = Config {
            voxel_size: 0.20,
            ..Default::default()
        };
        assert_relative_eq!(c20.effective_lambda_3d(), 0.4);
        assert_relative_eq!(c20.effective_mu_3d(), 1.6);

        let with_override = Config {
            voxel_size: 0.20,
            lambda_3d: Some(0.55),
            ..Default::default()
        };
        assert_relative_eq!(with_override.effective_lambda_3d(), 0.55);
    }

    #[test]
    fn solver_defaults_match_parameter_table() {
        let c = Config::default();
        assert_relative_eq!(c.sigma_p, 0.5);
        assert_relative_eq!(c.theta, 1.0);
        assert_relative_eq!(c.tau, 1.0 / 6.0);
        assert_relative_eq!(c.lambda_2d, 0.5);
        assert_relative_eq!(c.alpha1, 1.0);
        assert_relative_eq!(c.alpha2, 5.0);
        assert_relative_eq!(c.beta, 1.0);
        assert_relative_eq!(c.gamma, 4.0);
    }

    #[test]
    fn round_trip_default_and_custom() {
        let c = Config::default();
        assert_eq!(Config::parse(&c.emit()).unwrap(), c);

        let custom = Config {
            voxel_size: 0.2,
            lambda_3d: Some(0.37),
            mu_3d: Some(2.0),
            iters_3d: 55,
            depth_dir: Some("data/depth".into()),
            memory_budget: Some(1 << 30),
            ..Default::default()
        };
        assert_eq!(Config::parse(&custom.emit()).unwrap(), custom);
    }

    #[test]
    fn errors_carry_line_numbers() {
        assert!(matches!(
            Config::parse("voxel_size = 0.1\nnot a line\n"),
            Err(ConfigError::BadLine(2, _))
        ));
        assert!(matches!(
            Config::parse("# comment\nvoxel_sizee = 0.1\n"),
            Err(ConfigError::UnknownKey(2, _))
        ));
        assert!(matches!(
            Config::parse("voxel_size = banana\n"),
            Err(ConfigError::BadValue(1, _, _))
        ));
    }

    #[test]
    fn validate_rejects_nonsense() {
        let bad = Config {
            voxel_size: -1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad_cam = Config {
            fx: 0.0,
            ..Default::default()
        };
        assert!(bad_cam.validate().is_err());
        assert!(Config::default().validate().is_ok());
    }

    proptest! {
        #[test]
        fn round_trip_random_numeric_fields(
            voxel_size in 0.01f64..0.5,
            iters in 0usize..500,
            lam in proptest::option::of(0.01f64..5.0),
            max_range in 1.0f64..100.0,
        ) {
            let c = Config {
                voxel_size,
                iters_3d: iters,
                lambda_3d: lam,
                max_range,
                ..Default::default()
            };
            prop_assert_eq!(Config::parse(&c.emit()).unwrap(), c);
        }
    }
}
