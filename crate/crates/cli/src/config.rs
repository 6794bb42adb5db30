//! Flat `key = value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Keys may contain dots
//! (`grid.n`) but there is no nesting. Unknown keys are rejected so typos do
//! not silently fall back to defaults.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("duplicate key `{0}`")]
    DuplicateKey(String),
    #[error("missing required key `{0}`")]
    Missing(&'static str),
    #[error("key `{key}`: {message}")]
    Value { key: String, message: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Experiment {
    Conservation,
    Monotonicity,
    LocalDecay,
    Pseudoconformal,
    LinfDecay,
    Dispersive,
    Completeness,
    WaveOperator,
    IdentitySuite,
}

impl Experiment {
    pub const ALL: [Experiment; 9] = [
        Experiment::Conservation,
        Experiment::Monotonicity,
        Experiment::LocalDecay,
        Experiment::Pseudoconformal,
        Experiment::LinfDecay,
        Experiment::Dispersive,
        Experiment::Completeness,
        Experiment::WaveOperator,
        Experiment::IdentitySuite,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Conservation => "conservation",
            Experiment::Monotonicity => "monotonicity",
            Experiment::LocalDecay => "local-decay",
            Experiment::Pseudoconformal => "pseudoconformal",
            Experiment::LinfDecay => "linf-decay",
            Experiment::Dispersive => "dispersive",
            Experiment::Completeness => "completeness",
            Experiment::WaveOperator => "wave-operator",
            Experiment::IdentitySuite => "identity-suite",
        }
    }
}

impl FromStr for Experiment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Experiment::ALL.iter().map(|e| e.name()).collect();
                format!("unknown experiment `{s}`, expected one of {}", names.join(", "))
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModeChoice {
    Nonlinear,
    LinearWithV,
    Free,
}

impl FromStr for ModeChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "nonlinear" => Ok(ModeChoice::Nonlinear),
            "linear_with_V" => Ok(ModeChoice::LinearWithV),
            "free" => Ok(ModeChoice::Free),
            _ => Err(format!("unknown mode `{s}`, expected nonlinear, linear_with_V or free")),
        }
    }
}

impl fmt::Display for ModeChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModeChoice::Nonlinear => "nonlinear",
            ModeChoice::LinearWithV => "linear_with_V",
            ModeChoice::Free => "free",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum InitialData {
    Gaussian {
        center: f64,
        width: f64,
        momentum: f64,
        amplitude: f64,
    },
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub mass: f64,
    pub lambda: f64,
    pub p: f64,
    pub mode: ModeChoice,
    pub grid_n: usize,
    pub r_star_min: f64,
    pub r_star_max: f64,
    /// `None` selects the Nyquist rule `h^2 / (4 pi)`.
    pub dt: Option<f64>,
    pub t_end: f64,
    pub record_interval: f64,
    pub sigma: f64,
    pub beta: f64,
    pub window: f64,
    pub initial_data: InitialData,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub override_domain_guard: bool,
    pub absorber: Option<(f64, f64)>,
    pub schedule: Vec<f64>,
    pub wave_op_t: f64,
    pub wave_op_t_max: f64,
    pub wave_op_stride: usize,
    pub wave_op_max_iters: usize,
    pub wave_op_tol: f64,
    /// Slope-fit window for the decay experiments; per-experiment defaults when unset.
    pub fit_t_min: Option<f64>,
    pub fit_t_max: Option<f64>,
}

const KEYS: &[&str] = &[
    "experiment",
    "M",
    "lambda",
    "p",
    "mode",
    "grid.n",
    "grid.r_star_min",
    "grid.r_star_max",
    "dt",
    "t_end",
    "record_interval",
    "sigma",
    "beta",
    "R",
    "initial_data",
    "initial_data.center",
    "initial_data.width",
    "initial_data.momentum",
    "initial_data.amplitude",
    "initial_data.path",
    "output_dir",
    "seed",
    "override_domain_guard",
    "absorber.width",
    "absorber.strength",
    "schedule",
    "wave_op.T",
    "wave_op.t_max",
    "wave_op.stride",
    "wave_op.max_iters",
    "wave_op.tol",
    "fit.t_min",
    "fit.t_max",
];

struct Raw {
    map: BTreeMap<String, String>,
}

impl Raw {
    fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    fn parse<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: fmt::Display,
    {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse::<T>().map_err(|e| ConfigError::Value {
                key: key.to_string(),
                message: format!("`{v}`: {e}"),
            }),
        }
    }

    fn real(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        let v = self.parse(key, default)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(value_error(key, "must be finite"))
        }
    }
}

fn value_error(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Value {
        key: key.to_string(),
        message: message.into(),
    }
}

fn parse_list(key: &str, s: &str) -> Result<Vec<f64>, ConfigError> {
    s.split(',')
        .map(|x| {
            x.trim()
                .parse::<f64>()
                .map_err(|e| value_error(key, format!("`{x}`: {e}")))
        })
        .collect()
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(ConfigError::Syntax {
                    line: i + 1,
                    message: "empty key".into(),
                });
            }
            if !KEYS.contains(&k) {
                return Err(ConfigError::UnknownKey(k.to_string()));
            }
            if map.insert(k.to_string(), v.to_string()).is_some() {
                return Err(ConfigError::DuplicateKey(k.to_string()));
            }
        }
        let raw = Raw { map };

        let experiment: Experiment = raw
            .get("experiment")
            .ok_or(ConfigError::Missing("experiment"))?
            .parse()
            .map_err(|e| value_error("experiment", e))?;
        let initial_data = match raw.get("initial_data").unwrap_or("gaussian") {
            "gaussian" => {
                if raw.get("initial_data.path").is_some() {
                    return Err(value_error("initial_data.path", "only valid with initial_data = file"));
                }
                InitialData::Gaussian {
                    center: raw.real("initial_data.center", 0.0)?,
                    width: raw.real("initial_data.width", 1.0)?,
                    momentum: raw.real("initial_data.momentum", 0.0)?,
                    amplitude: raw.real("initial_data.amplitude", 1.0)?,
                }
            }
            "file" => InitialData::File(PathBuf::from(
                raw.get("initial_data.path").ok_or(ConfigError::Missing("initial_data.path"))?,
            )),
            other => return Err(value_error("initial_data", format!("`{other}`, expected gaussian or file"))),
        };
        let dt = match raw.get("dt") {
            None | Some("auto") => None,
            Some(_) => Some(raw.real("dt", 0.0)?),
        };
        let absorber = match (raw.get("absorber.width"), raw.get("absorber.strength")) {
            (None, None) => None,
            (Some(_), Some(_)) => Some((raw.real("absorber.width", 0.0)?, raw.real("absorber.strength", 0.0)?)),
            _ => return Err(value_error("absorber", "absorber.width and absorber.strength go together")),
        };
        let schedule = match raw.get("schedule") {
            None => vec![5.0, 10.0, 20.0, 40.0],
            Some(s) => parse_list("schedule", s)?,
        };
        let sigma = raw.real("sigma", 1.0)?;
        let cfg = ExperimentConfig {
            experiment,
            mass: raw.real("M", 1.0)?,
            lambda: raw.real("lambda", 1.0)?,
            p: raw.real("p", 5.0)?,
            mode: raw.parse("mode", ModeChoice::Nonlinear)?,
            grid_n: raw.parse("grid.n", 4096usize)?,
            r_star_min: raw.real("grid.r_star_min", -256.0)?,
            r_star_max: raw.real("grid.r_star_max", 256.0)?,
            dt,
            t_end: raw.real("t_end", 10.0)?,
            record_interval: raw.real("record_interval", 0.1)?,
            sigma,
            beta: raw.real("beta", sigma + 1.0)?,
            window: raw.real("R", 10.0)?,
            initial_data,
            output_dir: PathBuf::from(raw.get("output_dir").unwrap_or("out")),
            seed: raw.parse("seed", 0u64)?,
            override_domain_guard: raw.parse("override_domain_guard", false)?,
            absorber,
            schedule,
            wave_op_t: raw.real("wave_op.T", 20.0)?,
            wave_op_t_max: raw.real("wave_op.t_max", 60.0)?,
            wave_op_stride: raw.parse("wave_op.stride", 100usize)?,
            wave_op_max_iters: raw.parse("wave_op.max_iters", 20usize)?,
            wave_op_tol: raw.real("wave_op.tol", 1e-7)?,
            fit_t_min: raw.get("fit.t_min").map(|_| raw.real("fit.t_min", 0.0)).transpose()?,
            fit_t_max: raw.get("fit.t_max").map(|_| raw.real("fit.t_max", 0.0)).transpose()?,
        };
        cfg.check()?;
        Ok(cfg)
    }

    /// Range checks that need no grid.
    fn check(&self) -> Result<(), ConfigError> {
        if let Some(dt) = self.dt {
            if !(dt > 0.0) {
                return Err(value_error("dt", "must be positive"));
            }
        }
        if !(self.t_end >= 0.0) {
            return Err(value_error("t_end", "must be nonnegative"));
        }
        if !(self.record_interval > 0.0) {
            return Err(value_error("record_interval", "must be positive"));
        }
        if let Some((w, s)) = self.absorber {
            if !(w > 0.0 && s >= 0.0) {
                return Err(value_error("absorber", "width must be positive and strength nonnegative"));
            }
        }
        if self.lambda != 0.0 && self.mode != ModeChoice::Nonlinear {
            return Err(value_error("lambda", format!("must be 0 for mode = {}", self.mode)));
        }
        Ok(())
    }

    /// Every setting, defaults included, as `key = value` lines in a fixed order.
    pub fn resolved_lines(&self) -> Vec<String> {
        let mut out = vec![
            format!("experiment = {}", self.experiment.name()),
            format!("M = {}", self.mass),
            format!("lambda = {}", self.lambda),
            format!("p = {}", self.p),
            format!("mode = {}", self.mode),
            format!("grid.n = {}", self.grid_n),
            format!("grid.r_star_min = {}", self.r_star_min),
            format!("grid.r_star_max = {}", self.r_star_max),
            format!("dt = {}", self.dt.map_or("auto".to_string(), |d| d.to_string())),
            format!("t_end = {}", self.t_end),
            format!("record_interval = {}", self.record_interval),
            format!("sigma = {}", self.sigma),
            format!("beta = {}", self.beta),
            format!("R = {}", self.window),
        ];
        match &self.initial_data {
            InitialData::Gaussian {
                center,
                width,
                momentum,
                amplitude,
            } => {
                out.push("initial_data = gaussian".into());
                out.push(format!("initial_data.center = {center}"));
                out.push(format!("initial_data.width = {width}"));
                out.push(format!("initial_data.momentum = {momentum}"));
                out.push(format!("initial_data.amplitude = {amplitude}"));
            }
            InitialData::File(path) => {
                out.push("initial_data = file".into());
                out.push(format!("initial_data.path = {}", path.display()));
            }
        }
        out.push(format!("output_dir = {}", self.output_dir.display()));
        out.push(format!("seed = {}", self.seed));
        out.push(format!("override_domain_guard = {}", self.override_domain_guard));
        if let Some((w, s)) = self.absorber {
            out.push(format!("absorber.width = {w}"));
            out.push(format!("absorber.strength = {s}"));
        }
        let sched: Vec<String> = self.schedule.iter().map(|t| t.to_string()).collect();
        out.push(format!("schedule = {}", sched.join(", ")));
        out.push(format!("wave_op.T = {}", self.wave_op_t));
        out.push(format!("wave_op.t_max = {}", self.wave_op_t_max));
        out.push(format!("wave_op.stride = {}", self.wave_op_stride));
        out.push(format!("wave_op.max_iters = {}", self.wave_op_max_iters));
        out.push(format!("wave_op.tol = {}", self.wave_op_tol));
        if let Some(t) = self.fit_t_min {
            out.push(format!("fit.t_min = {t}"));
        }
        if let Some(t) = self.fit_t_max {
            out.push(format!("fit.t_max = {t}"));
        }
        out
    }
}
