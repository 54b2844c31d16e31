//! Run configuration: flat `key=value` files, flag overrides, per-command
//! defaults, and the sorted manifest that makes every run replayable.
//!
//! Precedence is defaults < config file < command-line flags. The manifest
//! a run writes is itself a valid config file, so
//! `ulmc <command> --config <out>/manifest.txt` reproduces the run.

use std::fmt::Write as _;
use std::path::PathBuf;

use ulmc_core::model::{potential_from_id, stochastic_gradient_from_id, PotentialModel};
use ulmc_core::{Dynamics, Error as CoreError, IntegratorKind};

use crate::args::RunArgs;
use crate::error::CliError;
use crate::output::fmt_float;

/// Valid `diagnose` probe names, in display order.
pub const KNOWN_PROBES: [&str; 7] =
    ["lyapunov", "moments", "tangent", "tangent-coupling", "coupling", "kolmogorov", "poisson"];

/// Desk-scale sweep horizon; `--full-scale` switches to the long run.
pub const DESK_TOTAL_TIME: f64 = 1e5;
pub const FULL_TOTAL_TIME: f64 = 1e7;

/// Fully-resolved settings for one command invocation.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub command: String,
    pub probe: Option<String>,
    pub model: String,
    pub integrators: Vec<IntegratorKind>,
    pub gamma: f64,
    pub h: Vec<f64>,
    pub total_time: f64,
    pub trajectories: usize,
    pub r: u32,
    pub seed: u64,
    pub f: String,
    pub out: Option<PathBuf>,
    pub workers: usize,
    pub full_scale: bool,
    /// Step cap handed to the sweep; steps above it are config errors.
    pub h_max: f64,
    pub burn_in: f64,
    pub n_mc: usize,
    pub n_max: usize,
    pub h_mc: f64,
    pub points: Vec<(f64, f64)>,
    pub band: Option<(f64, f64)>,
    pub x0: Vec<f64>,
    pub v0: Vec<f64>,
    pub t_grid: Vec<f64>,
}

/// Settings gathered so far; `None` means "use the default".
#[derive(Clone, Debug, Default)]
pub struct Partial {
    pub command: Option<String>,
    pub probe: Option<String>,
    pub model: Option<String>,
    pub integrator: Option<String>,
    pub gamma: Option<f64>,
    pub h: Option<Vec<f64>>,
    pub total_time: Option<f64>,
    pub trajectories: Option<usize>,
    pub r: Option<u32>,
    pub seed: Option<u64>,
    pub f: Option<String>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub full_scale: Option<bool>,
    pub h_max: Option<f64>,
    pub burn_in: Option<f64>,
    pub n_mc: Option<usize>,
    pub n_max: Option<usize>,
    pub h_mc: Option<f64>,
    pub points: Option<Vec<(f64, f64)>>,
    pub band: Option<(f64, f64)>,
    pub x0: Option<Vec<f64>>,
    pub v0: Option<Vec<f64>>,
    pub t_grid: Option<Vec<f64>>,
}

fn bad_key(key: &str, detail: String) -> CliError {
    CliError::Config(format!("config key '{key}': {detail}"))
}

fn parse_f64(key: &str, value: &str) -> Result<f64, CliError> {
    value
        .trim()
        .parse()
        .map_err(|_| bad_key(key, format!("expected a number, got '{}'", value.trim())))
}

fn parse_usize(key: &str, value: &str) -> Result<usize, CliError> {
    value
        .trim()
        .parse()
        .map_err(|_| bad_key(key, format!("expected a non-negative integer, got '{}'", value.trim())))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, CliError> {
    match value.trim() {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(bad_key(key, format!("expected true or false, got '{other}'"))),
    }
}

/// One step token: a decimal or the dyadic shorthand `2^<exp>`.
pub fn parse_step_token(token: &str) -> Result<f64, CliError> {
    let tok = token.trim();
    let value = if let Some(exp) = tok.strip_prefix("2^") {
        let e: i32 = exp.parse().map_err(|_| {
            CliError::Config(format!("invalid step token '{tok}': bad exponent '{exp}'"))
        })?;
        2f64.powi(e)
    } else {
        tok.parse().map_err(|_| {
            CliError::Config(format!("invalid step token '{tok}'; use a decimal or 2^<exp>"))
        })?
    };
    if !(value > 0.0) || !value.is_finite() {
        return Err(CliError::Config(format!("invalid step token '{tok}': steps must be positive")));
    }
    Ok(value)
}

/// Comma list of step tokens.
pub fn parse_h_list(s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',').map(parse_step_token).collect()
}

fn parse_f64_list(key: &str, s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',').map(|tok| parse_f64(key, tok)).collect()
}

/// Semicolon list of `x:v` pairs.
pub fn parse_points(s: &str) -> Result<Vec<(f64, f64)>, CliError> {
    s.split(';')
        .map(|pair| {
            let (x, v) = pair.split_once(':').ok_or_else(|| {
                CliError::Config(format!("invalid point '{pair}'; expected x:v"))
            })?;
            Ok((parse_f64("points", x)?, parse_f64("points", v)?))
        })
        .collect()
}

fn parse_band(s: &str) -> Result<(f64, f64), CliError> {
    let (lo, hi) = s
        .split_once(',')
        .ok_or_else(|| CliError::Config(format!("invalid band '{s}'; expected lo,hi")))?;
    let (lo, hi) = (parse_f64("band", lo)?, parse_f64("band", hi)?);
    if !(lo <= hi) {
        return Err(CliError::Config(format!("invalid band '{s}': lo must not exceed hi")));
    }
    Ok((lo, hi))
}

impl Partial {
    /// Applies one `key=value` entry; unknown keys are config errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let value = value.trim();
        match key {
            "command" => self.command = Some(value.to_string()),
            "probe" => self.probe = Some(value.to_string()),
            "model" => self.model = Some(value.to_string()),
            "integrator" => self.integrator = Some(value.to_string()),
            "gamma" => self.gamma = Some(parse_f64(key, value)?),
            "h" => self.h = Some(parse_h_list(value)?),
            "total_time" => self.total_time = Some(parse_f64(key, value)?),
            "trajectories" => self.trajectories = Some(parse_usize(key, value)?),
            "r" => {
                self.r = Some(
                    value
                        .parse()
                        .map_err(|_| bad_key(key, format!("expected a small integer, got '{value}'")))?,
                )
            }
            "seed" => {
                self.seed = Some(
                    value
                        .parse()
                        .map_err(|_| bad_key(key, format!("expected an unsigned integer, got '{value}'")))?,
                )
            }
            "f" => self.f = Some(value.to_string()),
            "out" => self.out = Some(PathBuf::from(value)),
            "workers" => self.workers = Some(parse_usize(key, value)?),
            "full_scale" => self.full_scale = Some(parse_bool(key, value)?),
            "h_max" => self.h_max = Some(parse_f64(key, value)?),
            "burn_in" => self.burn_in = Some(parse_f64(key, value)?),
            "n_mc" => self.n_mc = Some(parse_usize(key, value)?),
            "n_max" => self.n_max = Some(parse_usize(key, value)?),
            "h_mc" => self.h_mc = Some(parse_f64(key, value)?),
            "points" => self.points = Some(parse_points(value)?),
            "band" => self.band = Some(parse_band(value)?),
            "x0" => self.x0 = Some(parse_f64_list(key, value)?),
            "v0" => self.v0 = Some(parse_f64_list(key, value)?),
            "t_grid" => self.t_grid = Some(parse_f64_list(key, value)?),
            "tool_version" => {} // informational echo in manifests
            other => {
                return Err(CliError::Config(format!(
                    "unknown config key '{other}'; see `ulmc <command> --help` for the key set"
                )))
            }
        }
        Ok(())
    }

    /// Parses a whole config file's text.
    pub fn from_text(text: &str) -> Result<Self, CliError> {
        let mut partial = Partial::default();
        for (index, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!("config line {}: expected key=value, got '{line}'", index + 1))
            })?;
            partial.set(key.trim(), value)?;
        }
        Ok(partial)
    }

    /// Lays flag values over this partial (flags win).
    pub fn apply_args(&mut self, args: &RunArgs) -> Result<(), CliError> {
        if let Some(v) = &args.model {
            self.model = Some(v.clone());
        }
        if let Some(v) = &args.integrator {
            self.integrator = Some(v.clone());
        }
        if let Some(v) = args.gamma {
            self.gamma = Some(v);
        }
        if let Some(v) = &args.h {
            self.h = Some(parse_h_list(v)?);
        }
        if let Some(v) = args.total_time {
            self.total_time = Some(v);
        }
        if let Some(v) = args.trajectories {
            self.trajectories = Some(v);
        }
        if let Some(v) = args.r {
            self.r = Some(v);
        }
        if let Some(v) = args.seed {
            self.seed = Some(v);
        }
        if let Some(v) = &args.f {
            self.f = Some(v.clone());
        }
        if let Some(v) = &args.out {
            self.out = Some(v.clone());
        }
        if let Some(v) = args.workers {
            self.workers = Some(v);
        }
        if args.full_scale {
            self.full_scale = Some(true);
        }
        if let Some(v) = args.h_max {
            self.h_max = Some(v);
        }
        if let Some(v) = args.burn_in {
            self.burn_in = Some(v);
        }
        if let Some(v) = args.n_mc {
            self.n_mc = Some(v);
        }
        if let Some(v) = args.n_max {
            self.n_max = Some(v);
        }
        if let Some(v) = &args.points {
            self.points = Some(parse_points(v)?);
        }
        if let Some(v) = &args.band {
            self.band = Some(parse_band(v)?);
        }
        if let Some(v) = &args.t_grid {
            self.t_grid = Some(parse_f64_list("t_grid", v)?);
        }
        Ok(())
    }
}

/// The potential behind a model id, falling back to the base of a
/// stochastic-gradient id.
pub fn resolve_potential(model_id: &str) -> Result<PotentialModel, CliError> {
    match potential_from_id(model_id) {
        Ok(model) => Ok(model),
        Err(CoreError::UnknownId { .. }) => match stochastic_gradient_from_id(model_id) {
            Ok(sg) => Ok(sg.base().clone()),
            Err(CoreError::UnknownId { .. }) => Err(CliError::Config(format!(
                "unknown model id '{model_id}'; known potentials: quadsine, quadratic:<k>[:<dim>], \
                 zero; known stochastic gradients: quadsine, minibatch-quadratic:<parts>,<batch>"
            ))),
            Err(other) => Err(other.into()),
        },
        Err(other) => Err(other.into()),
    }
}

/// The dynamics an integrator runs against: stochastic-gradient kinds need
/// the model id to resolve in the stochastic-gradient registry.
pub fn resolve_dynamics(model_id: &str, kind: IntegratorKind) -> Result<Dynamics, CliError> {
    if kind.uses_stochastic_gradient() {
        Ok(Dynamics::Stochastic(stochastic_gradient_from_id(model_id)?))
    } else {
        Ok(Dynamics::Full(resolve_potential(model_id)?))
    }
}

fn default_h(command: &str, probe: Option<&str>) -> Vec<f64> {
    match (command, probe) {
        ("sweep", _) => (1..=6).map(|j| 2f64.powi(-j)).collect(),
        ("strong-order", _) => (4..=8).map(|j| 2f64.powi(-j)).collect(),
        (_, Some("tangent" | "tangent-coupling" | "coupling")) => vec![0.02],
        _ => vec![0.25],
    }
}

fn default_total_time(command: &str, probe: Option<&str>, full_scale: bool) -> f64 {
    match (command, probe) {
        ("sweep", _) => {
            if full_scale {
                FULL_TOTAL_TIME
            } else {
                DESK_TOTAL_TIME
            }
        }
        ("strong-order", _) => 1.0,
        (_, Some("moments")) => 25_000.0,
        (_, Some("tangent" | "tangent-coupling" | "coupling")) => 20.0,
        _ => 20.0,
    }
}

fn default_gamma(probe: Option<&str>) -> f64 {
    // The tangent-family probes measure contraction, which needs stronger
    // damping than the sweep default on the nonlinear model.
    match probe {
        Some("tangent" | "tangent-coupling" | "coupling") => 3.0,
        _ => 2.0,
    }
}

fn default_integrator(command: &str) -> &'static str {
    match command {
        "sweep" => "em,ubu,sg-em,sg-ubu",
        "strong-order" => "em",
        _ => "ubu",
    }
}

fn default_trajectories(command: &str, probe: Option<&str>) -> usize {
    match (command, probe) {
        ("strong-order", _) => 1000,
        (_, Some("moments")) => 1000,
        _ => 100,
    }
}

fn default_points(probe: Option<&str>) -> Vec<(f64, f64)> {
    match probe {
        Some("poisson") => vec![(0.0, 0.0), (1.0, -1.0), (-2.0, 0.5)],
        Some("kolmogorov") => vec![(2.0, 0.0)],
        Some("tangent-coupling" | "coupling") => vec![(0.2, -0.3), (1.0, 0.5)],
        _ => Vec::new(),
    }
}

/// Resolves the partial into a full config for `command`, applying the
/// per-command defaults and validating registry ids.
pub fn resolve(command: &str, cli_probe: Option<&str>, partial: Partial) -> Result<RunConfig, CliError> {
    if let Some(file_command) = &partial.command {
        if file_command != command {
            return Err(CliError::Config(format!(
                "config file was written for command '{file_command}', but '{command}' was invoked"
            )));
        }
    }

    let probe = match (command, cli_probe, &partial.probe) {
        ("diagnose", Some(name), Some(file_name)) if name != file_name => {
            return Err(CliError::Config(format!(
                "config file names probe '{file_name}', but '{name}' was requested"
            )));
        }
        ("diagnose", Some(name), _) => Some(name.to_string()),
        ("diagnose", None, Some(file_name)) => Some(file_name.clone()),
        ("diagnose", None, None) => {
            return Err(CliError::Config(format!(
                "diagnose needs a probe name; valid probes: {}",
                KNOWN_PROBES.join(", ")
            )));
        }
        _ => None,
    };
    if let Some(name) = &probe {
        if !KNOWN_PROBES.contains(&name.as_str()) {
            return Err(CliError::Config(format!(
                "unknown probe '{name}'; valid probes: {}",
                KNOWN_PROBES.join(", ")
            )));
        }
    }
    let probe_str = probe.as_deref();

    let full_scale = partial.full_scale.unwrap_or(false);
    let model = partial.model.unwrap_or_else(|| "quadsine".to_string());
    let potential = resolve_potential(&model)?;
    let dim = potential.dim();

    let integrator_list = partial.integrator.unwrap_or_else(|| default_integrator(command).to_string());
    let mut integrators: Vec<IntegratorKind> = Vec::new();
    for id in integrator_list.split(',') {
        let kind = IntegratorKind::from_id(id.trim())?;
        if !integrators.contains(&kind) {
            integrators.push(kind);
        }
    }
    if command != "sweep" && integrators.len() > 1 {
        return Err(CliError::Config(format!(
            "{command} takes a single integrator, got '{integrator_list}'"
        )));
    }

    let broadcast = |key: &str, given: Option<Vec<f64>>, fill: f64| -> Result<Vec<f64>, CliError> {
        match given {
            None => Ok(vec![fill; dim]),
            Some(values) if values.len() == dim => Ok(values),
            Some(values) if values.len() == 1 => Ok(vec![values[0]; dim]),
            Some(values) => Err(CliError::Config(format!(
                "config key '{key}': {} components for a model of dimension {dim}",
                values.len()
            ))),
        }
    };

    let r = partial.r.unwrap_or(2);
    if r == 0 {
        return Err(CliError::Config("config key 'r': moment order must be at least 1".into()));
    }

    let config = RunConfig {
        command: command.to_string(),
        gamma: partial.gamma.unwrap_or_else(|| default_gamma(probe_str)),
        h: partial.h.unwrap_or_else(|| default_h(command, probe_str)),
        total_time: partial
            .total_time
            .unwrap_or_else(|| default_total_time(command, probe_str, full_scale)),
        trajectories: partial.trajectories.unwrap_or_else(|| default_trajectories(command, probe_str)),
        r,
        seed: partial.seed.unwrap_or(0),
        f: partial.f.unwrap_or_else(|| "x".to_string()),
        out: match (command, partial.out) {
            ("reference-mean", out) => out,
            (_, out) => Some(out.unwrap_or_else(|| PathBuf::from("ulmc-out"))),
        },
        workers: partial.workers.unwrap_or(0),
        full_scale,
        h_max: partial.h_max.unwrap_or(ulmc_core::integrators::DEFAULT_MAX_STEP),
        burn_in: partial.burn_in.unwrap_or(0.0),
        n_mc: partial.n_mc.unwrap_or(4000),
        n_max: partial.n_max.unwrap_or(80),
        h_mc: partial.h_mc.unwrap_or(0.031_25),
        points: partial.points.unwrap_or_else(|| default_points(probe_str)),
        band: partial.band,
        x0: broadcast("x0", partial.x0, 0.2)?,
        v0: broadcast("v0", partial.v0, -0.3)?,
        t_grid: partial.t_grid.unwrap_or_else(|| vec![0.0, 1.0, 2.0, 5.0, 10.0, 20.0]),
        model,
        integrators,
        probe,
    };
    Ok(config)
}

fn join_floats(values: &[f64]) -> String {
    values.iter().map(|&v| fmt_float(v)).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// The full resolved configuration as sorted `key=value` lines; valid
    /// input for `--config`.
    pub fn manifest(&self) -> String {
        let mut entries: Vec<(&str, String)> = vec![
            ("burn_in", fmt_float(self.burn_in)),
            ("command", self.command.clone()),
            ("f", self.f.clone()),
            ("full_scale", self.full_scale.to_string()),
            ("gamma", fmt_float(self.gamma)),
            ("h", join_floats(&self.h)),
            ("h_max", fmt_float(self.h_max)),
            ("h_mc", fmt_float(self.h_mc)),
            (
                "integrator",
                self.integrators.iter().map(|k| k.id()).collect::<Vec<_>>().join(","),
            ),
            ("model", self.model.clone()),
            ("n_max", self.n_max.to_string()),
            ("n_mc", self.n_mc.to_string()),
            ("r", self.r.to_string()),
            ("seed", self.seed.to_string()),
            ("t_grid", join_floats(&self.t_grid)),
            ("tool_version", env!("CARGO_PKG_VERSION").to_string()),
            ("total_time", fmt_float(self.total_time)),
            ("trajectories", self.trajectories.to_string()),
            ("v0", join_floats(&self.v0)),
            ("workers", self.workers.to_string()),
            ("x0", join_floats(&self.x0)),
        ];
        if let Some((lo, hi)) = self.band {
            entries.push(("band", format!("{},{}", fmt_float(lo), fmt_float(hi))));
        }
        if let Some(out) = &self.out {
            entries.push(("out", out.display().to_string()));
        }
        if !self.points.is_empty() {
            let points = self
                .points
                .iter()
                .map(|&(x, v)| format!("{}:{}", fmt_float(x), fmt_float(v)))
                .collect::<Vec<_>>()
                .join(";");
            entries.push(("points", points));
        }
        if let Some(probe) = &self.probe {
            entries.push(("probe", probe.clone()));
        }
        entries.sort_by_key(|(key, _)| *key);
        let mut text = String::new();
        for (key, value) in entries {
            let _ = writeln!(text, "{key}={value}");
        }
        text
    }
}
