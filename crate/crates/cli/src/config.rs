//! Run configuration from a flat, dotted-key TOML document.
//!
//! Keys may be written flat (`bounds.v_max_kmh = 12`) or grouped under
//! table headers (`[bounds]` then `v_max_kmh = 12`); both name the same key.
//! Unknown keys are rejected. Velocities ending in `_kmh` are divided by 3.6;
//! giving the same velocity in both units is an error.
//!
//! | key | meaning |
//! |-----|---------|
//! | `preset` | base parameter set (`paper-vii-a`, `paper-vii-b`, `paper-viii`) |
//! | `objective` | `min_time`, `min_distance` or `max_accuracy` |
//! | `grid.ts`, `grid.n` | sample time (s) and horizon (samples) |
//! | `actuator.p` | actuator pole in `[0, 1)` |
//! | `bounds.a_min`, `bounds.a_max` | acceleration limits (m/s^2) |
//! | `bounds.v_min[_kmh]`, `bounds.v_max[_kmh]` | velocity limits |
//! | `bounds.u_min`, `bounds.u_max` | input limits, default to the acceleration limits |
//! | `bounds.d_max` | distance budget (m) |
//! | `bounds.segments.<i>.from_distance` and `.a_min`, `.a_max`, `.v_min[_kmh]`, `.v_max[_kmh]` | overrides after a distance |
//! | `initial.v0[_kmh]` | initial velocity, defaults to `v_min` |
//! | `target.r_designed` or `target.gamma_acc` | quality requirement |
//! | `target.alpha`, `target.n_params`, `target.chi2` | confidence level and its chi-square value |
//! | `target.m_nominal`, `target.sigma_e` or `target.sigma_e2` | prior mass and force noise |
//! | `solver.mode` | `auto`, `certified` or `parameterized` |
//! | `solver.tol`, `solver.node_budget`, `solver.max_n`, `solver.feas_tol` | certified solver settings |
//! | `solver.v_points`, `solver.starts`, `solver.sweeps`, `solver.initial_step` | parameterized search settings |
//! | `sim.m_true`, `sim.delta_true`, `sim.sigma_e`, `sim.sigma_a_meas`, `sim.trials`, `sim.seed` | synthetic experiments |

use std::fmt;
use std::str::FromStr;

use massdesign::estimator::{chi2_percentile, r_designed_from_accuracy, QualityTarget};
use massdesign::problem::{BoundSegment, Bounds, DesignProblem, Objective};
use massdesign::sim::{preset, SimConfig};
use massdesign::solver::{ParamSearch, SolverSettings};
use massdesign::dynamics::{ActuatorModel, SamplingGrid};

/// Which solver family `design` uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverMode {
    /// Certified when the horizon fits under `solver.max_n`, parameterized otherwise.
    Auto,
    Certified,
    Parameterized,
}

impl FromStr for SolverMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "auto" => Ok(Self::Auto),
            "certified" => Ok(Self::Certified),
            "parameterized" => Ok(Self::Parameterized),
            _ => Err(format!("unknown solver mode {s:?}; expected auto, certified or parameterized")),
        }
    }
}

/// Everything a subcommand may need.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub problem: DesignProblem,
    pub settings: SolverSettings,
    pub search: ParamSearch,
    pub mode: SolverMode,
    /// Threshold values scanned by the parameterized templates.
    pub v_points: usize,
    pub sim: SimConfig,
}

/// A configuration problem, with the 1-based line when it can be located.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub key: Option<String>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.line, &self.key) {
            (Some(l), Some(k)) => write!(f, "line {l}: {k}: {}", self.message),
            (Some(l), None) => write!(f, "line {l}: {}", self.message),
            (None, Some(k)) => write!(f, "{k}: {}", self.message),
            (None, None) => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<(String, toml::Value)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            toml::Value::Table(t) => flatten(&key, t, out),
            other => out.push((key, other.clone())),
        }
    }
}

/// 1-based line on which a flattened key is assigned.
fn locate(text: &str, key: &str) -> Option<usize> {
    let mut section = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if let Some(h) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = h.trim().to_string();
            continue;
        }
        if let Some((k, _)) = line.split_once('=') {
            let k: String = k.trim().split('.').map(|p| p.trim().trim_matches('"')).collect::<Vec<_>>().join(".");
            let full = if section.is_empty() { k } else { format!("{section}.{k}") };
            if full == key {
                return Some(i + 1);
            }
        }
    }
    None
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

struct Ctx<'a> {
    text: &'a str,
}

impl Ctx<'_> {
    fn err(&self, key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError {
            line: locate(self.text, key),
            key: Some(key.to_string()),
            message: message.into(),
        }
    }

    fn num(&self, key: &str, v: &toml::Value) -> Result<f64, ConfigError> {
        match v {
            toml::Value::Float(x) => Ok(*x),
            toml::Value::Integer(i) => Ok(*i as f64),
            _ => Err(self.err(key, format!("expected a number, got {}", v.type_str()))),
        }
    }

    fn count(&self, key: &str, v: &toml::Value) -> Result<usize, ConfigError> {
        match v {
            toml::Value::Integer(i) if *i >= 0 => Ok(*i as usize),
            _ => Err(self.err(key, format!("expected a non-negative integer, got {v}"))),
        }
    }

    fn string<'v>(&self, key: &str, v: &'v toml::Value) -> Result<&'v str, ConfigError> {
        v.as_str().ok_or_else(|| self.err(key, format!("expected a string, got {}", v.type_str())))
    }
}

/// Velocity given in one of two units.
#[derive(Default)]
struct Speed {
    ms: Option<(f64, String)>,
    kmh: Option<(f64, String)>,
}

impl Speed {
    fn resolve(&self, ctx: &Ctx) -> Result<Option<f64>, ConfigError> {
        match (&self.ms, &self.kmh) {
            (Some(_), Some((_, k))) => Err(ctx.err(k, "velocity given in both m/s and km/h")),
            (Some((x, _)), None) => Ok(Some(*x)),
            (None, Some((x, _))) => Ok(Some(x / 3.6)),
            (None, None) => Ok(None),
        }
    }
}

#[derive(Default)]
struct SegmentKeys {
    from_distance: Option<f64>,
    a_min: Option<f64>,
    a_max: Option<f64>,
    v_min: Speed,
    v_max: Speed,
}

/// Parse a configuration document. `preset_override` replaces the
/// document's `preset` key when given.
pub fn parse_config(text: &str, preset_override: Option<&str>) -> Result<RunConfig, ConfigError> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError {
        line: e.span().map(|s| line_of_offset(text, s.start)),
        key: None,
        message: e.message().trim().to_string(),
    })?;
    let mut entries = Vec::new();
    flatten("", &table, &mut entries);
    let ctx = Ctx { text };

    let preset_name = match preset_override {
        Some(p) => p.to_string(),
        None => match entries.iter().find(|(k, _)| k == "preset") {
            Some((k, v)) => ctx.string(k, v)?.to_string(),
            None => "paper-vii-a".to_string(),
        },
    };
    let base = preset(&preset_name).map_err(|e| ConfigError {
        line: locate(text, "preset"),
        key: Some("preset".into()),
        message: e.to_string(),
    })?;
    let p = &base.problem;
    let mut objective = p.objective;
    let (mut ts, mut n, mut pole) = (p.grid.ts, p.grid.n, p.actuator.p);
    let (mut a_min, mut a_max) = (p.bounds.a_min, p.bounds.a_max);
    let (mut u_min, mut u_max) = (None, None);
    let mut d_max = p.bounds.d_max;
    let (mut v_min, mut v_max, mut v0) = (Speed::default(), Speed::default(), Speed::default());
    let mut segments: std::collections::BTreeMap<usize, SegmentKeys> = Default::default();
    let mut t = p.target;
    let (mut r_set, mut gamma, mut chi2_set, mut chi2_stale) = (None, None, None, false);
    let mut sigma_e = Speed::default(); // reused as "std or variance" pair below
    let mut settings = SolverSettings::default();
    let mut search = ParamSearch::default();
    let mut mode = SolverMode::Auto;
    let mut v_points = 12;
    let mut sim = base.sim;

    for (key, v) in &entries {
        let k = key.as_str();
        match k {
            "preset" => {}
            "objective" => {
                objective = Objective::from_str(ctx.string(k, v)?).map_err(|e| ctx.err(k, e.to_string()))?;
            }
            "grid.ts" => ts = ctx.num(k, v)?,
            "grid.n" => n = ctx.count(k, v)?,
            "actuator.p" => pole = ctx.num(k, v)?,
            "bounds.a_min" => a_min = ctx.num(k, v)?,
            "bounds.a_max" => a_max = ctx.num(k, v)?,
            "bounds.u_min" => u_min = Some(ctx.num(k, v)?),
            "bounds.u_max" => u_max = Some(ctx.num(k, v)?),
            "bounds.d_max" => d_max = Some(ctx.num(k, v)?),
            "bounds.v_min" => v_min.ms = Some((ctx.num(k, v)?, key.clone())),
            "bounds.v_min_kmh" => v_min.kmh = Some((ctx.num(k, v)?, key.clone())),
            "bounds.v_max" => v_max.ms = Some((ctx.num(k, v)?, key.clone())),
            "bounds.v_max_kmh" => v_max.kmh = Some((ctx.num(k, v)?, key.clone())),
            "initial.v0" => v0.ms = Some((ctx.num(k, v)?, key.clone())),
            "initial.v0_kmh" => v0.kmh = Some((ctx.num(k, v)?, key.clone())),
            "target.r_designed" => r_set = Some(ctx.num(k, v)?),
            "target.gamma_acc" => gamma = Some(ctx.num(k, v)?),
            "target.alpha" => {
                t.alpha = ctx.num(k, v)?;
                chi2_stale = true;
            }
            "target.n_params" => {
                t.n_params = ctx.count(k, v)?;
                chi2_stale = true;
            }
            "target.chi2" => chi2_set = Some(ctx.num(k, v)?),
            "target.m_nominal" => t.m_nominal = ctx.num(k, v)?,
            "target.sigma_e" => sigma_e.ms = Some((ctx.num(k, v)?, key.clone())),
            "target.sigma_e2" => sigma_e.kmh = Some((ctx.num(k, v)?, key.clone())),
            "solver.mode" => mode = ctx.string(k, v)?.parse().map_err(|e: String| ctx.err(k, e))?,
            "solver.tol" => settings.tol = ctx.num(k, v)?,
            "solver.node_budget" => settings.node_budget = ctx.count(k, v)?,
            "solver.max_n" => settings.max_n = ctx.count(k, v)?,
            "solver.feas_tol" => {
                settings.feas_tol = ctx.num(k, v)?;
                search.feas_tol = settings.feas_tol;
            }
            "solver.v_points" => v_points = ctx.count(k, v)?,
            "solver.starts" => search.starts = ctx.count(k, v)?,
            "solver.sweeps" => search.max_sweeps = ctx.count(k, v)?,
            "solver.initial_step" => search.initial_step = ctx.count(k, v)?,
            "sim.m_true" => sim.m_true = ctx.num(k, v)?,
            "sim.delta_true" => sim.delta_true = ctx.num(k, v)?,
            "sim.sigma_e" => sim.sigma_e = ctx.num(k, v)?,
            "sim.sigma_a_meas" => sim.sigma_a_meas = ctx.num(k, v)?,
            "sim.trials" => sim.trials = ctx.count(k, v)?,
            "sim.seed" => sim.seed = ctx.count(k, v)? as u64,
            _ => {
                let parts: Vec<&str> = k.split('.').collect();
                let seg = match parts.as_slice() {
                    ["bounds", "segments", i, field] => i.parse::<usize>().ok().map(|i| (i, *field)),
                    _ => None,
                };
                let Some((i, field)) = seg else {
                    return Err(ctx.err(k, "unknown key"));
                };
                let s = segments.entry(i).or_default();
                let x = ctx.num(k, v)?;
                match field {
                    "from_distance" => s.from_distance = Some(x),
                    "a_min" => s.a_min = Some(x),
                    "a_max" => s.a_max = Some(x),
                    "v_min" => s.v_min.ms = Some((x, key.clone())),
                    "v_min_kmh" => s.v_min.kmh = Some((x, key.clone())),
                    "v_max" => s.v_max.ms = Some((x, key.clone())),
                    "v_max_kmh" => s.v_max.kmh = Some((x, key.clone())),
                    _ => return Err(ctx.err(k, "unknown key")),
                }
            }
        }
    }

    let invalid = |key: &str, e: massdesign::Error| ctx.err(key, e.to_string());
    let v_min_val = v_min.resolve(&ctx)?.unwrap_or(p.bounds.v_min);
    let v_max_val = v_max.resolve(&ctx)?.unwrap_or(p.bounds.v_max);
    let v0_val = v0.resolve(&ctx)?.unwrap_or(v_min_val);
    let mut bounds = Bounds::new(a_min, a_max, v_min_val, v_max_val).map_err(|e| invalid("bounds", e))?;
    bounds = bounds.with_input_limits(u_min.unwrap_or(a_min), u_max.unwrap_or(a_max));
    if let Some(d) = d_max {
        bounds = bounds.with_d_max(d);
    }
    let mut segs = Vec::new();
    for (i, s) in segments {
        let key = format!("bounds.segments.{i}.from_distance");
        let from = s.from_distance.ok_or_else(|| ctx.err(&key, "missing"))?;
        segs.push(BoundSegment {
            from_distance: from,
            a_min: s.a_min,
            a_max: s.a_max,
            v_min: s.v_min.resolve(&ctx)?,
            v_max: s.v_max.resolve(&ctx)?,
        });
    }
    if !segs.is_empty() {
        bounds = bounds.with_segments(segs);
    }

    if let (Some((x, _)), None) = (&sigma_e.ms, &sigma_e.kmh) {
        t.sigma_e2 = x * x;
    } else if let (None, Some((x, _))) = (&sigma_e.ms, &sigma_e.kmh) {
        t.sigma_e2 = *x;
    } else if let (Some(_), Some((_, k))) = (&sigma_e.ms, &sigma_e.kmh) {
        return Err(ctx.err(k, "noise given both as sigma_e and sigma_e2"));
    }
    if let Some(c) = chi2_set {
        t.chi2 = c;
    } else if chi2_stale {
        t.chi2 = chi2_percentile(t.alpha, t.n_params).map_err(|e| invalid("target.alpha", e))?;
    }
    t.gamma_acc = gamma;
    t.r_designed = match (r_set, gamma) {
        (Some(r), _) => r,
        (None, Some(_)) => r_designed_from_accuracy(&t).map_err(|e| invalid("target.gamma_acc", e))?,
        (None, None) => t.r_designed,
    };
    QualityTarget::validate(&t).map_err(|e| invalid("target", e))?;

    let grid = SamplingGrid::new(ts, n).map_err(|e| invalid("grid", e))?;
    let actuator = ActuatorModel::new(pole).map_err(|e| invalid("actuator.p", e))?;
    let problem = DesignProblem::new(objective, grid, actuator, bounds, t, v0_val).map_err(|e| invalid("initial.v0", e))?;
    sim.validate().map_err(|e| invalid("sim", e))?;
    Ok(RunConfig {
        problem,
        settings,
        search,
        mode,
        v_points,
        sim,
    })
}
