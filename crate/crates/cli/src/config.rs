//! Flat `key = value` experiment and scenario files.
//!
//! One assignment per line, `#` starts a comment, lists are comma separated.
//! Every error carries the 1-based line number it was found on.

use std::path::{Path, PathBuf};

use ssc_mpc::model::{AgentState, RoadGeometry};
use ssc_mpc::ocp::ControllerMode;
use ssc_mpc::sim::{LaneChange, PhaseProbabilities, ScenarioConfig, TvSpec};
use ssc_mpc::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum ScenarioChoice {
    Table1,
    Random,
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub scenario: ScenarioChoice,
    pub mode: ControllerMode,
    pub beta_ta: Vec<f64>,
    pub beta_ex: Vec<f64>,
    pub runs: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub n_steps: usize,
    /// Phase-2 maneuver probabilities.
    pub probabilities: PhaseProbabilities,
    pub lambda_slack: f64,
    pub beta_ex_recovery: f64,
    pub horizon: usize,
    pub k_ex: Option<usize>,
    /// Step at which TV4 of the fixed scenario starts its lane change.
    pub tv4_lane_change_step: usize,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            scenario: ScenarioChoice::Table1,
            mode: ControllerMode::Ssc,
            beta_ta: vec![0.99, 0.95, 0.89, 0.83],
            beta_ex: vec![0.8],
            runs: 150,
            seed: 0,
            out: PathBuf::from("results"),
            n_steps: 100,
            probabilities: PhaseProbabilities {
                p_lc: 0.2,
                p_acc: 0.1,
                p_brk: 0.1,
            },
            lambda_slack: 50.0,
            beta_ex_recovery: 0.995,
            horizon: 12,
            k_ex: None,
            tv4_lane_change_step: 1,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.beta_ta.is_empty() || self.beta_ex.is_empty() {
            return Err(Error::Config("risk sweeps must not be empty".into()));
        }
        if let Some(b) = self.beta_ta.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::Config(format!("beta_ta = {b} not in (0, 1)")));
        }
        if let Some(b) = self.beta_ex.iter().find(|b| !(0.5..1.0).contains(*b)) {
            return Err(Error::Config(format!("beta_ex = {b} not in [0.5, 1)")));
        }
        if !(0.5..1.0).contains(&self.beta_ex_recovery) {
            return Err(Error::Config(format!(
                "beta_ex_recovery = {} not in [0.5, 1)",
                self.beta_ex_recovery
            )));
        }
        if self.runs == 0 || self.n_steps == 0 || self.horizon == 0 || self.tv4_lane_change_step == 0 {
            return Err(Error::Config("runs, n_steps, horizon and tv4_lane_change_step must be positive".into()));
        }
        if self.k_ex == Some(0) {
            return Err(Error::Config("k_ex must be positive".into()));
        }
        if !(self.lambda_slack >= 0.0 && self.lambda_slack.is_finite()) {
            return Err(Error::Config(format!("lambda_slack = {} must be nonnegative", self.lambda_slack)));
        }
        let p = self.probabilities;
        for (name, v) in [("p_lc", p.p_lc), ("p_acc", p.p_acc), ("p_brk", p.p_brk)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} = {v} not in [0, 1]")));
            }
        }
        if p.p_acc + p.p_brk > 1.0 {
            return Err(Error::Config("p_acc + p_brk exceeds 1".into()));
        }
        Ok(())
    }

    /// The scenario template of this experiment. Random layouts replace the
    /// targets per run.
    pub fn scenario_template(&self) -> Result<ScenarioConfig> {
        let mut cfg = ScenarioConfig::table1();
        match &self.scenario {
            ScenarioChoice::Table1 => {
                if let Some(lc) = cfg.tvs[3].lane_change.as_mut() {
                    lc.trigger_step = self.tv4_lane_change_step;
                }
            }
            ScenarioChoice::Random => {}
            ScenarioChoice::File(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                    path: path.clone(),
                    source: e,
                })?;
                cfg = parse_scenario(&text)?;
            }
        }
        cfg.n_steps = self.n_steps;
        cfg.phase2 = self.probabilities;
        Ok(cfg)
    }
}

/// `(line number, key, value)` of every assignment.
fn assignments(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i + 1,
            message: format!("expected `key = value`, found {line:?}"),
        })?;
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::Parse {
                line: i + 1,
                message: "missing key".into(),
            });
        }
        out.push((i + 1, key.to_string(), value.trim().to_string()));
    }
    Ok(out)
}

fn err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn number<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse::<T>()
        .map_err(|_| err(line, format!("{key}: malformed value {v:?}")))
}

fn list(line: usize, key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',').map(|item| number(line, key, item.trim())).collect()
}

fn positive(line: usize, key: &str, v: &str) -> Result<usize> {
    let n: usize = number(line, key, v)?;
    if n == 0 {
        return Err(err(line, format!("{key}: must be positive")));
    }
    Ok(n)
}

fn probability(line: usize, key: &str, v: &str) -> Result<f64> {
    let p: f64 = number(line, key, v)?;
    if !(0.0..=1.0).contains(&p) {
        return Err(err(line, format!("{key}: {p} not in [0, 1]")));
    }
    Ok(p)
}

/// Parse an experiment file, starting from the defaults.
pub fn parse_config(text: &str) -> Result<ExperimentSpec> {
    parse_config_relative(text, None)
}

/// Like [`parse_config`], resolving a relative scenario path against `base`.
pub fn parse_config_relative(text: &str, base: Option<&Path>) -> Result<ExperimentSpec> {
    let mut spec = ExperimentSpec::default();
    for (line, key, v) in assignments(text)? {
        match key.as_str() {
            "scenario" => {
                spec.scenario = match v.as_str() {
                    "table1" => ScenarioChoice::Table1,
                    "random" => ScenarioChoice::Random,
                    "" => return Err(err(line, "scenario: empty value")),
                    path => {
                        let p = PathBuf::from(path);
                        ScenarioChoice::File(match base {
                            Some(b) if p.is_relative() => b.join(p),
                            _ => p,
                        })
                    }
                }
            }
            "mode" => {
                spec.mode =
                    ControllerMode::parse(&v).ok_or_else(|| err(line, format!("mode: unknown mode {v:?}")))?
            }
            "beta_ta" => {
                let values = list(line, &key, &v)?;
                if let Some(b) = values.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
                    return Err(err(line, format!("beta_ta: {b} not in (0, 1)")));
                }
                spec.beta_ta = values;
            }
            "beta_ex" => {
                let values = list(line, &key, &v)?;
                if let Some(b) = values.iter().find(|b| !(0.5..1.0).contains(*b)) {
                    return Err(err(line, format!("beta_ex: {b} not in [0.5, 1)")));
                }
                spec.beta_ex = values;
            }
            "beta_ex_recovery" => {
                let b: f64 = number(line, &key, &v)?;
                if !(0.5..1.0).contains(&b) {
                    return Err(err(line, format!("beta_ex_recovery: {b} not in [0.5, 1)")));
                }
                spec.beta_ex_recovery = b;
            }
            "runs" => spec.runs = positive(line, &key, &v)?,
            "seed" => spec.seed = number(line, &key, &v)?,
            "out" => {
                if v.is_empty() {
                    return Err(err(line, "out: empty value"));
                }
                spec.out = PathBuf::from(v)
            }
            "n_steps" => spec.n_steps = positive(line, &key, &v)?,
            "horizon" => spec.horizon = positive(line, &key, &v)?,
            "k_ex" => spec.k_ex = Some(positive(line, &key, &v)?),
            "lambda_slack" => {
                let l: f64 = number(line, &key, &v)?;
                if !(l > 0.0 && l.is_finite()) {
                    return Err(err(line, format!("lambda_slack: {l} must be positive")));
                }
                spec.lambda_slack = l;
            }
            "p_lc" => spec.probabilities.p_lc = probability(line, &key, &v)?,
            "p_acc" => spec.probabilities.p_acc = probability(line, &key, &v)?,
            "p_brk" => spec.probabilities.p_brk = probability(line, &key, &v)?,
            "tv4_lane_change_step" => spec.tv4_lane_change_step = positive(line, &key, &v)?,
            _ => return Err(err(line, format!("unknown key {key:?}"))),
        }
    }
    spec.validate()?;
    Ok(spec)
}

/// Parse a scenario file: `ev = x, vx, y, vy`, `ev_v_ref`, `lanes`,
/// `lane_width`, and one `tv = x, vx, y, vy, v_ref[, target_lane,
/// trigger_step]` per target.
pub fn parse_scenario(text: &str) -> Result<ScenarioConfig> {
    let mut cfg = ScenarioConfig::table1();
    cfg.tvs.clear();
    let mut road = RoadGeometry::default();
    let mut tvs = Vec::new();
    for (line, key, v) in assignments(text)? {
        match key.as_str() {
            "lanes" => road.lanes = number(line, &key, &v)?,
            "lane_width" => road.lane_width = number(line, &key, &v)?,
            "ev_v_ref" => cfg.ev_v_ref = number(line, &key, &v)?,
            "ev" => {
                let f = list(line, &key, &v)?;
                if f.len() != 4 {
                    return Err(err(line, "ev: expected x, vx, y, vy"));
                }
                cfg.ev0 = AgentState::new(f[0], f[1], f[2], f[3]);
            }
            "tv" => {
                let f = list(line, &key, &v)?;
                if f.len() != 5 && f.len() != 7 {
                    return Err(err(line, "tv: expected x, vx, y, vy, v_ref[, target_lane, trigger_step]"));
                }
                let lane_change = if f.len() == 7 {
                    let whole = |x: f64| x >= 0.0 && x.fract() == 0.0;
                    if !whole(f[5]) || !whole(f[6]) || f[6] < 1.0 {
                        return Err(err(line, "tv: lane and trigger step must be whole numbers, step ≥ 1"));
                    }
                    Some(LaneChange {
                        target_lane: f[5] as usize,
                        trigger_step: f[6] as usize,
                    })
                } else {
                    None
                };
                tvs.push((
                    line,
                    TvSpec {
                        initial: AgentState::new(f[0], f[1], f[2], f[3]),
                        v_ref: f[4],
                        lane_change,
                    },
                ));
            }
            _ => return Err(err(line, format!("unknown key {key:?}"))),
        }
    }
    for (line, tv) in &tvs {
        if let Some(lc) = tv.lane_change {
            if lc.target_lane >= road.lanes {
                return Err(err(*line, format!("tv: lane {} does not exist", lc.target_lane)));
            }
        }
    }
    cfg.road = road;
    cfg.tvs = tvs.into_iter().map(|(_, tv)| tv).collect();
    cfg.validate()?;
    Ok(cfg)
}
