use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::episode::{run_episode, ControllerConfig, EpisodeTrace};
use super::scenario::{random_scenario, ScenarioConfig};
use crate::error::{Error, Result};

/// RNG stream used to draw a random scenario for a run.
const SCENARIO_STREAM: u64 = 2;

/// Environment variable capping the number of worker threads (0 = auto).
pub const THREADS_ENV: &str = "SSC_MPC_THREADS";

#[derive(Debug, Clone, PartialEq)]
pub enum ScenarioSource {
    Fixed(ScenarioConfig),
    /// A fresh random layout per run; the template supplies everything but
    /// the targets.
    Random(ScenarioConfig),
}

impl ScenarioSource {
    pub fn scenario_for(&self, seed: u64) -> Result<ScenarioConfig> {
        match self {
            ScenarioSource::Fixed(cfg) => Ok(cfg.clone()),
            ScenarioSource::Random(template) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(SCENARIO_STREAM);
                random_scenario(template, &mut rng)
            }
        }
    }

    pub fn template(&self) -> &ScenarioConfig {
        match self {
            ScenarioSource::Fixed(cfg) | ScenarioSource::Random(cfg) => cfg,
        }
    }

    pub fn template_mut(&mut self) -> &mut ScenarioConfig {
        match self {
            ScenarioSource::Fixed(cfg) | ScenarioSource::Random(cfg) => cfg,
        }
    }
}

/// Seed of run `index`: SplitMix64 applied to `base_seed + (index + 1)·φ`
/// with φ the 64-bit golden-ratio increment.
pub fn episode_seed(base_seed: u64, index: usize) -> u64 {
    let mut z = base_seed.wrapping_add((index as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeMetrics {
    pub seed: u64,
    pub collided: bool,
    pub j100: f64,
    pub infeasible_ocp_steps: usize,
    pub infeasible_rec_steps: usize,
}

impl EpisodeMetrics {
    pub fn from_trace(trace: &EpisodeTrace) -> Self {
        Self {
            seed: trace.seed,
            collided: trace.collided(),
            j100: trace.j100,
            infeasible_ocp_steps: trace.infeasible_ocp_steps(),
            infeasible_rec_steps: trace.infeasible_rec_steps(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McReport {
    pub runs: usize,
    /// Runs with at least one colliding step.
    pub collisions: usize,
    pub mean_j100: f64,
    pub mean_infeasible_ocp_steps: f64,
    pub mean_infeasible_rec_steps: f64,
    pub seeds: Vec<u64>,
    pub episodes: Vec<EpisodeMetrics>,
}

impl McReport {
    pub fn from_episodes(episodes: Vec<EpisodeMetrics>) -> Self {
        let runs = episodes.len();
        let mean = |f: &dyn Fn(&EpisodeMetrics) -> f64| {
            if runs == 0 {
                0.0
            } else {
                // ordered summation keeps the result independent of scheduling
                episodes.iter().map(f).sum::<f64>() / runs as f64
            }
        };
        Self {
            runs,
            collisions: episodes.iter().filter(|e| e.collided).count(),
            mean_j100: mean(&|e| e.j100),
            mean_infeasible_ocp_steps: mean(&|e| e.infeasible_ocp_steps as f64),
            mean_infeasible_rec_steps: mean(&|e| e.infeasible_rec_steps as f64),
            seeds: episodes.iter().map(|e| e.seed).collect(),
            episodes,
        }
    }
}

fn thread_limit() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

/// Run `n_runs` episodes in parallel and return the report with all traces,
/// ordered by run index.
pub fn monte_carlo_with_traces(
    source: &ScenarioSource,
    ctrl: &ControllerConfig,
    n_runs: usize,
    base_seed: u64,
) -> Result<(McReport, Vec<EpisodeTrace>)> {
    if n_runs == 0 {
        return Err(Error::Config("at least one run is required".into()));
    }
    let run = |i: usize| -> Result<EpisodeTrace> {
        let seed = episode_seed(base_seed, i);
        let scenario = source.scenario_for(seed)?;
        run_episode(&scenario, ctrl, seed)
    };
    let collect = || (0..n_runs).into_par_iter().map(run).collect::<Result<Vec<_>>>();
    let traces = match thread_limit() {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(collect)?,
        None => collect()?,
    };
    let report = McReport::from_episodes(traces.iter().map(EpisodeMetrics::from_trace).collect());
    Ok((report, traces))
}

pub fn monte_carlo(source: &ScenarioSource, ctrl: &ControllerConfig, n_runs: usize, base_seed: u64) -> Result<McReport> {
    monte_carlo_with_traces(source, ctrl, n_runs, base_seed).map(|(r, _)| r)
}
