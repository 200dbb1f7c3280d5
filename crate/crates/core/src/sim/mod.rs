//! Closed-loop highway simulation of the ego controller among target
//! vehicles, with Monte Carlo aggregation.

mod episode;
mod io;
mod metrics;
mod montecarlo;
mod scenario;

pub use episode::{run_episode, ControllerConfig, ControllerMeta, EpisodeTrace, StepRecord};
pub use io::{parse_trace_csv, trace_csv, write_trace_csv, TraceRow, TraceTable, TRACE_HEADER};
pub use metrics::{check_collision, closed_loop_cost, VehicleDims};
pub use montecarlo::{episode_seed, THREADS_ENV, monte_carlo, monte_carlo_with_traces, EpisodeMetrics, McReport, ScenarioSource};
pub use scenario::{random_scenario, LaneChange, PhaseProbabilities, ScenarioConfig, TvSpec};
