use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ssc_mpc::ocp::ControllerMode;
use ssc_mpc::sim::{monte_carlo_with_traces, trace_csv, ControllerConfig, EpisodeTrace, McReport, ScenarioSource};
use ssc_mpc::{Error, Result};

use crate::config::{ExperimentSpec, ScenarioChoice};
use crate::svg::{padded_range, Frame, Svg};

pub const REPORT_HEADER: &str =
    "mode,beta_ta,beta_ex,runs,collisions,mean_j100,mean_infeasible_ocp_steps,mean_infeasible_rec_ocp_steps";

/// Aggregated result of one point of the risk sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub mode: ControllerMode,
    pub beta_ta: f64,
    pub beta_ex: f64,
    pub report: McReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub rows: Vec<SweepRow>,
    pub report_path: PathBuf,
    pub trace_paths: Vec<PathBuf>,
    pub plot_path: PathBuf,
}

pub fn controller_config(spec: &ExperimentSpec, beta_ex: f64) -> ControllerConfig {
    let mut ctrl = ControllerConfig::new(spec.mode);
    ctrl.ocp.beta_ex = beta_ex;
    ctrl.ocp.beta_ex_recovery = spec.beta_ex_recovery;
    ctrl.ocp.lambda_slack = spec.lambda_slack;
    ctrl.ocp.horizon = spec.horizon;
    ctrl.k_ex = spec.k_ex;
    ctrl
}

/// Sweep points in output order: `beta_ta` outer, `beta_ex` inner.
pub fn sweep_points(spec: &ExperimentSpec) -> Vec<(f64, f64)> {
    spec.beta_ta
        .iter()
        .flat_map(|&ta| spec.beta_ex.iter().map(move |&ex| (ta, ex)))
        .collect()
}

pub fn report_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for row in rows {
        let r = &row.report;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            row.mode.name(),
            row.beta_ta,
            row.beta_ex,
            r.runs,
            r.collisions,
            r.mean_j100,
            r.mean_infeasible_ocp_steps,
            r.mean_infeasible_rec_steps
        )
        .unwrap();
    }
    out
}

fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// File name of run `run` at sweep point `point`. Runs are numbered
/// consecutively across sweep points.
pub fn trace_file_name(point: usize, run: usize, runs: usize) -> String {
    format!("trace_{}.csv", point * runs + run)
}

/// Run every sweep point and write `report.csv`, one trace per run and
/// `summary.svg` into the output directory.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    spec.validate()?;
    let template = spec.scenario_template()?;
    std::fs::create_dir_all(&spec.out).map_err(|e| Error::Io {
        path: spec.out.clone(),
        source: e,
    })?;

    let mut rows = Vec::new();
    let mut trace_paths = Vec::new();
    let mut first: Option<EpisodeTrace> = None;
    for (point, (beta_ta, beta_ex)) in sweep_points(spec).into_iter().enumerate() {
        let mut scenario = template.clone();
        scenario.beta_ta = beta_ta;
        let source = match spec.scenario {
            ScenarioChoice::Random => ScenarioSource::Random(scenario),
            _ => ScenarioSource::Fixed(scenario),
        };
        let ctrl = controller_config(spec, beta_ex);
        let (report, traces) = monte_carlo_with_traces(&source, &ctrl, spec.runs, spec.seed)?;
        for (run, trace) in traces.iter().enumerate() {
            let path = spec.out.join(trace_file_name(point, run, spec.runs));
            write(&path, &trace_csv(trace))?;
            trace_paths.push(path);
        }
        if first.is_none() {
            first = traces.into_iter().next();
        }
        rows.push(SweepRow {
            mode: spec.mode,
            beta_ta,
            beta_ex,
            report,
        });
    }

    let report_path = spec.out.join("report.csv");
    write(&report_path, &report_csv(&rows))?;
    let plot_path = spec.out.join("summary.svg");
    write(&plot_path, &summary_svg(&rows, first.as_ref()))?;
    Ok(ExperimentOutcome {
        rows,
        report_path,
        trace_paths,
        plot_path,
    })
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Two panels: mean J₁₀₀ over `beta_ta` (one line per `beta_ex`), and the
/// x–y paths of all vehicles in the first run.
pub fn summary_svg(rows: &[SweepRow], trace: Option<&EpisodeTrace>) -> String {
    let mut svg = Svg::new(900.0, 640.0);

    let cost = Frame {
        left: 80.0,
        top: 40.0,
        width: 780.0,
        height: 220.0,
        x_range: padded_range(rows.iter().map(|r| r.beta_ta)),
        y_range: padded_range(rows.iter().map(|r| r.report.mean_j100)),
        y_down: false,
    };
    cost.outline(&mut svg);
    svg.text((450.0, 25.0), 14.0, "middle", "mean J100 over beta_ta");
    for (x, anchor) in [(cost.x_range.0, "start"), (cost.x_range.1, "end")] {
        let (px, _) = cost.map(x, cost.y_range.0);
        svg.text((px, cost.top + cost.height + 16.0), 11.0, anchor, &format!("{x:.3}"));
    }
    for y in [cost.y_range.0, cost.y_range.1] {
        let (_, py) = cost.map(cost.x_range.0, y);
        svg.text((cost.left - 6.0, py + 4.0), 11.0, "end", &format!("{y:.0}"));
    }
    let mut betas_ex: Vec<f64> = Vec::new();
    for r in rows {
        if !betas_ex.contains(&r.beta_ex) {
            betas_ex.push(r.beta_ex);
        }
    }
    for (i, &bex) in betas_ex.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.beta_ex == bex)
            .map(|r| (r.beta_ta, r.report.mean_j100))
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mapped: Vec<(f64, f64)> = pts.iter().map(|&(x, y)| cost.map(x, y)).collect();
        svg.polyline(&mapped, color, 2.0);
        for &p in &mapped {
            svg.circle(p, 3.5, color);
        }
        svg.text((cost.left + 10.0, cost.top + 16.0 + 14.0 * i as f64), 11.0, "start", &format!("beta_ex = {bex}"));
    }

    if let Some(tr) = trace {
        let (y_lo, y_hi) = tr.road.edges();
        let xs = std::iter::once(tr.ev0.x)
            .chain(tr.steps.iter().map(|s| s.ev.x))
            .chain(tr.tvs0.iter().map(|t| t.x))
            .chain(tr.steps.iter().flat_map(|s| s.tvs.iter().map(|t| t.x)));
        let road = Frame {
            left: 80.0,
            top: 330.0,
            width: 780.0,
            height: 260.0,
            x_range: padded_range(xs),
            y_range: (y_lo, y_hi),
            y_down: true,
        };
        road.outline(&mut svg);
        svg.text(
            (450.0, 315.0),
            14.0,
            "middle",
            &format!("vehicle paths, run 0 (seed {})", tr.seed),
        );
        for lane in 1..tr.road.lanes {
            let y = y_lo + lane as f64 * tr.road.lane_width;
            svg.line(road.map(road.x_range.0, y), road.map(road.x_range.1, y), "#999", 1.0, Some("8,6"));
        }
        for (i, tv0) in tr.tvs0.iter().enumerate() {
            let path: Vec<(f64, f64)> = std::iter::once(*tv0)
                .chain(tr.steps.iter().map(|s| s.tvs[i]))
                .map(|s| road.map(s.x, s.y))
                .collect();
            svg.polyline(&path, "#1f77b4", 1.5);
            if let Some(&end) = path.last() {
                svg.text((end.0 + 4.0, end.1 - 4.0), 10.0, "start", &format!("TV{}", i + 1));
            }
        }
        let ev: Vec<(f64, f64)> = std::iter::once(tr.ev0)
            .chain(tr.steps.iter().map(|s| s.ev))
            .map(|s| road.map(s.x, s.y))
            .collect();
        svg.polyline(&ev, "#d62728", 2.5);
        if let Some(&end) = ev.last() {
            svg.text((end.0 + 4.0, end.1 - 4.0), 10.0, "start", "EV");
        }
        for (x, anchor) in [(road.x_range.0, "start"), (road.x_range.1, "end")] {
            let (px, _) = road.map(x, y_hi);
            svg.text((px, road.top + road.height + 16.0), 11.0, anchor, &format!("x = {x:.0} m"));
        }
    }
    svg.finish()
}
