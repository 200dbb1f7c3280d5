//! Trace CSV export and import.
//!
//! Row `0` holds the initial states (zero input, status `init`, empty
//! measurement columns). Row `k ≥ 1` holds the input applied at step `k`,
//! the solver status and slack of that decision, the measured target
//! positions it was based on, and the true states after the step.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix2, Matrix4};

use super::episode::EpisodeTrace;
use super::metrics::stage_cost;
use crate::error::{Error, Result};
use crate::model::{AgentInput, AgentState, RoadGeometry};
use crate::ocp::SolveStatus;

pub const TRACE_HEADER: &str = "step,ev_x,ev_vx,ev_y,ev_vy,ux,uy,status,slack";

fn header(n_tvs: usize) -> String {
    let mut h = TRACE_HEADER.to_string();
    for i in 1..=n_tvs {
        write!(h, ",tv{i}_x,tv{i}_vx,tv{i}_y,tv{i}_vy,tv{i}_meas_x,tv{i}_meas_y").unwrap();
    }
    h
}

/// Shortest round-trip form, with negative zero written as `0`.
fn plain(v: f64) -> f64 {
    v + 0.0
}

fn push_state(line: &mut String, s: &AgentState) {
    write!(line, ",{},{},{},{}", plain(s.x), plain(s.vx), plain(s.y), plain(s.vy)).unwrap();
}

pub fn trace_csv(trace: &EpisodeTrace) -> String {
    let n_tvs = trace.tvs0.len();
    let mut out = header(n_tvs);
    out.push('\n');
    let mut line = String::from("0");
    push_state(&mut line, &trace.ev0);
    line.push_str(",0,0,init,0");
    for tv in &trace.tvs0 {
        push_state(&mut line, tv);
        line.push_str(",,");
    }
    out.push_str(&line);
    out.push('\n');
    for s in &trace.steps {
        let mut line = s.step.to_string();
        push_state(&mut line, &s.ev);
        write!(line, ",{},{},{},{}", plain(s.input.ux), plain(s.input.uy), s.status.name(), plain(s.slack)).unwrap();
        for (tv, m) in s.tvs.iter().zip(&s.measured) {
            push_state(&mut line, tv);
            write!(line, ",{},{}", plain(m.0), plain(m.1)).unwrap();
        }
        out.push_str(&line);
        out.push('\n');
    }
    out
}

pub fn write_trace_csv(trace: &EpisodeTrace, path: &Path) -> Result<()> {
    std::fs::write(path, trace_csv(trace)).map_err(|e| Error::io(path, e))
}

/// One parsed trace row; `status` is `None` for the initial row.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub ev: AgentState,
    pub input: AgentInput,
    pub status: Option<SolveStatus>,
    pub slack: f64,
    pub tvs: Vec<AgentState>,
    pub measured: Vec<Option<(f64, f64)>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceTable {
    pub rows: Vec<TraceRow>,
}

impl TraceTable {
    /// Realized cost over the non-initial rows.
    pub fn closed_loop_cost(&self, road: &RoadGeometry, v_ref: f64, q: &Matrix4<f64>, r: &Matrix2<f64>) -> f64 {
        let mut q = *q;
        for i in 0..4 {
            q[(0, i)] = 0.0;
            q[(i, 0)] = 0.0;
        }
        self.rows
            .iter()
            .filter(|row| row.status.is_some())
            .map(|row| stage_cost(&row.ev, (row.input.ux, row.input.uy), v_ref, road, &q, r))
            .sum()
    }
}

pub fn parse_trace_csv(text: &str) -> Result<TraceTable> {
    let mut lines = text.lines().enumerate();
    let (_, head) = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "empty trace".into(),
    })?;
    let cols: Vec<&str> = head.split(',').collect();
    if !head.starts_with(TRACE_HEADER) || (cols.len() - 9) % 6 != 0 {
        return Err(Error::Parse {
            line: 1,
            message: "unexpected trace header".into(),
        });
    }
    let n_tvs = (cols.len() - 9) / 6;
    if head != header(n_tvs) {
        return Err(Error::Parse {
            line: 1,
            message: "unexpected target columns".into(),
        });
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let lineno = i + 1;
        let err = |message: String| Error::Parse { line: lineno, message };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != cols.len() {
            return Err(err(format!("{} fields, expected {}", f.len(), cols.len())));
        }
        let num = |j: usize| -> Result<f64> {
            f[j].parse::<f64>()
                .map_err(|_| err(format!("column {}: bad number {:?}", cols[j], f[j])))
        };
        let state = |j: usize| -> Result<AgentState> { Ok(AgentState::new(num(j)?, num(j + 1)?, num(j + 2)?, num(j + 3)?)) };
        let step = f[0].parse::<usize>().map_err(|_| err(format!("bad step {:?}", f[0])))?;
        let status = match f[7] {
            "init" => None,
            s => Some(SolveStatus::parse(s).ok_or_else(|| err(format!("unknown status {s:?}")))?),
        };
        let mut tvs = Vec::with_capacity(n_tvs);
        let mut measured = Vec::with_capacity(n_tvs);
        for t in 0..n_tvs {
            let base = 9 + 6 * t;
            tvs.push(state(base)?);
            measured.push(if f[base + 4].is_empty() && f[base + 5].is_empty() {
                None
            } else {
                Some((num(base + 4)?, num(base + 5)?))
            });
        }
        rows.push(TraceRow {
            step,
            ev: state(1)?,
            input: AgentInput::new(num(5)?, num(6)?),
            status,
            slack: num(8)?,
            tvs,
            measured,
        });
    }
    Ok(TraceTable { rows })
}
