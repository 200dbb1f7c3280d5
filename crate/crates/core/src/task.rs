//! Discrete maneuver distributions and scenario sample sizing.
//!
//! A target executes exactly one lateral and one longitudinal maneuver per
//! prediction horizon, nine joint tasks in total. The controller draws `K`
//! tasks per target, with `K` chosen so that the worst-case probability of
//! missing the least likely task stays below the accepted task risk.
//!
//! The overall chance-constraint level is some combination of the task
//! risk and the execution risk; no combination rule is applied here. The two
//! parameters are kept as independent knobs (`beta_ta` for sample sizing,
//! `beta_ex` for constraint tightening).

use std::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Lateral {
    LaneKeep,
    ChangeLeft,
    ChangeRight,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Longitudinal {
    Insignificant,
    Accelerate,
    Brake,
}

impl Lateral {
    pub const ALL: [Lateral; 3] = [Lateral::LaneKeep, Lateral::ChangeLeft, Lateral::ChangeRight];

    pub fn code(self) -> &'static str {
        match self {
            Lateral::LaneKeep => "LK",
            Lateral::ChangeLeft => "LCL",
            Lateral::ChangeRight => "LCR",
        }
    }
}

impl Longitudinal {
    pub const ALL: [Longitudinal; 3] = [
        Longitudinal::Insignificant,
        Longitudinal::Accelerate,
        Longitudinal::Brake,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Longitudinal::Insignificant => "IA",
            Longitudinal::Accelerate => "AC",
            Longitudinal::Brake => "BR",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Task {
    pub lateral: Lateral,
    pub longitudinal: Longitudinal,
}

impl Task {
    /// Lane keeping at constant speed.
    pub const KEEP: Task = Task {
        lateral: Lateral::LaneKeep,
        longitudinal: Longitudinal::Insignificant,
    };

    pub const fn new(lateral: Lateral, longitudinal: Longitudinal) -> Self {
        Self {
            lateral,
            longitudinal,
        }
    }

    pub fn all() -> impl Iterator<Item = Task> {
        Lateral::ALL
            .into_iter()
            .flat_map(|lat| Longitudinal::ALL.into_iter().map(move |lon| Task::new(lat, lon)))
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}+{}", self.lateral.code(), self.longitudinal.code())
    }
}

/// Probability mass over tasks, sorted ascending so that `entries()[0]`
/// holds the least likely task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskDistribution {
    entries: Vec<(Task, f64)>,
}

impl TaskDistribution {
    pub fn new(entries: impl IntoIterator<Item = (Task, f64)>) -> Result<Self> {
        let mut entries: Vec<(Task, f64)> = entries.into_iter().collect();
        if entries.is_empty() {
            return Err(Error::Domain("empty task distribution".into()));
        }
        for (t, p) in &entries {
            if !(*p > 0.0 && *p <= 1.0) {
                return Err(Error::Domain(format!("probability {p} of {t} not in (0, 1]")));
            }
        }
        let total: f64 = entries.iter().map(|e| e.1).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!("probabilities sum to {total}")));
        }
        entries.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        Ok(Self { entries })
    }

    pub fn single(task: Task) -> Self {
        Self {
            entries: vec![(task, 1.0)],
        }
    }

    pub fn entries(&self) -> &[(Task, f64)] {
        &self.entries
    }

    pub fn probability(&self, task: Task) -> f64 {
        self.entries
            .iter()
            .find(|e| e.0 == task)
            .map_or(0.0, |e| e.1)
    }

    /// Probability of the least likely task.
    pub fn min_joint(&self) -> f64 {
        self.entries[0].1
    }

    /// Smallest nonzero marginal probability of a single lateral or
    /// longitudinal maneuver.
    pub fn min_marginal(&self) -> f64 {
        let lat = Lateral::ALL.map(|l| {
            self.entries
                .iter()
                .filter(|e| e.0.lateral == l)
                .map(|e| e.1)
                .sum::<f64>()
        });
        let lon = Longitudinal::ALL.map(|l| {
            self.entries
                .iter()
                .filter(|e| e.0.longitudinal == l)
                .map(|e| e.1)
                .sum::<f64>()
        });
        lat.into_iter()
            .chain(lon)
            .filter(|p| *p > 0.0)
            .fold(1.0, f64::min)
    }

    fn sample(&self, u: f64) -> Task {
        let mut acc = 0.0;
        for (t, p) in &self.entries {
            acc += p;
            if u < acc {
                return *t;
            }
        }
        self.entries[self.entries.len() - 1].0
    }
}

/// How the probability of the least likely task is derived from a
/// distribution before computing the sample size.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum LeastLikelyRule {
    /// Smallest single-maneuver marginal (lateral or longitudinal).
    #[default]
    MinMarginal,
    /// Smallest joint task probability.
    MinJoint,
    Fixed(f64),
}

impl LeastLikelyRule {
    pub fn p1(self, dist: &TaskDistribution) -> f64 {
        match self {
            LeastLikelyRule::MinMarginal => dist.min_marginal(),
            LeastLikelyRule::MinJoint => dist.min_joint(),
            LeastLikelyRule::Fixed(p) => p,
        }
    }
}

/// Smallest `K ≥ 1` with `p1 (1 − p1)^K < 1 − beta_ta`, i.e. the first
/// integer strictly above `log_{1−p1}((1 − beta_ta) / p1)`.
pub fn required_sample_size(p1: f64, beta_ta: f64) -> Result<usize> {
    if !(p1 > 0.0 && p1 < 1.0) {
        return Err(Error::Domain(format!("p1 = {p1} not in (0, 1)")));
    }
    if !(beta_ta > 0.0 && beta_ta < 1.0) {
        return Err(Error::Domain(format!("beta_ta = {beta_ta} not in (0, 1)")));
    }
    let risk = 1.0 - beta_ta;
    let miss = |k: usize| p1 * (1.0 - p1).powi(k as i32);
    let bound = (risk / p1).ln() / (1.0 - p1).ln();
    let mut k = if bound < 0.0 {
        1
    } else {
        (bound.floor() as usize + 1).max(1)
    };
    // settle rounding at integer boundaries on the inequality itself
    while miss(k) >= risk {
        k += 1;
    }
    while k > 1 && miss(k - 1) < risk {
        k -= 1;
    }
    Ok(k)
}

/// Monte Carlo estimate of `P(T1 occurs and T1 is absent from K samples)`
/// for the two-task worst case `{T1: p1, T2: 1 − p1}`.
pub fn verify_bound<R: Rng + ?Sized>(p1: f64, k: usize, n_trials: usize, rng: &mut R) -> f64 {
    let mut misses = 0usize;
    for _ in 0..n_trials {
        let occurs = rng.random::<f64>() < p1;
        if !occurs {
            continue;
        }
        let sampled = (0..k).any(|_| rng.random::<f64>() < p1);
        if !sampled {
            misses += 1;
        }
    }
    misses as f64 / n_trials as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub samples: Vec<Task>,
    pub seed: Option<u64>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Distinct tasks in first-drawn order.
    pub fn distinct(&self) -> Vec<Task> {
        let mut out: Vec<Task> = Vec::new();
        for t in &self.samples {
            if !out.contains(t) {
                out.push(*t);
            }
        }
        out
    }
}

pub fn draw_samples<R: Rng + ?Sized>(dist: &TaskDistribution, k: usize, rng: &mut R) -> SampleSet {
    let samples = (0..k).map(|_| dist.sample(rng.random::<f64>())).collect();
    SampleSet {
        samples,
        seed: None,
    }
}

pub fn draw_samples_seeded(dist: &TaskDistribution, k: usize, seed: u64) -> SampleSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = draw_samples(dist, k, &mut rng);
    set.seed = Some(seed);
    set
}

/// Joint maneuver distribution as the product of independent lateral and
/// longitudinal marginals. The lane change mass is split evenly between the
/// available sides; with a single available side it receives all of it.
pub fn build_joint_distribution(
    p_lc: f64,
    p_acc: f64,
    p_brk: f64,
    lanes_available: (bool, bool),
) -> Result<TaskDistribution> {
    for (name, p) in [("p_lc", p_lc), ("p_acc", p_acc), ("p_brk", p_brk)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Domain(format!("{name} = {p} not in [0, 1]")));
        }
    }
    if p_acc + p_brk >= 1.0 {
        return Err(Error::Domain(format!(
            "p_acc + p_brk = {} must be below 1",
            p_acc + p_brk
        )));
    }
    let (left, right) = lanes_available;
    let sides = left as u8 + right as u8;
    let p_change = if sides == 0 { 0.0 } else { p_lc };
    let per_side = if sides == 0 {
        0.0
    } else {
        p_change / f64::from(sides)
    };
    let lateral = [
        (Lateral::LaneKeep, 1.0 - p_change),
        (Lateral::ChangeLeft, if left { per_side } else { 0.0 }),
        (Lateral::ChangeRight, if right { per_side } else { 0.0 }),
    ];
    let longitudinal = [
        (Longitudinal::Insignificant, 1.0 - p_acc - p_brk),
        (Longitudinal::Accelerate, p_acc),
        (Longitudinal::Brake, p_brk),
    ];
    let entries = lateral.iter().flat_map(|&(lat, pl)| {
        longitudinal
            .iter()
            .map(move |&(lon, po)| (Task::new(lat, lon), pl * po))
    });
    TaskDistribution::new(entries.filter(|e| e.1 > 0.0))
}
