use rand::Rng;

use super::metrics::VehicleDims;
use crate::error::{Error, Result};
use crate::model::{AgentState, RoadGeometry};

/// Maneuver probabilities the controller assumes for every target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseProbabilities {
    pub p_lc: f64,
    pub p_acc: f64,
    pub p_brk: f64,
}

/// Scripted switch of a target to another lane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneChange {
    pub target_lane: usize,
    /// First simulation step (1-based) at which the new lane is tracked.
    pub trigger_step: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TvSpec {
    pub initial: AgentState,
    pub v_ref: f64,
    pub lane_change: Option<LaneChange>,
}

impl TvSpec {
    /// Reference the target tracks during simulation step `step` (1-based).
    pub fn reference(&self, step: usize, road: &RoadGeometry) -> AgentState {
        let lane = match self.lane_change {
            Some(lc) if step >= lc.trigger_step => lc.target_lane,
            _ => road.lane_index(self.initial.y),
        };
        AgentState::new(0.0, self.v_ref, road.lane_center(lane), 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub road: RoadGeometry,
    pub dims: VehicleDims,
    pub ev0: AgentState,
    /// Ego longitudinal velocity reference.
    pub ev_v_ref: f64,
    pub tvs: Vec<TvSpec>,
    pub n_steps: usize,
    pub dt: f64,
    /// Steps using the initialization probabilities and risk.
    pub phase1_steps: usize,
    pub phase1: PhaseProbabilities,
    pub phase2: PhaseProbabilities,
    pub beta_ta_phase1: f64,
    pub beta_ta: f64,
    /// Multiplier on measurement and execution noise (1 = nominal, 0 = none).
    pub noise_scale: f64,
}

impl ScenarioConfig {
    /// The fixed three-lane scenario. Lanes are counted from the left
    /// (`y = 0`); the ego starts in the center lane.
    pub fn table1() -> Self {
        let road = RoadGeometry::default();
        let y = |lane: usize| road.lane_center(lane);
        let tv = |x: f64, vx: f64, lane: usize, v_ref: f64| TvSpec {
            initial: AgentState::new(x, vx, y(lane), 0.0),
            v_ref,
            lane_change: None,
        };
        let mut tv4 = tv(-30.0, 27.0, 0, 17.0);
        tv4.lane_change = Some(LaneChange {
            target_lane: 1,
            trigger_step: 1,
        });
        Self {
            road,
            dims: VehicleDims::default(),
            ev0: AgentState::new(0.0, 27.0, y(1), 0.0),
            ev_v_ref: 27.0,
            tvs: vec![
                tv(-25.0, 17.0, 2, 22.0),
                tv(25.0, 27.0, 2, 22.0),
                tv(40.0, 27.0, 1, 17.0),
                tv4,
                tv(-10.0, 22.0, 0, 27.0),
            ],
            n_steps: 100,
            dt: 0.2,
            phase1_steps: 20,
            phase1: PhaseProbabilities {
                p_lc: 0.8,
                p_acc: 0.4,
                p_brk: 0.4,
            },
            phase2: PhaseProbabilities {
                p_lc: 0.2,
                p_acc: 0.1,
                p_brk: 0.1,
            },
            beta_ta_phase1: 0.999,
            beta_ta: 0.95,
            noise_scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.road.lanes == 0 || !(self.road.lane_width > 0.0) {
            return Err(Error::Config("road needs at least one lane of positive width".into()));
        }
        if self.n_steps == 0 || !(self.dt > 0.0) {
            return Err(Error::Config("n_steps and dt must be positive".into()));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::Config(format!("noise_scale = {} must be finite and nonnegative", self.noise_scale)));
        }
        for b in [self.beta_ta, self.beta_ta_phase1] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::Config(format!("beta_ta = {b} not in (0, 1)")));
            }
        }
        for tv in &self.tvs {
            if !tv.initial.is_finite() || !tv.v_ref.is_finite() {
                return Err(Error::Config("non-finite target state or reference".into()));
            }
            if let Some(lc) = tv.lane_change {
                if lc.target_lane >= self.road.lanes {
                    return Err(Error::Config(format!("lane {} does not exist", lc.target_lane)));
                }
            }
        }
        Ok(())
    }

    /// Phase probabilities and task risk at simulation step `step` (1-based).
    pub fn phase_at(&self, step: usize) -> (u8, PhaseProbabilities, f64) {
        if step <= self.phase1_steps {
            (1, self.phase1, self.beta_ta_phase1)
        } else {
            (2, self.phase2, self.beta_ta)
        }
    }

    /// Whether same-lane vehicles keep `min_gap` longitudinally and no
    /// trailing target is faster than the target ahead of it.
    pub fn is_valid_random_layout(&self, min_gap: f64) -> bool {
        let lane = |s: &AgentState| self.road.lane_index(s.y);
        let ev = self.ev0;
        for (i, a) in self.tvs.iter().enumerate() {
            if lane(&a.initial) == lane(&ev) && (a.initial.x - ev.x).abs() < min_gap {
                return false;
            }
            for b in &self.tvs[i + 1..] {
                if lane(&a.initial) != lane(&b.initial) {
                    continue;
                }
                if (a.initial.x - b.initial.x).abs() < min_gap {
                    return false;
                }
                let (rear, front) = if a.initial.x < b.initial.x { (a, b) } else { (b, a) };
                if rear.v_ref > front.v_ref {
                    return false;
                }
            }
        }
        true
    }
}

const RANDOM_ATTEMPTS: usize = 1000;
const RANDOM_MIN_GAP: f64 = 50.0;

/// Five lane-keeping targets at constant velocity, placed uniformly on
/// `x ∈ [−150, 150]` over the lanes with `v ∈ [17, 27]`. Draws are rejected
/// until the layout is valid (see [`ScenarioConfig::is_valid_random_layout`]).
pub fn random_scenario<R: Rng + ?Sized>(template: &ScenarioConfig, rng: &mut R) -> Result<ScenarioConfig> {
    let road = template.road;
    for _ in 0..RANDOM_ATTEMPTS {
        let tvs = (0..5)
            .map(|_| {
                let x = rng.random_range(-150.0..=150.0);
                let lane = rng.random_range(0..road.lanes);
                let v = rng.random_range(17.0..=27.0);
                TvSpec {
                    initial: AgentState::new(x, v, road.lane_center(lane), 0.0),
                    v_ref: v,
                    lane_change: None,
                }
            })
            .collect();
        let cfg = ScenarioConfig {
            tvs,
            ..template.clone()
        };
        if cfg.is_valid_random_layout(RANDOM_MIN_GAP) {
            return Ok(cfg);
        }
    }
    Err(Error::Generation {
        attempts: RANDOM_ATTEMPTS,
    })
}
