//! Continuous-control tasks with ground-truth rewards.
//!
//! The ground-truth reward is only read by the scripted teacher and by
//! evaluation; the learner sees states and its own learned rewards.

use rand::Rng as _;

use crate::reward::Segment;
use crate::{seeded, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub name: String,
    pub state_dim: usize,
    pub action_dim: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    pub horizon: usize,
}

impl EnvSpec {
    /// Clamps `action` into bounds; returns whether any component moved.
    pub fn clip_action(&self, action: &[f64]) -> (Vec<f64>, bool) {
        let mut clipped = false;
        let out = action
            .iter()
            .zip(self.action_low.iter().zip(&self.action_high))
            .map(|(&a, (&lo, &hi))| {
                let c = if a.is_nan() { 0.0 } else { a.clamp(lo, hi) };
                clipped |= c != a;
                c
            })
            .collect();
        (out, clipped)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next_state: Vec<f64>,
    /// Ground truth, never fed to the learner.
    pub true_reward: f64,
    pub success: bool,
    /// Episode over, either through the horizon or a terminal success.
    pub done: bool,
    /// The episode ended in a terminal state (not merely the horizon).
    pub terminal: bool,
    /// The action was outside its bounds and got clipped.
    pub clipped: bool,
}

/// Planar projection of a state, used to draw segments for a human teacher.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanarView {
    pub position: [f64; 2],
    pub goal: [f64; 2],
}

pub trait Environment: Send {
    fn spec(&self) -> &EnvSpec;

    fn reset(&mut self, seed: u64) -> Vec<f64>;

    fn step(&mut self, action: &[f64]) -> Result<StepResult>;

    /// Ground-truth reward for taking `action` in `state`.
    fn true_reward(&self, state: &[f64], action: &[f64]) -> f64;

    fn planar_view(&self, state: &[f64]) -> PlanarView;

    /// Sum of ground-truth rewards over a segment.
    fn true_return(&self, segment: &Segment) -> f64 {
        segment
            .states
            .iter()
            .zip(&segment.actions)
            .map(|(s, a)| self.true_reward(s, a))
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardShape {
    /// `-||pos - goal||` every step.
    Dense,
    /// 1 inside the goal radius, else 0.
    Sparse,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointReachConfig {
    pub dt: f64,
    pub horizon: usize,
    pub goal_radius: f64,
    pub max_speed: f64,
    pub terminate_on_success: bool,
}

impl Default for PointReachConfig {
    fn default() -> Self {
        Self {
            dt: 0.05,
            horizon: 100,
            goal_radius: 0.05,
            max_speed: 1.0,
            terminate_on_success: false,
        }
    }
}

/// Workspace half-width; positions live in `[-WORKSPACE, WORKSPACE]^2`.
pub const WORKSPACE: f64 = 0.5;

/// A 2-D point mass driven by velocity commands toward a random goal.
///
/// State layout: `[x, y, goal_x - x, goal_y - y]`.
#[derive(Debug, Clone)]
pub struct PointReach {
    spec: EnvSpec,
    shape: RewardShape,
    config: PointReachConfig,
    pos: [f64; 2],
    goal: [f64; 2],
    t: usize,
    success: bool,
    done: bool,
}

impl PointReach {
    pub fn new(shape: RewardShape, config: PointReachConfig) -> Self {
        let name = match shape {
            RewardShape::Dense => "PointReach-dense",
            RewardShape::Sparse => "PointReach-sparse",
        };
        Self {
            spec: EnvSpec {
                name: name.to_string(),
                state_dim: 4,
                action_dim: 2,
                action_low: vec![-config.max_speed; 2],
                action_high: vec![config.max_speed; 2],
                horizon: config.horizon,
            },
            shape,
            config,
            pos: [0.0; 2],
            goal: [0.0; 2],
            t: 0,
            success: false,
            done: true,
        }
    }

    pub fn dense() -> Self {
        Self::new(RewardShape::Dense, PointReachConfig::default())
    }

    pub fn sparse() -> Self {
        Self::new(RewardShape::Sparse, PointReachConfig::default())
    }

    pub fn config(&self) -> &PointReachConfig {
        &self.config
    }

    pub fn position(&self) -> [f64; 2] {
        self.pos
    }

    pub fn goal(&self) -> [f64; 2] {
        self.goal
    }

    fn observe(&self) -> Vec<f64> {
        vec![
            self.pos[0],
            self.pos[1],
            self.goal[0] - self.pos[0],
            self.goal[1] - self.pos[1],
        ]
    }

    fn advance(&self, pos: [f64; 2], action: &[f64]) -> [f64; 2] {
        let (a, _) = self.spec.clip_action(action);
        [
            (pos[0] + self.config.dt * a[0]).clamp(-WORKSPACE, WORKSPACE),
            (pos[1] + self.config.dt * a[1]).clamp(-WORKSPACE, WORKSPACE),
        ]
    }

    fn reward_at(&self, pos: [f64; 2], goal: [f64; 2]) -> (f64, bool) {
        let dist = ((pos[0] - goal[0]).powi(2) + (pos[1] - goal[1]).powi(2)).sqrt();
        let reached = dist <= self.config.goal_radius;
        let reward = match self.shape {
            RewardShape::Dense => -dist,
            RewardShape::Sparse => {
                if reached {
                    1.0
                } else {
                    0.0
                }
            }
        };
        (reward, reached)
    }
}

impl Environment for PointReach {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = seeded(seed);
        self.pos = [
            rng.random_range(-WORKSPACE..WORKSPACE),
            rng.random_range(-WORKSPACE..WORKSPACE),
        ];
        self.goal = [
            rng.random_range(-WORKSPACE..WORKSPACE),
            rng.random_range(-WORKSPACE..WORKSPACE),
        ];
        self.t = 0;
        self.success = false;
        self.done = false;
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        if self.done {
            return Err(Error::EpisodeFinished);
        }
        if action.len() != self.spec.action_dim {
            return Err(Error::DimensionMismatch {
                context: "action",
                expected: self.spec.action_dim,
                actual: action.len(),
            });
        }
        let (_, clipped) = self.spec.clip_action(action);
        self.pos = self.advance(self.pos, action);
        let (true_reward, reached) = self.reward_at(self.pos, self.goal);
        self.success |= reached;
        self.t += 1;
        let terminal = self.config.terminate_on_success && self.success;
        self.done = terminal || self.t >= self.config.horizon;
        Ok(StepResult {
            next_state: self.observe(),
            true_reward,
            success: self.success,
            done: self.done,
            terminal,
            clipped,
        })
    }

    fn true_reward(&self, state: &[f64], action: &[f64]) -> f64 {
        let pos = [state[0], state[1]];
        let goal = [state[0] + state[2], state[1] + state[3]];
        let next = self.advance(pos, action);
        self.reward_at(next, goal).0
    }

    fn planar_view(&self, state: &[f64]) -> PlanarView {
        PlanarView {
            position: [state[0], state[1]],
            goal: [state[0] + state[2], state[1] + state[3]],
        }
    }
}

pub const TASKS: &[&str] = &["PointReach-dense", "PointReach-sparse"];

/// Looks up a task by its registry name.
pub fn make_env(name: &str) -> Result<Box<dyn Environment>> {
    match name {
        "PointReach-dense" => Ok(Box::new(PointReach::dense())),
        "PointReach-sparse" => Ok(Box::new(PointReach::sparse())),
        other => Err(Error::UnknownTask(other.to_string())),
    }
}

/// Moves at full speed straight toward the goal; used as a scripted expert.
pub fn goal_directed_action(state: &[f64], max_speed: f64) -> Vec<f64> {
    let (dx, dy) = (state[2], state[3]);
    let norm = (dx * dx + dy * dy).sqrt();
    if norm < 1e-12 {
        return vec![0.0, 0.0];
    }
    vec![dx / norm * max_speed, dy / norm * max_speed]
}
