//! Run configuration: flat `key = value` files.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown or repeated
//! keys are rejected with the offending line number. Values not set in the
//! file come from the selected profile.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Duration;

use crate::explore::{BetaSchedule, ExplorationMode};
use crate::nn::AdamConfig;
use crate::reward::RewardEnsembleConfig;
use crate::sac::SacConfig;
use crate::sampler::SamplingMode;
use crate::teacher::{TeacherConfig, TeacherMode};
use crate::ConfigError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    /// Sized for minutes-scale CPU runs.
    Desk,
    /// Network sizes and schedule of the original large-scale setup.
    Paper,
}

impl FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => Err(format!("unknown profile `{other}` (expected desk or paper)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub task: String,
    pub seed: u64,
    pub total_steps: u64,
    pub pretrain_steps: u64,
    /// Uniformly random actions and no updates for this many initial steps.
    pub warmup_steps: u64,
    pub reset_critics_after_pretrain: bool,

    pub session_interval: u64,
    pub queries_per_session: usize,
    pub total_budget: usize,
    pub segment_length: usize,
    pub candidate_multiplier: usize,
    pub sampler: SamplingMode,

    pub exploration: ExplorationMode,
    /// Train the agent on the environment reward instead of the learned one;
    /// no feedback sessions run.
    pub true_reward: bool,
    pub beta0: f64,
    pub beta_decay: f64,
    pub knn_k: usize,
    pub entropy_batch: usize,
    /// Divide the pretraining entropy reward by its running std.
    pub normalize_entropy: bool,
    pub dynamics_members: usize,

    pub ensemble_size: usize,
    pub reward_hidden: Vec<usize>,
    pub reward_epochs: usize,
    pub reward_batch: usize,

    pub sac_hidden: Vec<usize>,
    pub sac_batch: usize,
    pub learning_rate: f64,
    pub alpha: f64,
    pub discount: f64,
    pub tau: f64,
    pub target_update_freq: u64,
    pub replay_capacity: usize,

    pub teacher: TeacherMode,
    pub equal_tolerance: f64,
    pub human_timeout_secs: u64,

    pub eval_interval: u64,
    pub eval_episodes: usize,
    pub epic: bool,
    /// Steps between EPIC evaluations; 0 means every evaluation.
    pub epic_interval: u64,
    pub epic_samples: usize,
    pub epic_resamples: usize,

    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn desk(task: &str) -> Self {
        Self {
            task: task.to_string(),
            seed: 0,
            total_steps: 50_000,
            pretrain_steps: 2_000,
            warmup_steps: 1_000,
            reset_critics_after_pretrain: true,
            session_interval: 2_000,
            queries_per_session: 20,
            total_budget: 400,
            segment_length: 25,
            candidate_multiplier: 10,
            sampler: SamplingMode::Disagreement,
            exploration: ExplorationMode::Rune,
            true_reward: false,
            beta0: 0.05,
            beta_decay: 1e-4,
            knn_k: 5,
            entropy_batch: 512,
            normalize_entropy: true,
            dynamics_members: 5,
            ensemble_size: 3,
            reward_hidden: vec![64, 64],
            reward_epochs: 50,
            reward_batch: 128,
            sac_hidden: vec![64, 64],
            sac_batch: 128,
            learning_rate: 3e-4,
            alpha: 0.1,
            discount: 0.99,
            tau: 0.005,
            target_update_freq: 2,
            replay_capacity: 100_000,
            teacher: TeacherMode::Scripted,
            equal_tolerance: 0.0,
            human_timeout_secs: 300,
            eval_interval: 2_000,
            eval_episodes: 10,
            epic: false,
            epic_interval: 0,
            epic_samples: 2048,
            epic_resamples: 1024,
            output_dir: None,
        }
    }

    pub fn paper(task: &str) -> Self {
        Self {
            total_steps: 1_000_000,
            pretrain_steps: 9_000,
            session_interval: 10_000,
            queries_per_session: 50,
            total_budget: 1_000,
            segment_length: 50,
            reward_hidden: vec![256, 256, 256],
            sac_hidden: vec![256, 256],
            sac_batch: 512,
            replay_capacity: 1_000_000,
            eval_interval: 10_000,
            ..Self::desk(task)
        }
    }

    pub fn for_profile(profile: Profile, task: &str) -> Self {
        match profile {
            Profile::Desk => Self::desk(task),
            Profile::Paper => Self::paper(task),
        }
    }

    pub fn parse(text: &str, profile: Profile) -> Result<Self, ConfigError> {
        let mut seen: HashMap<String, usize> = HashMap::new();
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed
                .split_once('=')
                .ok_or_else(|| ConfigError::at(line, format!("expected `key = value`, got `{trimmed}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if let Some(first) = seen.insert(key.to_string(), line) {
                return Err(ConfigError::at(line, format!("duplicate key `{key}` (first set on line {first})")));
            }
            entries.push((line, key.to_string(), value.to_string()));
        }
        let task = entries
            .iter()
            .find(|(_, k, _)| k == "task")
            .map(|(_, _, v)| v.clone())
            .ok_or_else(|| ConfigError::global("missing required key `task`"))?;
        let mut config = Self::for_profile(profile, &task);
        for (line, key, value) in &entries {
            config.set(key, value).map_err(|m| ConfigError::at(*line, m))?;
        }
        config.validate().map_err(|(key, msg)| match seen.get(key) {
            Some(&line) => ConfigError::at(line, msg),
            None => ConfigError::global(msg),
        })?;
        Ok(config)
    }

    pub fn load(path: &std::path::Path, profile: Profile) -> crate::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self::parse(&text, profile)?)
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        match key {
            "task" => {
                if !crate::envs::TASKS.contains(&value) {
                    return Err(format!("unknown task `{value}` (known: {})", crate::envs::TASKS.join(", ")));
                }
                self.task = value.to_string();
            }
            "seed" => self.seed = num(key, value)?,
            "total_steps" => self.total_steps = num(key, value)?,
            "pretrain_steps" => self.pretrain_steps = num(key, value)?,
            "warmup_steps" => self.warmup_steps = num(key, value)?,
            "reset_critics_after_pretrain" => self.reset_critics_after_pretrain = boolean(key, value)?,
            "session_interval" => self.session_interval = num(key, value)?,
            "queries_per_session" => self.queries_per_session = num(key, value)?,
            "total_budget" => self.total_budget = num(key, value)?,
            "segment_length" => self.segment_length = num(key, value)?,
            "candidate_multiplier" => self.candidate_multiplier = num(key, value)?,
            "sampler" => {
                self.sampler = match value {
                    "uniform" => SamplingMode::Uniform,
                    "disagreement" => SamplingMode::Disagreement,
                    other => return Err(format!("unknown sampler `{other}` (expected uniform or disagreement)")),
                }
            }
            "exploration" => self.exploration = value.parse()?,
            "true_reward" => self.true_reward = boolean(key, value)?,
            "beta0" => self.beta0 = num(key, value)?,
            "beta_decay" => self.beta_decay = num(key, value)?,
            "knn_k" => self.knn_k = num(key, value)?,
            "entropy_batch" => self.entropy_batch = num(key, value)?,
            "normalize_entropy" => self.normalize_entropy = boolean(key, value)?,
            "dynamics_members" => self.dynamics_members = num(key, value)?,
            "ensemble_size" => self.ensemble_size = num(key, value)?,
            "reward_hidden" => self.reward_hidden = list(key, value)?,
            "reward_epochs" => self.reward_epochs = num(key, value)?,
            "reward_batch" => self.reward_batch = num(key, value)?,
            "sac_hidden" => self.sac_hidden = list(key, value)?,
            "sac_batch" => self.sac_batch = num(key, value)?,
            "learning_rate" => self.learning_rate = num(key, value)?,
            "alpha" => self.alpha = num(key, value)?,
            "discount" => self.discount = num(key, value)?,
            "tau" => self.tau = num(key, value)?,
            "target_update_freq" => self.target_update_freq = num(key, value)?,
            "replay_capacity" => self.replay_capacity = num(key, value)?,
            "teacher" => {
                self.teacher = match value {
                    "scripted" => TeacherMode::Scripted,
                    "human" => TeacherMode::Human,
                    other => return Err(format!("unknown teacher `{other}` (expected scripted or human)")),
                }
            }
            "equal_tolerance" => self.equal_tolerance = num(key, value)?,
            "human_timeout_secs" => self.human_timeout_secs = num(key, value)?,
            "eval_interval" => self.eval_interval = num(key, value)?,
            "eval_episodes" => self.eval_episodes = num(key, value)?,
            "epic" => self.epic = boolean(key, value)?,
            "epic_interval" => self.epic_interval = num(key, value)?,
            "epic_samples" => self.epic_samples = num(key, value)?,
            "epic_resamples" => self.epic_resamples = num(key, value)?,
            "output_dir" => self.output_dir = (!value.is_empty()).then(|| PathBuf::from(value)),
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }

    /// Cross-field checks; the error names the key to blame.
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        let fail = |key: &'static str, msg: String| Err((key, msg));
        if self.total_steps == 0 {
            return fail("total_steps", "total_steps must be positive".into());
        }
        if self.pretrain_steps >= self.total_steps {
            return fail(
                "pretrain_steps",
                format!("pretrain_steps ({}) must be below total_steps ({})", self.pretrain_steps, self.total_steps),
            );
        }
        let horizon = crate::envs::make_env(&self.task).map_err(|e| ("task", e.to_string()))?.spec().horizon;
        if self.segment_length == 0 || self.segment_length > horizon {
            return fail(
                "segment_length",
                format!("segment_length must be in 1..={horizon}, got {}", self.segment_length),
            );
        }
        if self.session_interval == 0 {
            return fail("session_interval", "session_interval must be positive".into());
        }
        if self.candidate_multiplier == 0 {
            return fail("candidate_multiplier", "candidate_multiplier must be positive".into());
        }
        if !(self.beta0 >= 0.0 && self.beta0.is_finite()) {
            return fail("beta0", format!("beta0 must be a finite value >= 0, got {}", self.beta0));
        }
        if !(0.0..1.0).contains(&self.beta_decay) {
            return fail("beta_decay", format!("beta_decay must lie in [0, 1), got {}", self.beta_decay));
        }
        if self.knn_k >= self.entropy_batch {
            return fail(
                "knn_k",
                format!("knn_k ({}) must be below entropy_batch ({})", self.knn_k, self.entropy_batch),
            );
        }
        if self.ensemble_size == 0 {
            return fail("ensemble_size", "ensemble_size must be at least 1".into());
        }
        if self.dynamics_members == 0 {
            return fail("dynamics_members", "dynamics_members must be at least 1".into());
        }
        for (key, hidden) in [("reward_hidden", &self.reward_hidden), ("sac_hidden", &self.sac_hidden)] {
            if hidden.contains(&0) {
                return fail(key, format!("{key} layer sizes must be positive"));
            }
        }
        if self.sac_batch == 0 || self.reward_batch == 0 || self.reward_epochs == 0 {
            return fail("sac_batch", "batch sizes and epochs must be positive".into());
        }
        if !(self.learning_rate > 0.0) {
            return fail("learning_rate", "learning_rate must be positive".into());
        }
        if !(self.alpha > 0.0) {
            return fail("alpha", "alpha must be positive".into());
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return fail("discount", "discount must lie in (0, 1)".into());
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return fail("tau", "tau must lie in (0, 1)".into());
        }
        if self.target_update_freq == 0 {
            return fail("target_update_freq", "target_update_freq must be positive".into());
        }
        if self.replay_capacity == 0 {
            return fail("replay_capacity", "replay_capacity must be positive".into());
        }
        if !(self.equal_tolerance >= 0.0) {
            return fail("equal_tolerance", "equal_tolerance must be >= 0".into());
        }
        if self.eval_interval == 0 || self.eval_episodes == 0 {
            return fail("eval_interval", "evaluation interval and episode count must be positive".into());
        }
        if self.epic && self.epic_samples < 2 {
            return fail("epic_samples", "epic_samples must be at least 2".into());
        }
        Ok(())
    }

    pub fn beta_schedule(&self) -> BetaSchedule {
        BetaSchedule::new(self.beta0, self.beta_decay)
    }

    pub fn reward_config(&self) -> RewardEnsembleConfig {
        RewardEnsembleConfig {
            members: self.ensemble_size,
            hidden: self.reward_hidden.clone(),
            adam: AdamConfig {
                learning_rate: self.learning_rate,
                ..AdamConfig::default()
            },
            epochs: self.reward_epochs,
            batch_size: self.reward_batch,
        }
    }

    pub fn sac_config(&self) -> SacConfig {
        SacConfig {
            hidden: self.sac_hidden.clone(),
            learning_rate: self.learning_rate,
            alpha: self.alpha,
            discount: self.discount,
            tau: self.tau,
            target_update_freq: self.target_update_freq,
            batch_size: self.sac_batch,
        }
    }

    pub fn teacher_config(&self) -> TeacherConfig {
        TeacherConfig {
            mode: self.teacher,
            equal_tolerance: self.equal_tolerance,
            per_session: self.queries_per_session,
            total_budget: self.total_budget,
            timeout: Duration::from_secs(self.human_timeout_secs),
        }
    }

    /// Every key in a fixed order; parses back to the same configuration.
    pub fn to_file_string(&self) -> String {
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let sampler = match self.sampler {
            SamplingMode::Uniform => "uniform",
            SamplingMode::Disagreement => "disagreement",
        };
        let teacher = match self.teacher {
            TeacherMode::Scripted => "scripted",
            TeacherMode::Human => "human",
        };
        let pairs: Vec<(&str, String)> = vec![
            ("task", self.task.clone()),
            ("seed", self.seed.to_string()),
            ("total_steps", self.total_steps.to_string()),
            ("pretrain_steps", self.pretrain_steps.to_string()),
            ("warmup_steps", self.warmup_steps.to_string()),
            ("reset_critics_after_pretrain", self.reset_critics_after_pretrain.to_string()),
            ("session_interval", self.session_interval.to_string()),
            ("queries_per_session", self.queries_per_session.to_string()),
            ("total_budget", self.total_budget.to_string()),
            ("segment_length", self.segment_length.to_string()),
            ("candidate_multiplier", self.candidate_multiplier.to_string()),
            ("sampler", sampler.to_string()),
            ("exploration", self.exploration.as_str().to_string()),
            ("beta0", format!("{:?}", self.beta0)),
            ("beta_decay", format!("{:?}", self.beta_decay)),
            ("knn_k", self.knn_k.to_string()),
            ("entropy_batch", self.entropy_batch.to_string()),
            ("normalize_entropy", self.normalize_entropy.to_string()),
            ("dynamics_members", self.dynamics_members.to_string()),
            ("ensemble_size", self.ensemble_size.to_string()),
            ("reward_hidden", list(&self.reward_hidden)),
            ("reward_epochs", self.reward_epochs.to_string()),
            ("reward_batch", self.reward_batch.to_string()),
            ("sac_hidden", list(&self.sac_hidden)),
            ("sac_batch", self.sac_batch.to_string()),
            ("learning_rate", format!("{:?}", self.learning_rate)),
            ("alpha", format!("{:?}", self.alpha)),
            ("discount", format!("{:?}", self.discount)),
            ("tau", format!("{:?}", self.tau)),
            ("target_update_freq", self.target_update_freq.to_string()),
            ("replay_capacity", self.replay_capacity.to_string()),
            ("teacher", teacher.to_string()),
            ("equal_tolerance", format!("{:?}", self.equal_tolerance)),
            ("human_timeout_secs", self.human_timeout_secs.to_string()),
            ("eval_interval", self.eval_interval.to_string()),
            ("eval_episodes", self.eval_episodes.to_string()),
            ("true_reward", self.true_reward.to_string()),
            ("epic", self.epic.to_string()),
            ("epic_interval", self.epic_interval.to_string()),
            ("epic_samples", self.epic_samples.to_string()),
            ("epic_resamples", self.epic_resamples.to_string()),
            (
                "output_dir",
                self.output_dir.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
            ),
        ];
        let mut out = String::new();
        for (k, v) in pairs {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("invalid value `{value}` for `{key}`"))
}

fn boolean(key: &str, value: &str) -> Result<bool, String> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("invalid value `{value}` for `{key}` (expected true or false)")),
    }
}

fn list(key: &str, value: &str) -> Result<Vec<usize>, String> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| num(key, v.trim())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_uses_desk_defaults() {
        let c = RunConfig::parse("task = PointReach-sparse\n", Profile::Desk).unwrap();
        assert_eq!(c, RunConfig::desk("PointReach-sparse"));
        let p = RunConfig::parse("task = PointReach-sparse\n", Profile::Paper).unwrap();
        assert_eq!(p.reward_hidden, vec![256, 256, 256]);
        assert_eq!(p.segment_length, 50);
    }

    #[test]
    fn missing_task_is_named() {
        let err = RunConfig::parse("seed = 3\n", Profile::Desk).unwrap_err();
        assert!(err.to_string().contains("missing required key `task`"), "{err}");
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = RunConfig::parse("task = PointReach-dense\n# note\n\nbogus = 1\n", Profile::Desk).unwrap_err();
        assert_eq!(err.line, Some(4));
        assert!(err.to_string().starts_with("line 4: unknown key `bogus`"));
        let err = RunConfig::parse("task = PointReach-dense\nseed = x\n", Profile::Desk).unwrap_err();
        assert_eq!(err.line, Some(2));
        let err = RunConfig::parse("task = PointReach-dense\nseed = 1\nseed = 2\n", Profile::Desk).unwrap_err();
        assert_eq!(err.line, Some(3));
        let err = RunConfig::parse("task = PointReach-dense\nnot a pair\n", Profile::Desk).unwrap_err();
        assert_eq!(err.line, Some(2));
        let err = RunConfig::parse("task = Nope\n", Profile::Desk).unwrap_err();
        assert_eq!(err.line, Some(1));
    }

    #[test]
    fn cross_field_checks_point_at_the_key() {
        let text = "task = PointReach-dense\ntotal_steps = 100\npretrain_steps = 100\n";
        let err = RunConfig::parse(text, Profile::Desk).unwrap_err();
        assert_eq!(err.line, Some(3));
        let err = RunConfig::parse("task = PointReach-dense\nsegment_length = 101\n", Profile::Desk).unwrap_err();
        assert_eq!(err.line, Some(2));
    }

    #[test]
    fn echo_round_trips() {
        let text = "task = PointReach-dense\nseed = 9\nexploration = icm\nsac_hidden = 32,16\nbeta_decay = 0.001\noutput_dir = /tmp/x\nepic = true\n";
        let c = RunConfig::parse(text, Profile::Desk).unwrap();
        let again = RunConfig::parse(&c.to_file_string(), Profile::Paper).unwrap();
        assert_eq!(c, again);
        assert_eq!(c.exploration, ExplorationMode::Icm);
        assert_eq!(c.sac_hidden, vec![32, 16]);
    }
}
