//! The training loop: unsupervised pretraining, feedback sessions, replay
//! relabeling, and policy updates on `r_ext + β_t r_int`.
//!
//! Per environment step `t` (starting at 0):
//!
//! 1. If a feedback session is due (first at `t = pretrain_steps`, then every
//!    `session_interval` steps while budget remains): draw candidate pairs,
//!    select queries, collect labels, retrain the reward ensemble on every
//!    label collected so far, relabel the whole buffer.
//! 2. Act (uniformly random during warmup), step the environment, store the
//!    transition with its current reward fields.
//! 3. After warmup, one SAC update. During pretraining the reward is the
//!    k-NN state-entropy bonus of the next state; afterwards it is
//!    `r_ext + β_t r_int`.
//! 4. Every `eval_interval` steps and at the end, evaluate the deterministic policy.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::{Array1, Array2};
use rand::Rng as _;
use serde::Serialize;

use crate::config::RunConfig;
use crate::envs::{make_env, Environment};
use crate::epic::{epic_distance, CoverageSample, TrueReward};
use crate::explore::{
    combine, icm_bonuses, BetaSchedule, DynamicsEnsemble, ExplorationMode, ForwardModel, RunningStd, StateEntropyEstimator,
};
use crate::label_queue::LabelQueue;
use crate::metrics::{write_metrics, MetricsRow};
use crate::nn::{stack_rows, AdamConfig};
use crate::replay::{ReplayBuffer, Transition};
use crate::reward::{population_std, PreferenceRecord, RewardEnsemble};
use crate::sac::{evaluate, EvalResult, SacAgent, SacBatch};
use crate::sampler::{generate_candidates, select_queries};
use crate::teacher::{HumanTeacher, ScriptedTeacher, Teacher, TeacherMode};
use crate::{derive_seed, seeded, Error, Result, Rng};

mod streams {
    pub const AGENT: u64 = 1;
    pub const ENSEMBLE: u64 = 2;
    pub const ACTIONS: u64 = 3;
    pub const REPLAY: u64 = 4;
    pub const QUERIES: u64 = 5;
    pub const EPISODES: u64 = 6;
    pub const EVAL: u64 = 7;
    pub const EPIC: u64 = 8;
    pub const DYNAMICS: u64 = 9;
    pub const CRITIC_RESET: u64 = 10;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Pretrain,
    Feedback,
}

/// What one policy update consumed.
pub struct BatchContext<'a> {
    pub step: u64,
    pub phase: Phase,
    pub transitions: &'a [&'a Transition],
    /// Reward handed to the agent for each transition.
    pub rewards: &'a [f64],
    pub beta: f64,
    pub exploration: ExplorationMode,
    pub ensemble: &'a RewardEnsemble,
    pub buffer_version: u64,
}

/// State right after a feedback session's relabel.
pub struct SessionContext<'a> {
    pub step: u64,
    pub session: usize,
    pub new_records: &'a [PreferenceRecord],
    pub dataset: &'a [PreferenceRecord],
    pub ensemble: &'a RewardEnsemble,
    pub buffer: &'a ReplayBuffer,
    pub exploration: ExplorationMode,
}

/// Instrumentation hooks; all methods default to no-ops.
pub trait RunProbe {
    fn on_batch(&mut self, _ctx: &BatchContext<'_>) {}
    fn on_session(&mut self, _ctx: &SessionContext<'_>) {}
    fn on_transition(&mut self, _step: u64, _transition: &Transition) {}
}

pub struct NoProbe;

impl RunProbe for NoProbe {}

/// Per-evaluation summary of the rewards the agent was trained on.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BonusTrace {
    pub step: u64,
    pub beta: f64,
    pub mean_r_ext: f64,
    pub mean_r_int: f64,
}

#[derive(Debug)]
pub struct RunFailure {
    pub step: u64,
    pub error: Error,
    pub metrics: Vec<MetricsRow>,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "run failed at step {}: {}", self.step, self.error)
    }
}

impl std::error::Error for RunFailure {}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub metrics: Vec<MetricsRow>,
    pub bonus_trace: Vec<BonusTrace>,
    pub sessions: usize,
    pub budget_used: usize,
    pub labels: usize,
    pub ensemble: RewardEnsemble,
    pub agent: SacAgent,
}

impl RunResult {
    pub fn final_row(&self) -> Option<&MetricsRow> {
        self.metrics.last()
    }
}

pub struct Trainer {
    config: RunConfig,
    env: Box<dyn Environment>,
    eval_env: Box<dyn Environment>,
    agent: SacAgent,
    ensemble: RewardEnsemble,
    buffer: ReplayBuffer,
    teacher: Box<dyn Teacher>,
    queue: Option<Arc<LabelQueue>>,
    schedule: BetaSchedule,
    entropy: StateEntropyEstimator,
    entropy_stats: RunningStd,
    dynamics: Option<DynamicsEnsemble>,
    icm: Option<ForwardModel>,
    coverage: Option<CoverageSample>,
    records: Vec<PreferenceRecord>,
    action_rng: Rng,
    replay_rng: Rng,
    query_rng: Rng,
    sessions: usize,
    session_due: bool,
    next_session_at: u64,
    metrics: Vec<MetricsRow>,
    trace: Vec<BonusTrace>,
    trace_sum: (f64, f64, usize),
    step: u64,
}

impl Trainer {
    /// Trainer with a scripted teacher.
    pub fn new(config: RunConfig) -> Result<Self> {
        let teacher = Box::new(ScriptedTeacher::new(config.equal_tolerance, config.total_budget));
        Self::with_teacher(config, teacher, None)
    }

    /// Trainer whose labels come from `queue` (human mode).
    pub fn with_queue(config: RunConfig, queue: Arc<LabelQueue>) -> Result<Self> {
        let teacher = Box::new(HumanTeacher::new(queue.clone(), make_env(&config.task)?));
        Self::with_teacher(config, teacher, Some(queue))
    }

    /// Picks the teacher from the config; human mode creates a fresh queue.
    pub fn from_config(config: RunConfig) -> Result<Self> {
        match config.teacher {
            TeacherMode::Scripted => Self::new(config),
            TeacherMode::Human => {
                let queue = Arc::new(LabelQueue::new(config.total_budget, config.teacher_config().timeout));
                Self::with_queue(config, queue)
            }
        }
    }

    pub fn with_teacher(config: RunConfig, teacher: Box<dyn Teacher>, queue: Option<Arc<LabelQueue>>) -> Result<Self> {
        config.validate().map_err(|(_, msg)| crate::ConfigError::global(msg))?;
        let env = make_env(&config.task)?;
        let eval_env = make_env(&config.task)?;
        let spec = env.spec().clone();
        let seed = config.seed;
        let agent = SacAgent::new(
            spec.state_dim,
            &spec.action_low,
            &spec.action_high,
            config.sac_config(),
            derive_seed(seed, streams::AGENT),
        )?;
        let ensemble = RewardEnsemble::new(
            spec.state_dim,
            spec.action_dim,
            config.reward_config(),
            derive_seed(seed, streams::ENSEMBLE),
        )?;
        let adam = AdamConfig {
            learning_rate: config.learning_rate,
            ..AdamConfig::default()
        };
        let dynamics = match config.exploration {
            ExplorationMode::Disagreement => Some(DynamicsEnsemble::new(
                spec.state_dim,
                spec.action_dim,
                &config.reward_hidden,
                config.dynamics_members,
                adam,
                derive_seed(seed, streams::DYNAMICS),
            )?),
            _ => None,
        };
        let icm = match config.exploration {
            ExplorationMode::Icm => Some(ForwardModel::new(
                spec.state_dim,
                spec.action_dim,
                &config.reward_hidden,
                adam,
                derive_seed(seed, streams::DYNAMICS),
            )?),
            _ => None,
        };
        let coverage = if config.epic {
            let mut cov_env = make_env(&config.task)?;
            Some(CoverageSample::from_random_policy(
                cov_env.as_mut(),
                config.epic_samples,
                config.epic_resamples,
                derive_seed(seed, streams::EPIC),
            )?)
        } else {
            None
        };
        Ok(Self {
            schedule: config.beta_schedule(),
            entropy: StateEntropyEstimator::new(config.knn_k, config.entropy_batch),
            entropy_stats: RunningStd::default(),
            buffer: ReplayBuffer::new(config.replay_capacity),
            action_rng: seeded(derive_seed(seed, streams::ACTIONS)),
            replay_rng: seeded(derive_seed(seed, streams::REPLAY)),
            query_rng: seeded(derive_seed(seed, streams::QUERIES)),
            next_session_at: config.pretrain_steps,
            config,
            env,
            eval_env,
            agent,
            ensemble,
            teacher,
            queue,
            dynamics,
            icm,
            coverage,
            records: Vec::new(),
            sessions: 0,
            session_due: false,
            metrics: Vec::new(),
            trace: Vec::new(),
            trace_sum: (0.0, 0.0, 0),
            step: 0,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn ensemble(&self) -> &RewardEnsemble {
        &self.ensemble
    }

    pub fn agent(&self) -> &SacAgent {
        &self.agent
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn queue(&self) -> Option<&Arc<LabelQueue>> {
        self.queue.as_ref()
    }

    pub fn run(self) -> std::result::Result<RunResult, RunFailure> {
        self.run_with(&mut NoProbe)
    }

    /// Runs to `total_steps`; writes the output directory if one is configured.
    pub fn run_with(mut self, probe: &mut dyn RunProbe) -> std::result::Result<RunResult, RunFailure> {
        let out_dir = self.config.output_dir.clone();
        if let Some(dir) = &out_dir {
            if let Err(e) = prepare_dir(dir, &self.config) {
                return Err(self.failure(e));
            }
        }
        let outcome = self.run_until(self.config.total_steps, probe);
        if let Some(dir) = &out_dir {
            let written = write_metrics(&dir.join("metrics.csv"), &self.metrics).and_then(|_| self.write_trace(dir));
            if let (Ok(()), Err(e)) = (&outcome, written) {
                return Err(self.failure(e));
            }
        }
        match outcome {
            Ok(()) => {
                if let Some(dir) = &out_dir {
                    if let Err(e) = self.write_checkpoints(dir) {
                        return Err(self.failure(e));
                    }
                }
                Ok(RunResult {
                    metrics: self.metrics,
                    bonus_trace: self.trace,
                    sessions: self.sessions,
                    budget_used: self.teacher.issued(),
                    labels: self.records.len(),
                    ensemble: self.ensemble,
                    agent: self.agent,
                })
            }
            Err(e) => {
                if let Some(dir) = &out_dir {
                    let record = serde_json::json!({ "step": self.step, "error": e.to_string() });
                    let _ = std::fs::write(dir.join("failure.json"), record.to_string());
                }
                Err(self.failure(e))
            }
        }
    }

    fn failure(&self, error: Error) -> RunFailure {
        RunFailure {
            step: self.step,
            error,
            metrics: self.metrics.clone(),
        }
    }

    /// Advances until `self.step == until`.
    pub fn run_until(&mut self, until: u64, probe: &mut dyn RunProbe) -> Result<()> {
        let mut state = self.reset_env(0);
        let mut episode = 0u64;
        let mut episode_step = 0usize;
        while self.step < until.min(self.config.total_steps) {
            let t = self.step;
            if t == self.next_session_at {
                self.session_due = self.teacher.remaining() > 0 && !self.config.true_reward;
                self.next_session_at += self.config.session_interval;
            }
            if self.session_due && self.feedback_session(t, probe)? {
                self.session_due = false;
            }
            if t == self.config.pretrain_steps && self.config.reset_critics_after_pretrain && t > 0 {
                self.agent.reset_critics(derive_seed(self.config.seed, streams::CRITIC_RESET))?;
            }

            let action = if t < self.config.warmup_steps {
                let spec = self.env.spec();
                (0..spec.action_dim)
                    .map(|j| self.action_rng.random_range(spec.action_low[j]..=spec.action_high[j]))
                    .collect()
            } else {
                self.agent.stochastic_action(&state, &mut self.action_rng)?
            };
            let result = self.env.step(&action)?;
            let (action, _) = self.env.spec().clip_action(&action);
            let (r_ext, r_int) = self.interaction_rewards(&state, &action, &result.next_state)?;
            let transition = Transition {
                state: state.clone(),
                action,
                next_state: result.next_state.clone(),
                r_ext,
                r_int,
                true_reward: result.true_reward,
                done: result.terminal,
                episode,
                step: episode_step,
                reward_version: 0,
            };
            probe.on_transition(t, &transition);
            self.buffer.push(transition)?;
            episode_step += 1;
            state = result.next_state;
            if result.done {
                episode += 1;
                episode_step = 0;
                state = self.reset_env(episode);
            }

            if t >= self.config.warmup_steps {
                self.policy_update(t, probe)?;
            }
            self.step = t + 1;
            if self.step % self.config.eval_interval == 0 || self.step == self.config.total_steps {
                self.evaluate_now()?;
            }
            if let Some(q) = &self.queue {
                if self.step % 100 == 0 {
                    q.set_progress(self.step, None);
                }
            }
        }
        Ok(())
    }

    fn reset_env(&mut self, episode: u64) -> Vec<f64> {
        let seed = derive_seed(derive_seed(self.config.seed, streams::EPISODES), episode);
        self.env.reset(seed)
    }

    /// Reward fields stored with a fresh transition.
    fn interaction_rewards(&mut self, state: &[f64], action: &[f64], next_state: &[f64]) -> Result<(f64, f64)> {
        let members = self.ensemble.member_rewards(state, action)?;
        let r_ext = crate::reward::mean(&members);
        let r_int = match self.config.exploration {
            ExplorationMode::None => 0.0,
            ExplorationMode::Rune => population_std(&members),
            ExplorationMode::StateEntropy => {
                if self.buffer.len() <= self.entropy.k {
                    0.0
                } else {
                    let n = self.entropy.reference_size.min(self.buffer.len());
                    let reference = self.sample_states(n)?;
                    self.entropy.bonus(next_state, reference.view())?
                }
            }
            ExplorationMode::Disagreement => {
                let dynamics = self.dynamics.as_ref().expect("dynamics ensemble in disagreement mode");
                crate::explore::disagreement_bonus(dynamics, state, action)?
            }
            ExplorationMode::Icm => {
                let model = self.icm.as_ref().expect("forward model in icm mode");
                crate::explore::icm_bonus(model, state, action, next_state)?
            }
        };
        Ok((r_ext, r_int))
    }

    fn sample_states(&mut self, n: usize) -> Result<Array2<f64>> {
        let idx = self.buffer.sample_indices(n, &mut self.replay_rng)?;
        let rows: Vec<&[f64]> = idx.iter().map(|&i| self.buffer.get(i).state.as_slice()).collect();
        Ok(stack_rows(rows, self.env.spec().state_dim))
    }

    /// Returns whether a session actually ran (it waits for a long-enough episode).
    fn feedback_session(&mut self, t: u64, probe: &mut dyn RunProbe) -> Result<bool> {
        let n = self.config.queries_per_session.min(self.teacher.remaining());
        if n == 0 {
            return Ok(true);
        }
        let pool = n * self.config.candidate_multiplier;
        let candidates = match generate_candidates(&self.buffer, pool, self.config.segment_length, &mut self.query_rng) {
            Ok(c) => c,
            Err(Error::NoEpisodeLongEnough(_)) => return Ok(false),
            Err(e) => return Err(e),
        };
        let picked = select_queries(&self.ensemble, &candidates, n, self.config.sampler, &mut self.query_rng)?;
        let pairs = picked.into_iter().map(|i| candidates[i].clone()).collect();
        let new_records = self.teacher.label_pairs(pairs)?;
        let start = self.records.len();
        self.records.extend(new_records);
        if self.records.iter().any(|r| r.target().is_some()) {
            self.ensemble.train_session(&self.records)?;
        }
        self.buffer
            .relabel(&self.ensemble, self.config.exploration == ExplorationMode::Rune)?;
        self.sessions += 1;
        log::info!(
            "step {t}: session {} collected {} labels ({} used of {})",
            self.sessions,
            self.records.len() - start,
            self.teacher.issued(),
            self.teacher.total_budget()
        );
        probe.on_session(&SessionContext {
            step: t,
            session: self.sessions,
            new_records: &self.records[start..],
            dataset: &self.records,
            ensemble: &self.ensemble,
            buffer: &self.buffer,
            exploration: self.config.exploration,
        });
        Ok(true)
    }

    fn policy_update(&mut self, t: u64, probe: &mut dyn RunProbe) -> Result<()> {
        let b = self.config.sac_batch;
        let idx = self.buffer.sample_indices(b, &mut self.replay_rng)?;
        let version = self.buffer.version();
        let phase = if t < self.config.pretrain_steps { Phase::Pretrain } else { Phase::Feedback };
        let beta = self.schedule.beta_at(t);
        let spec = self.env.spec();
        let (sd, ad) = (spec.state_dim, spec.action_dim);

        let transitions: Vec<&Transition> = idx.iter().map(|&i| self.buffer.get(i)).collect();
        if let Some(stale) = transitions.iter().find(|tr| tr.reward_version != version) {
            return Err(Error::StaleRewardVersion {
                found: stale.reward_version,
                current: version,
            });
        }
        let states = stack_rows(transitions.iter().map(|tr| tr.state.as_slice()), sd);
        let actions = stack_rows(transitions.iter().map(|tr| tr.action.as_slice()), ad);
        let next_states = stack_rows(transitions.iter().map(|tr| tr.next_state.as_slice()), sd);
        let dones = Array1::from_iter(transitions.iter().map(|tr| f64::from(u8::from(tr.done))));
        let rewards: Vec<f64> = match phase {
            Phase::Pretrain => {
                let n = self.entropy.reference_size.min(self.buffer.len());
                let ref_idx = self.buffer.sample_indices(n, &mut self.replay_rng)?;
                let reference = stack_rows(ref_idx.iter().map(|&i| self.buffer.get(i).state.as_slice()), sd);
                if reference.nrows() > self.entropy.k {
                    let mut r = self.entropy.bonuses(next_states.view(), reference.view())?;
                    if self.config.normalize_entropy {
                        self.entropy_stats.update(&r);
                        let std = self.entropy_stats.std();
                        if std > 0.0 {
                            r.iter_mut().for_each(|x| *x /= std);
                        }
                    }
                    r
                } else {
                    vec![0.0; transitions.len()]
                }
            }
            Phase::Feedback if self.config.true_reward => transitions.iter().map(|tr| tr.true_reward).collect(),
            Phase::Feedback => transitions
                .iter()
                .map(|tr| combine(tr.r_ext, tr.r_int, &self.schedule, t))
                .collect(),
        };
        probe.on_batch(&BatchContext {
            step: t,
            phase,
            transitions: &transitions,
            rewards: &rewards,
            beta,
            exploration: self.config.exploration,
            ensemble: &self.ensemble,
            buffer_version: version,
        });
        self.trace_sum.0 += transitions.iter().map(|tr| tr.r_ext).sum::<f64>() / b as f64;
        self.trace_sum.1 += transitions.iter().map(|tr| tr.r_int).sum::<f64>() / b as f64;
        self.trace_sum.2 += 1;

        let batch = SacBatch {
            states,
            actions,
            rewards: Array1::from(rewards),
            next_states,
            dones,
        };
        self.agent.update(&batch, &mut self.replay_rng)?;

        let inputs = crate::explore::hstack(batch.states.view(), batch.actions.view());
        if let Some(d) = &mut self.dynamics {
            d.train(inputs.view(), batch.next_states.view())?;
        }
        if let Some(m) = &mut self.icm {
            m.train(inputs.view(), batch.next_states.view())?;
            debug_assert!(icm_bonuses(m, inputs.view(), batch.next_states.view()).is_ok());
        }
        Ok(())
    }

    fn evaluate_now(&mut self) -> Result<EvalResult> {
        let eval_seed = derive_seed(self.config.seed, streams::EVAL);
        let result = evaluate(&self.agent, self.eval_env.as_mut(), self.config.eval_episodes, eval_seed)?;
        let epic_due = self.config.epic
            && (self.config.epic_interval == 0
                || self.step % self.config.epic_interval == 0
                || self.step == self.config.total_steps);
        let epic = match (&self.coverage, epic_due) {
            (Some(cov), true) => {
                let truth = TrueReward(self.eval_env.as_ref());
                let seed = derive_seed(self.config.seed, streams::EPIC + 100);
                match epic_distance(&truth, &self.ensemble, cov, self.config.discount, seed) {
                    Ok(d) => Some(d),
                    Err(Error::DegenerateReward) => {
                        log::warn!("step {}: EPIC skipped, reward is constant on the coverage sample", self.step);
                        None
                    }
                    Err(e) => return Err(e),
                }
            }
            _ => None,
        };
        let beta = self.schedule.beta_at(self.step);
        self.metrics.push(MetricsRow {
            step: self.step,
            success_rate: result.success_rate,
            true_return: result.mean_return,
            epic_distance: epic,
            beta,
            budget_used: self.teacher.issued(),
        });
        let (sum_ext, sum_int, n) = std::mem::take(&mut self.trace_sum);
        let n = n.max(1) as f64;
        self.trace.push(BonusTrace {
            step: self.step,
            beta,
            mean_r_ext: sum_ext / n,
            mean_r_int: sum_int / n,
        });
        if let Some(q) = &self.queue {
            q.set_progress(self.step, Some(result.success_rate));
        }
        log::info!(
            "step {}: success {:.2} return {:.3} epic {:?}",
            self.step,
            result.success_rate,
            result.mean_return,
            epic
        );
        Ok(result)
    }

    fn write_trace(&self, dir: &Path) -> Result<()> {
        let mut text = String::from("step,beta,mean_r_ext,mean_r_int\n");
        for t in &self.trace {
            text.push_str(&format!("{},{},{},{}\n", t.step, t.beta, t.mean_r_ext, t.mean_r_int));
        }
        std::fs::write(dir.join("bonus_trace.csv"), text)?;
        Ok(())
    }

    fn write_checkpoints(&self, dir: &Path) -> Result<()> {
        let ck = dir.join("checkpoints");
        std::fs::create_dir_all(&ck)?;
        std::fs::write(ck.join("ensemble.json"), serde_json::to_string(&self.ensemble.snapshot())?)?;
        std::fs::write(ck.join("agent.json"), serde_json::to_string(&self.agent.snapshot())?)?;
        Ok(())
    }
}

fn prepare_dir(dir: &PathBuf, config: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("config.txt"), config.to_file_string())?;
    Ok(())
}

/// Builds a trainer from `config` and runs it to completion.
pub fn run(config: RunConfig) -> std::result::Result<RunResult, RunFailure> {
    let trainer = Trainer::from_config(config).map_err(|error| RunFailure {
        step: 0,
        error,
        metrics: Vec::new(),
    })?;
    trainer.run()
}
