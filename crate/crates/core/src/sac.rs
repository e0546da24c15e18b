//! Soft actor-critic with a squashed-Gaussian policy, twin critics, Polyak
//! target networks and a fixed temperature.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::envs::Environment;
use crate::nn::{Activation, Adam, AdamConfig, Gradients, Mlp, MlpSnapshot, Tape};
use crate::{derive_seed, seeded, Error, LossSnapshot, Result, Rng};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SacConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub alpha: f64,
    pub discount: f64,
    pub tau: f64,
    pub target_update_freq: u64,
    pub batch_size: usize,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            learning_rate: 3e-4,
            alpha: 0.1,
            discount: 0.99,
            tau: 0.005,
            target_update_freq: 2,
            batch_size: 128,
        }
    }
}

/// Anything that maps a state to an action.
pub trait Policy {
    fn act(&self, state: &[f64], deterministic: bool, rng: &mut Rng) -> Vec<f64>;
}

/// Minibatch for one update; `rewards` already hold the total reward.
#[derive(Debug, Clone, PartialEq)]
pub struct SacBatch {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Array1<f64>,
    pub next_states: Array2<f64>,
    /// 1.0 for terminal transitions.
    pub dones: Array1<f64>,
}

impl SacBatch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SacLosses {
    pub critic1: f64,
    pub critic2: f64,
    pub actor: f64,
}

/// Reparameterized policy sample over a batch.
struct PolicySample {
    tape: Tape,
    log_std: Array2<f64>,
    /// 1 where the raw log-std lies inside the clamp range.
    log_std_live: Array2<f64>,
    noise: Array2<f64>,
    tanh_u: Array2<f64>,
    actions: Array2<f64>,
    log_prob: Array1<f64>,
}

/// `ln(1 - tanh(u)^2)`, accurate for large `|u|`.
fn log_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - crate::reward::softplus(-2.0 * u))
}

#[derive(Debug, Clone)]
pub struct SacAgent {
    config: SacConfig,
    state_dim: usize,
    action_dim: usize,
    center: Vec<f64>,
    half_range: Vec<f64>,
    actor: Mlp,
    critics: [Mlp; 2],
    targets: [Mlp; 2],
    actor_opt: Adam,
    critic_opts: [Adam; 2],
    updates: u64,
}

impl SacAgent {
    pub fn new(
        state_dim: usize,
        action_low: &[f64],
        action_high: &[f64],
        config: SacConfig,
        seed: u64,
    ) -> Result<Self> {
        if action_low.len() != action_high.len() || action_low.is_empty() {
            return Err(Error::InvalidNetwork("action bounds must be non-empty and paired".into()));
        }
        if action_low.iter().zip(action_high).any(|(l, h)| !(l < h) || !l.is_finite() || !h.is_finite()) {
            return Err(Error::InvalidNetwork("action bounds must be finite with low < high".into()));
        }
        let action_dim = action_low.len();
        let mut actor_sizes = vec![state_dim];
        actor_sizes.extend(&config.hidden);
        actor_sizes.push(2 * action_dim);
        let actor = Mlp::new(&actor_sizes, Activation::Identity, derive_seed(seed, 0))?;
        let adam = AdamConfig {
            learning_rate: config.learning_rate,
            ..AdamConfig::default()
        };
        let mut agent = Self {
            state_dim,
            action_dim,
            center: action_low.iter().zip(action_high).map(|(l, h)| (l + h) / 2.0).collect(),
            half_range: action_low.iter().zip(action_high).map(|(l, h)| (h - l) / 2.0).collect(),
            actor_opt: Adam::new(&actor, adam),
            actor,
            critics: [Mlp::zeros(&[1, 1], Activation::Identity)?, Mlp::zeros(&[1, 1], Activation::Identity)?],
            targets: [Mlp::zeros(&[1, 1], Activation::Identity)?, Mlp::zeros(&[1, 1], Activation::Identity)?],
            critic_opts: [
                Adam::new(&Mlp::zeros(&[1, 1], Activation::Identity)?, adam),
                Adam::new(&Mlp::zeros(&[1, 1], Activation::Identity)?, adam),
            ],
            config,
            updates: 0,
        };
        agent.reset_critics(derive_seed(seed, 1))?;
        Ok(agent)
    }

    /// Fresh critics, targets, and critic optimizers.
    pub fn reset_critics(&mut self, seed: u64) -> Result<()> {
        let mut sizes = vec![self.state_dim + self.action_dim];
        sizes.extend(&self.config.hidden);
        sizes.push(1);
        let adam = *self.actor_opt.config();
        for i in 0..2 {
            let net = Mlp::new(&sizes, Activation::Identity, derive_seed(seed, i as u64))?;
            self.critic_opts[i] = Adam::new(&net, adam);
            self.targets[i] = net.clone();
            self.critics[i] = net;
        }
        Ok(())
    }

    pub fn config(&self) -> &SacConfig {
        &self.config
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn actor(&self) -> &Mlp {
        &self.actor
    }

    pub fn actor_mut(&mut self) -> &mut Mlp {
        &mut self.actor
    }

    pub fn critic(&self, i: usize) -> &Mlp {
        &self.critics[i]
    }

    pub fn critic_mut(&mut self, i: usize) -> &mut Mlp {
        &mut self.critics[i]
    }

    pub fn target(&self, i: usize) -> &Mlp {
        &self.targets[i]
    }

    pub fn target_mut(&mut self, i: usize) -> &mut Mlp {
        &mut self.targets[i]
    }

    /// Standard-normal noise for a batch of `n` reparameterized samples.
    pub fn sample_noise(&self, n: usize, rng: &mut Rng) -> Array2<f64> {
        Array2::from_shape_simple_fn((n, self.action_dim), || rng.sample(StandardNormal))
    }

    fn policy_sample(&self, states: ArrayView2<f64>, noise: ArrayView2<f64>) -> Result<PolicySample> {
        let tape = self.actor.forward_tape(states)?;
        let out = tape.output();
        let d = self.action_dim;
        let raw_log_std = out.slice(s![.., d..]);
        let log_std = raw_log_std.mapv(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX));
        let log_std_live = raw_log_std.mapv(|v| f64::from((LOG_STD_MIN..=LOG_STD_MAX).contains(&v)));
        let mean = out.slice(s![.., ..d]);
        let u = &mean + &(log_std.mapv(f64::exp) * noise);
        let tanh_u = u.mapv(f64::tanh);
        let mut actions = tanh_u.clone();
        let mut log_prob = Array1::zeros(states.nrows());
        for (i, mut row) in actions.axis_iter_mut(Axis(0)).enumerate() {
            let mut lp = 0.0;
            for j in 0..d {
                row[j] = self.center[j] + self.half_range[j] * row[j];
                let e = noise[[i, j]];
                lp += -0.5 * e * e - log_std[[i, j]] - HALF_LN_2PI
                    - self.half_range[j].ln()
                    - log_one_minus_tanh_sq(u[[i, j]]);
            }
            log_prob[i] = lp;
        }
        Ok(PolicySample {
            tape,
            log_std,
            log_std_live,
            noise: noise.to_owned(),
            tanh_u,
            actions,
            log_prob,
        })
    }

    /// Actions and their log-densities for explicit noise.
    pub fn sample_actions(&self, states: ArrayView2<f64>, noise: ArrayView2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
        let p = self.policy_sample(states, noise)?;
        Ok((p.actions, p.log_prob))
    }

    /// Deterministic action: the squashed mean scaled to bounds.
    pub fn deterministic_action(&self, state: &[f64]) -> Result<Vec<f64>> {
        let out = self.actor.forward(state)?;
        Ok((0..self.action_dim)
            .map(|j| self.center[j] + self.half_range[j] * out[j].tanh())
            .collect())
    }

    pub fn stochastic_action(&self, state: &[f64], rng: &mut Rng) -> Result<Vec<f64>> {
        let states = Array2::from_shape_vec((1, state.len()), state.to_vec()).expect("one row");
        let noise = self.sample_noise(1, rng);
        let (actions, _) = self.sample_actions(states.view(), noise.view())?;
        Ok(actions.row(0).to_vec())
    }

    fn q_values(nets: &[Mlp; 2], states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<[Array1<f64>; 2]> {
        let inputs = ndarray::concatenate(Axis(1), &[states, actions]).expect("same row count");
        let q0 = nets[0].forward_batch(inputs.view())?.column(0).to_owned();
        let q1 = nets[1].forward_batch(inputs.view())?.column(0).to_owned();
        Ok([q0, q1])
    }

    /// Bellman targets `r + γ(1 - done)(min Q_target(s', a') - α log π(a'|s'))`
    /// with `a'` drawn from `noise`.
    pub fn critic_targets(&self, batch: &SacBatch, noise: ArrayView2<f64>) -> Result<Array1<f64>> {
        let next = self.policy_sample(batch.next_states.view(), noise)?;
        let [q0, q1] = Self::q_values(&self.targets, batch.next_states.view(), next.actions.view())?;
        let gamma = self.config.discount;
        let alpha = self.config.alpha;
        Ok(Array1::from_shape_fn(batch.len(), |i| {
            let soft = q0[i].min(q1[i]) - alpha * next.log_prob[i];
            batch.rewards[i] + gamma * (1.0 - batch.dones[i]) * soft
        }))
    }

    /// Mean squared Bellman error of each critic and its gradients.
    fn critic_step(&self, batch: &SacBatch, targets: &Array1<f64>) -> Result<([f64; 2], [Gradients; 2])> {
        let inputs = ndarray::concatenate(Axis(1), &[batch.states.view(), batch.actions.view()])
            .expect("same row count");
        let n = batch.len() as f64;
        let mut losses = [0.0; 2];
        let mut grads = Vec::with_capacity(2);
        for (k, critic) in self.critics.iter().enumerate() {
            let tape = critic.forward_tape(inputs.view())?;
            let diff = &tape.output().column(0) - targets;
            losses[k] = diff.mapv(|d| d * d).sum() / n;
            let upstream = diff.mapv(|d| 2.0 * d / n).insert_axis(Axis(1));
            grads.push(critic.param_gradients(&tape, upstream.view())?);
        }
        let g1 = grads.pop().expect("two critics");
        let g0 = grads.pop().expect("two critics");
        Ok((losses, [g0, g1]))
    }

    /// Actor objective `mean(α log π(ã|s) - min Q(s, ã))` for fixed noise.
    pub fn actor_objective(&self, states: ArrayView2<f64>, noise: ArrayView2<f64>) -> Result<f64> {
        let p = self.policy_sample(states, noise)?;
        let [q0, q1] = Self::q_values(&self.critics, states, p.actions.view())?;
        let n = states.nrows() as f64;
        Ok((0..states.nrows())
            .map(|i| self.config.alpha * p.log_prob[i] - q0[i].min(q1[i]))
            .sum::<f64>()
            / n)
    }

    /// Objective value and its gradient with respect to the actor parameters.
    pub fn actor_gradients(&self, states: ArrayView2<f64>, noise: ArrayView2<f64>) -> Result<(f64, Gradients)> {
        let p = self.policy_sample(states, noise)?;
        let n = states.nrows();
        let d = self.action_dim;
        let inputs = ndarray::concatenate(Axis(1), &[states, p.actions.view()]).expect("same row count");
        let tapes = [
            self.critics[0].forward_tape(inputs.view())?,
            self.critics[1].forward_tape(inputs.view())?,
        ];
        let q0 = tapes[0].output().column(0).to_owned();
        let q1 = tapes[1].output().column(0).to_owned();
        // route each row's gradient through whichever critic is smaller
        let picks0 = Array2::from_shape_fn((n, 1), |(i, _)| f64::from(q0[i] <= q1[i]));
        let picks1 = picks0.mapv(|v| 1.0 - v);
        let dq0 = self.critics[0].input_gradient(&tapes[0], picks0.view())?;
        let dq1 = self.critics[1].input_gradient(&tapes[1], picks1.view())?;
        let dq_da = &dq0.slice(s![.., self.state_dim..]) + &dq1.slice(s![.., self.state_dim..]);

        let alpha = self.config.alpha;
        let scale = 1.0 / n as f64;
        let mut upstream = Array2::zeros((n, 2 * d));
        let mut objective = 0.0;
        for i in 0..n {
            objective += alpha * p.log_prob[i] - q0[i].min(q1[i]);
            for j in 0..d {
                let t = p.tanh_u[[i, j]];
                let sigma_eps = p.log_std[[i, j]].exp() * p.noise[[i, j]];
                let da_du = self.half_range[j] * (1.0 - t * t);
                let g = dq_da[[i, j]];
                upstream[[i, j]] = scale * (alpha * 2.0 * t - g * da_du);
                upstream[[i, d + j]] = scale
                    * p.log_std_live[[i, j]]
                    * (alpha * (-1.0 + 2.0 * t * sigma_eps) - g * da_du * sigma_eps);
            }
        }
        let grads = self.actor.param_gradients(&p.tape, upstream.view())?;
        Ok((objective * scale, grads))
    }

    /// One gradient step on both critics, then the actor, then (every
    /// `target_update_freq` updates) the target critics.
    pub fn update(&mut self, batch: &SacBatch, rng: &mut Rng) -> Result<SacLosses> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let next_noise = self.sample_noise(batch.len(), rng);
        let targets = self.critic_targets(batch, next_noise.view())?;
        let (critic_losses, critic_grads) = self.critic_step(batch, &targets)?;
        let actor_noise = self.sample_noise(batch.len(), rng);

        let snapshot = |actor: f64| LossSnapshot {
            update: self.updates,
            critic1: critic_losses[0],
            critic2: critic_losses[1],
            actor,
            reward_range: batch
                .rewards
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| (lo.min(r), hi.max(r))),
        };
        if !critic_losses.iter().all(|l| l.is_finite()) {
            return Err(Error::NonFiniteLoss(snapshot(f64::NAN)));
        }
        let [g0, g1] = critic_grads;
        self.critic_opts[0].step(&mut self.critics[0], &g0)?;
        self.critic_opts[1].step(&mut self.critics[1], &g1)?;

        let (actor_loss, actor_grads) = self.actor_gradients(batch.states.view(), actor_noise.view())?;
        if !actor_loss.is_finite() {
            return Err(Error::NonFiniteLoss(snapshot(actor_loss)));
        }
        self.actor_opt.step(&mut self.actor, &actor_grads)?;

        self.updates += 1;
        if self.updates % self.config.target_update_freq.max(1) == 0 {
            self.update_targets();
        }
        Ok(SacLosses {
            critic1: critic_losses[0],
            critic2: critic_losses[1],
            actor: actor_loss,
        })
    }

    /// Polyak step of both target critics toward the online critics.
    pub fn update_targets(&mut self) {
        let tau = self.config.tau;
        for (target, critic) in self.targets.iter_mut().zip(&self.critics) {
            target.soft_update_from(critic, tau);
        }
    }

    pub fn snapshot(&self) -> SacSnapshot {
        SacSnapshot {
            actor: self.actor.snapshot(),
            critics: [self.critics[0].snapshot(), self.critics[1].snapshot()],
            targets: [self.targets[0].snapshot(), self.targets[1].snapshot()],
            updates: self.updates,
        }
    }
}

impl Policy for SacAgent {
    fn act(&self, state: &[f64], deterministic: bool, rng: &mut Rng) -> Vec<f64> {
        let action = if deterministic {
            self.deterministic_action(state)
        } else {
            self.stochastic_action(state, rng)
        };
        action.expect("state dimension matches the agent")
    }
}

/// Agent checkpoint: every network plus the update counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SacSnapshot {
    pub actor: MlpSnapshot,
    pub critics: [MlpSnapshot; 2],
    pub targets: [MlpSnapshot; 2],
    pub updates: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub success_rate: f64,
    pub mean_return: f64,
}

/// Runs `episodes` deterministic-policy episodes; episode `i` resets with `derive_seed(seed, i)`.
pub fn evaluate(policy: &dyn Policy, env: &mut dyn Environment, episodes: usize, seed: u64) -> Result<EvalResult> {
    let episodes = episodes.max(1);
    let mut rng = seeded(seed);
    let mut successes = 0;
    let mut total = 0.0;
    for i in 0..episodes {
        let mut state = env.reset(derive_seed(seed, i as u64));
        let mut success = false;
        loop {
            let action = policy.act(&state, true, &mut rng);
            let step = env.step(&action)?;
            total += step.true_reward;
            success |= step.success;
            state = step.next_state;
            if step.done {
                break;
            }
        }
        successes += usize::from(success);
    }
    Ok(EvalResult {
        success_rate: successes as f64 / episodes as f64,
        mean_return: total / episodes as f64,
    })
}
