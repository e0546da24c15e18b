//! Exploration bonuses and the decaying bonus weight.
//!
//! `r_total = r_ext + β_t · r_int` with `β_t = β_0 (1 - ρ)^t`.

use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::nn::{Activation, Adam, AdamConfig, Mlp};
use crate::reward::RewardEnsemble;
use crate::{derive_seed, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaSchedule {
    pub beta0: f64,
    /// Per-step decay rate ρ in `[0, 1)`.
    pub decay: f64,
}

impl BetaSchedule {
    pub fn new(beta0: f64, decay: f64) -> Self {
        debug_assert!(beta0 >= 0.0 && (0.0..1.0).contains(&decay));
        Self { beta0, decay }
    }

    /// `β_0 (1 - ρ)^t`, evaluated as `β_0 exp(t ln(1 - ρ))`.
    pub fn beta_at(&self, t: u64) -> f64 {
        if t == 0 || self.decay == 0.0 {
            return self.beta0;
        }
        self.beta0 * (t as f64 * (-self.decay).ln_1p()).exp()
    }
}

pub fn combine(r_ext: f64, r_int: f64, schedule: &BetaSchedule, t: u64) -> f64 {
    r_ext + schedule.beta_at(t) * r_int
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplorationMode {
    None,
    Rune,
    StateEntropy,
    Disagreement,
    Icm,
}

impl ExplorationMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ExplorationMode::None => "none",
            ExplorationMode::Rune => "rune",
            ExplorationMode::StateEntropy => "state_entropy",
            ExplorationMode::Disagreement => "disagreement",
            ExplorationMode::Icm => "icm",
        }
    }
}

impl FromStr for ExplorationMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "none" => ExplorationMode::None,
            "rune" => ExplorationMode::Rune,
            "state_entropy" => ExplorationMode::StateEntropy,
            "disagreement" => ExplorationMode::Disagreement,
            "icm" => ExplorationMode::Icm,
            other => return Err(format!("unknown exploration mode `{other}`")),
        })
    }
}

/// Reward-ensemble disagreement at `(state, action)`.
pub fn rune_bonus(ensemble: &RewardEnsemble, state: &[f64], action: &[f64]) -> Result<f64> {
    ensemble.r_std(state, action)
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Distance from `query` to its `k`-th nearest neighbour in `reference`.
///
/// Reference entries equal to the query count as neighbours at distance 0,
/// so the result is the `(k + 1)`-th smallest distance.
pub fn knn_distance<'a, I>(query: &[f64], reference: I, k: usize) -> Result<f64>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut d: Vec<f64> = reference.into_iter().map(|r| euclidean(query, r)).collect();
    if d.len() < k + 1 {
        return Err(Error::ReferenceBatchTooSmall { size: d.len(), k });
    }
    let (_, kth, _) = d.select_nth_unstable_by(k, f64::total_cmp);
    Ok(*kth)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateEntropyEstimator {
    pub k: usize,
    pub reference_size: usize,
}

impl StateEntropyEstimator {
    pub fn new(k: usize, reference_size: usize) -> Self {
        debug_assert!(k < reference_size);
        Self { k, reference_size }
    }

    pub fn bonus(&self, state: &[f64], reference: ArrayView2<f64>) -> Result<f64> {
        knn_distance(state, reference.rows().into_iter().map(|r| r.to_slice().expect("standard layout")), self.k)
    }

    /// Bonus for every row of `states` against the same reference batch.
    pub fn bonuses(&self, states: ArrayView2<f64>, reference: ArrayView2<f64>) -> Result<Vec<f64>> {
        let reference = reference.as_standard_layout();
        states
            .rows()
            .into_iter()
            .map(|s| self.bonus(&s.to_vec(), reference.view()))
            .collect()
    }
}

/// Running mean and variance over batches (Chan's parallel update). Starts
/// from a pseudo-count of 1e-4 with unit variance, so the first batches are
/// scaled by roughly their own spread.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunningStd {
    count: f64,
    mean: f64,
    var: f64,
}

impl Default for RunningStd {
    fn default() -> Self {
        Self {
            count: 1e-4,
            mean: 0.0,
            var: 1.0,
        }
    }
}

impl RunningStd {
    pub fn update(&mut self, xs: &[f64]) {
        if xs.is_empty() {
            return;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let total = self.count + n;
        let delta = mean - self.mean;
        let m2 = self.var * self.count + var * n + delta * delta * self.count * n / total;
        self.mean += delta * n / total;
        self.var = m2 / total;
        self.count = total;
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn std(&self) -> f64 {
        self.var.sqrt()
    }
}

/// One forward model `g(s, a) -> s'` with its optimizer.
#[derive(Debug, Clone)]
pub struct ForwardModel {
    net: Mlp,
    adam: Adam,
}

impl ForwardModel {
    pub fn new(state_dim: usize, action_dim: usize, hidden: &[usize], adam: AdamConfig, seed: u64) -> Result<Self> {
        let mut sizes = vec![state_dim + action_dim];
        sizes.extend(hidden);
        sizes.push(state_dim);
        let net = Mlp::new(&sizes, Activation::Identity, seed)?;
        Ok(Self {
            adam: Adam::new(&net, adam),
            net,
        })
    }

    pub fn from_net(net: Mlp, adam: AdamConfig) -> Self {
        Self {
            adam: Adam::new(&net, adam),
            net,
        }
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn predict(&self, state: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        let mut x = state.to_vec();
        x.extend_from_slice(action);
        self.net.forward(&x)
    }

    /// Mean squared prediction error over a batch, before the step.
    fn loss_and_step(&mut self, inputs: ArrayView2<f64>, targets: ArrayView2<f64>) -> Result<f64> {
        let tape = self.net.forward_tape(inputs)?;
        let diff = tape.output() - &targets;
        let n = inputs.nrows() as f64;
        let loss = diff.mapv(|d| d * d).sum() / n;
        let upstream = diff.mapv(|d| 2.0 * d / n);
        let grads = self.net.param_gradients(&tape, upstream.view())?;
        self.adam.step(&mut self.net, &grads)?;
        Ok(loss)
    }

    /// One Adam step on `mean ||g(s,a) - s'||²`; returns the pre-step loss.
    pub fn train(&mut self, inputs: ArrayView2<f64>, targets: ArrayView2<f64>) -> Result<f64> {
        if inputs.nrows() == 0 {
            return Err(Error::EmptyBatch);
        }
        self.loss_and_step(inputs, targets)
    }
}

/// Prediction-error bonus `||g(s, a) - s'||`.
pub fn icm_bonus(model: &ForwardModel, state: &[f64], action: &[f64], next_state: &[f64]) -> Result<f64> {
    Ok(euclidean(&model.predict(state, action)?, next_state))
}

/// Batched [`icm_bonus`] over `state ⊕ action` rows.
pub fn icm_bonuses(model: &ForwardModel, inputs: ArrayView2<f64>, next_states: ArrayView2<f64>) -> Result<Vec<f64>> {
    let pred = model.net.forward_batch(inputs)?;
    Ok(pred
        .rows()
        .into_iter()
        .zip(next_states.rows())
        .map(|(p, s)| p.iter().zip(s).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
        .collect())
}

#[derive(Debug, Clone)]
pub struct DynamicsEnsemble {
    members: Vec<ForwardModel>,
}

impl DynamicsEnsemble {
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        members: usize,
        adam: AdamConfig,
        seed: u64,
    ) -> Result<Self> {
        let members = (0..members as u64)
            .map(|i| ForwardModel::new(state_dim, action_dim, hidden, adam, derive_seed(seed, i)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { members })
    }

    pub fn from_models(members: Vec<ForwardModel>) -> Self {
        Self { members }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn member(&self, i: usize) -> &ForwardModel {
        &self.members[i]
    }

    pub fn predictions(&self, state: &[f64], action: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.members.iter().map(|m| m.predict(state, action)).collect()
    }

    /// One step per member on the same batch; returns each member's loss.
    pub fn train(&mut self, inputs: ArrayView2<f64>, targets: ArrayView2<f64>) -> Result<Vec<f64>> {
        if inputs.nrows() == 0 {
            return Err(Error::EmptyBatch);
        }
        self.members.iter_mut().map(|m| m.loss_and_step(inputs, targets)).collect()
    }

    /// Batched disagreement over `state ⊕ action` rows.
    pub fn bonuses(&self, inputs: ArrayView2<f64>) -> Result<Vec<f64>> {
        let preds: Vec<Array2<f64>> = self
            .members
            .iter()
            .map(|m| m.net.forward_batch(inputs))
            .collect::<Result<_>>()?;
        Ok((0..inputs.nrows())
            .map(|i| {
                let rows: Vec<Vec<f64>> = preds.iter().map(|p| p.row(i).to_vec()).collect();
                variance_mean(&rows)
            })
            .collect())
    }
}

/// Mean over dimensions of the population variance across `predictions`.
fn variance_mean(predictions: &[Vec<f64>]) -> f64 {
    let m = predictions.len() as f64;
    let dims = predictions[0].len();
    let mut total = 0.0;
    for d in 0..dims {
        let mean = predictions.iter().map(|p| p[d]).sum::<f64>() / m;
        total += predictions.iter().map(|p| (p[d] - mean).powi(2)).sum::<f64>() / m;
    }
    total / dims as f64
}

/// Mean per-dimension population variance of the ensemble's predicted next states.
pub fn disagreement_bonus(dynamics: &DynamicsEnsemble, state: &[f64], action: &[f64]) -> Result<f64> {
    let preds = dynamics.predictions(state, action)?;
    if preds.is_empty() {
        return Ok(0.0);
    }
    Ok(variance_mean(&preds))
}

/// Shorthand used by batch code: stacks two matrices side by side.
pub fn hstack(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    ndarray::concatenate(Axis(1), &[a, b]).expect("same row count")
}
