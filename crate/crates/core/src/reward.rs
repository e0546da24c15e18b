//! Reward-function ensemble trained from pairwise segment preferences.
//!
//! Each member maps `state ⊕ action` to a scalar in `(-1, 1)`. A pair of
//! segments is scored with a Bradley-Terry model over summed rewards, and
//! members minimize the cross-entropy against teacher labels. The ensemble
//! mean is the extrinsic reward; the population standard deviation across
//! members is the exploration bonus.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::nn::{Activation, Adam, AdamConfig, Gradients, Mlp, MlpSnapshot};
use crate::replay::RewardLabeler;
use crate::{derive_seed, seeded, Error, Result, Rng};

/// Fixed-length window of `(state, action)` pairs from one episode.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Segment {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    /// Ground-truth return; only the teacher reads this.
    pub true_return: Option<f64>,
    pub episode: u64,
    pub start: usize,
}

impl Segment {
    pub fn new(states: Vec<Vec<f64>>, actions: Vec<Vec<f64>>) -> Self {
        debug_assert_eq!(states.len(), actions.len());
        Self {
            states,
            actions,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Rows of `state ⊕ action`, shape `(len, state_dim + action_dim)`.
    pub fn inputs(&self) -> Array2<f64> {
        let width = self
            .states
            .first()
            .map_or(0, |s| s.len() + self.actions[0].len());
        let mut data = Vec::with_capacity(self.len() * width);
        for (s, a) in self.states.iter().zip(&self.actions) {
            data.extend_from_slice(s);
            data.extend_from_slice(a);
        }
        Array2::from_shape_vec((self.len(), width), data).expect("uniform row width")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreferenceLabel {
    FirstPreferred,
    SecondPreferred,
    Equal,
    /// Incomparable; never enters the training set.
    Discarded,
}

impl PreferenceLabel {
    /// Probability that the second segment is preferred.
    pub fn target(self) -> Option<f64> {
        match self {
            PreferenceLabel::FirstPreferred => Some(0.0),
            PreferenceLabel::SecondPreferred => Some(1.0),
            PreferenceLabel::Equal => Some(0.5),
            PreferenceLabel::Discarded => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceRecord {
    pub first: Segment,
    pub second: Segment,
    pub label: PreferenceLabel,
}

impl PreferenceRecord {
    pub fn target(&self) -> Option<f64> {
        self.label.target()
    }
}

/// Numerically stable logistic function.
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Sum of a network's rewards over a segment.
pub fn segment_return(net: &Mlp, segment: &Segment) -> Result<f64> {
    if segment.is_empty() {
        return Ok(0.0);
    }
    Ok(net.forward_batch(segment.inputs().view())?.sum())
}

/// `P[second ≻ first]` under a single reward network.
pub fn predict_preference(net: &Mlp, first: &Segment, second: &Segment) -> Result<f64> {
    if first.len() != second.len() {
        return Err(Error::SegmentLengthMismatch(first.len(), second.len()));
    }
    let r0 = segment_return(net, first)?;
    let r1 = segment_return(net, second)?;
    Ok(logistic(r1 - r0))
}

/// Mean cross-entropy of `net` on the usable records of `batch`, with gradients.
///
/// Per record with soft target `p` and logit `d = R(second) - R(first)`,
/// the loss is `softplus(d) - p * d`.
pub fn reward_loss(net: &Mlp, batch: &[&PreferenceRecord]) -> Result<(f64, Gradients)> {
    let usable: Vec<(&PreferenceRecord, f64)> = batch
        .iter()
        .filter_map(|r| r.target().map(|p| (*r, p)))
        .collect();
    if usable.is_empty() {
        return Err(Error::EmptyBatch);
    }

    let width = net.input_dim();
    let mut data = Vec::new();
    let mut spans = Vec::with_capacity(usable.len());
    let mut row = 0;
    for (rec, _) in &usable {
        let (h0, h1) = (rec.first.len(), rec.second.len());
        if h0 != h1 {
            return Err(Error::SegmentLengthMismatch(h0, h1));
        }
        for seg in [&rec.first, &rec.second] {
            for (s, a) in seg.states.iter().zip(&seg.actions) {
                if s.len() + a.len() != width {
                    return Err(Error::DimensionMismatch {
                        context: "reward input",
                        expected: width,
                        actual: s.len() + a.len(),
                    });
                }
                data.extend_from_slice(s);
                data.extend_from_slice(a);
            }
        }
        spans.push((row, h0));
        row += 2 * h0;
    }
    let inputs = Array2::from_shape_vec((row, width), data).expect("rows assembled above");
    let tape = net.forward_tape(inputs.view())?;
    let out = tape.output();

    let n = usable.len() as f64;
    let mut loss = 0.0;
    let mut upstream = Array2::zeros((row, 1));
    for ((start, h), (_, p)) in spans.iter().zip(&usable) {
        let r0: f64 = out.slice(ndarray::s![*start..start + h, 0]).sum();
        let r1: f64 = out.slice(ndarray::s![start + h..start + 2 * h, 0]).sum();
        let d = r1 - r0;
        loss += softplus(d) - p * d;
        let g = (logistic(d) - p) / n;
        upstream
            .slice_mut(ndarray::s![*start..start + h, 0])
            .fill(-g);
        upstream
            .slice_mut(ndarray::s![start + h..start + 2 * h, 0])
            .fill(g);
    }
    let grads = net.param_gradients(&tape, upstream.view())?;
    Ok((loss / n, grads))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardEnsembleConfig {
    pub members: usize,
    pub hidden: Vec<usize>,
    pub adam: AdamConfig,
    pub epochs: usize,
    /// Upper bound on records per minibatch; the effective size is `min(|D|, batch_size)`.
    pub batch_size: usize,
}

impl Default for RewardEnsembleConfig {
    fn default() -> Self {
        Self {
            members: 3,
            hidden: vec![64, 64],
            adam: AdamConfig::default(),
            epochs: 50,
            batch_size: 128,
        }
    }
}

#[derive(Debug, Clone)]
struct Member {
    net: Mlp,
    adam: Adam,
    rng: Rng,
}

#[derive(Debug, Clone)]
pub struct RewardEnsemble {
    members: Vec<Member>,
    state_dim: usize,
    action_dim: usize,
    config: RewardEnsembleConfig,
    sessions: u64,
}

impl RewardEnsemble {
    /// Members get independent initializations and shuffling streams derived from `seed`.
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        config: RewardEnsembleConfig,
        seed: u64,
    ) -> Result<Self> {
        if config.members == 0 {
            return Err(Error::InvalidNetwork("ensemble needs at least one member".into()));
        }
        if config.members == 1 {
            log::warn!("single-member reward ensemble: standard deviation is always 0");
        }
        let mut sizes = vec![state_dim + action_dim];
        sizes.extend(&config.hidden);
        sizes.push(1);
        let members = (0..config.members as u64)
            .map(|i| {
                let net = Mlp::new(&sizes, Activation::Tanh, derive_seed(seed, 2 * i))?;
                Ok(Member {
                    adam: Adam::new(&net, config.adam),
                    net,
                    rng: seeded(derive_seed(seed, 2 * i + 1)),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            members,
            state_dim,
            action_dim,
            config,
            sessions: 0,
        })
    }

    /// Ensemble whose members are all copies of `net`.
    pub fn from_members(nets: Vec<Mlp>, state_dim: usize, action_dim: usize, seed: u64) -> Result<Self> {
        if nets.is_empty() {
            return Err(Error::InvalidNetwork("ensemble needs at least one member".into()));
        }
        let config = RewardEnsembleConfig {
            members: nets.len(),
            hidden: nets[0].sizes()[1..nets[0].sizes().len() - 1].to_vec(),
            ..RewardEnsembleConfig::default()
        };
        let members = nets
            .into_iter()
            .enumerate()
            .map(|(i, net)| {
                if net.input_dim() != state_dim + action_dim || net.output_dim() != 1 {
                    return Err(Error::InvalidNetwork(format!("member {i} has the wrong shape")));
                }
                Ok(Member {
                    adam: Adam::new(&net, config.adam),
                    net,
                    rng: seeded(derive_seed(seed, i as u64)),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            members,
            state_dim,
            action_dim,
            config,
            sessions: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn config(&self) -> &RewardEnsembleConfig {
        &self.config
    }

    pub fn input_dim(&self) -> usize {
        self.state_dim + self.action_dim
    }

    pub fn sessions(&self) -> u64 {
        self.sessions
    }

    pub fn member(&self, i: usize) -> &Mlp {
        &self.members[i].net
    }

    pub fn member_mut(&mut self, i: usize) -> &mut Mlp {
        &mut self.members[i].net
    }

    pub fn members(&self) -> impl Iterator<Item = &Mlp> {
        self.members.iter().map(|m| &m.net)
    }

    fn input(&self, state: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        if state.len() != self.state_dim {
            return Err(Error::DimensionMismatch {
                context: "reward state",
                expected: self.state_dim,
                actual: state.len(),
            });
        }
        if action.len() != self.action_dim {
            return Err(Error::DimensionMismatch {
                context: "reward action",
                expected: self.action_dim,
                actual: action.len(),
            });
        }
        let mut x = state.to_vec();
        x.extend_from_slice(action);
        Ok(x)
    }

    /// Every member's prediction at `(state, action)`.
    pub fn member_rewards(&self, state: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        let x = self.input(state, action)?;
        self.members
            .iter()
            .map(|m| Ok(m.net.forward(&x)?[0]))
            .collect()
    }

    pub fn r_mean(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        Ok(mean(&self.member_rewards(state, action)?))
    }

    pub fn r_std(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        Ok(population_std(&self.member_rewards(state, action)?))
    }

    /// Member predictions for a batch, shape `(rows, members)`.
    pub fn predict_batch(&self, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((inputs.nrows(), self.members.len()));
        for (j, m) in self.members.iter().enumerate() {
            let col = m.net.forward_batch(inputs)?;
            out.column_mut(j).assign(&col.column(0));
        }
        Ok(out)
    }

    /// Per-row ensemble mean and population standard deviation.
    pub fn mean_std_batch(&self, inputs: ArrayView2<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
        let preds = self.predict_batch(inputs)?;
        Ok(preds
            .axis_iter(Axis(0))
            .map(|row| {
                let row = row.to_vec();
                (mean(&row), population_std(&row))
            })
            .unzip())
    }

    /// Per-member `P[second ≻ first]`.
    pub fn member_preferences(&self, first: &Segment, second: &Segment) -> Result<Vec<f64>> {
        self.members
            .iter()
            .map(|m| predict_preference(&m.net, first, second))
            .collect()
    }

    /// `P[second ≻ first]` under the ensemble-mean reward.
    pub fn predict_preference(&self, first: &Segment, second: &Segment) -> Result<f64> {
        if first.len() != second.len() {
            return Err(Error::SegmentLengthMismatch(first.len(), second.len()));
        }
        let n = self.members.len() as f64;
        let mut r0 = 0.0;
        let mut r1 = 0.0;
        for m in &self.members {
            r0 += segment_return(&m.net, first)?;
            r1 += segment_return(&m.net, second)?;
        }
        Ok(logistic(r1 / n - r0 / n))
    }

    /// One feedback session with the configured epochs and batch size.
    pub fn train_session(&mut self, data: &[PreferenceRecord]) -> Result<Vec<f64>> {
        let (epochs, batch) = (self.config.epochs, self.config.batch_size);
        self.train_session_with(data, epochs, batch)
    }

    /// Trains every member independently over `data` for `epochs` passes,
    /// each member shuffling with its own stream.
    ///
    /// Returns each member's mean loss over its final epoch.
    pub fn train_session_with(
        &mut self,
        data: &[PreferenceRecord],
        epochs: usize,
        batch_size: usize,
    ) -> Result<Vec<f64>> {
        let usable: Vec<&PreferenceRecord> =
            data.iter().filter(|r| r.target().is_some()).collect();
        if usable.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let batch = batch_size.max(1).min(usable.len());
        let mut finals = Vec::with_capacity(self.members.len());
        for member in &mut self.members {
            let mut order: Vec<usize> = (0..usable.len()).collect();
            let mut last = 0.0;
            for _ in 0..epochs.max(1) {
                order.shuffle(&mut member.rng);
                let mut total = 0.0;
                let mut count = 0;
                for chunk in order.chunks(batch) {
                    let records: Vec<&PreferenceRecord> = chunk.iter().map(|&i| usable[i]).collect();
                    let (loss, grads) = reward_loss(&member.net, &records)?;
                    member.adam.step(&mut member.net, &grads)?;
                    total += loss * records.len() as f64;
                    count += records.len();
                }
                last = total / count as f64;
            }
            finals.push(last);
        }
        self.sessions += 1;
        Ok(finals)
    }

    pub fn snapshot(&self) -> EnsembleSnapshot {
        EnsembleSnapshot {
            members: self.members.iter().map(|m| m.net.snapshot()).collect(),
            sessions: self.sessions,
        }
    }
}

impl RewardLabeler for RewardEnsemble {
    fn input_dim(&self) -> usize {
        RewardEnsemble::input_dim(self)
    }

    fn label(&self, inputs: ArrayView2<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
        self.mean_std_batch(inputs)
    }
}

/// Checkpoint: member snapshots plus the session counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSnapshot {
    pub members: Vec<MlpSnapshot>,
    pub sessions: u64,
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Standard deviation with divisor `N`; exactly zero for fewer than two
/// values or when all values are equal.
pub fn population_std(values: &[f64]) -> f64 {
    if values.len() < 2 || values.iter().all(|v| *v == values[0]) {
        return 0.0;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / values.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use crate::Rng;
    use rand::Rng as _;

    fn random_segment(rng: &mut Rng, len: usize, sd: usize, ad: usize) -> Segment {
        let states = (0..len)
            .map(|_| (0..sd).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let actions = (0..len)
            .map(|_| (0..ad).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        Segment::new(states, actions)
    }

    /// Network whose output is `tanh(w · x)` with a single weight on the first input.
    fn linear_reward(w: f64) -> Mlp {
        let mut net = Mlp::zeros(&[1, 1], Activation::Tanh).unwrap();
        net.set_params(&[w, 0.0]).unwrap();
        net
    }

    fn scalar_segment(values: &[f64]) -> Segment {
        Segment::new(values.iter().map(|&v| vec![v]).collect(), vec![vec![]; values.len()])
    }

    #[test]
    fn identical_segments_are_a_coin_flip() {
        let net = Mlp::new(&[3, 8, 1], Activation::Tanh, 1).unwrap();
        let seg = random_segment(&mut seeded(2), 10, 2, 1);
        assert_eq!(predict_preference(&net, &seg, &seg).unwrap(), 0.5);
    }

    #[test]
    fn log_three_margin_gives_three_quarters() {
        // tanh(w) = ln 3 / 2 per step, two steps in the second segment, zero in the first
        let w = (3f64.ln() / 2.0).atanh();
        let net = linear_reward(w);
        let first = scalar_segment(&[0.0, 0.0]);
        let second = scalar_segment(&[1.0, 1.0]);
        let p = predict_preference(&net, &first, &second).unwrap();
        assert!((p - 0.75).abs() < 1e-12, "{p}");
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let net = linear_reward(1.0);
        let err = predict_preference(&net, &scalar_segment(&[0.0]), &scalar_segment(&[0.0, 1.0]));
        assert!(matches!(err, Err(Error::SegmentLengthMismatch(1, 2))));
    }

    #[test]
    fn coin_flip_loss_is_ln2() {
        let net = Mlp::zeros(&[1, 1], Activation::Tanh).unwrap();
        let seg = scalar_segment(&[0.3, 0.1]);
        for label in [PreferenceLabel::FirstPreferred, PreferenceLabel::SecondPreferred, PreferenceLabel::Equal] {
            let rec = PreferenceRecord {
                first: seg.clone(),
                second: seg.clone(),
                label,
            };
            let (loss, _) = reward_loss(&net, &[&rec]).unwrap();
            assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
        }
    }

    #[test]
    fn all_discarded_batch_is_empty() {
        let net = linear_reward(1.0);
        let rec = PreferenceRecord {
            first: scalar_segment(&[0.0]),
            second: scalar_segment(&[1.0]),
            label: PreferenceLabel::Discarded,
        };
        assert!(matches!(reward_loss(&net, &[&rec]), Err(Error::EmptyBatch)));
        let mut ens = RewardEnsemble::new(1, 0, RewardEnsembleConfig::default(), 0).unwrap();
        assert!(matches!(ens.train_session(&[]), Err(Error::EmptyBatch)));
        assert!(matches!(ens.train_session(&[rec]), Err(Error::EmptyBatch)));
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let mut rng = seeded(5);
        let net = Mlp::new(&[3, 5, 1], Activation::Tanh, 8).unwrap();
        let rec = PreferenceRecord {
            first: random_segment(&mut rng, 4, 2, 1),
            second: random_segment(&mut rng, 4, 2, 1),
            label: PreferenceLabel::SecondPreferred,
        };
        let (_, grads) = reward_loss(&net, &[&rec]).unwrap();
        let analytic = grads.flatten();
        let base = net.params();
        let mut probe = net.clone();
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] += 1e-5;
            probe.set_params(&p).unwrap();
            let plus = reward_loss(&probe, &[&rec]).unwrap().0;
            p[i] -= 2e-5;
            probe.set_params(&p).unwrap();
            let minus = reward_loss(&probe, &[&rec]).unwrap().0;
            let fd = (plus - minus) / 2e-5;
            let err = (fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(1e-6);
            assert!(err < 1e-4, "param {i}: {fd} vs {}", analytic[i]);
        }
    }

    #[test]
    fn extreme_margins_stay_finite() {
        let net = linear_reward(50.0);
        let first = scalar_segment(&[-1.0; 50]);
        let second = scalar_segment(&[1.0; 50]);
        for label in [PreferenceLabel::FirstPreferred, PreferenceLabel::SecondPreferred] {
            let rec = PreferenceRecord {
                first: first.clone(),
                second: second.clone(),
                label,
            };
            let (loss, grads) = reward_loss(&net, &[&rec]).unwrap();
            assert!(loss.is_finite());
            assert!(grads.flatten().iter().all(|g| g.is_finite()));
        }
        // wrong-way label costs about the full logit of 2H
        let rec = PreferenceRecord {
            first,
            second,
            label: PreferenceLabel::FirstPreferred,
        };
        assert!((reward_loss(&net, &[&rec]).unwrap().0 - 100.0).abs() < 1e-6);
    }

    #[test]
    fn overfits_one_separated_pair() {
        let mut rng = seeded(3);
        let good = random_segment(&mut rng, 10, 2, 1);
        let mut bad = good.clone();
        for s in &mut bad.states {
            s[0] -= 2.0;
        }
        let rec = PreferenceRecord {
            first: bad,
            second: good,
            label: PreferenceLabel::SecondPreferred,
        };
        let mut ens = RewardEnsemble::new(2, 1, RewardEnsembleConfig::default(), 4).unwrap();
        let initial: Vec<f64> = ens
            .members()
            .map(|m| reward_loss(m, &[&rec]).unwrap().0)
            .collect();
        let mut trace = Vec::new();
        for _ in 0..5 {
            trace.push(ens.train_session_with(std::slice::from_ref(&rec), 10, 128).unwrap());
        }
        for (m, init) in initial.iter().enumerate() {
            let last = trace.last().unwrap()[m];
            assert!(last < 0.1, "member {m} final loss {last}");
            assert!(last < *init);
            assert!(trace.windows(2).all(|w| w[1][m] <= w[0][m]));
        }
    }

    #[test]
    fn members_diverge() {
        let ens = RewardEnsemble::new(4, 2, RewardEnsembleConfig::default(), 0).unwrap();
        let a = ens.member(0).params();
        let b = ens.member(1).params();
        let linf = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(linf > 0.0);
    }

    #[test]
    fn mean_and_std_of_known_members() {
        let a = linear_reward((-0.5f64).atanh());
        let b = linear_reward(0.5f64.atanh());
        let ens = RewardEnsemble::from_members(vec![a.clone(), b], 1, 0, 0).unwrap();
        assert!(ens.r_mean(&[1.0], &[]).unwrap().abs() < 1e-15);
        assert!((ens.r_std(&[1.0], &[]).unwrap() - 0.5).abs() < 1e-15);
        let same = RewardEnsemble::from_members(vec![a.clone(), a.clone(), a.clone()], 1, 0, 0).unwrap();
        assert_eq!(same.r_std(&[0.7], &[]).unwrap(), 0.0);
        assert_eq!(same.r_mean(&[0.7], &[]).unwrap(), a.forward(&[0.7]).unwrap()[0]);
    }

    #[test]
    fn batch_statistics_match_pointwise() {
        let ens = RewardEnsemble::new(4, 2, RewardEnsembleConfig::default(), 9).unwrap();
        let mut rng = seeded(10);
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let x = crate::nn::stack_rows(rows.iter().map(|r| r.as_slice()), 6);
        let (m, s) = ens.mean_std_batch(x.view()).unwrap();
        for (i, r) in rows.iter().enumerate() {
            assert!((ens.r_mean(&r[..4], &r[4..]).unwrap() - m[i]).abs() < 1e-12);
            assert!((ens.r_std(&r[..4], &r[4..]).unwrap() - s[i]).abs() < 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn preference_complement(seed in any::<u64>()) {
            let mut rng = seeded(seed);
            let net = Mlp::new(&[3, 8, 1], Activation::Tanh, seed).unwrap();
            let a = random_segment(&mut rng, 6, 2, 1);
            let b = random_segment(&mut rng, 6, 2, 1);
            let p01 = predict_preference(&net, &a, &b).unwrap();
            let p10 = predict_preference(&net, &b, &a).unwrap();
            prop_assert!((p01 + p10 - 1.0).abs() < 1e-12);
            prop_assert!(p01 > 0.0 && p01 < 1.0);
            let (ra, rb) = (segment_return(&net, &a).unwrap(), segment_return(&net, &b).unwrap());
            if rb > ra {
                prop_assert!(p01 > 0.5);
            }
        }

        #[test]
        fn std_matches_moment_formula(seed in any::<u64>()) {
            let ens = RewardEnsemble::new(2, 1, RewardEnsembleConfig { members: 5, ..Default::default() }, seed).unwrap();
            let mut rng = seeded(seed ^ 1);
            let s = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let a = [rng.random_range(-1.0..1.0)];
            let outs: Vec<f64> = ens.members().map(|m| {
                let mut x = s.to_vec();
                x.extend_from_slice(&a);
                m.forward(&x).unwrap()[0]
            }).collect();
            let n = outs.len() as f64;
            let m = outs.iter().sum::<f64>() / n;
            let var = outs.iter().map(|v| v * v).sum::<f64>() / n - m * m;
            prop_assert!((ens.r_std(&s, &a).unwrap() - var.max(0.0).sqrt()).abs() < 1e-10);
            prop_assert!((ens.r_mean(&s, &a).unwrap() - m).abs() < 1e-12);
            prop_assert!(ens.r_mean(&s, &a).unwrap().abs() < 1.0);
        }
    }
}
