//! EPIC pseudo-distance between reward functions.
//!
//! Each reward is first canonicalized over a coverage distribution so that
//! potential shaping cancels, then the two canonical vectors are compared
//! with a Pearson distance `sqrt((1 - ρ) / 2)`.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng as _;

use crate::envs::Environment;
use crate::reward::RewardEnsemble;
use crate::{derive_seed, seeded, Error, Result};

pub const DEFAULT_COVERAGE: usize = 2048;
pub const DEFAULT_RESAMPLES: usize = 1024;

/// Rows evaluated per batched reward call during canonicalization.
const CHUNK_ROWS: usize = 1 << 16;

/// Batched reward `R(s, a, s')`.
pub trait RewardFunction {
    fn rewards(
        &self,
        states: ArrayView2<f64>,
        actions: ArrayView2<f64>,
        next_states: ArrayView2<f64>,
    ) -> Result<Array1<f64>>;
}

/// Ensemble-mean learned reward; ignores `s'`.
impl RewardFunction for RewardEnsemble {
    fn rewards(&self, states: ArrayView2<f64>, actions: ArrayView2<f64>, _: ArrayView2<f64>) -> Result<Array1<f64>> {
        let inputs = ndarray::concatenate(Axis(1), &[states, actions]).expect("same row count");
        Ok(Array1::from(self.mean_std_batch(inputs.view())?.0))
    }
}

/// Ground-truth reward of an environment.
pub struct TrueReward<'a>(pub &'a dyn Environment);

impl RewardFunction for TrueReward<'_> {
    fn rewards(&self, states: ArrayView2<f64>, actions: ArrayView2<f64>, _: ArrayView2<f64>) -> Result<Array1<f64>> {
        Ok(states
            .rows()
            .into_iter()
            .zip(actions.rows())
            .map(|(s, a)| self.0.true_reward(&s.to_vec(), &a.to_vec()))
            .collect())
    }
}

/// Reward defined by a per-transition closure.
pub struct FnReward<F>(pub F);

impl<F> RewardFunction for FnReward<F>
where
    F: Fn(&[f64], &[f64], &[f64]) -> f64,
{
    fn rewards(&self, states: ArrayView2<f64>, actions: ArrayView2<f64>, next: ArrayView2<f64>) -> Result<Array1<f64>> {
        Ok((0..states.nrows())
            .map(|i| (self.0)(&states.row(i).to_vec(), &actions.row(i).to_vec(), &next.row(i).to_vec()))
            .collect())
    }
}

/// `(s, a, s')` triples plus the number of Monte-Carlo draws per expectation.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageSample {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub next_states: Array2<f64>,
    pub resamples: usize,
}

impl CoverageSample {
    pub fn new(states: Array2<f64>, actions: Array2<f64>, next_states: Array2<f64>, resamples: usize) -> Result<Self> {
        if states.nrows() < 2 {
            return Err(Error::CoverageTooSmall(states.nrows()));
        }
        if actions.nrows() != states.nrows() || next_states.dim() != states.dim() {
            return Err(Error::DimensionMismatch {
                context: "coverage sample rows",
                expected: states.nrows(),
                actual: actions.nrows().min(next_states.nrows()),
            });
        }
        Ok(Self {
            states,
            actions,
            next_states,
            resamples: resamples.max(1),
        })
    }

    /// `size` triples from uniformly random actions, resetting with fresh seeds per episode.
    pub fn from_random_policy(env: &mut dyn Environment, size: usize, resamples: usize, seed: u64) -> Result<Self> {
        let spec = env.spec().clone();
        let mut rng = seeded(seed);
        let (sd, ad) = (spec.state_dim, spec.action_dim);
        let mut states = Vec::with_capacity(size * sd);
        let mut actions = Vec::with_capacity(size * ad);
        let mut next = Vec::with_capacity(size * sd);
        let mut episode = 0;
        let mut state = env.reset(derive_seed(seed, episode));
        for _ in 0..size {
            let action: Vec<f64> = (0..ad)
                .map(|j| rng.random_range(spec.action_low[j]..=spec.action_high[j]))
                .collect();
            let step = env.step(&action)?;
            states.extend_from_slice(&state);
            actions.extend_from_slice(&action);
            next.extend_from_slice(&step.next_state);
            state = step.next_state;
            if step.done {
                episode += 1;
                state = env.reset(derive_seed(seed, episode));
            }
        }
        Self::new(
            Array2::from_shape_vec((size, sd), states).expect("rows assembled above"),
            Array2::from_shape_vec((size, ad), actions).expect("rows assembled above"),
            Array2::from_shape_vec((size, sd), next).expect("rows assembled above"),
            resamples,
        )
    }

    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.states.nrows() == 0
    }
}

/// `mean_k R(x, A_k, S_k)` for each row `x` of `queries`.
fn expected_from(
    reward: &dyn RewardFunction,
    queries: ArrayView2<f64>,
    draw_actions: ArrayView2<f64>,
    draw_states: ArrayView2<f64>,
) -> Result<Vec<f64>> {
    let m = draw_actions.nrows();
    let per_chunk = (CHUNK_ROWS / m).max(1);
    let mut out = Vec::with_capacity(queries.nrows());
    for start in (0..queries.nrows()).step_by(per_chunk) {
        let end = (start + per_chunk).min(queries.nrows());
        let rows = (end - start) * m;
        let mut s = Array2::zeros((rows, queries.ncols()));
        let mut a = Array2::zeros((rows, draw_actions.ncols()));
        let mut s2 = Array2::zeros((rows, draw_states.ncols()));
        for (q, i) in (start..end).enumerate() {
            let block = s![q * m..(q + 1) * m, ..];
            s.slice_mut(block).assign(&queries.row(i).broadcast((m, queries.ncols())).expect("row broadcast"));
            a.slice_mut(block).assign(&draw_actions);
            s2.slice_mut(block).assign(&draw_states);
        }
        let r = reward.rewards(s.view(), a.view(), s2.view())?;
        for q in 0..end - start {
            out.push(r.slice(s![q * m..(q + 1) * m]).sum() / m as f64);
        }
    }
    Ok(out)
}

/// Canonical values `C(R)(s, a, s')` of every triple in `sample`:
///
/// `R(s,a,s') + γ E[R(s',A,S')] - E[R(s,A,S')] - γ E[R(S,A,S')]`
///
/// The expectations share one set of draws `(A_k, S_k)` from the sample with
/// `S' = S`, so a potential-shaping term cancels exactly.
pub fn canonicalize(reward: &dyn RewardFunction, sample: &CoverageSample, gamma: f64, seed: u64) -> Result<Vec<f64>> {
    let n = sample.len();
    if n < 2 {
        return Err(Error::CoverageTooSmall(n));
    }
    let mut rng = seeded(seed);
    let m = sample.resamples;
    let a_idx: Vec<usize> = (0..m).map(|_| rng.random_range(0..n)).collect();
    let s_idx: Vec<usize> = (0..m).map(|_| rng.random_range(0..n)).collect();
    let draw_actions = sample.actions.select(Axis(0), &a_idx);
    let draw_states = sample.states.select(Axis(0), &s_idx);

    let direct = reward.rewards(sample.states.view(), sample.actions.view(), sample.next_states.view())?;
    let from_next = expected_from(reward, sample.next_states.view(), draw_actions.view(), draw_states.view())?;
    let from_state = expected_from(reward, sample.states.view(), draw_actions.view(), draw_states.view())?;
    let baseline = reward
        .rewards(draw_states.view(), draw_actions.view(), draw_states.view())?
        .sum()
        / m as f64;
    Ok((0..n)
        .map(|i| direct[i] + gamma * from_next[i] - from_state[i] - gamma * baseline)
        .collect())
}

/// Centered, unit-norm copy of `x`; `None` when `x` is constant.
fn standardized(x: &[f64]) -> Option<Vec<f64>> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let centered: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let norm = centered.iter().map(|v| v * v).sum::<f64>().sqrt();
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if norm <= 1e-12 * n.sqrt() * scale.max(1.0) {
        return None;
    }
    Some(centered.into_iter().map(|v| v / norm).collect())
}

/// Pearson correlation; `DegenerateReward` if either input is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let xs = standardized(x).ok_or(Error::DegenerateReward)?;
    let ys = standardized(y).ok_or(Error::DegenerateReward)?;
    Ok(xs.iter().zip(&ys).map(|(a, b)| a * b).sum::<f64>().clamp(-1.0, 1.0))
}

/// `sqrt((1 - ρ) / 2)` for canonical vectors, clamped to `[0, 1]`.
///
/// Evaluated as half the distance between the standardized vectors, which
/// is the same quantity without the cancellation in `1 - ρ`.
pub fn pearson_distance(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::CoverageTooSmall(x.len().min(y.len())));
    }
    let xs = standardized(x).ok_or(Error::DegenerateReward)?;
    let ys = standardized(y).ok_or(Error::DegenerateReward)?;
    let d = xs.iter().zip(&ys).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() / 2.0;
    Ok(d.clamp(0.0, 1.0))
}

/// EPIC distance between two rewards over `sample`; both are canonicalized
/// with the same draws.
pub fn epic_distance(
    r1: &dyn RewardFunction,
    r2: &dyn RewardFunction,
    sample: &CoverageSample,
    gamma: f64,
    seed: u64,
) -> Result<f64> {
    let c1 = canonicalize(r1, sample, gamma, seed)?;
    let c2 = canonicalize(r2, sample, gamma, seed)?;
    pearson_distance(&c1, &c2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::make_env;

    fn sample(n: usize, resamples: usize, seed: u64) -> CoverageSample {
        let mut env = make_env("PointReach-dense").unwrap();
        CoverageSample::from_random_policy(env.as_mut(), n, resamples, seed).unwrap()
    }

    fn base(s: &[f64], a: &[f64], _: &[f64]) -> f64 {
        (s[0] * 1.3 - s[1]).sin() + 0.5 * a[0] * s[2] - a[1] * a[1]
    }

    fn potential(s: &[f64]) -> f64 {
        s[0] * s[0] + 2.0 * s[1] - s[3]
    }

    #[test]
    fn constant_reward_is_degenerate() {
        let cov = sample(256, 64, 1);
        let c = canonicalize(&FnReward(|_: &[f64], _: &[f64], _: &[f64]| 3.0), &cov, 0.99, 2).unwrap();
        assert!(c.iter().all(|v| v.abs() < 1e-12));
        let err = epic_distance(&FnReward(|_: &[f64], _: &[f64], _: &[f64]| 3.0), &FnReward(base), &cov, 0.99, 2);
        assert!(matches!(err, Err(Error::DegenerateReward)));
    }

    #[test]
    fn shaping_cancels() {
        let cov = sample(512, 256, 3);
        let shaped = FnReward(|s: &[f64], a: &[f64], s2: &[f64]| base(s, a, s2) + 0.99 * potential(s2) - potential(s));
        let c1 = canonicalize(&FnReward(base), &cov, 0.99, 4).unwrap();
        let c2 = canonicalize(&shaped, &cov, 0.99, 4).unwrap();
        for (a, b) in c1.iter().zip(&c2) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(epic_distance(&FnReward(base), &shaped, &cov, 0.99, 4).unwrap() < 1e-6);
    }

    #[test]
    fn affine_and_negation() {
        let cov = sample(300, 100, 5);
        let r = FnReward(base);
        let affine = FnReward(|s: &[f64], a: &[f64], s2: &[f64]| 2.5 * base(s, a, s2) - 7.0);
        let neg = FnReward(|s: &[f64], a: &[f64], s2: &[f64]| -base(s, a, s2));
        assert!(epic_distance(&r, &r, &cov, 0.99, 6).unwrap() < 1e-12);
        assert!(epic_distance(&r, &affine, &cov, 0.99, 6).unwrap() < 1e-9);
        assert!((epic_distance(&r, &neg, &cov, 0.99, 6).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn symmetric_and_deterministic() {
        let cov = sample(200, 50, 7);
        let other = FnReward(|s: &[f64], a: &[f64], _: &[f64]| s[1] * a[0] + s[3].cos());
        let d12 = epic_distance(&FnReward(base), &other, &cov, 0.99, 8).unwrap();
        let d21 = epic_distance(&other, &FnReward(base), &cov, 0.99, 8).unwrap();
        assert_eq!(d12.to_bits(), d21.to_bits());
        assert_eq!(d12, epic_distance(&FnReward(base), &other, &cov, 0.99, 8).unwrap());
        assert!((0.0..=1.0).contains(&d12));
    }

    #[test]
    fn pearson_examples() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        assert!(matches!(pearson(&[1.0, 1.0], &[1.0, 2.0]), Err(Error::DegenerateReward)));
        let d = pearson_distance(&[1.0, 0.0, -1.0, 0.0], &[0.0, 1.0, 0.0, -1.0]).unwrap();
        assert!((d - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn true_reward_against_ensemble_is_in_range() {
        let env = make_env("PointReach-sparse").unwrap();
        let mut env2 = make_env("PointReach-dense").unwrap();
        let cov = CoverageSample::from_random_policy(env2.as_mut(), 256, 32, 9).unwrap();
        let ens = RewardEnsemble::new(4, 2, Default::default(), 1).unwrap();
        let dense = TrueReward(env2.as_ref());
        let d = epic_distance(&dense, &ens, &cov, 0.99, 1).unwrap();
        assert!((0.0..=1.0).contains(&d));
        // sparse reward is zero on most random-policy transitions but not all
        let _ = epic_distance(&TrueReward(env.as_ref()), &ens, &cov, 0.99, 1);
    }

    #[test]
    fn small_samples_are_rejected() {
        let one = Array2::zeros((1, 2));
        assert!(matches!(
            CoverageSample::new(one.clone(), one.clone(), one, 4),
            Err(Error::CoverageTooSmall(1))
        ));
    }
}
