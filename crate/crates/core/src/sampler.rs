//! Choosing which segment pairs to show the teacher.

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::nn::stack_rows;
use crate::replay::ReplayBuffer;
use crate::reward::{logistic, population_std, RewardEnsemble, Segment};
use crate::{Error, Result, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    Uniform,
    Disagreement,
}

/// Draws `count` pairs of length-`h` windows, each uniform over every valid
/// `(episode, start)` position in the buffer. Windows never cross episodes.
pub fn generate_candidates(
    buffer: &ReplayBuffer,
    count: usize,
    h: usize,
    rng: &mut Rng,
) -> Result<Vec<(Segment, Segment)>> {
    let spans: Vec<_> = buffer
        .episodes()
        .into_iter()
        .filter(|s| h > 0 && s.indices.len() >= h)
        .collect();
    if spans.is_empty() {
        return Err(Error::NoEpisodeLongEnough(h));
    }
    let mut cumulative = Vec::with_capacity(spans.len());
    let mut total = 0usize;
    for s in &spans {
        total += s.indices.len() - h + 1;
        cumulative.push(total);
    }
    let draw = |rng: &mut Rng| {
        let k = rng.random_range(0..total);
        let e = cumulative.partition_point(|&c| c <= k);
        let offset = k - if e == 0 { 0 } else { cumulative[e - 1] };
        window(buffer, &spans[e].indices[offset..offset + h])
    };
    Ok((0..count).map(|_| (draw(rng), draw(rng))).collect())
}

fn window(buffer: &ReplayBuffer, indices: &[usize]) -> Segment {
    let first = buffer.get(indices[0]);
    let mut seg = Segment {
        states: Vec::with_capacity(indices.len()),
        actions: Vec::with_capacity(indices.len()),
        true_return: Some(0.0),
        episode: first.episode,
        start: first.step,
    };
    let mut ret = 0.0;
    for &i in indices {
        let t = buffer.get(i);
        seg.states.push(t.state.clone());
        seg.actions.push(t.action.clone());
        ret += t.true_reward;
    }
    seg.true_return = Some(ret);
    seg
}

/// Per-member segment returns for every candidate: `[member][pair] = (R first, R second)`.
fn member_returns(ensemble: &RewardEnsemble, candidates: &[(Segment, Segment)]) -> Result<Vec<Vec<(f64, f64)>>> {
    let width = ensemble.input_dim();
    let mut rows = Vec::new();
    let mut lens = Vec::with_capacity(candidates.len());
    for (a, b) in candidates {
        if a.len() != b.len() {
            return Err(Error::SegmentLengthMismatch(a.len(), b.len()));
        }
        for seg in [a, b] {
            for (s, act) in seg.states.iter().zip(&seg.actions) {
                let mut x = s.clone();
                x.extend_from_slice(act);
                if x.len() != width {
                    return Err(Error::DimensionMismatch {
                        context: "candidate segment",
                        expected: width,
                        actual: x.len(),
                    });
                }
                rows.push(x);
            }
        }
        lens.push(a.len());
    }
    let inputs = stack_rows(rows.iter().map(|r| r.as_slice()), width);
    let preds = ensemble.predict_batch(inputs.view())?;
    let mut out = vec![Vec::with_capacity(candidates.len()); ensemble.len()];
    for (m, col) in preds.columns().into_iter().enumerate() {
        let mut row = 0;
        for &h in &lens {
            let r0: f64 = col.slice(ndarray::s![row..row + h]).sum();
            let r1: f64 = col.slice(ndarray::s![row + h..row + 2 * h]).sum();
            out[m].push((r0, r1));
            row += 2 * h;
        }
    }
    Ok(out)
}

/// Population standard deviation across members of `P[second ≻ first]`, per pair.
pub fn disagreement_scores(ensemble: &RewardEnsemble, candidates: &[(Segment, Segment)]) -> Result<Vec<f64>> {
    let returns = member_returns(ensemble, candidates)?;
    Ok((0..candidates.len())
        .map(|j| {
            let probs: Vec<f64> = returns.iter().map(|m| logistic(m[j].1 - m[j].0)).collect();
            population_std(&probs)
        })
        .collect())
}

/// Indices of the `n` highest scores; ties go to the lower index.
pub fn top_k(scores: &[f64], n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    order.truncate(n);
    order
}

/// Picks `n` candidate indices to send to the teacher.
pub fn select_queries(
    ensemble: &RewardEnsemble,
    candidates: &[(Segment, Segment)],
    n: usize,
    mode: SamplingMode,
    rng: &mut Rng,
) -> Result<Vec<usize>> {
    if candidates.is_empty() {
        return Err(Error::NoCandidates);
    }
    if n > candidates.len() {
        return Err(Error::TooFewCandidates {
            requested: n,
            available: candidates.len(),
        });
    }
    match mode {
        SamplingMode::Uniform => {
            let mut order: Vec<usize> = (0..candidates.len()).collect();
            order.shuffle(rng);
            order.truncate(n);
            Ok(order)
        }
        SamplingMode::Disagreement => Ok(top_k(&disagreement_scores(ensemble, candidates)?, n)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::replay::Transition;
    use crate::reward::RewardEnsembleConfig;
    use crate::seeded;

    fn fill(buffer: &mut ReplayBuffer, episodes: u64, len: usize) {
        for e in 0..episodes {
            for step in 0..len {
                let x = e as f64 + step as f64 * 0.01;
                buffer
                    .push(Transition {
                        state: vec![x, 0.0, 0.0, 0.0],
                        action: vec![0.0, 0.0],
                        next_state: vec![x, 0.0, 0.0, 0.0],
                        r_ext: 0.0,
                        r_int: 0.0,
                        true_reward: step as f64,
                        done: false,
                        episode: e,
                        step,
                        reward_version: 0,
                    })
                    .unwrap();
            }
        }
    }

    #[test]
    fn windows_stay_in_bounds() {
        let mut buf = ReplayBuffer::new(1000);
        fill(&mut buf, 1, 100);
        let pairs = generate_candidates(&buf, 500, 50, &mut seeded(1)).unwrap();
        for (a, b) in &pairs {
            for s in [a, b] {
                assert!(s.start <= 50);
                assert_eq!(s.len(), 50);
                let expected: f64 = (s.start..s.start + 50).map(|k| k as f64).sum();
                assert_eq!(s.true_return, Some(expected));
            }
        }
    }

    #[test]
    fn whole_episode_windows() {
        let mut buf = ReplayBuffer::new(1000);
        fill(&mut buf, 3, 20);
        let pairs = generate_candidates(&buf, 50, 20, &mut seeded(2)).unwrap();
        assert!(pairs.iter().all(|(a, b)| a.start == 0 && b.start == 0));
        assert!(matches!(
            generate_candidates(&buf, 1, 21, &mut seeded(2)),
            Err(Error::NoEpisodeLongEnough(21))
        ));
    }

    #[test]
    fn episodes_drawn_evenly() {
        let mut buf = ReplayBuffer::new(1000);
        fill(&mut buf, 2, 60);
        let n = 10_000;
        let pairs = generate_candidates(&buf, n / 2, 25, &mut seeded(3)).unwrap();
        let first = pairs
            .iter()
            .flat_map(|(a, b)| [a, b])
            .filter(|s| s.episode == 0)
            .count();
        let sigma = (n as f64 * 0.25).sqrt();
        assert!((first as f64 - n as f64 / 2.0).abs() <= 3.0 * sigma, "{first}");
    }

    #[test]
    fn identical_members_fall_back_to_order() {
        let base = RewardEnsemble::new(4, 2, RewardEnsembleConfig::default(), 1).unwrap();
        let net = base.member(0).clone();
        let ens = RewardEnsemble::from_members(vec![net.clone(), net.clone(), net], 4, 2, 0).unwrap();
        let mut buf = ReplayBuffer::new(1000);
        fill(&mut buf, 2, 40);
        let cands = generate_candidates(&buf, 10, 10, &mut seeded(5)).unwrap();
        assert!(disagreement_scores(&ens, &cands).unwrap().iter().all(|&s| s == 0.0));
        let picked = select_queries(&ens, &cands, 4, SamplingMode::Disagreement, &mut seeded(0)).unwrap();
        assert_eq!(picked, vec![0, 1, 2, 3]);
    }

    #[test]
    fn selecting_everything() {
        let ens = RewardEnsemble::new(4, 2, RewardEnsembleConfig::default(), 1).unwrap();
        let mut buf = ReplayBuffer::new(1000);
        fill(&mut buf, 2, 40);
        let cands = generate_candidates(&buf, 7, 10, &mut seeded(5)).unwrap();
        for mode in [SamplingMode::Uniform, SamplingMode::Disagreement] {
            let mut picked = select_queries(&ens, &cands, 7, mode, &mut seeded(9)).unwrap();
            picked.sort();
            assert_eq!(picked, (0..7).collect::<Vec<_>>());
        }
        assert!(matches!(
            select_queries(&ens, &cands, 8, SamplingMode::Uniform, &mut seeded(9)),
            Err(Error::TooFewCandidates { requested: 8, available: 7 })
        ));
        assert!(matches!(
            select_queries(&ens, &[], 0, SamplingMode::Uniform, &mut seeded(9)),
            Err(Error::NoCandidates)
        ));
    }

    #[test]
    fn scores_ignore_pair_order() {
        let ens = RewardEnsemble::new(4, 2, RewardEnsembleConfig::default(), 7).unwrap();
        let mut buf = ReplayBuffer::new(1000);
        fill(&mut buf, 3, 40);
        let cands = generate_candidates(&buf, 20, 10, &mut seeded(8)).unwrap();
        let swapped: Vec<_> = cands.iter().map(|(a, b)| (b.clone(), a.clone())).collect();
        let s1 = disagreement_scores(&ens, &cands).unwrap();
        let s2 = disagreement_scores(&ens, &swapped).unwrap();
        for (a, b) in s1.iter().zip(&s2) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn top_k_breaks_ties_by_index() {
        assert_eq!(top_k(&[0.1, 0.3, 0.3, 0.2], 3), vec![1, 2, 3]);
        assert_eq!(top_k(&[0.0; 4], 2), vec![0, 1]);
    }
}
