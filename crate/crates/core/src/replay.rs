//! Ring-buffer transition storage with wholesale reward relabeling.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::Rng as _;

use crate::{Error, Result, Rng};

/// Anything that maps `state ⊕ action` rows to per-row (mean, std) rewards.
pub trait RewardLabeler {
    fn input_dim(&self) -> usize;
    fn label(&self, inputs: ArrayView2<f64>) -> Result<(Vec<f64>, Vec<f64>)>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub next_state: Vec<f64>,
    pub r_ext: f64,
    pub r_int: f64,
    /// Ground-truth reward; read by the scripted teacher only.
    pub true_reward: f64,
    /// Terminal flag used for bootstrapping; horizon truncation is not terminal.
    pub done: bool,
    pub episode: u64,
    pub step: usize,
    pub reward_version: u64,
}

impl Transition {
    fn validate(&self) -> Result<()> {
        let vectors = [
            ("state", &self.state),
            ("action", &self.action),
            ("next_state", &self.next_state),
        ];
        for (name, v) in vectors {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("transition {name}")));
            }
        }
        for (name, x) in [("r_ext", self.r_ext), ("r_int", self.r_int), ("true_reward", self.true_reward)] {
            if !x.is_finite() {
                return Err(Error::NonFinite(format!("transition {name}")));
            }
        }
        if self.r_int < 0.0 {
            return Err(Error::NonFinite(format!("negative intrinsic reward {}", self.r_int)));
        }
        Ok(())
    }
}

/// Contiguous run of one episode's transitions, in storage-order indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpisodeSpan {
    pub episode: u64,
    pub indices: Vec<usize>,
}

const RELABEL_CHUNK: usize = 4096;
const SNAPSHOT_MAGIC: &[u8; 8] = b"RUNEBUF1";

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    storage: Vec<Transition>,
    head: usize,
    inserted: u64,
    version: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            storage: Vec::new(),
            head: 0,
            inserted: 0,
            version: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    /// Total pushes over the buffer's lifetime.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Storage slot `i` (not chronological once the ring wraps).
    pub fn get(&self, i: usize) -> &Transition {
        &self.storage[i]
    }

    pub fn push(&mut self, mut transition: Transition) -> Result<()> {
        transition.validate()?;
        transition.reward_version = self.version;
        if self.storage.len() < self.capacity {
            self.storage.push(transition);
        } else {
            self.storage[self.head] = transition;
            self.head = (self.head + 1) % self.capacity;
        }
        self.inserted += 1;
        Ok(())
    }

    /// Storage indices from oldest to newest.
    pub fn chronological(&self) -> impl Iterator<Item = usize> + '_ {
        let n = self.storage.len();
        let start = if n < self.capacity { 0 } else { self.head };
        (0..n).map(move |i| (start + i) % n.max(1))
    }

    /// Oldest-to-newest transitions.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> + '_ {
        self.chronological().map(|i| &self.storage[i])
    }

    /// Rewrites `r_ext` (and `r_int` when `intrinsic`) of every stored transition
    /// from `labeler`, then bumps and stamps the reward version.
    pub fn relabel(&mut self, labeler: &dyn RewardLabeler, intrinsic: bool) -> Result<usize> {
        let width = labeler.input_dim();
        for start in (0..self.storage.len()).step_by(RELABEL_CHUNK) {
            let end = (start + RELABEL_CHUNK).min(self.storage.len());
            let mut data = Vec::with_capacity((end - start) * width);
            for t in &self.storage[start..end] {
                if t.state.len() + t.action.len() != width {
                    return Err(Error::DimensionMismatch {
                        context: "relabel input",
                        expected: width,
                        actual: t.state.len() + t.action.len(),
                    });
                }
                data.extend_from_slice(&t.state);
                data.extend_from_slice(&t.action);
            }
            let inputs = Array2::from_shape_vec((end - start, width), data).expect("rows assembled above");
            let (means, stds) = labeler.label(inputs.view())?;
            for (t, (m, s)) in self.storage[start..end].iter_mut().zip(means.into_iter().zip(stds)) {
                t.r_ext = m;
                if intrinsic {
                    t.r_int = s;
                }
            }
        }
        self.version += 1;
        for t in &mut self.storage {
            t.reward_version = self.version;
        }
        Ok(self.storage.len())
    }

    /// Uniform storage indices, with replacement.
    pub fn sample_indices(&self, n: usize, rng: &mut Rng) -> Result<Vec<usize>> {
        if self.storage.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        Ok((0..n).map(|_| rng.random_range(0..self.storage.len())).collect())
    }

    pub fn sample(&self, n: usize, rng: &mut Rng) -> Result<Vec<&Transition>> {
        Ok(self
            .sample_indices(n, rng)?
            .into_iter()
            .map(|i| &self.storage[i])
            .collect())
    }

    /// Maximal runs of consecutive steps of the same episode, oldest first.
    pub fn episodes(&self) -> Vec<EpisodeSpan> {
        let mut spans: Vec<EpisodeSpan> = Vec::new();
        let mut prev: Option<(u64, usize)> = None;
        for i in self.chronological() {
            let t = &self.storage[i];
            let continues = matches!(prev, Some((e, s)) if e == t.episode && s + 1 == t.step);
            if continues {
                spans.last_mut().expect("span open").indices.push(i);
            } else {
                spans.push(EpisodeSpan {
                    episode: t.episode,
                    indices: vec![i],
                });
            }
            prev = Some((t.episode, t.step));
        }
        spans
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        out.write_all(SNAPSHOT_MAGIC)?;
        for v in [self.capacity as u64, self.inserted, self.version, self.storage.len() as u64] {
            out.write_all(&v.to_le_bytes())?;
        }
        let (sd, ad) = self
            .storage
            .first()
            .map_or((0, 0), |t| (t.state.len(), t.action.len()));
        out.write_all(&(sd as u64).to_le_bytes())?;
        out.write_all(&(ad as u64).to_le_bytes())?;
        for t in self.iter() {
            for x in t.state.iter().chain(&t.action).chain(&t.next_state) {
                out.write_all(&x.to_le_bytes())?;
            }
            for x in [t.r_ext, t.r_int, t.true_reward] {
                out.write_all(&x.to_le_bytes())?;
            }
            out.write_all(&[t.done as u8])?;
            for v in [t.episode, t.step as u64, t.reward_version] {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut input = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != SNAPSHOT_MAGIC {
            return Err(Error::Snapshot("not a replay buffer snapshot".into()));
        }
        let read_u64 = |r: &mut dyn Read| -> Result<u64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            Ok(u64::from_le_bytes(b))
        };
        let capacity = read_u64(&mut input)? as usize;
        let inserted = read_u64(&mut input)?;
        let version = read_u64(&mut input)?;
        let len = read_u64(&mut input)? as usize;
        let sd = read_u64(&mut input)? as usize;
        let ad = read_u64(&mut input)? as usize;
        if capacity == 0 || len > capacity {
            return Err(Error::Snapshot(format!("{len} transitions in capacity {capacity}")));
        }
        let read_f64s = |r: &mut dyn Read, n: usize| -> Result<Vec<f64>> {
            (0..n)
                .map(|_| {
                    let mut b = [0u8; 8];
                    r.read_exact(&mut b)?;
                    Ok(f64::from_le_bytes(b))
                })
                .collect()
        };
        let mut storage = Vec::with_capacity(len);
        for _ in 0..len {
            let state = read_f64s(&mut input, sd)?;
            let action = read_f64s(&mut input, ad)?;
            let next_state = read_f64s(&mut input, sd)?;
            let rewards = read_f64s(&mut input, 3)?;
            let mut done = [0u8; 1];
            input.read_exact(&mut done)?;
            let episode = read_u64(&mut input)?;
            let step = read_u64(&mut input)? as usize;
            let reward_version = read_u64(&mut input)?;
            let t = Transition {
                state,
                action,
                next_state,
                r_ext: rewards[0],
                r_int: rewards[1],
                true_reward: rewards[2],
                done: done[0] != 0,
                episode,
                step,
                reward_version,
            };
            t.validate().map_err(|e| Error::Snapshot(e.to_string()))?;
            storage.push(t);
        }
        // stored oldest first, so the ring restarts at slot 0
        Ok(Self {
            capacity,
            storage,
            head: 0,
            inserted,
            version,
        })
    }
}
