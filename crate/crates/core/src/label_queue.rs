//! Thread-safe pending-query queue shared by the human teacher and the label server.
//!
//! The training loop issues queries and blocks in [`LabelQueue::wait_for`];
//! server threads read the oldest pending query and submit choices. Every
//! query resolves exactly once: labeled, discarded, or expired after the
//! configured timeout (expired queries count as discarded).

use std::collections::BTreeMap;
use std::sync::{Condvar, Mutex, MutexGuard};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::reward::PreferenceLabel;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelChoice {
    First,
    Second,
    Equal,
    Discard,
}

impl LabelChoice {
    pub fn to_label(self) -> PreferenceLabel {
        match self {
            LabelChoice::First => PreferenceLabel::FirstPreferred,
            LabelChoice::Second => PreferenceLabel::SecondPreferred,
            LabelChoice::Equal => PreferenceLabel::Equal,
            LabelChoice::Discard => PreferenceLabel::Discarded,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryStatus {
    Pending,
    Labeled,
    Discarded,
    Expired,
}

/// Planar rendering of one segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentPayload {
    pub positions: Vec<[f64; 2]>,
    pub actions: Vec<Vec<f64>>,
    pub goal: [f64; 2],
    pub task: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryEnvelope {
    pub id: String,
    pub issued_at_ms: u64,
    pub status: QueryStatus,
    pub schema_version: u32,
    pub first: SegmentPayload,
    pub second: SegmentPayload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub id: String,
    pub status: QueryStatus,
    pub budget_remaining: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStatus {
    pub env_step: u64,
    pub budget_total: usize,
    pub budget_used: usize,
    pub budget_remaining: usize,
    pub pending: usize,
    pub latest_success_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SubmitError {
    #[error("unknown query id `{0}`")]
    NotFound(String),
    #[error("query `{id}` is already {status:?}")]
    Conflict { id: String, status: QueryStatus },
}

/// Milliseconds since the Unix epoch.
pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

type Clock = Box<dyn Fn() -> u64 + Send + Sync>;

struct Entry {
    envelope: QueryEnvelope,
    label: Option<PreferenceLabel>,
    delivered: bool,
}

#[derive(Default)]
struct Inner {
    entries: BTreeMap<u64, Entry>,
    next_id: u64,
    resolved: usize,
    env_step: u64,
    latest_success_rate: Option<f64>,
}

pub struct LabelQueue {
    inner: Mutex<Inner>,
    resolved: Condvar,
    budget_total: usize,
    timeout: Duration,
    clock: Clock,
}

impl std::fmt::Debug for LabelQueue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LabelQueue")
            .field("budget_total", &self.budget_total)
            .field("timeout", &self.timeout)
            .finish_non_exhaustive()
    }
}

fn parse_id(id: &str) -> Option<u64> {
    id.strip_prefix('q')?.parse().ok()
}

impl LabelQueue {
    pub fn new(budget_total: usize, timeout: Duration) -> Self {
        Self::with_clock(budget_total, timeout, Box::new(now_ms))
    }

    /// Queue reading time from `clock` (milliseconds); used to test expiry.
    pub fn with_clock(budget_total: usize, timeout: Duration, clock: Clock) -> Self {
        Self {
            inner: Mutex::new(Inner::default()),
            resolved: Condvar::new(),
            budget_total,
            timeout,
            clock,
        }
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn budget_total(&self) -> usize {
        self.budget_total
    }

    /// Queries that may still be issued: budget minus resolved and pending ones.
    pub fn issuable(&self) -> usize {
        let inner = self.lock();
        let pending = inner
            .entries
            .values()
            .filter(|e| e.envelope.status == QueryStatus::Pending)
            .count();
        self.budget_total.saturating_sub(inner.resolved + pending)
    }

    /// Adds a pending query; `None` when the budget is already committed.
    pub fn issue(&self, first: SegmentPayload, second: SegmentPayload) -> Option<String> {
        if self.issuable() == 0 {
            return None;
        }
        let now = (self.clock)();
        let mut inner = self.lock();
        let n = inner.next_id;
        inner.next_id += 1;
        let id = format!("q{n}");
        inner.entries.insert(
            n,
            Entry {
                envelope: QueryEnvelope {
                    id: id.clone(),
                    issued_at_ms: now,
                    status: QueryStatus::Pending,
                    schema_version: SCHEMA_VERSION,
                    first,
                    second,
                },
                label: None,
                delivered: false,
            },
        );
        Some(id)
    }

    fn expire_stale(&self, inner: &mut Inner) -> bool {
        let now = (self.clock)();
        let timeout = self.timeout.as_millis() as u64;
        let mut any = false;
        for entry in inner.entries.values_mut() {
            if entry.envelope.status == QueryStatus::Pending
                && now.saturating_sub(entry.envelope.issued_at_ms) >= timeout
            {
                entry.envelope.status = QueryStatus::Expired;
                entry.label = Some(PreferenceLabel::Discarded);
                any = true;
                inner.resolved += 1;
            }
        }
        if any {
            self.resolved.notify_all();
        }
        any
    }

    /// Oldest pending query, or `None` when nothing is waiting.
    pub fn next_pending(&self) -> Option<QueryEnvelope> {
        let mut inner = self.lock();
        self.expire_stale(&mut inner);
        inner
            .entries
            .values()
            .find(|e| e.envelope.status == QueryStatus::Pending)
            .map(|e| e.envelope.clone())
    }

    pub fn pending(&self) -> usize {
        let mut inner = self.lock();
        self.expire_stale(&mut inner);
        inner
            .entries
            .values()
            .filter(|e| e.envelope.status == QueryStatus::Pending)
            .count()
    }

    pub fn get(&self, id: &str) -> Option<QueryEnvelope> {
        let inner = self.lock();
        parse_id(id).and_then(|n| inner.entries.get(&n).map(|e| e.envelope.clone()))
    }

    /// Resolves a pending query; the first submission wins.
    pub fn submit(&self, id: &str, choice: LabelChoice) -> Result<Ack, SubmitError> {
        let mut inner = self.lock();
        self.expire_stale(&mut inner);
        let key = parse_id(id).ok_or_else(|| SubmitError::NotFound(id.to_string()))?;
        let entry = inner
            .entries
            .get_mut(&key)
            .ok_or_else(|| SubmitError::NotFound(id.to_string()))?;
        if entry.envelope.status != QueryStatus::Pending {
            return Err(SubmitError::Conflict {
                id: id.to_string(),
                status: entry.envelope.status,
            });
        }
        let status = match choice {
            LabelChoice::Discard => QueryStatus::Discarded,
            _ => QueryStatus::Labeled,
        };
        entry.envelope.status = status;
        entry.label = Some(choice.to_label());
        inner.resolved += 1;
        let ack = Ack {
            id: id.to_string(),
            status,
            budget_remaining: self.budget_total.saturating_sub(inner.resolved),
        };
        drop(inner);
        self.resolved.notify_all();
        Ok(ack)
    }

    /// Blocks until every id in `ids` is resolved, then hands out each label once.
    ///
    /// Ids already delivered or unknown are skipped.
    pub fn wait_for(&self, ids: &[String]) -> Vec<(String, PreferenceLabel)> {
        let keys: Vec<u64> = ids.iter().filter_map(|id| parse_id(id)).collect();
        let mut inner = self.lock();
        loop {
            self.expire_stale(&mut inner);
            let outstanding = keys.iter().any(|k| {
                inner
                    .entries
                    .get(k)
                    .is_some_and(|e| e.envelope.status == QueryStatus::Pending)
            });
            if !outstanding {
                break;
            }
            // wake up in time for the earliest expiry
            let now = (self.clock)();
            let timeout = self.timeout.as_millis() as u64;
            let wait = keys
                .iter()
                .filter_map(|k| inner.entries.get(k))
                .filter(|e| e.envelope.status == QueryStatus::Pending)
                .map(|e| (e.envelope.issued_at_ms + timeout).saturating_sub(now))
                .min()
                .unwrap_or(0)
                .clamp(1, 200);
            inner = self
                .resolved
                .wait_timeout(inner, Duration::from_millis(wait))
                .unwrap_or_else(|p| p.into_inner())
                .0;
        }
        let mut out = Vec::new();
        for k in keys {
            if let Some(e) = inner.entries.get_mut(&k) {
                if !e.delivered {
                    if let Some(label) = e.label {
                        e.delivered = true;
                        out.push((e.envelope.id.clone(), label));
                    }
                }
            }
        }
        out
    }

    pub fn set_progress(&self, env_step: u64, latest_success_rate: Option<f64>) {
        let mut inner = self.lock();
        inner.env_step = inner.env_step.max(env_step);
        if latest_success_rate.is_some() {
            inner.latest_success_rate = latest_success_rate;
        }
    }

    pub fn status(&self) -> RunStatus {
        let mut inner = self.lock();
        self.expire_stale(&mut inner);
        let pending = inner
            .entries
            .values()
            .filter(|e| e.envelope.status == QueryStatus::Pending)
            .count();
        RunStatus {
            env_step: inner.env_step,
            budget_total: self.budget_total,
            budget_used: inner.resolved,
            budget_remaining: self.budget_total.saturating_sub(inner.resolved),
            pending,
            latest_success_rate: inner.latest_success_rate,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU64, Ordering};
    use std::sync::Arc;

    fn payload(x: f64) -> SegmentPayload {
        SegmentPayload {
            positions: vec![[x, 0.0], [x, 0.1]],
            actions: vec![vec![0.0, 1.0]; 2],
            goal: [0.5, 0.5],
            task: "PointReach-sparse".into(),
        }
    }

    fn manual_clock() -> (Arc<AtomicU64>, Clock) {
        let t = Arc::new(AtomicU64::new(1_000));
        let c = t.clone();
        (t, Box::new(move || c.load(Ordering::SeqCst)))
    }

    #[test]
    fn empty_queue() {
        let q = LabelQueue::new(5, Duration::from_secs(60));
        assert!(q.next_pending().is_none());
        assert_eq!(q.status().pending, 0);
        assert_eq!(q.status().budget_used, 0);
    }

    #[test]
    fn fifo_and_idempotent_reads() {
        let (t, clock) = manual_clock();
        let q = LabelQueue::with_clock(5, Duration::from_secs(60), clock);
        let a = q.issue(payload(0.0), payload(1.0)).unwrap();
        t.fetch_add(5, Ordering::SeqCst);
        let b = q.issue(payload(2.0), payload(3.0)).unwrap();
        assert_eq!(q.next_pending().unwrap().id, a);
        assert_eq!(q.next_pending().unwrap().id, a);
        q.submit(&a, LabelChoice::Second).unwrap();
        assert_eq!(q.next_pending().unwrap().id, b);
    }

    #[test]
    fn submit_is_exactly_once() {
        let q = LabelQueue::new(5, Duration::from_secs(60));
        let id = q.issue(payload(0.0), payload(1.0)).unwrap();
        let ack = q.submit(&id, LabelChoice::First).unwrap();
        assert_eq!(ack.status, QueryStatus::Labeled);
        assert_eq!(ack.budget_remaining, 4);
        assert!(matches!(
            q.submit(&id, LabelChoice::Second),
            Err(SubmitError::Conflict { status: QueryStatus::Labeled, .. })
        ));
        let got = q.wait_for(&[id.clone()]);
        assert_eq!(got, vec![(id.clone(), PreferenceLabel::FirstPreferred)]);
        assert!(q.wait_for(&[id]).is_empty());
        assert!(matches!(q.submit("q99", LabelChoice::First), Err(SubmitError::NotFound(_))));
        assert!(matches!(q.submit("nope", LabelChoice::First), Err(SubmitError::NotFound(_))));
    }

    #[test]
    fn discard_consumes_budget() {
        let q = LabelQueue::new(2, Duration::from_secs(60));
        let id = q.issue(payload(0.0), payload(1.0)).unwrap();
        let ack = q.submit(&id, LabelChoice::Discard).unwrap();
        assert_eq!(ack.status, QueryStatus::Discarded);
        assert_eq!(ack.budget_remaining, 1);
        assert_eq!(q.wait_for(&[id])[0].1, PreferenceLabel::Discarded);
        assert!(q.issue(payload(0.0), payload(1.0)).is_some());
        assert!(q.issue(payload(0.0), payload(1.0)).is_none());
    }

    #[test]
    fn stale_queries_expire_as_discards() {
        let (t, clock) = manual_clock();
        let q = LabelQueue::with_clock(3, Duration::from_millis(500), clock);
        let id = q.issue(payload(0.0), payload(1.0)).unwrap();
        t.fetch_add(499, Ordering::SeqCst);
        assert!(q.next_pending().is_some());
        t.fetch_add(1, Ordering::SeqCst);
        assert!(q.next_pending().is_none());
        assert_eq!(q.get(&id).unwrap().status, QueryStatus::Expired);
        assert!(matches!(q.submit(&id, LabelChoice::First), Err(SubmitError::Conflict { .. })));
        assert_eq!(q.wait_for(&[id]), vec![("q0".to_string(), PreferenceLabel::Discarded)]);
        assert_eq!(q.status().budget_used, 1);
    }

    #[test]
    fn waiter_wakes_on_submission() {
        let q = Arc::new(LabelQueue::new(4, Duration::from_secs(30)));
        let ids: Vec<String> = (0..3)
            .map(|i| q.issue(payload(i as f64), payload(0.0)).unwrap())
            .collect();
        let server = {
            let q = q.clone();
            std::thread::spawn(move || {
                while let Some(env) = q.next_pending() {
                    q.submit(&env.id, LabelChoice::Equal).unwrap();
                }
            })
        };
        let got = q.wait_for(&ids);
        server.join().unwrap();
        assert_eq!(got.len(), 3);
        assert!(got.iter().all(|(_, l)| *l == PreferenceLabel::Equal));
    }

    #[test]
    fn concurrent_double_submission() {
        for _ in 0..50 {
            let q = Arc::new(LabelQueue::new(1, Duration::from_secs(30)));
            let id = q.issue(payload(0.0), payload(1.0)).unwrap();
            let handles: Vec<_> = (0..4)
                .map(|i| {
                    let (q, id) = (q.clone(), id.clone());
                    std::thread::spawn(move || {
                        q.submit(&id, if i % 2 == 0 { LabelChoice::First } else { LabelChoice::Second })
                    })
                })
                .collect();
            let results: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
            assert_eq!(results.iter().filter(|r| r.is_ok()).count(), 1);
            assert_eq!(q.wait_for(&[id]).len(), 1);
        }
    }

    #[test]
    fn progress_is_monotone() {
        let q = LabelQueue::new(0, Duration::from_secs(1));
        q.set_progress(10, Some(0.5));
        q.set_progress(5, None);
        let s = q.status();
        assert_eq!(s.env_step, 10);
        assert_eq!(s.latest_success_rate, Some(0.5));
    }

    #[test]
    fn envelope_json_shape() {
        let q = LabelQueue::new(1, Duration::from_secs(1));
        q.issue(payload(0.0), payload(1.0)).unwrap();
        let v = serde_json::to_value(q.next_pending().unwrap()).unwrap();
        assert_eq!(v["status"], "pending");
        assert_eq!(v["schema_version"], 1);
        assert_eq!(v["first"]["positions"][1][1], 0.1);
        assert!(v["issued_at_ms"].is_u64());
        assert_eq!(serde_json::to_value(LabelChoice::Discard).unwrap(), "discard");
    }
}
