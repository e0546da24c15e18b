//! Preference labels for segment pairs: a scripted oracle over ground-truth
//! returns and a human teacher backed by the shared label queue.

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::envs::Environment;
use crate::label_queue::{LabelQueue, SegmentPayload};
use crate::reward::{PreferenceLabel, PreferenceRecord, Segment};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeacherMode {
    Scripted,
    Human,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherConfig {
    pub mode: TeacherMode,
    pub equal_tolerance: f64,
    pub per_session: usize,
    pub total_budget: usize,
    /// Human mode: unlabeled queries are discarded after this long.
    pub timeout: Duration,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self {
            mode: TeacherMode::Scripted,
            equal_tolerance: 0.0,
            per_session: 20,
            total_budget: 400,
            timeout: Duration::from_secs(300),
        }
    }
}

/// Label from two true returns: equal within `tolerance`, otherwise the larger wins.
pub fn scripted_label(first_return: f64, second_return: f64, tolerance: f64) -> PreferenceLabel {
    if (first_return - second_return).abs() <= tolerance {
        PreferenceLabel::Equal
    } else if first_return > second_return {
        PreferenceLabel::FirstPreferred
    } else {
        PreferenceLabel::SecondPreferred
    }
}

pub trait Teacher: Send {
    /// Labels up to `remaining()` of `pairs`, in order. Every issued query,
    /// discarded or not, consumes one unit of budget.
    fn label_pairs(&mut self, pairs: Vec<(Segment, Segment)>) -> Result<Vec<PreferenceRecord>>;

    fn issued(&self) -> usize;

    fn total_budget(&self) -> usize;

    fn remaining(&self) -> usize {
        self.total_budget().saturating_sub(self.issued())
    }
}

#[derive(Debug, Clone)]
pub struct ScriptedTeacher {
    tolerance: f64,
    budget: usize,
    issued: usize,
}

impl ScriptedTeacher {
    pub fn new(tolerance: f64, budget: usize) -> Self {
        Self {
            tolerance,
            budget,
            issued: 0,
        }
    }

    pub fn label(&mut self, first: Segment, second: Segment) -> Result<PreferenceRecord> {
        if self.issued >= self.budget {
            return Err(Error::BudgetExhausted(self.issued));
        }
        let r0 = first.true_return.ok_or(Error::MissingTrueReturn)?;
        let r1 = second.true_return.ok_or(Error::MissingTrueReturn)?;
        self.issued += 1;
        Ok(PreferenceRecord {
            label: scripted_label(r0, r1, self.tolerance),
            first,
            second,
        })
    }
}

impl Teacher for ScriptedTeacher {
    fn label_pairs(&mut self, pairs: Vec<(Segment, Segment)>) -> Result<Vec<PreferenceRecord>> {
        if !pairs.is_empty() && self.remaining() == 0 {
            return Err(Error::BudgetExhausted(self.issued));
        }
        let n = pairs.len().min(self.remaining());
        pairs
            .into_iter()
            .take(n)
            .map(|(a, b)| self.label(a, b))
            .collect()
    }

    fn issued(&self) -> usize {
        self.issued
    }

    fn total_budget(&self) -> usize {
        self.budget
    }
}

/// Posts queries to a [`LabelQueue`] and blocks until each is labeled,
/// discarded, or expired.
pub struct HumanTeacher {
    queue: Arc<LabelQueue>,
    env: Box<dyn Environment>,
    issued: usize,
}

impl HumanTeacher {
    /// `env` is only used to project states onto the plane for display.
    pub fn new(queue: Arc<LabelQueue>, env: Box<dyn Environment>) -> Self {
        Self {
            queue,
            env,
            issued: 0,
        }
    }

    pub fn queue(&self) -> &Arc<LabelQueue> {
        &self.queue
    }

    pub fn payload(&self, segment: &Segment) -> SegmentPayload {
        let views: Vec<_> = segment.states.iter().map(|s| self.env.planar_view(s)).collect();
        SegmentPayload {
            positions: views.iter().map(|v| v.position).collect(),
            actions: segment.actions.clone(),
            goal: views.first().map_or([0.0, 0.0], |v| v.goal),
            task: self.env.spec().name.clone(),
        }
    }
}

impl Teacher for HumanTeacher {
    fn label_pairs(&mut self, pairs: Vec<(Segment, Segment)>) -> Result<Vec<PreferenceRecord>> {
        if !pairs.is_empty() && self.remaining() == 0 {
            return Err(Error::BudgetExhausted(self.issued));
        }
        let mut issued = Vec::new();
        for (first, second) in pairs {
            let Some(id) = self.queue.issue(self.payload(&first), self.payload(&second)) else {
                break;
            };
            self.issued += 1;
            issued.push((id, first, second));
        }
        let ids: Vec<String> = issued.iter().map(|(id, _, _)| id.clone()).collect();
        let labels: std::collections::HashMap<String, PreferenceLabel> =
            self.queue.wait_for(&ids).into_iter().collect();
        Ok(issued
            .into_iter()
            .map(|(id, first, second)| PreferenceRecord {
                label: labels.get(&id).copied().unwrap_or(PreferenceLabel::Discarded),
                first,
                second,
            })
            .collect())
    }

    fn issued(&self) -> usize {
        self.issued
    }

    fn total_budget(&self) -> usize {
        self.queue.budget_total()
    }
}
