//! Ordered step-by-step task rubrics.

use super::predicate::{eval_predicate, Predicate, Shapes, WorldSnapshot};
use super::SceneError;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RubricStep {
    pub description: String,
    pub predicate: Predicate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rubric {
    pub task: String,
    pub instruction: String,
    pub steps: Vec<RubricStep>,
}

impl Rubric {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Incremental monotone-prefix scorer. Step `k` is achieved at the first
/// snapshot, at or after the one that achieved step `k - 1`, where its
/// predicate holds. Several steps may complete on the same snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct RubricTracker {
    achieved: usize,
    total: usize,
}

impl RubricTracker {
    pub fn new(rubric: &Rubric) -> Self {
        Self {
            achieved: 0,
            total: rubric.len(),
        }
    }

    pub fn observe(&mut self, shapes: &Shapes, rubric: &Rubric, s: &WorldSnapshot) -> Result<f64, SceneError> {
        while self.achieved < self.total && eval_predicate(shapes, s, &rubric.steps[self.achieved].predicate)? {
            self.achieved += 1;
        }
        Ok(self.progress())
    }

    pub fn achieved(&self) -> usize {
        self.achieved
    }

    pub fn progress(&self) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        self.achieved as f64 / self.total as f64
    }

    pub fn complete(&self) -> bool {
        self.total > 0 && self.achieved == self.total
    }
}

/// Progress in [0, 1] reached by a trace.
pub fn score_rubric(shapes: &Shapes, trace: &[WorldSnapshot], rubric: &Rubric) -> Result<f64, SceneError> {
    let mut t = RubricTracker::new(rubric);
    for s in trace {
        t.observe(shapes, rubric, s)?;
    }
    Ok(t.progress())
}
