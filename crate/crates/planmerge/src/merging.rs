//! The four strategies an operator can use to turn a set of recommended
//! plans into the plan it will execute.
//!
//! Method 0 ignores recommendations and replays the operator's own most
//! successful plan. Method 1 adopts the whole plan of the single most
//! reputable source. Method 2 builds a plan step by step, letting sources
//! vote on each step with their reputation as the vote weight. Method 3
//! starts from the most reputable plan and revotes a bounded number of steps
//! where the best and worst plans agree, on the theory that agreement with
//! the worst source marks the steps most worth reconsidering.
//!
//! All ties are broken deterministically: candidates by lowest source id,
//! history by most recent entry, operations by their derived ordering.

use crate::plan::{Operation, Plan};
use std::collections::BTreeMap;
use thiserror::Error;

/// One plan offered for merging, scored by its source's reputation.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub source_id: usize,
    pub plan: Plan,
    pub reputation: f64,
    /// True for the operator's own previous plan, which competes on equal
    /// terms with received recommendations.
    pub is_own: bool,
}

/// A past execution and how well it was observed to go.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryEntry {
    pub plan: Plan,
    pub observed_success: f64,
}

/// Strategy selector. The numeric values appear in configs and metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum MergeMethod {
    OwnHistoryBest,
    ReputationBest,
    StepVote,
    BestWithReplacements,
}

impl MergeMethod {
    pub const ALL: [MergeMethod; 4] = [
        MergeMethod::OwnHistoryBest,
        MergeMethod::ReputationBest,
        MergeMethod::StepVote,
        MergeMethod::BestWithReplacements,
    ];

    pub fn index(self) -> u8 {
        match self {
            MergeMethod::OwnHistoryBest => 0,
            MergeMethod::ReputationBest => 1,
            MergeMethod::StepVote => 2,
            MergeMethod::BestWithReplacements => 3,
        }
    }

    pub fn from_index(i: u8) -> Option<Self> {
        Self::ALL.get(i as usize).copied()
    }
}

impl std::fmt::Display for MergeMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.index())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MergeError {
    #[error("no plans available to merge")]
    NoCandidates,
    #[error("replacement merging needs at least two candidates")]
    NeedTwoCandidates,
    #[error("candidate plans have differing lengths")]
    UnequalLengths,
}

/// Most successful plan in the operator's own history; ties go to the most
/// recent entry.
pub fn merge_method0(history: &[HistoryEntry]) -> Result<Plan, MergeError> {
    let mut best: Option<&HistoryEntry> = None;
    for entry in history {
        let replace = match best {
            None => true,
            // >= so a later equal entry wins.
            Some(b) => entry.observed_success >= b.observed_success,
        };
        if replace {
            best = Some(entry);
        }
    }
    best.map(|e| e.plan.clone()).ok_or(MergeError::NoCandidates)
}

/// Index of the maximal-reputation candidate; reputation ties go to the
/// lowest source id.
fn best_index(candidates: &[Candidate]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, c) in candidates.iter().enumerate() {
        let replace = match best {
            None => true,
            Some(j) => {
                let b = &candidates[j];
                c.reputation > b.reputation
                    || (c.reputation == b.reputation && c.source_id < b.source_id)
            }
        };
        if replace {
            best = Some(i);
        }
    }
    best
}

/// Index of the minimal-reputation candidate; ties go to the lowest source
/// id.
fn worst_index(candidates: &[Candidate]) -> Option<usize> {
    let mut worst: Option<usize> = None;
    for (i, c) in candidates.iter().enumerate() {
        let replace = match worst {
            None => true,
            Some(j) => {
                let w = &candidates[j];
                c.reputation < w.reputation
                    || (c.reputation == w.reputation && c.source_id < w.source_id)
            }
        };
        if replace {
            worst = Some(i);
        }
    }
    worst
}

/// Whole plan of the most reputable candidate, taken as is.
pub fn merge_method1(candidates: &[Candidate]) -> Result<Plan, MergeError> {
    best_index(candidates)
        .map(|i| candidates[i].plan.clone())
        .ok_or(MergeError::NoCandidates)
}

fn check_equal_lengths(candidates: &[Candidate]) -> Result<usize, MergeError> {
    let len = candidates[0].plan.len();
    if candidates.iter().any(|c| c.plan.len() != len) {
        return Err(MergeError::UnequalLengths);
    }
    Ok(len)
}

/// Reputation totals of the distinct operations proposed at position `k`.
/// The BTreeMap keeps operations in their derived order, which is what makes
/// vote ties resolve to the smallest operation.
fn step_votes(candidates: &[Candidate], k: usize) -> BTreeMap<Operation, f64> {
    let mut votes = BTreeMap::new();
    for c in candidates {
        *votes.entry(c.plan.ops[k]).or_insert(0.0) += c.reputation;
    }
    votes
}

/// Highest-voted operation, skipping `exclude`. Ascending iteration plus a
/// strict comparison keeps the smallest operation among tied totals.
fn vote_winner(votes: &BTreeMap<Operation, f64>, exclude: Option<&Operation>) -> Option<Operation> {
    let mut winner: Option<(Operation, f64)> = None;
    for (&op, &total) in votes {
        if exclude == Some(&op) {
            continue;
        }
        match winner {
            Some((_, best)) if total <= best => {}
            _ => winner = Some((op, total)),
        }
    }
    winner.map(|(op, _)| op)
}

/// Step-by-step vote: at each position, emit the operation whose proposers'
/// reputations sum highest.
pub fn merge_method2(candidates: &[Candidate]) -> Result<Plan, MergeError> {
    if candidates.is_empty() {
        return Err(MergeError::NoCandidates);
    }
    let len = check_equal_lengths(candidates)?;
    let ops = (0..len)
        .map(|k| {
            vote_winner(&step_votes(candidates, k), None)
                .expect("nonempty candidate set yields a winner at every step")
        })
        .collect();
    Ok(Plan { ops })
}

/// Start from the most reputable plan and reconsider the steps it shares
/// with the least reputable one: each such step is revoted with the shared
/// operation value barred, scanning left to right, until `num_replacements`
/// steps have been replaced. A shared step with no alternative proposal is
/// kept and does not consume a replacement.
pub fn merge_method3(
    candidates: &[Candidate],
    num_replacements: usize,
) -> Result<Plan, MergeError> {
    if candidates.len() < 2 {
        return Err(MergeError::NeedTwoCandidates);
    }
    check_equal_lengths(candidates)?;
    let best = &candidates[best_index(candidates).expect("nonempty")];
    let worst = &candidates[worst_index(candidates).expect("nonempty")];
    let mut ops = best.plan.ops.clone();
    let mut done = 0;
    for (k, slot) in ops.iter_mut().enumerate() {
        if done == num_replacements {
            break;
        }
        let shared = *slot;
        if shared != worst.plan.ops[k] {
            continue;
        }
        if let Some(op) = vote_winner(&step_votes(candidates, k), Some(&shared)) {
            *slot = op;
            done += 1;
        }
    }
    Ok(Plan { ops })
}
