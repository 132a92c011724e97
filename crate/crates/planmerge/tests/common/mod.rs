//! Brute-force reimplementations of the merge strategies, shared by the
//! oracle suite and the acceptance run. Nothing here borrows code from the
//! originals: full sorts where they do single scans, exhaustive enumeration
//! of the operation space where they tally only proposed operations.

// Each test binary compiles its own copy and uses a different subset.
#![allow(dead_code)]

use planmerge::merging::{
    merge_method0, merge_method1, merge_method2, merge_method3, Candidate, HistoryEntry,
    MergeError,
};
use planmerge::plan::{Operation, Plan, PlanDims};

/// xorshift64*; good enough to spray instances around, and independent of
/// the crate's own generator.
pub struct Xs(pub u64);

impl Xs {
    fn next(&mut self) -> u64 {
        let mut x = self.0;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.0 = x;
        x.wrapping_mul(0x2545_F491_4F6C_DD1D)
    }

    fn below(&mut self, n: usize) -> usize {
        (self.next() % n as u64) as usize
    }

    /// Dyadic reputations and successes make ties exact and frequent.
    fn eighth(&mut self) -> f64 {
        self.below(9) as f64 / 8.0
    }
}

fn random_op(rng: &mut Xs, dims: &PlanDims) -> Operation {
    Operation {
        node_type: rng.below(dims.num_node_types),
        node_subtype: rng.below(dims.num_subtypes),
        intended_timestep: rng.below(dims.num_timesteps),
    }
}

pub fn random_plan(rng: &mut Xs, dims: &PlanDims) -> Plan {
    Plan { ops: (0..dims.num_timesteps).map(|_| random_op(rng, dims)).collect() }
}

fn all_ops(dims: &PlanDims) -> Vec<Operation> {
    let mut ops = Vec::new();
    for t in 0..dims.num_node_types {
        for s in 0..dims.num_subtypes {
            for ts in 0..dims.num_timesteps {
                ops.push(Operation { node_type: t, node_subtype: s, intended_timestep: ts });
            }
        }
    }
    ops
}

/// Max-success entry, last index winning ties, by scanning every pair.
pub fn oracle_method0(history: &[HistoryEntry]) -> Result<Plan, MergeError> {
    let mut best: Option<usize> = None;
    for i in 0..history.len() {
        let beaten = history.iter().enumerate().any(|(j, e)| {
            e.observed_success > history[i].observed_success
                || (e.observed_success == history[i].observed_success && j > i)
        });
        if !beaten {
            best = Some(i);
        }
    }
    best.map(|i| history[i].plan.clone()).ok_or(MergeError::NoCandidates)
}

/// Candidate order the strategies rank by: reputation descending, source id
/// ascending. A full sort of indices makes the best trivially readable.
fn ranked(candidates: &[Candidate]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..candidates.len()).collect();
    idx.sort_by(|&a, &b| {
        candidates[b]
            .reputation
            .partial_cmp(&candidates[a].reputation)
            .unwrap()
            .then(candidates[a].source_id.cmp(&candidates[b].source_id))
    });
    idx
}

/// The worst ranking is not the reverse of `ranked`: ties still resolve to
/// the lowest source id.
fn ranked_worst(candidates: &[Candidate]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..candidates.len()).collect();
    idx.sort_by(|&a, &b| {
        candidates[a]
            .reputation
            .partial_cmp(&candidates[b].reputation)
            .unwrap()
            .then(candidates[a].source_id.cmp(&candidates[b].source_id))
    });
    idx
}

pub fn oracle_method1(candidates: &[Candidate]) -> Result<Plan, MergeError> {
    ranked(candidates)
        .first()
        .map(|&i| candidates[i].plan.clone())
        .ok_or(MergeError::NoCandidates)
}

/// Reputation mass behind `op` at position `k`, added in candidate order so
/// float totals match the originals bit for bit.
fn support(candidates: &[Candidate], k: usize, op: &Operation) -> f64 {
    candidates
        .iter()
        .filter(|c| c.plan.ops[k] == *op)
        .map(|c| c.reputation)
        .sum()
}

/// Winner at position `k` over the whole operation space, restricted to
/// operations at least one candidate proposed, optionally barring one value.
fn oracle_step_winner(
    candidates: &[Candidate],
    k: usize,
    dims: &PlanDims,
    barred: Option<Operation>,
) -> Option<Operation> {
    let mut winner: Option<(Operation, f64)> = None;
    for op in all_ops(dims) {
        if barred == Some(op) {
            continue;
        }
        if !candidates.iter().any(|c| c.plan.ops[k] == op) {
            continue;
        }
        let total = support(candidates, k, &op);
        let better = match &winner {
            None => true,
            // Strict: the first candidate (smallest operation, since
            // `all_ops` ascends in the derived order) stays on a tie.
            Some((_, t)) => total > *t,
        };
        if better {
            winner = Some((op, total));
        }
    }
    winner.map(|(op, _)| op)
}

pub fn oracle_method2(candidates: &[Candidate], dims: &PlanDims) -> Result<Plan, MergeError> {
    if candidates.is_empty() {
        return Err(MergeError::NoCandidates);
    }
    if candidates.iter().any(|c| c.plan.len() != candidates[0].plan.len()) {
        return Err(MergeError::UnequalLengths);
    }
    let ops = (0..candidates[0].plan.len())
        .map(|k| oracle_step_winner(candidates, k, dims, None).unwrap())
        .collect();
    Ok(Plan { ops })
}

pub fn oracle_method3(
    candidates: &[Candidate],
    num_replacements: usize,
    dims: &PlanDims,
) -> Result<Plan, MergeError> {
    if candidates.len() < 2 {
        return Err(MergeError::NeedTwoCandidates);
    }
    if candidates.iter().any(|c| c.plan.len() != candidates[0].plan.len()) {
        return Err(MergeError::UnequalLengths);
    }
    let best = &candidates[ranked(candidates)[0]];
    let worst = &candidates[ranked_worst(candidates)[0]];
    let mut ops = best.plan.ops.clone();
    let mut spent = 0;
    for (k, slot) in ops.iter_mut().enumerate() {
        if spent == num_replacements {
            break;
        }
        if *slot != worst.plan.ops[k] {
            continue;
        }
        if let Some(op) = oracle_step_winner(candidates, k, dims, Some(*slot)) {
            *slot = op;
            spent += 1;
        }
    }
    Ok(Plan { ops })
}

/// Runs all four strategies against the oracles on 1,000 randomized
/// instances. Every tenth instance is flattened into an all-equal-reputation
/// or all-equal-plan case so tie handling gets dense coverage.
pub fn check_thousand_instances() {
    let mut rng = Xs(0x9E37_79B9_7F4A_7C15);
    for instance in 0..1_000 {
        let dims = PlanDims {
            num_node_types: 1 + rng.below(3),
            num_subtypes: 1 + rng.below(3),
            num_timesteps: 1 + rng.below(5),
        };
        let n = 1 + rng.below(5);
        let mut candidates: Vec<Candidate> = (0..n)
            .map(|i| Candidate {
                source_id: rng.below(40),
                plan: random_plan(&mut rng, &dims),
                reputation: rng.eighth(),
                is_own: i == 0 && rng.below(2) == 0,
            })
            .collect();
        // Source ids double as tiebreakers, so collisions would make the
        // ranking ambiguous rather than exercising it.
        candidates.sort_by_key(|c| c.source_id);
        candidates.dedup_by_key(|c| c.source_id);
        match instance % 10 {
            0 => {
                let r = candidates[0].reputation;
                for c in &mut candidates {
                    c.reputation = r;
                }
            }
            5 => {
                let p = candidates[0].plan.clone();
                for c in &mut candidates {
                    c.plan = p.clone();
                }
            }
            _ => {}
        }

        let history: Vec<HistoryEntry> = (0..rng.below(6))
            .map(|_| HistoryEntry {
                plan: random_plan(&mut rng, &dims),
                observed_success: rng.eighth(),
            })
            .collect();
        let replacements = rng.below(4);

        assert_eq!(
            merge_method0(&history),
            oracle_method0(&history),
            "method 0 diverged on instance {instance}"
        );
        assert_eq!(
            merge_method1(&candidates),
            oracle_method1(&candidates),
            "method 1 diverged on instance {instance}"
        );
        assert_eq!(
            merge_method2(&candidates),
            oracle_method2(&candidates, &dims),
            "method 2 diverged on instance {instance}"
        );
        assert_eq!(
            merge_method3(&candidates, replacements),
            oracle_method3(&candidates, replacements, &dims),
            "method 3 diverged on instance {instance}"
        );
    }
}
