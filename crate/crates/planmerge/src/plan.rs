//! Plans and the distance between a plan and a node's hidden optimal plan.
//!
//! A plan is a fixed-length sequence of operations, one per timestep. Each
//! operation names a node type, a node subtype, and the timestep it is
//! intended for. Distance is a weighted sum of per-field differences, each
//! normalized to `[0, 1]` by the field's value span, so fields with different
//! cardinalities contribute comparably.

use crate::rng::{draw_index, SimRng};
use thiserror::Error;

/// Value counts for the three operation fields. All counts are at least 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlanDims {
    pub num_node_types: usize,
    pub num_subtypes: usize,
    pub num_timesteps: usize,
}

impl PlanDims {
    pub fn new(
        num_node_types: usize,
        num_subtypes: usize,
        num_timesteps: usize,
    ) -> Result<Self, PlanError> {
        if num_node_types == 0 || num_subtypes == 0 || num_timesteps == 0 {
            return Err(PlanError::EmptyDims);
        }
        Ok(Self { num_node_types, num_subtypes, num_timesteps })
    }
}

/// One step of a plan.
///
/// The derived ordering compares `node_type`, then `node_subtype`, then
/// `intended_timestep`. Voting ties in the merge methods are broken by this
/// ordering, so the field order here is load-bearing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Operation {
    pub node_type: usize,
    pub node_subtype: usize,
    pub intended_timestep: usize,
}

/// A sequence of operations, one per timestep.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Plan {
    pub ops: Vec<Operation>,
}

impl Plan {
    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }
}

/// Weights for the three distance components. The sum must be positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceWeights {
    pub w_type: f64,
    pub w_subtype: f64,
    pub w_timestep: f64,
}

impl DistanceWeights {
    pub fn uniform() -> Self {
        Self { w_type: 1.0, w_subtype: 1.0, w_timestep: 1.0 }
    }

    pub fn total(&self) -> f64 {
        self.w_type + self.w_subtype + self.w_timestep
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PlanError {
    #[error("dimension counts must all be at least 1")]
    EmptyDims,
    #[error("operation {field} = {value} outside the {limit} configured values")]
    FieldOutOfRange { field: &'static str, value: usize, limit: usize },
    #[error("position {position} outside a plan of {len} steps")]
    PositionOutOfRange { position: usize, len: usize },
    #[error("plan has {actual} steps where {expected} are required")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("distance weights must sum to a positive value")]
    NonPositiveWeights,
}

fn check_op(op: &Operation, dims: &PlanDims) -> Result<(), PlanError> {
    if op.node_type >= dims.num_node_types {
        return Err(PlanError::FieldOutOfRange {
            field: "node_type",
            value: op.node_type,
            limit: dims.num_node_types,
        });
    }
    if op.node_subtype >= dims.num_subtypes {
        return Err(PlanError::FieldOutOfRange {
            field: "node_subtype",
            value: op.node_subtype,
            limit: dims.num_subtypes,
        });
    }
    if op.intended_timestep >= dims.num_timesteps {
        return Err(PlanError::FieldOutOfRange {
            field: "intended_timestep",
            value: op.intended_timestep,
            limit: dims.num_timesteps,
        });
    }
    Ok(())
}

/// Per-field difference scaled by the field's span. A field with a single
/// configured value always contributes 0; the divisor clamp only guards the
/// arithmetic.
fn field_distance(a: usize, b: usize, count: usize) -> f64 {
    let span = count.saturating_sub(1).max(1);
    a.abs_diff(b) as f64 / span as f64
}

/// Weighted distance between a suggested operation and the optimal operation
/// at `position`. The result lies in `[0, sum of weights]`.
pub fn op_error(
    suggested: &Operation,
    optimal: &Operation,
    position: usize,
    weights: &DistanceWeights,
    dims: &PlanDims,
) -> Result<f64, PlanError> {
    check_op(suggested, dims)?;
    check_op(optimal, dims)?;
    if position >= dims.num_timesteps {
        return Err(PlanError::PositionOutOfRange {
            position,
            len: dims.num_timesteps,
        });
    }
    let d_type = field_distance(suggested.node_type, optimal.node_type, dims.num_node_types);
    let d_subtype =
        field_distance(suggested.node_subtype, optimal.node_subtype, dims.num_subtypes);
    let d_step = field_distance(
        suggested.intended_timestep,
        optimal.intended_timestep,
        dims.num_timesteps,
    );
    Ok(weights.w_type * d_type + weights.w_subtype * d_subtype + weights.w_timestep * d_step)
}

/// Total distance between a suggested plan and the optimal plan, summed over
/// positions. Both plans must have exactly `dims.num_timesteps` steps.
pub fn plan_error(
    suggested: &Plan,
    optimal: &Plan,
    weights: &DistanceWeights,
    dims: &PlanDims,
) -> Result<f64, PlanError> {
    if suggested.len() != dims.num_timesteps {
        return Err(PlanError::LengthMismatch {
            expected: dims.num_timesteps,
            actual: suggested.len(),
        });
    }
    if optimal.len() != dims.num_timesteps {
        return Err(PlanError::LengthMismatch {
            expected: dims.num_timesteps,
            actual: optimal.len(),
        });
    }
    let mut total = 0.0;
    for (i, (s, t)) in suggested.ops.iter().zip(&optimal.ops).enumerate() {
        total += op_error(s, t, i, weights, dims)?;
    }
    Ok(total)
}

/// `plan_error` scaled into `[0, 1]` by its upper bound, the number of steps
/// times the weight sum.
pub fn normalized_plan_error(
    suggested: &Plan,
    optimal: &Plan,
    weights: &DistanceWeights,
    dims: &PlanDims,
) -> Result<f64, PlanError> {
    let total = weights.total();
    // NaN weights must be rejected along with nonpositive ones.
    if total.is_nan() || total <= 0.0 {
        return Err(PlanError::NonPositiveWeights);
    }
    let raw = plan_error(suggested, optimal, weights, dims)?;
    Ok(raw / (dims.num_timesteps as f64 * total))
}

/// How much closer to optimal a plan is than the worst possible plan:
/// `1 - normalized_plan_error`. Lies in `[0, 1]`.
pub fn improvement(normalized_error: f64) -> f64 {
    1.0 - normalized_error
}

/// The plan a node of the given type and subtype actually needs: at position
/// `i` an operation on that type and subtype with intended timestep `i`.
pub fn optimal_plan(node_type: usize, node_subtype: usize, dims: &PlanDims) -> Plan {
    let ops = (0..dims.num_timesteps)
        .map(|i| Operation {
            node_type,
            node_subtype,
            intended_timestep: i,
        })
        .collect();
    Plan { ops }
}

/// Uniform random plan. Consumes exactly three 64-bit words per step, in
/// field order: node_type, node_subtype, intended_timestep.
pub fn random_plan(rng: &mut SimRng, dims: &PlanDims) -> Plan {
    let ops = (0..dims.num_timesteps)
        .map(|_| Operation {
            node_type: draw_index(rng, dims.num_node_types),
            node_subtype: draw_index(rng, dims.num_subtypes),
            intended_timestep: draw_index(rng, dims.num_timesteps),
        })
        .collect();
    Plan { ops }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, StreamKind};
    use proptest::prelude::*;

    fn dims223() -> PlanDims {
        PlanDims { num_node_types: 2, num_subtypes: 2, num_timesteps: 2 }
    }

    fn op(t: usize, s: usize, ts: usize) -> Operation {
        Operation { node_type: t, node_subtype: s, intended_timestep: ts }
    }

    #[test]
    fn two_step_example() {
        let dims = dims223();
        let w = DistanceWeights::uniform();
        let suggested = Plan { ops: vec![op(1, 0, 0), op(0, 1, 1)] };
        let optimal = optimal_plan(0, 0, &dims);
        let raw = plan_error(&suggested, &optimal, &w, &dims).unwrap();
        assert!((raw - 2.0).abs() < 1e-12);
        let norm = normalized_plan_error(&suggested, &optimal, &w, &dims).unwrap();
        assert!((norm - 1.0 / 3.0).abs() < 1e-12);
        assert!((improvement(norm) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn identical_plans_have_zero_error() {
        let dims = PlanDims { num_node_types: 3, num_subtypes: 3, num_timesteps: 5 };
        let w = DistanceWeights::uniform();
        let p = optimal_plan(2, 1, &dims);
        assert_eq!(plan_error(&p, &p, &w, &dims).unwrap(), 0.0);
        assert_eq!(improvement(0.0), 1.0);
    }

    #[test]
    fn zero_weight_masks_a_field() {
        let dims = dims223();
        let w = DistanceWeights { w_type: 1.0, w_subtype: 0.0, w_timestep: 1.0 };
        let a = op(0, 0, 0);
        let b = op(0, 1, 0);
        assert_eq!(op_error(&a, &b, 0, &w, &dims).unwrap(), 0.0);
    }

    #[test]
    fn single_valued_field_contributes_nothing() {
        let dims = PlanDims { num_node_types: 1, num_subtypes: 1, num_timesteps: 1 };
        let w = DistanceWeights::uniform();
        let a = op(0, 0, 0);
        assert_eq!(op_error(&a, &a, 0, &w, &dims).unwrap(), 0.0);
    }

    #[test]
    fn out_of_range_fields_are_rejected() {
        let dims = dims223();
        let w = DistanceWeights::uniform();
        let bad = op(2, 0, 0);
        let good = op(0, 0, 0);
        assert!(matches!(
            op_error(&bad, &good, 0, &w, &dims),
            Err(PlanError::FieldOutOfRange { field: "node_type", .. })
        ));
        assert!(matches!(
            op_error(&good, &good, 5, &w, &dims),
            Err(PlanError::PositionOutOfRange { .. })
        ));
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let dims = dims223();
        let w = DistanceWeights::uniform();
        let short = Plan { ops: vec![op(0, 0, 0)] };
        let opt = optimal_plan(0, 0, &dims);
        assert!(matches!(
            plan_error(&short, &opt, &w, &dims),
            Err(PlanError::LengthMismatch { expected: 2, actual: 1 })
        ));
    }

    #[test]
    fn zero_weights_are_rejected_for_normalization() {
        let dims = dims223();
        let w = DistanceWeights { w_type: 0.0, w_subtype: 0.0, w_timestep: 0.0 };
        let p = optimal_plan(0, 0, &dims);
        assert_eq!(
            normalized_plan_error(&p, &p, &w, &dims),
            Err(PlanError::NonPositiveWeights)
        );
    }

    #[test]
    fn random_plan_is_deterministic_per_seed() {
        let dims = PlanDims { num_node_types: 3, num_subtypes: 2, num_timesteps: 5 };
        let mut a = stream(99, StreamKind::Init, 0);
        let mut b = stream(99, StreamKind::Init, 0);
        assert_eq!(random_plan(&mut a, &dims), random_plan(&mut b, &dims));
    }

    #[test]
    fn random_plan_consumes_three_words_per_step() {
        use rand_chacha::rand_core::RngCore;
        let dims = PlanDims { num_node_types: 3, num_subtypes: 2, num_timesteps: 5 };
        let mut a = stream(4, StreamKind::Init, 0);
        let mut b = stream(4, StreamKind::Init, 0);
        random_plan(&mut a, &dims);
        for _ in 0..3 * dims.num_timesteps {
            b.next_u64();
        }
        assert_eq!(a.next_u64(), b.next_u64());
    }

    proptest! {
        #[test]
        fn normalized_error_stays_in_unit_interval(
            steps in proptest::collection::vec((0usize..3, 0usize..3, 0usize..5), 5),
        ) {
            let dims = PlanDims { num_node_types: 3, num_subtypes: 3, num_timesteps: 5 };
            let w = DistanceWeights::uniform();
            let plan = Plan {
                ops: steps
                    .into_iter()
                    .map(|(t, s, ts)| op(t, s, ts))
                    .collect(),
            };
            let optimal = optimal_plan(1, 2, &dims);
            let norm = normalized_plan_error(&plan, &optimal, &w, &dims).unwrap();
            prop_assert!((0.0..=1.0).contains(&norm));
            prop_assert!((0.0..=1.0).contains(&improvement(norm)));
        }

        #[test]
        fn distance_is_symmetric(
            a in (0usize..3, 0usize..3, 0usize..5),
            b in (0usize..3, 0usize..3, 0usize..5),
        ) {
            let dims = PlanDims { num_node_types: 3, num_subtypes: 3, num_timesteps: 5 };
            let w = DistanceWeights { w_type: 0.5, w_subtype: 2.0, w_timestep: 1.0 };
            let x = op(a.0, a.1, a.2);
            let y = op(b.0, b.1, b.2);
            let xy = op_error(&x, &y, 0, &w, &dims).unwrap();
            let yx = op_error(&y, &x, 0, &w, &dims).unwrap();
            prop_assert_eq!(xy, yx);
        }

        #[test]
        fn distance_is_zero_only_for_equal_ops(
            a in (0usize..3, 0usize..3, 0usize..5),
            b in (0usize..3, 0usize..3, 0usize..5),
        ) {
            let dims = PlanDims { num_node_types: 3, num_subtypes: 3, num_timesteps: 5 };
            let w = DistanceWeights::uniform();
            let x = op(a.0, a.1, a.2);
            let y = op(b.0, b.1, b.2);
            let d = op_error(&x, &y, 0, &w, &dims).unwrap();
            prop_assert_eq!(d == 0.0, x == y);
        }
    }
}
