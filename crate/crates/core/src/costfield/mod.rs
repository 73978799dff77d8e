//! The semantic cost: per-class L1 distance fields, label consistency,
//! per-point distance cost and the multi-pair aggregate.

mod cost;
mod field;

pub use cost::{
    consistency, pair_cost, point_cost, total_cost, ClassTerms, Consistency, CostBreakdown,
    CostConfig, CostError, CostModel, PairTerms, PointCounts, PointOutcome, PreparedPair,
    RangeWeighting,
};
pub use field::{DistanceField, EmptyClass};
