//! Cost accounting, cost-aware layer ranking and sweep analysis.

mod cost;
pub mod report;
mod results;

pub use cost::{
    cost_scores, count_ops, count_params, enumerate_configs, fewer_masked_than, scores_from_counts,
    select_mask_plan, total_params, unit_costs, CostReport, LayerCost, Normalization, UnitCost,
};
pub use results::{marginal_contribution, Contribution, ResultsTable};
