//! Route completion, infraction and driving scores, and closed-loop benchmarks.

mod report;
mod run;
mod score;

pub use report::{comparison_svg, comparison_table, Averages, BenchmarkReport, VehicleSummary, CSV_COLUMNS};
pub use run::{
    run_benchmark, run_episode, run_zero_shot, sample_vehicles, zero_plan, Agent, EvalContext, RouteResult,
};
pub use score::{
    classify, driving_score, infraction_score, infraction_score_named, route_completion, PenaltyTable,
};
